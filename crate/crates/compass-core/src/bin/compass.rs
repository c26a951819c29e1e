//! `compass` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use compass_core::cli::{
    cmd_compare, cmd_compile, cmd_sweep, write_compile_artifacts, CompileRequest, GaOverrides,
    Scheme,
};
use compass_core::cost_model::Objective;
use compass_core::error::{Error, Result};
use compass_core::hw_model::{builtin_chip, builtin_chip_names};
use compass_core::network_ir::{build_benchmark, builtin_model_names};

#[derive(Parser)]
#[command(
    name = "compass",
    version,
    about = "Partitioning compiler and performance estimator for crossbar PIM accelerators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile one model/chip pair with one partitioning scheme.
    Compile(RunArgs),
    /// Run compass, greedy and layerwise side by side and report ratios.
    Compare(RunArgs),
    /// Compile the same request across a list of batch sizes.
    Sweep(SweepArgs),
    /// List builtin models or dump one to the network file format.
    Models(DumpArgs),
    /// List builtin chips or dump one to the config file format.
    Chips(DumpArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Builtin model name (vgg16, resnet18, squeezenet) or network file.
    #[arg(long)]
    model: String,
    /// Builtin chip name (S, M, L) or chip config file.
    #[arg(long)]
    chip: String,
    /// Partitioning scheme: compass, greedy or layerwise.
    #[arg(long, default_value = "compass")]
    scheme: String,
    /// Optimization objective: latency or edp.
    #[arg(long, default_value = "latency")]
    objective: String,
    #[arg(long, default_value_t = 1)]
    batch: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report/instruction/trace artifacts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overlap weight replacement with the previous partition's drain.
    #[arg(long)]
    overlap_writes: bool,
    #[arg(long, default_value_t = 4)]
    activation_bits: u32,
    /// GA worker threads (default: all cores; env COMPASS_WORKERS).
    #[arg(long)]
    workers: Option<usize>,
    /// Also dump the validity map as CSV.
    #[arg(long)]
    dump_validity: bool,
    /// GA generations (default 30).
    #[arg(long)]
    generations: Option<u32>,
    /// GA population size (default 100).
    #[arg(long)]
    population: Option<usize>,
    /// GA survivors per generation (default 20).
    #[arg(long)]
    survivors: Option<usize>,
    /// GA mutants per generation (default 80).
    #[arg(long)]
    mutants: Option<usize>,
    /// Early-stop patience in generations (default 5).
    #[arg(long)]
    patience: Option<u32>,
    /// Merge,split,move,fixed-random probabilities, e.g. 0.25,0.25,0.25,0.25
    #[arg(long)]
    mutation_weights: Option<String>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated batch sizes, e.g. 1,2,4,8,16
    #[arg(long, default_value = "1,2,4,8,16")]
    batches: String,
}

#[derive(Args, Clone)]
struct DumpArgs {
    /// Name of the builtin to dump; lists all names when omitted.
    name: Option<String>,
    /// Output file (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_weights(raw: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::Parse(format!(
            "--mutation-weights: expected 4 comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [0.0; 4];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("--mutation-weights: bad value '{part}'")))?;
    }
    Ok(out)
}

fn workers_from_env() -> Option<usize> {
    std::env::var("COMPASS_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
}

fn to_request(args: &RunArgs) -> Result<CompileRequest> {
    let scheme: Scheme = args.scheme.parse()?;
    let objective: Objective = args.objective.parse()?;
    let ga = GaOverrides {
        generations: args.generations,
        population: args.population,
        n_sel: args.survivors,
        n_mut: args.mutants,
        early_stop_patience: args.patience,
        mutation_weights: args
            .mutation_weights
            .as_deref()
            .map(parse_weights)
            .transpose()?,
    };
    Ok(CompileRequest {
        model: args.model.clone(),
        chip: args.chip.clone(),
        scheme,
        objective,
        batch: args.batch,
        seed: args.seed,
        overlap_writes: args.overlap_writes,
        activation_bits: args.activation_bits,
        ga,
        workers: args.workers.or_else(workers_from_env),
        dump_validity: args.dump_validity,
    })
}

fn write_out(path: &PathBuf, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn dump_or_print(args: &DumpArgs, contents: &str) -> Result<()> {
    match &args.output {
        Some(path) => {
            write_out(path, contents)?;
            println!("wrote {}", path.display());
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compile(args) => {
            let req = to_request(&args)?;
            let artifacts = cmd_compile(&req)?;
            let written = write_compile_artifacts(&args.out_dir, &artifacts)?;
            let r = &artifacts.report;
            println!(
                "{} [{}] partitions={} throughput={:.3} samples/s energy/sample={:.3} uJ EDP={:.6e} pJ*ns",
                r.label,
                r.scheme,
                r.partition_count,
                r.throughput_samples_per_s,
                r.energy_per_sample_pj / 1e6,
                r.edp_pj_ns
            );
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Compare(args) => {
            let req = to_request(&args)?;
            let cmp = cmd_compare(&req)?;
            std::fs::create_dir_all(&args.out_dir)?;
            let path = args.out_dir.join("comparison.json");
            write_out(&path, &cmp.report_json)?;
            let r = &cmp.report;
            println!("{} throughput (samples/s):", r.label);
            for (name, rep) in [
                ("compass", &r.compass),
                ("greedy", &r.greedy),
                ("layerwise", &r.layerwise),
            ] {
                println!(
                    "  {name:<9} {:obj$.3}  partitions={} pgf={:.4e}",
                    rep.throughput_samples_per_s,
                    rep.partition_count,
                    rep.pgf,
                    obj = 12
                );
            }
            println!(
                "  speedup vs greedy {:.2}x, vs layerwise {:.2}x; EDP gain {:.2}x / {:.2}x",
                r.ratios.throughput_vs_greedy,
                r.ratios.throughput_vs_layerwise,
                r.ratios.edp_vs_greedy,
                r.ratios.edp_vs_layerwise
            );
            println!("wrote {}", path.display());
        }
        Command::Sweep(args) => {
            let req = to_request(&args.run)?;
            let batches: Vec<u32> = args
                .batches
                .split(',')
                .map(|b| {
                    b.trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("--batches: bad value '{b}'")))
                })
                .collect::<Result<_>>()?;
            let sweep = cmd_sweep(&req, &batches)?;
            std::fs::create_dir_all(&args.run.out_dir)?;
            let json_path = args.run.out_dir.join("sweep.json");
            let csv_path = args.run.out_dir.join("sweep.csv");
            write_out(&json_path, &sweep.report_json)?;
            write_out(&csv_path, &sweep.csv)?;
            println!("batch  throughput(samples/s)  write/mvm energy");
            for row in &sweep.report.rows {
                println!(
                    "{:>5}  {:>20.3}  {:>14.4}",
                    row.batch, row.throughput_samples_per_s, row.write_mvm_energy_ratio
                );
            }
            println!("wrote {}", json_path.display());
            println!("wrote {}", csv_path.display());
        }
        Command::Models(args) => match &args.name {
            None => {
                for name in builtin_model_names() {
                    println!("{name}");
                }
            }
            Some(name) => {
                let graph = build_benchmark(name)?;
                dump_or_print(&args, &graph.to_file_string())?;
            }
        },
        Command::Chips(args) => match &args.name {
            None => {
                for name in builtin_chip_names() {
                    println!("{name}");
                }
            }
            Some(name) => {
                let chip = builtin_chip(name)?;
                dump_or_print(&args, &chip.to_config_string())?;
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
