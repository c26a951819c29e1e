//! Pipeline driver behind the `compass` binary: compile one scheme,
//! compare all schemes, sweep batch sizes, dump builtin models and chips.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::cost_model::{
    group_cost, partitions_csv, report_to_json, CostOptions, GaSummary, Objective, RunReport,
    Workload,
};
use crate::decomposer::{build_validity_map, decompose};
use crate::error::{Error, Result};
use crate::ga::{convergence_csv, run_compass, GaParams};
use crate::hw_model::{builtin_chip, builtin_chip_names, load_chip_spec, ChipSpec};
use crate::network_ir::{build_benchmark, builtin_model_names, load_network, NetworkGraph};
use crate::partitioner::{greedy_group, layerwise_group};
use crate::scheduler::{instructions_to_string, schedule, trace_to_string};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Compass,
    Greedy,
    Layerwise,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Compass => "compass",
            Scheme::Greedy => "greedy",
            Scheme::Layerwise => "layerwise",
        }
    }

    pub fn all() -> [Scheme; 3] {
        [Scheme::Compass, Scheme::Greedy, Scheme::Layerwise]
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compass" => Ok(Scheme::Compass),
            "greedy" => Ok(Scheme::Greedy),
            "layerwise" => Ok(Scheme::Layerwise),
            other => Err(Error::Parse(format!(
                "--scheme: unknown scheme '{other}' (expected compass, greedy or layerwise)"
            ))),
        }
    }
}

/// Optional overrides of the GA defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaOverrides {
    pub generations: Option<u32>,
    pub population: Option<usize>,
    pub n_sel: Option<usize>,
    pub n_mut: Option<usize>,
    pub early_stop_patience: Option<u32>,
    pub mutation_weights: Option<[f64; 4]>,
}

impl GaOverrides {
    pub fn apply(&self, seed: u64) -> GaParams {
        let mut p = GaParams {
            seed,
            ..GaParams::default()
        };
        if let Some(g) = self.generations {
            p.generations = g;
        }
        if let Some(n) = self.population {
            p.population = n;
        }
        if let Some(n) = self.n_sel {
            p.n_sel = n;
        }
        if let Some(n) = self.n_mut {
            p.n_mut = n;
        }
        // keep n_sel + n_mut = population when only some fields are given
        if self.population.is_some() && self.n_sel.is_none() && self.n_mut.is_none() {
            p.n_sel = (p.population / 5).max(1);
            p.n_mut = p.population - p.n_sel;
        } else if self.n_mut.is_none() && self.n_sel.is_some() {
            p.n_mut = p.population.saturating_sub(p.n_sel);
        } else if self.n_sel.is_none() && self.n_mut.is_some() {
            p.n_sel = p.population.saturating_sub(p.n_mut);
        }
        if let Some(pt) = self.early_stop_patience {
            p.early_stop_patience = pt;
        }
        if let Some(wts) = self.mutation_weights {
            p.mutation_weights = wts;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileRequest {
    /// Builtin model name or network file path.
    pub model: String,
    /// Builtin chip name or config file path.
    pub chip: String,
    pub scheme: Scheme,
    pub objective: Objective,
    pub batch: u32,
    pub seed: u64,
    pub overlap_writes: bool,
    pub activation_bits: u32,
    pub ga: GaOverrides,
    pub workers: Option<usize>,
    pub dump_validity: bool,
}

impl CompileRequest {
    pub fn new(model: &str, chip: &str, scheme: Scheme) -> CompileRequest {
        CompileRequest {
            model: model.to_string(),
            chip: chip.to_string(),
            scheme,
            objective: Objective::Latency,
            batch: 1,
            seed: 0,
            overlap_writes: false,
            activation_bits: 4,
            ga: GaOverrides::default(),
            workers: None,
            dump_validity: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch < 1 {
            return Err(Error::validation("batch", "must be >= 1"));
        }
        if self.activation_bits < 1 {
            return Err(Error::validation("activation_bits", "must be >= 1"));
        }
        Ok(())
    }
}

pub struct CompileArtifacts {
    pub report: RunReport,
    pub report_json: String,
    pub instructions: String,
    pub trace: String,
    pub partitions_csv: String,
    pub convergence_csv: Option<String>,
    pub validity_csv: Option<String>,
}

pub fn resolve_model(arg: &str) -> Result<NetworkGraph> {
    if builtin_model_names().contains(&arg) {
        build_benchmark(arg)
    } else if Path::new(arg).exists() {
        load_network(arg)
    } else {
        Err(Error::UnknownModel(arg.to_string()))
    }
}

pub fn resolve_chip(arg: &str) -> Result<ChipSpec> {
    if builtin_chip_names().contains(&arg) {
        builtin_chip(arg)
    } else if Path::new(arg).exists() {
        load_chip_spec(arg)
    } else {
        Err(Error::UnknownChip(arg.to_string()))
    }
}

fn run_with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("worker pool")
            .install(f),
        None => f(),
    }
}

fn hash_tag(text: &str) -> String {
    format!("fnv64:{:016x}", crate::fnv1a64(text.as_bytes()))
}

fn choose_group(
    w: &Workload,
    vmap: &crate::decomposer::ValidityMap,
    req: &CompileRequest,
    scheme: Scheme,
) -> Result<(crate::partitioner::PartitionGroup, Option<crate::ga::GaOutcome>)> {
    run_with_workers(req.workers, || match scheme {
        Scheme::Greedy => Ok((greedy_group(w, vmap), None)),
        Scheme::Layerwise => Ok((layerwise_group(w, vmap), None)),
        Scheme::Compass => {
            let params = req.ga.apply(req.seed);
            let outcome = run_compass(w, vmap, &params, req.batch)?;
            Ok((outcome.best.group.clone(), Some(outcome)))
        }
    })
}

struct PipelineRun {
    model: crate::decomposer::DecomposedModel,
    vmap: crate::decomposer::ValidityMap,
    group: crate::partitioner::PartitionGroup,
    ga_outcome: Option<crate::ga::GaOutcome>,
    report: RunReport,
}

fn cost_options(req: &CompileRequest) -> CostOptions {
    CostOptions {
        activation_bits: req.activation_bits,
        overlap_writes: req.overlap_writes,
        objective: req.objective,
        ..CostOptions::default()
    }
}

fn run_pipeline(
    graph: &NetworkGraph,
    chip: &ChipSpec,
    req: &CompileRequest,
    scheme: Scheme,
) -> Result<PipelineRun> {
    req.validate()?;
    let model = decompose(graph, chip)?;
    let vmap = build_validity_map(&model, chip);
    let w = Workload::new(graph, &model, chip, cost_options(req));
    let (group, ga_outcome) = choose_group(&w, &vmap, req, scheme)?;
    let mut report = group_cost(&w, &group, req.batch);
    report.label = format!("{}-{}-{}", graph.name, chip.name, req.batch);
    report.scheme = scheme.label().to_string();
    report.seed = req.seed;
    report.config_hash = hash_tag(&chip.to_config_string());
    report.model_hash = hash_tag(&graph.to_file_string());
    if let Some(outcome) = &ga_outcome {
        report.ga = Some(GaSummary {
            generations_run: outcome.generations_run,
            early_stopped: outcome.early_stopped,
            best_pgf: outcome.best.pgf,
        });
    }
    Ok(PipelineRun {
        model,
        vmap,
        group,
        ga_outcome,
        report,
    })
}

/// Run the full pipeline for one scheme over already-loaded inputs.
pub fn compile_loaded(
    graph: &NetworkGraph,
    chip: &ChipSpec,
    req: &CompileRequest,
) -> Result<CompileArtifacts> {
    let run = run_pipeline(graph, chip, req, req.scheme)?;
    let w = Workload::new(graph, &run.model, chip, cost_options(req));
    let sched = schedule(&w, &run.group, req.batch)?;
    Ok(CompileArtifacts {
        report_json: report_to_json(&run.report),
        instructions: instructions_to_string(&sched),
        trace: trace_to_string(&sched),
        partitions_csv: partitions_csv(&run.report),
        convergence_csv: run.ga_outcome.as_ref().map(|o| convergence_csv(&o.log)),
        validity_csv: req.dump_validity.then(|| run.vmap.to_csv()),
        report: run.report,
    })
}

/// Run the full pipeline for one scheme and produce every artifact.
pub fn cmd_compile(req: &CompileRequest) -> Result<CompileArtifacts> {
    let graph = resolve_model(&req.model)?;
    let chip = resolve_chip(&req.chip)?;
    compile_loaded(&graph, &chip, req)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRatios {
    pub throughput_vs_greedy: f64,
    pub throughput_vs_layerwise: f64,
    pub edp_vs_greedy: f64,
    pub edp_vs_layerwise: f64,
    pub pgf_vs_greedy: f64,
    pub pgf_vs_layerwise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub label: String,
    pub batch: u32,
    pub seed: u64,
    pub objective: String,
    /// COMPASS relative to each baseline (> 1 means COMPASS is better).
    pub ratios: SpeedupRatios,
    pub compass: RunReport,
    pub greedy: RunReport,
    pub layerwise: RunReport,
}

pub struct CompareArtifacts {
    pub report: ComparisonReport,
    pub report_json: String,
}

/// Run all three schemes with a shared seed/model/chip/batch and emit a
/// side-by-side report with speedup ratios. Schedules are not built here;
/// the comparison only needs the reports.
pub fn cmd_compare(req: &CompileRequest) -> Result<CompareArtifacts> {
    let graph = resolve_model(&req.model)?;
    let chip = resolve_chip(&req.chip)?;
    let mut reports = Vec::new();
    for scheme in Scheme::all() {
        reports.push(run_pipeline(&graph, &chip, req, scheme)?.report);
    }
    let [compass, greedy, layerwise]: [RunReport; 3] =
        reports.try_into().expect("three schemes");
    let ratios = SpeedupRatios {
        throughput_vs_greedy: compass.throughput_samples_per_s / greedy.throughput_samples_per_s,
        throughput_vs_layerwise: compass.throughput_samples_per_s
            / layerwise.throughput_samples_per_s,
        edp_vs_greedy: greedy.edp_pj_ns / compass.edp_pj_ns,
        edp_vs_layerwise: layerwise.edp_pj_ns / compass.edp_pj_ns,
        pgf_vs_greedy: greedy.pgf / compass.pgf,
        pgf_vs_layerwise: layerwise.pgf / compass.pgf,
    };
    let report = ComparisonReport {
        format_version: crate::cost_model::REPORT_FORMAT_VERSION,
        label: compass.label.clone(),
        batch: req.batch,
        seed: req.seed,
        objective: req.objective.label().to_string(),
        ratios,
        compass,
        greedy,
        layerwise,
    };
    let mut report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    report_json.push('\n');
    Ok(CompareArtifacts {
        report,
        report_json,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub batch: u32,
    pub throughput_samples_per_s: f64,
    pub end_to_end_latency_ns: f64,
    pub energy_per_sample_pj: f64,
    pub edp_pj_ns: f64,
    pub write_mvm_energy_ratio: f64,
    pub write_energy_per_sample_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub format_version: u32,
    pub model: String,
    pub chip: String,
    pub scheme: String,
    pub objective: String,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    pub reports: Vec<RunReport>,
}

pub struct SweepArtifacts {
    pub report: SweepReport,
    pub report_json: String,
    pub csv: String,
}

/// One run per batch size; emits the write-energy-to-MVM ratio and
/// throughput series.
pub fn cmd_sweep(req: &CompileRequest, batches: &[u32]) -> Result<SweepArtifacts> {
    if batches.is_empty() {
        return Err(Error::validation("batches", "must be nonempty"));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &batch in batches {
        let sub = CompileRequest {
            batch,
            ..req.clone()
        };
        let artifacts = cmd_compile(&sub)?;
        let r = &artifacts.report;
        rows.push(SweepRow {
            batch,
            throughput_samples_per_s: r.throughput_samples_per_s,
            end_to_end_latency_ns: r.end_to_end_latency_ns,
            energy_per_sample_pj: r.energy_per_sample_pj,
            edp_pj_ns: r.edp_pj_ns,
            write_mvm_energy_ratio: r.write_mvm_energy_ratio,
            write_energy_per_sample_pj: r.write_energy_per_sample_pj,
        });
        reports.push(artifacts.report);
    }
    let report = SweepReport {
        format_version: crate::cost_model::REPORT_FORMAT_VERSION,
        model: req.model.clone(),
        chip: req.chip.clone(),
        scheme: req.scheme.label().to_string(),
        objective: req.objective.label().to_string(),
        seed: req.seed,
        rows,
        reports,
    };
    let mut report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    report_json.push('\n');
    let mut csv = String::from(
        "batch,throughput_samples_per_s,end_to_end_latency_ns,energy_per_sample_pj,\
         edp_pj_ns,write_mvm_energy_ratio,write_energy_per_sample_pj\n",
    );
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.batch,
            r.throughput_samples_per_s,
            r.end_to_end_latency_ns,
            r.energy_per_sample_pj,
            r.edp_pj_ns,
            r.write_mvm_energy_ratio,
            r.write_energy_per_sample_pj,
        ));
    }
    Ok(SweepArtifacts {
        report,
        report_json,
        csv,
    })
}

/// Write compile artifacts under `dir`; returns the paths written.
pub fn write_compile_artifacts(dir: &Path, artifacts: &CompileArtifacts) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: &str| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };
    put("report.json", &artifacts.report_json)?;
    put("partitions.csv", &artifacts.partitions_csv)?;
    put("instructions.txt", &artifacts.instructions)?;
    put("trace.txt", &artifacts.trace)?;
    if let Some(csv) = &artifacts.convergence_csv {
        put("convergence.csv", csv)?;
    }
    if let Some(csv) = &artifacts.validity_csv {
        put("validity.csv", csv)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_ga() -> GaOverrides {
        GaOverrides {
            generations: Some(4),
            population: Some(12),
            n_sel: Some(3),
            n_mut: Some(9),
            ..GaOverrides::default()
        }
    }

    #[test]
    fn compile_deterministic() {
        let mut req = CompileRequest::new("resnet18", "M", Scheme::Compass);
        req.batch = 16;
        req.seed = 7;
        req.ga = quick_ga();
        let a = cmd_compile(&req).unwrap();
        let b = cmd_compile(&req).unwrap();
        assert_eq!(a.report_json, b.report_json);
        assert_eq!(a.instructions, b.instructions);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.convergence_csv, b.convergence_csv);
    }

    #[test]
    fn greedy_squeezenet_l_single_partition() {
        let mut req = CompileRequest::new("squeezenet", "L", Scheme::Greedy);
        req.batch = 4;
        let artifacts = cmd_compile(&req).unwrap();
        assert_eq!(artifacts.report.partition_count, 1);
    }

    #[test]
    fn unknown_scheme_names_flag() {
        let err = "bogus".parse::<Scheme>().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("--scheme"), "{msg}");
    }

    #[test]
    fn unmappable_pair_exit_code() {
        // vgg16 fc1 needs 98-crossbar groups; shrink the chip until the
        // group itself cannot fit, which is the infeasible-pair signal.
        let mut chip = crate::hw_model::builtin_chip("S").unwrap();
        chip.num_cores = 4;
        let dir = std::env::temp_dir().join("compass_test_chip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.cfg");
        std::fs::write(&path, chip.to_config_string()).unwrap();
        let mut req = CompileRequest::new("vgg16", path.to_str().unwrap(), Scheme::Greedy);
        req.batch = 1;
        match cmd_compile(&req) {
            Err(e @ Error::UnmappableLayer { .. }) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected UnmappableLayer, got {:?}", other.map(|a| a.report.label)),
        }
    }

    #[test]
    fn compare_single_layer_toy_equal_costs() {
        // one conv fits every scheme into the same single partition
        let graph_json = r#"{
            "format_version": 1,
            "name": "one_conv",
            "input_shape": [16, 8, 8],
            "nodes": [
                {"id": 0, "kind": "conv", "cin": 16, "cout": 16, "kh": 3, "kw": 3,
                 "stride": 1, "padding": 1, "weight_bits_per_element": 4, "inputs": []}
            ]
        }"#;
        let dir = std::env::temp_dir().join("compass_test_net");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("one_conv.json");
        std::fs::write(&path, graph_json).unwrap();
        let mut req = CompileRequest::new(path.to_str().unwrap(), "S", Scheme::Compass);
        req.batch = 2;
        req.ga = quick_ga();
        let cmp = cmd_compare(&req).unwrap();
        assert_eq!(cmp.report.compass.pgf, cmp.report.greedy.pgf);
        assert_eq!(cmp.report.compass.pgf, cmp.report.layerwise.pgf);
        assert!((cmp.report.ratios.throughput_vs_greedy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compare_ratios_recomputable() {
        let mut req = CompileRequest::new("resnet18", "M", Scheme::Compass);
        req.batch = 16;
        req.ga = quick_ga();
        let cmp = cmd_compare(&req).unwrap();
        let want = cmp.report.compass.throughput_samples_per_s
            / cmp.report.greedy.throughput_samples_per_s;
        assert_eq!(cmp.report.ratios.throughput_vs_greedy, want);
    }

    #[test]
    fn sweep_amortization_and_monotonicity() {
        let mut req = CompileRequest::new("resnet18", "S", Scheme::Greedy);
        req.seed = 1;
        let sweep = cmd_sweep(&req, &[1, 2, 4, 8, 16]).unwrap();
        let rows = &sweep.report.rows;
        // per-sample write energy amortizes exactly with the batch
        let r1 = rows[0].write_energy_per_sample_pj;
        let r16 = rows[4].write_energy_per_sample_pj;
        assert!((r1 / r16 - 16.0).abs() < 1e-9);
        // throughput series non-decreasing
        for pair in rows.windows(2) {
            assert!(pair[1].throughput_samples_per_s >= pair[0].throughput_samples_per_s);
        }
    }

    #[test]
    fn sweep_single_batch_equals_compile() {
        let mut req = CompileRequest::new("squeezenet", "S", Scheme::Greedy);
        req.batch = 1;
        let sweep = cmd_sweep(&req, &[1]).unwrap();
        let compile = cmd_compile(&req).unwrap();
        assert_eq!(sweep.report.reports[0], compile.report);
    }
}
