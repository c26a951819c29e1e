//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured runtime (`cargo test --test acceptance -- --nocapture`
//! shows them).

use std::time::Instant;

use compass_core::cli::{cmd_compile, cmd_sweep, CompileRequest, Scheme};
use compass_core::cost_model::{group_fitness, CostOptions, Workload};
use compass_core::decomposer::{
    build_validity_map, decompose, DecomposedModel, PartitionUnit, ValidityMap,
};
use compass_core::ga::{
    mutate, population_mean_prefix, run_compass, GaParams, Individual, MutationKind,
};
use compass_core::hw_model::{builtin_chip, ChipSpec};
use compass_core::network_ir::{
    build_benchmark, LayerKind, LayerNode, NetworkGraph, PoolMode, TensorShape,
};
use compass_core::partitioner::{
    check_group_invariants, finalize_group, generate_random_group, greedy_group, layerwise_group,
};

fn pass(criterion: u32, what: &str, started: Instant) {
    println!(
        "ACCEPTANCE {criterion} PASS: {what} ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

// --- criterion 1: table fixtures -------------------------------------------

#[test]
fn criterion_1_table_fixtures() {
    let t = Instant::now();
    // chips: exact capacities in MiB
    for (name, mib) in [("S", 1.125), ("M", 2.0), ("L", 4.5)] {
        let chip = builtin_chip(name).unwrap();
        let bits = (mib * 8.0 * 1024.0 * 1024.0) as u64;
        assert_eq!(chip.chip_capacity_bits(), bits, "chip {name}");
    }
    // models: footprints within 1%
    for (name, total_mib) in [("vgg16", 65.97), ("resnet18", 5.569), ("squeezenet", 0.58725)] {
        let g = build_benchmark(name).unwrap();
        let (lin, conv) = g.weight_footprint_bits();
        let got = (lin + conv) as f64 / (8.0 * 1024.0 * 1024.0);
        let rel = (got - total_mib).abs() / total_mib;
        assert!(rel < 0.01, "{name}: {got:.5} MiB vs {total_mib} ({rel:.4})");
    }
    assert!(t.elapsed().as_secs_f64() < 1.0, "criterion 1 exceeded 1 s");
    pass(1, "builtin chips exact, model footprints within 1%", t);
}

// --- criterion 2: validity-map oracle ---------------------------------------

/// Independent packing oracle: naive decreasing-size first fit written
/// from scratch for the test.
fn oracle_packs(sizes: &[u32], cores: u32, cap: u32) -> bool {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut load = vec![0u32; cores as usize];
    'items: for &i in &order {
        if sizes[i] > cap {
            return false;
        }
        for bin in load.iter_mut() {
            if *bin + sizes[i] <= cap {
                *bin += sizes[i];
                continue 'items;
            }
        }
        return false;
    }
    true
}

fn oracle_is_valid(
    model: &DecomposedModel,
    chip: &ChipSpec,
    start: usize,
    end: usize,
) -> bool {
    if start >= end || end > model.len() {
        return false;
    }
    if !model.is_aligned(start) || !model.is_aligned(end) {
        return false;
    }
    let sizes: Vec<u32> = model.units[start..end]
        .iter()
        .map(|u| u.crossbars_needed)
        .collect();
    oracle_packs(&sizes, chip.num_cores, chip.core.crossbars_per_core)
}

fn synthetic_instance(seed: u64) -> (DecomposedModel, ChipSpec) {
    // deterministic xorshift generator local to the test
    let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d) | 1;
    let mut next = move |bound: u64| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state % bound
    };
    let cores = 2 + next(4) as u32; // 2..=5
    let cap = 2 + next(5) as u32; // 2..=6
    let m = 5 + next(36) as usize; // 5..=40
    let mut chip = builtin_chip("S").unwrap();
    chip.num_cores = cores;
    chip.core.crossbars_per_core = cap;

    let mut units: Vec<PartitionUnit> = Vec::new();
    let mut group_spans = Vec::new();
    while units.len() < m {
        let group_id = group_spans.len();
        let want = 1 + next(3) as usize;
        let len = want.min(m - units.len());
        let start = units.len();
        for _ in 0..len {
            let uid = units.len();
            let xbars = 1 + next(cap as u64) as u32;
            units.push(PartitionUnit {
                uid,
                layer_id: 0,
                out_slice: (uid as u64, uid as u64 + 1),
                in_block: (0, 1),
                col_tiles: 1,
                row_tiles: xbars,
                crossbars_needed: xbars,
                weight_bits: 64,
                group_id,
                chans_per_tile: 1,
                weight_bits_per_element: 4,
            });
        }
        // keep the group chip-feasible (groups are atomic by construction)
        let sizes: Vec<u32> = units[start..].iter().map(|u| u.crossbars_needed).collect();
        if !oracle_packs(&sizes, cores, cap) {
            units.truncate(start + 1);
        }
        group_spans.push(start..units.len());
    }
    let m = units.len();
    let mut aligned = vec![false; m + 1];
    aligned[0] = true;
    aligned[m] = true;
    for s in &group_spans {
        aligned[s.end] = true;
    }
    (
        DecomposedModel {
            units,
            layer_ranges: vec![(0, 0..m)],
            group_spans,
            aligned,
        },
        chip,
    )
}

#[test]
fn criterion_2_validity_oracle() {
    let t = Instant::now();
    let mut checked_pairs = 0u64;
    for seed in 0..25u64 {
        let (model, chip) = synthetic_instance(seed + 1);
        let vmap = build_validity_map(&model, &chip);
        let m = model.len();
        assert!(m <= 40);
        for i in 0..m {
            for j in i + 1..=m {
                let got = vmap.is_valid(i, j);
                let want = oracle_is_valid(&model, &chip, i, j);
                assert_eq!(got, want, "seed {seed}: span [{i},{j})");
                checked_pairs += 1;
            }
            // frontier consistency: everything inside max_end is valid
            if model.is_aligned(i) {
                assert!(vmap.max_end(i) > i, "seed {seed}: empty frontier at {i}");
                for j in model.aligned_in(i, vmap.max_end(i)) {
                    assert!(oracle_is_valid(&model, &chip, i, j));
                }
            } else {
                assert_eq!(vmap.max_end(i), i);
            }
        }
    }
    assert!(t.elapsed().as_secs_f64() < 10.0, "criterion 2 exceeded 10 s");
    pass(
        2,
        &format!("validity map matches brute-force packing on 25 instances ({checked_pairs} spans)"),
        t,
    );
}

// --- criterion 3: GA optimality at desk scale -------------------------------

fn toy_pipeline_model() -> (NetworkGraph, ChipSpec) {
    // three convs with a pooling step so replication and pipelining both
    // matter; decomposes into <= 10 units on the shrunken chip below
    let nodes = vec![
        LayerNode {
            id: 0,
            kind: LayerKind::Conv { cin: 16, cout: 32, kh: 3, kw: 3, stride: 1, padding: 1 },
            weight_bits_per_element: 4,
            inputs: vec![],
        },
        LayerNode {
            id: 1,
            kind: LayerKind::Activation,
            weight_bits_per_element: 4,
            inputs: vec![0],
        },
        LayerNode {
            id: 2,
            kind: LayerKind::Pool { window: 2, stride: 2, mode: PoolMode::Max, padding: 0 },
            weight_bits_per_element: 4,
            inputs: vec![1],
        },
        LayerNode {
            id: 3,
            kind: LayerKind::Conv { cin: 32, cout: 32, kh: 3, kw: 3, stride: 1, padding: 1 },
            weight_bits_per_element: 4,
            inputs: vec![2],
        },
        LayerNode {
            id: 4,
            kind: LayerKind::Activation,
            weight_bits_per_element: 4,
            inputs: vec![3],
        },
        LayerNode {
            id: 5,
            kind: LayerKind::Conv { cin: 32, cout: 64, kh: 3, kw: 3, stride: 1, padding: 1 },
            weight_bits_per_element: 4,
            inputs: vec![4],
        },
    ];
    let graph = NetworkGraph::new("toy3", TensorShape::new(16, 16, 16), nodes).unwrap();
    let mut chip = builtin_chip("S").unwrap();
    chip.num_cores = 4;
    chip.core.crossbars_per_core = 2;
    (graph, chip)
}

fn toy_chain_model() -> (NetworkGraph, ChipSpec) {
    let mut nodes = Vec::new();
    let mut prev: Option<usize> = None;
    for i in 0..4 {
        let cid = nodes.len();
        nodes.push(LayerNode {
            id: cid,
            kind: LayerKind::Conv {
                cin: if i == 0 { 128 } else { 64 },
                cout: 64,
                kh: 1,
                kw: 1,
                stride: 1,
                padding: 0,
            },
            weight_bits_per_element: 4,
            inputs: prev.into_iter().collect(),
        });
        let rid = nodes.len();
        nodes.push(LayerNode {
            id: rid,
            kind: LayerKind::Activation,
            weight_bits_per_element: 4,
            inputs: vec![cid],
        });
        prev = Some(rid);
    }
    let graph = NetworkGraph::new("toychain", TensorShape::new(128, 12, 12), nodes).unwrap();
    let mut chip = builtin_chip("S").unwrap();
    chip.num_cores = 3;
    chip.core.crossbars_per_core = 1;
    (graph, chip)
}

fn exhaustive_optimum(w: &Workload, vmap: &ValidityMap, batch: u32) -> f64 {
    let m = w.model.len();
    let mut best = f64::INFINITY;
    let mut stack = vec![(0usize, Vec::<std::ops::Range<usize>>::new())];
    let mut count = 0u64;
    while let Some((s, spans)) = stack.pop() {
        if s == m {
            let g = finalize_group(w, spans);
            let (pgf, _) = group_fitness(w, &g, batch);
            best = best.min(pgf);
            count += 1;
            continue;
        }
        for j in w.model.aligned_in(s, m) {
            if vmap.is_valid(s, j) {
                let mut next = spans.clone();
                next.push(s..j);
                stack.push((j, next));
            }
        }
    }
    assert!(count > 1, "enumeration degenerate");
    best
}

#[test]
fn criterion_3_ga_finds_desk_scale_optimum() {
    let t = Instant::now();
    let batch = 4;
    for (graph, chip) in [toy_pipeline_model(), toy_chain_model()] {
        let model = decompose(&graph, &chip).unwrap();
        assert!(
            model.group_spans.len() <= 10,
            "{}: toy has {} groups",
            graph.name,
            model.group_spans.len()
        );
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let optimum = exhaustive_optimum(&w, &vmap, batch);

        let mut hits = 0;
        for seed in 0..5 {
            let params = GaParams {
                generations: 50,
                population: 100,
                n_sel: 20,
                n_mut: 80,
                early_stop_patience: 50,
                seed,
                ..GaParams::default()
            };
            let outcome = run_compass(&w, &vmap, &params, batch).unwrap();
            if (outcome.best.pgf - optimum).abs() / optimum < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 4, "{}: GA hit optimum in {hits}/5 seeds", graph.name);
    }
    assert!(t.elapsed().as_secs_f64() < 60.0, "criterion 3 exceeded 60 s");
    pass(3, "GA matches exhaustive optimum on toy models (>= 4/5 seeds)", t);
}

// --- criterion 4: dominance over baselines ----------------------------------

#[test]
fn criterion_4_dominance_over_baselines() {
    let t = Instant::now();
    let batch = 16;
    let mut throughput_ratios: Vec<f64> = Vec::new();
    let mut edp_ratios: Vec<f64> = Vec::new();
    for model_name in ["vgg16", "resnet18", "squeezenet"] {
        for chip_name in ["S", "M", "L"] {
            let graph = build_benchmark(model_name).unwrap();
            let chip = builtin_chip(chip_name).unwrap();
            let model = decompose(&graph, &chip).unwrap();
            let vmap = build_validity_map(&model, &chip);
            let w = Workload::new(&graph, &model, &chip, CostOptions::default());
            let (greedy_pgf, _) = group_fitness(&w, &greedy_group(&w, &vmap), batch);
            let (layer_pgf, _) = group_fitness(&w, &layerwise_group(&w, &vmap), batch);
            for seed in 0..3u64 {
                let params = GaParams {
                    seed,
                    ..GaParams::default()
                };
                let outcome = run_compass(&w, &vmap, &params, batch).unwrap();
                let pgf = outcome.best.pgf;
                assert!(
                    pgf <= greedy_pgf && pgf <= layer_pgf,
                    "{model_name}-{chip_name}-{batch} seed {seed}: \
                     compass {pgf:.4e} vs greedy {greedy_pgf:.4e} / layerwise {layer_pgf:.4e}"
                );
                // latency objective: PGF is end-to-end latency, so the
                // ratios below are throughput speedups
                throughput_ratios.push(greedy_pgf / pgf);
                throughput_ratios.push(layer_pgf / pgf);
                let (c_edp, g_edp, l_edp) = {
                    let report = |g| compass_core::cost_model::group_cost(&w, g, batch).edp_pj_ns;
                    (
                        report(&outcome.best.group),
                        report(&greedy_group(&w, &vmap)),
                        report(&layerwise_group(&w, &vmap)),
                    )
                };
                edp_ratios.push(g_edp / c_edp);
                edp_ratios.push(l_edp / c_edp);
                println!(
                    "  {model_name}-{chip_name}-{batch} seed {seed}: speedup {:.2}x vs greedy, {:.2}x vs layerwise",
                    greedy_pgf / pgf,
                    layer_pgf / pgf
                );
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "  achieved mean speedup {:.2}x (reference average: 1.78x throughput gain)",
        mean(&throughput_ratios)
    );
    println!(
        "  achieved mean EDP gain {:.2}x (reference averages: 1.28x vs greedy, 2.08x vs layerwise)",
        mean(&edp_ratios)
    );
    assert!(throughput_ratios.iter().all(|&r| r >= 1.0));
    assert!(
        t.elapsed().as_secs_f64() < 1800.0,
        "criterion 4 exceeded 30 min"
    );
    pass(4, "COMPASS PGF <= greedy and layerwise on all 9 pairs x 3 seeds", t);
}

// --- criterion 5: amortization laws -----------------------------------------

#[test]
fn criterion_5_amortization_laws() {
    let t = Instant::now();
    let mut req = CompileRequest::new("resnet18", "S", Scheme::Greedy);
    req.seed = 0;
    let sweep = cmd_sweep(&req, &[1, 2, 4, 8, 16]).unwrap();
    let rows = &sweep.report.rows;
    let w1 = rows[0].write_energy_per_sample_pj;
    let w16 = rows[4].write_energy_per_sample_pj;
    let rel = (w16 - w1 / 16.0).abs() / (w1 / 16.0);
    assert!(rel < 1e-12, "write energy amortization off by {rel}");
    for pair in rows.windows(2) {
        assert!(
            pair[1].throughput_samples_per_s >= pair[0].throughput_samples_per_s,
            "throughput dropped from batch {} to {}",
            pair[0].batch,
            pair[1].batch
        );
    }
    pass(5, "write energy amortizes exactly 1/B; throughput monotone in B", t);
}

// --- criterion 6: invariant fuzzing ------------------------------------------

#[test]
fn criterion_6_invariant_fuzzing() {
    let t = Instant::now();
    let graph = build_benchmark("resnet18").unwrap();
    let chip = builtin_chip("S").unwrap();
    let model = decompose(&graph, &chip).unwrap();
    let vmap = build_validity_map(&model, &chip);
    let w = Workload::new(&graph, &model, &chip, CostOptions::default());

    // 1,000 random groups
    for seed in 0..1000u64 {
        let g = generate_random_group(&w, &vmap, seed);
        let bad = check_group_invariants(&g, &w, &vmap);
        assert!(bad.is_empty(), "random group seed {seed}: {bad:?}");
    }

    // 10,000 random mutations over a small population
    let pop: Vec<Individual> = (0..20u64)
        .map(|s| {
            let group = generate_random_group(&w, &vmap, 5000 + s);
            let (pgf, partition_fitness) = group_fitness(&w, &group, 16);
            Individual {
                group,
                pgf,
                partition_fitness,
                creation: s,
            }
        })
        .collect();
    let prefix = population_mean_prefix(&pop, model.len());
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let mut fallbacks = 0usize;
    for round in 0..10_000usize {
        let src = &pop[round % pop.len()];
        let (group, kind) = mutate(&w, &vmap, src, &prefix, &[0.25; 4], &mut rng).unwrap();
        if kind == MutationKind::CloneFallback {
            fallbacks += 1;
        }
        let bad = check_group_invariants(&group, &w, &vmap);
        assert!(bad.is_empty(), "mutation round {round} ({kind:?}): {bad:?}");
    }
    assert!(
        t.elapsed().as_secs_f64() < 300.0,
        "criterion 6 exceeded 5 min"
    );
    pass(
        6,
        &format!("1,000 groups + 10,000 mutations sound ({fallbacks} clone fallbacks)"),
        t,
    );
}

// --- criterion 7: elitism & determinism --------------------------------------

#[test]
fn criterion_7_elitism_and_determinism() {
    let t = Instant::now();
    let mut req = CompileRequest::new("resnet18", "M", Scheme::Compass);
    req.batch = 16;
    req.seed = 7;
    req.workers = Some(1);
    let a = cmd_compile(&req).unwrap();
    req.workers = Some(4);
    let b = cmd_compile(&req).unwrap();
    assert_eq!(a.report_json, b.report_json, "reports differ across workers");
    assert_eq!(a.convergence_csv, b.convergence_csv);
    assert_eq!(a.instructions, b.instructions);
    assert_eq!(a.trace, b.trace);

    // best PGF monotone non-increasing over generations
    let csv = a.convergence_csv.as_ref().unwrap();
    let mut best_per_gen: Vec<f64> = Vec::new();
    for line in csv.lines().skip(1) {
        let mut fields = line.split(',');
        let generation: usize = fields.next().unwrap().parse().unwrap();
        let _slot = fields.next().unwrap();
        let pgf: f64 = fields.next().unwrap().parse().unwrap();
        if best_per_gen.len() <= generation {
            best_per_gen.resize(generation + 1, f64::INFINITY);
        }
        best_per_gen[generation] = best_per_gen[generation].min(pgf);
    }
    for pair in best_per_gen.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "best PGF increased: {pair:?}");
    }
    pass(
        7,
        "byte-identical artifacts at any worker count; best PGF monotone",
        t,
    );
}

// --- criterion 8: scheduler consistency ---------------------------------------

#[test]
fn criterion_8_scheduler_consistency() {
    let t = Instant::now();
    let batch = 16;
    let mut cases: Vec<(String, String, Scheme, u64)> = Vec::new();
    for model in ["vgg16", "resnet18", "squeezenet"] {
        for chip in ["S", "M", "L"] {
            cases.push((model.into(), chip.into(), Scheme::Greedy, 0));
            cases.push((model.into(), chip.into(), Scheme::Layerwise, 0));
        }
    }
    cases.push(("resnet18".into(), "M".into(), Scheme::Compass, 0));

    for (model_name, chip_name, scheme, seed) in cases {
        let graph = build_benchmark(&model_name).unwrap();
        let chip = builtin_chip(&chip_name).unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let group = match scheme {
            Scheme::Greedy => greedy_group(&w, &vmap),
            Scheme::Layerwise => layerwise_group(&w, &vmap),
            Scheme::Compass => {
                let params = GaParams {
                    seed,
                    generations: 10,
                    ..GaParams::default()
                };
                run_compass(&w, &vmap, &params, batch).unwrap().best.group
            }
        };
        let sched = compass_core::scheduler::schedule(&w, &group, batch).unwrap();

        // trace byte totals equal the cost model's DRAM counters exactly
        let cost_weight: u64 = sched.costs.iter().map(|c| c.weight_dram_bytes).sum();
        let cost_act: u64 = sched
            .costs
            .iter()
            .map(|c| batch as u64 * (c.entry_bytes_per_sample + c.exit_bytes_per_sample))
            .sum();
        assert_eq!(sched.weight_read_bytes, cost_weight, "{model_name}-{chip_name}");
        assert_eq!(sched.load_bytes + sched.store_bytes, cost_act);
        let lines: u64 = sched
            .streams
            .iter()
            .flat_map(|s| s.instructions.iter())
            .filter(|i| i.addr.is_some())
            .map(|i| i.bytes.div_ceil(compass_core::scheduler::DRAM_BLOCK_BYTES))
            .sum();
        assert_eq!(sched.trace.len() as u64, lines);

        // per-partition stream makespan within one cycle of the model
        for ((start, end), cost) in sched.partition_makespans.iter().zip(&sched.costs) {
            let makespan = (end - start) as f64;
            assert!(
                (makespan - cost.latency_ns).abs() <= 1.0,
                "{model_name}-{chip_name} {}: makespan {makespan} vs {}",
                scheme.label(),
                cost.latency_ns
            );
        }

        compass_core::scheduler::check_dependence_safety(&sched)
            .unwrap_or_else(|e| panic!("{model_name}-{chip_name} {}: {e}", scheme.label()));
    }
    pass(
        8,
        "trace totals exact, makespans within 1 cycle, dependences safe",
        t,
    );
}
