//! Genetic search over partition groups: elitist selection by
//! partition-group fitness (PGF), partition-score guided mutation with
//! four schemes (merge, split, move, fixed-random) and early stopping.
//!
//! Determinism: every random draw comes from a stream derived from
//! (seed, generation, slot), mutants are evaluated in parallel but
//! collected in slot order, and all sorts break ties by a creation
//! counter, so results are bit-identical at any worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost_model::{group_fitness, Workload};
use crate::decomposer::ValidityMap;
use crate::error::{Error, Result};
use crate::partitioner::{
    finalize_group, generate_random_group, random_walk, PartitionGroup,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaParams {
    pub generations: u32,
    pub population: usize,
    pub n_sel: usize,
    pub n_mut: usize,
    /// Probabilities of merge, split, move, fixed-random.
    pub mutation_weights: [f64; 4],
    pub early_stop_patience: u32,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            generations: 30,
            population: 100,
            n_sel: 20,
            n_mut: 80,
            mutation_weights: [0.25; 4],
            early_stop_patience: 5,
            seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_sel < 1 {
            return Err(Error::validation("n_sel", "must be >= 1"));
        }
        if self.n_sel + self.n_mut != self.population {
            return Err(Error::validation(
                "population",
                format!(
                    "n_sel ({}) + n_mut ({}) must equal population ({})",
                    self.n_sel, self.n_mut, self.population
                ),
            ));
        }
        let sum: f64 = self.mutation_weights.iter().sum();
        if self.mutation_weights.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(
                "mutation_weights",
                "probabilities must be >= 0 and sum to 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub group: PartitionGroup,
    /// Cached partition-group fitness (lower is better).
    pub pgf: f64,
    /// Cached per-partition fitness f(P).
    pub partition_fitness: Vec<f64>,
    /// Monotone counter for deterministic tie-breaking.
    pub creation: u64,
}

/// Relative partition scores R of one individual against the population.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub scores: Vec<f64>,
}

impl ScoreTable {
    /// Partition picked for mutation: the highest R (first on ties).
    pub fn worst(&self) -> usize {
        let mut best = 0;
        for (i, &r) in self.scores.iter().enumerate() {
            if r > self.scores[best] {
                best = i;
            }
        }
        best
    }

    /// Relatively best-performing partition: the lowest R (first on ties).
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (i, &r) in self.scores.iter().enumerate() {
            if r < self.scores[best] {
                best = i;
            }
        }
        best
    }
}

/// Population-mean prefix sums of the per-unit fitness m(x): entry `i`
/// averages sum_{k<i} m(x_k) over all individuals, each contributing m
/// per its own partitioning. F[p,q] = prefix[q] - prefix[p].
pub fn population_mean_prefix<'a>(
    pop: impl IntoIterator<Item = &'a Individual>,
    m: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0f64; m + 1];
    let mut n = 0usize;
    for ind in pop {
        n += 1;
        let mut run = 0.0;
        for (p, &f) in ind.group.partitions.iter().zip(&ind.partition_fitness) {
            let per_unit = f / p.span.len() as f64;
            for i in p.span.clone() {
                run += per_unit;
                acc[i + 1] += run;
            }
        }
    }
    for v in &mut acc {
        *v /= n as f64;
    }
    acc
}

/// Partition scores R = f(P) / F[a,b] of one individual.
pub fn partition_score(ind: &Individual, mean_prefix: &[f64]) -> Result<ScoreTable> {
    let mut scores = Vec::with_capacity(ind.group.partitions.len());
    for (p, &f) in ind.group.partitions.iter().zip(&ind.partition_fitness) {
        let expected = mean_prefix[p.span.end] - mean_prefix[p.span.start];
        if expected.is_nan() || expected <= 0.0 {
            return Err(Error::DegenerateExpectation(p.span.start, p.span.end));
        }
        scores.push(f / expected);
    }
    Ok(ScoreTable { scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Merge,
    Split,
    Move,
    FixedRandom,
    /// All four schemes failed validity; the mutant is an unmodified clone.
    CloneFallback,
}

fn spans_of(group: &PartitionGroup) -> Vec<std::ops::Range<usize>> {
    group.partitions.iter().map(|p| p.span.clone()).collect()
}

fn try_merge(
    ind: &Individual,
    mean_prefix: &[f64],
    vmap: &ValidityMap,
) -> Option<Vec<std::ops::Range<usize>>> {
    let spans = spans_of(&ind.group);
    if spans.len() < 2 {
        return None;
    }
    // worst consecutive pair by summed fitness over the expected fitness
    // of the combined span
    let mut worst = 0;
    let mut worst_score = f64::NEG_INFINITY;
    for k in 0..spans.len() - 1 {
        let f = ind.partition_fitness[k] + ind.partition_fitness[k + 1];
        let expected = mean_prefix[spans[k + 1].end] - mean_prefix[spans[k].start];
        let score = f / expected;
        if score > worst_score {
            worst_score = score;
            worst = k;
        }
    }
    let merged = spans[worst].start..spans[worst + 1].end;
    if !vmap.is_valid(merged.start, merged.end) {
        return None;
    }
    let mut out = spans;
    out[worst] = merged;
    out.remove(worst + 1);
    Some(out)
}

fn try_split(
    ind: &Individual,
    scores: &ScoreTable,
    w: &Workload,
    vmap: &ValidityMap,
    rng: &mut impl Rng,
) -> Option<Vec<std::ops::Range<usize>>> {
    let spans = spans_of(&ind.group);
    let target = scores.worst();
    let span = spans[target].clone();
    let candidates: Vec<usize> = w
        .model
        .aligned_in(span.start, span.end - 1)
        .into_iter()
        .filter(|&p| vmap.is_valid(span.start, p) && vmap.is_valid(p, span.end))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let cut = candidates[rng.gen_range(0..candidates.len())];
    let mut out = spans;
    out[target] = span.start..cut;
    out.insert(target + 1, cut..span.end);
    Some(out)
}

fn try_move(
    ind: &Individual,
    scores: &ScoreTable,
    w: &Workload,
    vmap: &ValidityMap,
    rng: &mut impl Rng,
) -> Option<Vec<std::ops::Range<usize>>> {
    let spans = spans_of(&ind.group);
    if spans.len() < 2 {
        return None;
    }
    let target = scores.worst();
    // shift one shared boundary by one accumulation group in either
    // direction; candidates are (boundary partition index, new position)
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    let mut consider = |k: usize, pos: usize| {
        // boundary between partitions k and k+1 moves to `pos`
        let left = spans[k].start..pos;
        let right = pos..spans[k + 1].end;
        if !left.is_empty()
            && !right.is_empty()
            && vmap.is_valid(left.start, left.end)
            && vmap.is_valid(right.start, right.end)
        {
            candidates.push((k, pos));
        }
    };
    for k in [target.wrapping_sub(1), target] {
        let Some(next) = k.checked_add(1) else { continue };
        if next >= spans.len() || k >= spans.len() {
            continue;
        }
        let boundary = spans[k].end;
        let before: Vec<usize> = w.model.aligned_in(spans[k].start, boundary - 1);
        if let Some(&pos) = before.last() {
            consider(k, pos);
        }
        let after: Vec<usize> = w.model.aligned_in(boundary, spans[next].end - 1);
        if let Some(&pos) = after.first() {
            consider(k, pos);
        }
    }
    if candidates.is_empty() {
        return None;
    }
    let (k, pos) = candidates[rng.gen_range(0..candidates.len())];
    let mut out = spans;
    out[k].end = pos;
    out[k + 1].start = pos;
    Some(out)
}

fn try_fixed_random(
    ind: &Individual,
    scores: &ScoreTable,
    w: &Workload,
    vmap: &ValidityMap,
    rng: &mut impl Rng,
) -> Option<Vec<std::ops::Range<usize>>> {
    let spans = spans_of(&ind.group);
    let keep = scores.best();
    let fixed = spans[keep].clone();
    let mut out = random_walk(w.model, vmap, rng, 0, fixed.start);
    out.push(fixed.clone());
    out.extend(random_walk(w.model, vmap, rng, fixed.end, w.model.len()));
    Some(out)
}

/// Mutate one partition group with one of the four schemes, drawn by the
/// configured weights. A scheme that cannot produce a valid result is
/// dropped and another drawn; when all four fail the unmodified group is
/// returned as a clone fallback.
pub fn mutate(
    w: &Workload,
    vmap: &ValidityMap,
    ind: &Individual,
    mean_prefix: &[f64],
    weights: &[f64; 4],
    rng: &mut impl Rng,
) -> Result<(PartitionGroup, MutationKind)> {
    let scores = partition_score(ind, mean_prefix)?;
    let mut remaining: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, p))
        .filter(|&(_, p)| p > 0.0)
        .collect();
    while !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&(_, p)| p).sum();
        let mut draw = rng.gen_range(0.0..total);
        let mut chosen = remaining.len() - 1;
        for (idx, &(_, p)) in remaining.iter().enumerate() {
            if draw < p {
                chosen = idx;
                break;
            }
            draw -= p;
        }
        let (scheme, _) = remaining.remove(chosen);
        let spans = match scheme {
            0 => try_merge(ind, mean_prefix, vmap),
            1 => try_split(ind, &scores, w, vmap, rng),
            2 => try_move(ind, &scores, w, vmap, rng),
            _ => try_fixed_random(ind, &scores, w, vmap, rng),
        };
        if let Some(spans) = spans {
            let kind = match scheme {
                0 => MutationKind::Merge,
                1 => MutationKind::Split,
                2 => MutationKind::Move,
                _ => MutationKind::FixedRandom,
            };
            return Ok((finalize_group(w, spans), kind));
        }
    }
    Ok((ind.group.clone(), MutationKind::CloneFallback))
}

/// One convergence-log record: an individual's fitness and partition
/// count in one generation, flagged by where it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub generation: u32,
    pub slot: usize,
    pub pgf: f64,
    pub partition_count: usize,
    /// "init", "survivor" or "mutant".
    pub origin: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Individual,
    pub log: Vec<GenerationRecord>,
    pub generations_run: u32,
    pub early_stopped: bool,
    pub clone_fallbacks: usize,
}

fn mix_seed(master: u64, generation: u64, slot: u64, tag: u64) -> u64 {
    // splitmix64 over the packed coordinates
    let mut x = master
        .wrapping_add(generation.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(slot.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(tag.wrapping_mul(0x94d049bb133111eb));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    x
}

fn sort_population(pop: &mut [(Individual, &'static str)]) {
    pop.sort_by(|a, b| {
        a.0.pgf
            .total_cmp(&b.0.pgf)
            .then(a.0.creation.cmp(&b.0.creation))
    });
}

/// Run the genetic search and return the best partition group found.
///
/// Each generation keeps the `n_sel` lowest-PGF individuals unmodified,
/// draws `n_mut` mutation sources uniformly with replacement from the
/// survivors, mutates each at its worst-scoring partition, and forms the
/// next population as survivors plus mutants. Stops after `generations`
/// rounds or when the best PGF has improved by less than 1e-6 relative
/// for `early_stop_patience` consecutive generations.
pub fn run_compass(
    w: &Workload,
    vmap: &ValidityMap,
    params: &GaParams,
    batch: u32,
) -> Result<GaOutcome> {
    params.validate()?;
    let m = w.model.len();
    let seed = params.seed;

    let evaluate = |group: PartitionGroup, creation: u64| -> Individual {
        let (pgf, partition_fitness) = group_fitness(w, &group, batch);
        Individual {
            group,
            pgf,
            partition_fitness,
            creation,
        }
    };

    let mut pop: Vec<(Individual, &'static str)> = (0..params.population)
        .into_par_iter()
        .map(|slot| {
            let group = generate_random_group(w, vmap, mix_seed(seed, 0, slot as u64, 1));
            (evaluate(group, slot as u64), "init")
        })
        .collect();

    let mut log = Vec::new();
    let mut best_so_far = f64::INFINITY;
    let mut stall = 0u32;
    let mut generations_run = 0;
    let mut early_stopped = false;
    let mut clone_fallbacks = 0usize;

    for g in 0..=params.generations {
        for (slot, (ind, origin)) in pop.iter().enumerate() {
            log.push(GenerationRecord {
                generation: g,
                slot,
                pgf: ind.pgf,
                partition_count: ind.group.partitions.len(),
                origin,
            });
        }
        sort_population(&mut pop);
        let best = pop[0].0.pgf;
        if g > 0 {
            let rel = (best_so_far - best) / best_so_far;
            if rel < 1e-6 {
                stall += 1;
            } else {
                stall = 0;
            }
        }
        best_so_far = best_so_far.min(best);
        generations_run = g;
        if g == params.generations {
            break;
        }
        if stall >= params.early_stop_patience {
            early_stopped = true;
            break;
        }

        let survivors: Vec<(Individual, &'static str)> = pop[..params.n_sel]
            .iter()
            .map(|(ind, _)| (ind.clone(), "survivor"))
            .collect();
        let mean_prefix = population_mean_prefix(pop.iter().map(|(i, _)| i), m);
        let mut sel_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, g as u64 + 1, 0, 2));
        let sources: Vec<usize> = (0..params.n_mut)
            .map(|_| sel_rng.gen_range(0..params.n_sel))
            .collect();

        let creation_base = params.population as u64 + g as u64 * params.n_mut as u64;
        let mutants: Vec<Result<(Individual, MutationKind)>> = (0..params.n_mut)
            .into_par_iter()
            .map(|slot| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(seed, g as u64 + 1, slot as u64, 3));
                let source = &pop[sources[slot]].0;
                let (group, kind) = mutate(
                    w,
                    vmap,
                    source,
                    &mean_prefix,
                    &params.mutation_weights,
                    &mut rng,
                )?;
                Ok((evaluate(group, creation_base + slot as u64), kind))
            })
            .collect();

        let mut next = survivors;
        for mutant in mutants {
            let (ind, kind) = mutant?;
            if kind == MutationKind::CloneFallback {
                clone_fallbacks += 1;
            }
            next.push((ind, "mutant"));
        }
        pop = next;
    }

    sort_population(&mut pop);
    Ok(GaOutcome {
        best: pop[0].0.clone(),
        log,
        generations_run,
        early_stopped,
        clone_fallbacks,
    })
}

/// Convergence log serialized as CSV (one row per individual per
/// generation).
pub fn convergence_csv(log: &[GenerationRecord]) -> String {
    let mut s = String::from("generation,slot,pgf,partition_count,origin\n");
    for r in log {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.generation, r.slot, r.pgf, r.partition_count, r.origin
        ));
    }
    s
}
