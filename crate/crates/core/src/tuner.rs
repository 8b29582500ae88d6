//! Minimum-error-rate weight tuning: iterative n-best decoding over a dev
//! set, merged candidate pools, and coordinate-wise exact line search on the
//! pool BLEU surface.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bleu::{self, BleuStats};
use crate::corpus::{ParallelCorpus, Sentence};
use crate::decoder::{self, score_features, DecodeParams};
use crate::error::{Error, Result};
use crate::model::{FeatureVector, FeatureWeights, TranslationModel, FEATURE_COUNT, F_LM};

/// Tuning knobs.
#[derive(Debug, Clone)]
pub struct TuneParams {
    pub max_iterations: usize,
    pub nbest_size: usize,
    pub num_restarts: usize,
    pub seed: u64,
    pub decode: DecodeParams,
}

impl Default for TuneParams {
    fn default() -> Self {
        TuneParams {
            max_iterations: 10,
            nbest_size: 100,
            num_restarts: 8,
            seed: 42,
            decode: DecodeParams::default(),
        }
    }
}

/// One candidate translation in the pool.
#[derive(Debug, Clone)]
pub struct PoolCandidate {
    pub tokens: Vec<String>,
    pub features: FeatureVector,
    pub stats: BleuStats,
}

/// Accumulated n-best candidates per dev sentence, deduplicated by target
/// string across iterations.
#[derive(Debug, Default)]
pub struct TuningPool {
    pub(crate) sentences: Vec<Vec<PoolCandidate>>,
    seen: Vec<HashSet<String>>,
}

impl TuningPool {
    fn new(size: usize) -> Self {
        TuningPool {
            sentences: vec![Vec::new(); size],
            seen: vec![HashSet::new(); size],
        }
    }

    fn insert(&mut self, sentence: usize, candidate: PoolCandidate) -> bool {
        if self.seen[sentence].insert(candidate.tokens.join(" ")) {
            self.sentences[sentence].push(candidate);
            true
        } else {
            false
        }
    }

    pub fn total_candidates(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// The 1-best candidate per sentence under the given weights; exact score
/// ties go to the lexicographically smallest target string.
fn select<'a>(candidates: &'a [PoolCandidate], weights: &FeatureWeights) -> &'a PoolCandidate {
    let mut best = &candidates[0];
    let mut best_score = score_features(&best.features, weights);
    for c in &candidates[1..] {
        let score = score_features(&c.features, weights);
        if score > best_score || (score == best_score && c.tokens < best.tokens) {
            best = c;
            best_score = score;
        }
    }
    best
}

/// Smoothed corpus BLEU of the pool's 1-best selections under `weights`.
pub fn pool_bleu(pool: &TuningPool, weights: &FeatureWeights) -> f64 {
    let mut stats = BleuStats::default();
    for sentence in &pool.sentences {
        if !sentence.is_empty() {
            stats += select(sentence, weights).stats;
        }
    }
    bleu::stats_to_bleu_smoothed(stats)
}

/// Upper envelope of candidate score lines along one coordinate direction:
/// returns (x_start, candidate index) intervals with x ascending.
fn envelope(candidates: &[PoolCandidate], weights: &FeatureWeights, coord: usize) -> Vec<(f64, usize)> {
    // one line per candidate: score(gamma) = intercept + gamma * slope
    let mut lines: Vec<(f64, f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            (
                c.features[coord],
                score_features(&c.features, weights),
                idx,
            )
        })
        .collect();
    // sort by slope; among equal slopes keep the highest intercept (ties to
    // the lexicographically smallest string, matching `select`)
    lines.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(b.1.total_cmp(&a.1))
            .then_with(|| candidates[a.2].tokens.cmp(&candidates[b.2].tokens))
    });
    lines.dedup_by(|next, top| next.0 == top.0);

    let mut hull: Vec<(f64, (f64, f64, usize))> = Vec::new();
    for line in lines {
        loop {
            match hull.last() {
                None => {
                    hull.push((f64::NEG_INFINITY, line));
                    break;
                }
                Some(&(x_top, top)) => {
                    // crossing point with the current hull top
                    let x = (top.1 - line.1) / (line.0 - top.0);
                    if x <= x_top {
                        hull.pop();
                    } else {
                        hull.push((x, line));
                        break;
                    }
                }
            }
        }
    }
    hull.into_iter().map(|(x, (_, _, idx))| (x, idx)).collect()
}

/// Exact line search along one coordinate: walks the merged breakpoints of
/// all sentence envelopes, evaluating smoothed corpus BLEU per interval.
/// Returns the best (step, bleu) or `None` when no breakpoint exists.
fn line_search(
    pool: &TuningPool,
    weights: &FeatureWeights,
    coord: usize,
) -> Option<(f64, f64)> {
    let mut events: Vec<(f64, usize, usize)> = Vec::new(); // (x, sentence, candidate)
    let mut stats = BleuStats::default();
    let mut current: Vec<Option<usize>> = vec![None; pool.sentences.len()];
    for (s_idx, sentence) in pool.sentences.iter().enumerate() {
        if sentence.is_empty() {
            continue;
        }
        let env = envelope(sentence, weights, coord);
        stats += sentence[env[0].1].stats;
        current[s_idx] = Some(env[0].1);
        for &(x, cand) in &env[1..] {
            events.push((x, s_idx, cand));
        }
    }
    if events.is_empty() {
        return None;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // candidate (gamma, bleu) per interval; ties prefer smaller |gamma|
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |gamma: f64, bleu: f64, best: &mut Option<(f64, f64)>| {
        let better = match *best {
            None => true,
            Some((g, b)) => {
                bleu > b
                    || (bleu == b
                        && (gamma.abs() < g.abs() || (gamma.abs() == g.abs() && gamma < g)))
            }
        };
        if better {
            *best = Some((gamma, bleu));
        }
    };

    let first_x = events[0].0;
    consider(first_x - 1.0, bleu::stats_to_bleu_smoothed(stats), &mut best);
    let mut i = 0;
    while i < events.len() {
        let x = events[i].0;
        while i < events.len() && events[i].0 == x {
            let (_, s_idx, cand) = events[i];
            if let Some(old) = current[s_idx] {
                // replace the sentence's stats with the new interval winner
                let sentence = &pool.sentences[s_idx];
                let mut sum = stats;
                subtract(&mut sum, &sentence[old].stats);
                stats = sum;
                stats += sentence[cand].stats;
                current[s_idx] = Some(cand);
            }
            i += 1;
        }
        let gamma = if i < events.len() {
            (x + events[i].0) / 2.0
        } else {
            x + 1.0
        };
        consider(gamma, bleu::stats_to_bleu_smoothed(stats), &mut best);
    }
    best
}

fn subtract(stats: &mut BleuStats, rhs: &BleuStats) {
    for n in 0..bleu::MAX_N {
        stats.matches[n] -= rhs.matches[n];
        stats.totals[n] -= rhs.totals[n];
    }
    stats.candidate_length -= rhs.candidate_length;
    stats.reference_length -= rhs.reference_length;
}

/// Greedy coordinate descent: per round, run the exact line search on every
/// coordinate and apply the best strictly-improving step; stop when none
/// improves. Returns the weights, the final pool BLEU, and the BLEU after
/// each accepted step.
fn descend(pool: &TuningPool, start: &FeatureWeights) -> (FeatureWeights, f64, Vec<f64>) {
    let mut weights = start.clone();
    let mut current = pool_bleu(pool, &weights);
    let mut accepted = Vec::new();
    loop {
        let mut best_move: Option<(usize, f64, f64)> = None;
        for coord in 0..FEATURE_COUNT {
            if let Some((gamma, bleu)) = line_search(pool, &weights, coord) {
                let better = match best_move {
                    None => bleu > current + 1e-12,
                    Some((_, _, b)) => bleu > b,
                };
                if better && bleu > current + 1e-12 {
                    best_move = Some((coord, gamma, bleu));
                }
            }
        }
        match best_move {
            Some((coord, gamma, bleu)) => {
                weights.0[coord] += gamma;
                current = bleu;
                accepted.push(bleu);
            }
            None => break,
        }
    }
    (weights, current, accepted)
}

/// Optimizes weights over the pool: coordinate descent from `start` plus
/// `num_restarts` random restarts (uniform in [-1, 1] per coordinate, LM
/// weight forced positive), best pool BLEU wins, ties to the earliest
/// candidate. Never returns weights scoring below `start`.
pub fn optimize_over_pool(
    pool: &TuningPool,
    start: &FeatureWeights,
    num_restarts: usize,
    seed: u64,
) -> (FeatureWeights, f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![start.clone()];
    for _ in 0..num_restarts {
        let mut w = [0.0f64; FEATURE_COUNT];
        for v in &mut w {
            *v = rng.gen_range(-1.0..=1.0);
        }
        w[F_LM] = w[F_LM].abs();
        starts.push(FeatureWeights(w));
    }
    let mut best: Option<(FeatureWeights, f64, Vec<f64>)> = None;
    for s in &starts {
        let (w, bleu, accepted) = descend(pool, s);
        let better = match &best {
            None => true,
            Some((_, b, _)) => bleu > *b,
        };
        if better {
            best = Some((w, bleu, accepted));
        }
    }
    best.expect("at least the start descent ran")
}

/// One tuning iteration record.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Weights used for this iteration's dev decode.
    pub weights: FeatureWeights,
    /// Unsmoothed corpus BLEU of the 1-best decode under those weights.
    pub dev_bleu: f64,
    /// Smoothed pool BLEU after reweighting on the merged pool.
    pub pool_bleu: f64,
}

/// Full record of a tuning run.
#[derive(Debug, Clone, Default)]
pub struct TuningTrace {
    pub entries: Vec<TraceEntry>,
    /// Pool BLEU after each accepted line-search step of the winning
    /// descents, in order; non-decreasing within each iteration.
    pub accepted_step_bleus: Vec<f64>,
}

impl TuningTrace {
    /// `iter w0 .. w13 dev_bleu` per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for entry in &self.entries {
            let weights: Vec<String> = entry.weights.0.iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(w, "{} {} {:.4}", entry.iteration, weights.join(" "), entry.dev_bleu)
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Iterative n-best tuning: decode the dev set, merge candidates into the
/// pool, optimize weights over the pool, and repeat until the pool stops
/// growing or `max_iterations` is reached. Returns the weights whose 1-best
/// dev decode scored the highest corpus BLEU, leaving them installed on the
/// model.
pub fn tune(
    model: &mut TranslationModel,
    dev: &ParallelCorpus,
    init: FeatureWeights,
    params: &TuneParams,
) -> Result<(FeatureWeights, TuningTrace)> {
    if dev.is_empty() {
        return Err(Error::InvalidArg("dev corpus must be nonempty".into()));
    }
    if init.0.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArg("initial weights must be finite".into()));
    }
    let sources: Vec<&Sentence> = dev.pairs.iter().map(|(s, _)| s).collect();
    let references: Vec<Vec<Sentence>> = dev.pairs.iter().map(|(_, t)| vec![t.clone()]).collect();

    let mut decode_params = params.decode.clone();
    decode_params.nbest_size = params.nbest_size;

    let mut pool = TuningPool::new(dev.len());
    let mut trace = TuningTrace::default();
    let mut weights = init;

    for iteration in 1..=params.max_iterations {
        model.weights = weights.clone();
        let mut one_best = Vec::with_capacity(sources.len());
        let mut added = 0usize;
        for (s_idx, src) in sources.iter().enumerate() {
            let result = decoder::translate(model, src, &decode_params)?;
            one_best.push(result.best.clone());
            for entry in result.nbest {
                let stats = bleu::bleu_sufficient_stats(
                    &Sentence::new(entry.tokens.clone(), crate::corpus::Lang::Target),
                    &references[s_idx],
                );
                if pool.insert(
                    s_idx,
                    PoolCandidate {
                        tokens: entry.tokens,
                        features: entry.features,
                        stats,
                    },
                ) {
                    added += 1;
                }
            }
        }
        let dev_bleu = bleu::bleu(&one_best, &references)?.score;

        if added == 0 {
            trace.entries.push(TraceEntry {
                iteration,
                weights: weights.clone(),
                dev_bleu,
                pool_bleu: pool_bleu(&pool, &weights),
            });
            break;
        }

        let (optimized, opt_bleu, accepted) =
            optimize_over_pool(&pool, &weights, params.num_restarts, params.seed + iteration as u64);
        trace.entries.push(TraceEntry {
            iteration,
            weights: weights.clone(),
            dev_bleu,
            pool_bleu: opt_bleu,
        });
        trace.accepted_step_bleus.extend(accepted);
        weights = optimized;
    }

    let best = trace
        .entries
        .iter()
        .max_by(|a, b| {
            a.dev_bleu
                .partial_cmp(&b.dev_bleu)
                .unwrap()
                .then(b.iteration.cmp(&a.iteration))
        })
        .expect("at least one iteration ran");
    let final_weights = best.weights.clone();
    model.weights = final_weights.clone();
    Ok((final_weights, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;

    fn candidate(tokens: &[&str], features: FeatureVector, refs: &[Sentence]) -> PoolCandidate {
        let sentence = Sentence::new(tokens.iter().map(|t| t.to_string()).collect(), Lang::Target);
        PoolCandidate {
            stats: bleu::bleu_sufficient_stats(&sentence, refs),
            tokens: sentence.tokens,
            features,
        }
    }

    fn feat(pairs: &[(usize, f64)]) -> FeatureVector {
        let mut f = [0.0; FEATURE_COUNT];
        for &(i, v) in pairs {
            f[i] = v;
        }
        f
    }

    fn two_candidate_pool() -> (TuningPool, Vec<Sentence>) {
        let refs = vec![Sentence::from_tokens("the cat sat on the mat", Lang::Target)];
        let mut pool = TuningPool::new(1);
        // candidate 0 matches the reference, candidate 1 does not; they
        // differ in feature 2 only
        pool.insert(
            0,
            candidate(
                &["the", "cat", "sat", "on", "the", "mat"],
                feat(&[(0, -1.0), (2, 2.0)]),
                &refs,
            ),
        );
        pool.insert(
            0,
            candidate(
                &["a", "dog", "ran", "far", "away", "now"],
                feat(&[(0, -1.0), (2, 5.0)]),
                &refs,
            ),
        );
        (pool, refs)
    }

    #[test]
    fn line_search_picks_the_half_line_with_higher_bleu() {
        let (pool, _) = two_candidate_pool();
        // under uniform weights candidate 1 wins (5 > 2); the line search
        // along coordinate 2 must step negative to flip the selection
        let weights = FeatureWeights::uniform();
        let (gamma, bleu) = line_search(&pool, &weights, 2).unwrap();
        assert!(gamma < 0.0, "gamma {gamma}");
        let mut moved = weights.clone();
        moved.0[2] += gamma;
        assert!((pool_bleu(&pool, &moved) - bleu).abs() < 1e-9);
        assert!(bleu > pool_bleu(&pool, &weights));
    }

    #[test]
    fn optimize_never_decreases_pool_bleu() {
        let (pool, _) = two_candidate_pool();
        for start in [FeatureWeights::uniform(), FeatureWeights::default_decoding()] {
            let before = pool_bleu(&pool, &start);
            let (_, after, accepted) = optimize_over_pool(&pool, &start, 4, 7);
            assert!(after >= before - 1e-12);
            let mut prev = 0.0;
            for b in accepted {
                assert!(b >= prev - 1e-12);
                prev = b;
            }
        }
    }

    #[test]
    fn dominating_candidate_means_no_breakpoints() {
        let refs = vec![Sentence::from_tokens("a b", Lang::Target)];
        let mut pool = TuningPool::new(1);
        pool.insert(0, candidate(&["a", "b"], feat(&[(0, 1.0)]), &refs));
        let weights = FeatureWeights::uniform();
        // single candidate: envelope has one line, no events on any coord
        for coord in 0..FEATURE_COUNT {
            assert!(line_search(&pool, &weights, coord).is_none());
        }
        let (w, bleu, accepted) = optimize_over_pool(&pool, &weights, 3, 1);
        assert_eq!(w.0, weights.0);
        assert!((bleu - pool_bleu(&pool, &weights)).abs() < 1e-12);
        assert!(accepted.is_empty());
    }

    /// Dense-grid oracle: the best grid BLEU along a coordinate never
    /// exceeds the envelope's best interval BLEU.
    #[test]
    fn envelope_dominates_dense_grid() {
        let refs = vec![Sentence::from_tokens("x y z w", Lang::Target)];
        let mut pool = TuningPool::new(2);
        pool.insert(0, candidate(&["x", "y", "z", "w"], feat(&[(1, 1.0), (3, -2.0)]), &refs));
        pool.insert(0, candidate(&["x", "y"], feat(&[(1, -1.0), (3, 1.0)]), &refs));
        pool.insert(0, candidate(&["q", "q", "q"], feat(&[(1, 0.5), (3, 3.0)]), &refs));
        let refs2 = vec![Sentence::from_tokens("u v", Lang::Target)];
        pool.insert(1, candidate(&["u", "v"], feat(&[(1, -0.5), (3, 0.7)]), &refs2));
        pool.insert(1, candidate(&["u"], feat(&[(1, 2.0), (3, -1.0)]), &refs2));

        let weights = FeatureWeights::uniform();
        for coord in [1usize, 3] {
            let envelope_best = match line_search(&pool, &weights, coord) {
                Some((_, b)) => b,
                None => pool_bleu(&pool, &weights),
            };
            let mut grid_best = 0.0f64;
            for k in 0..1000 {
                let gamma = -10.0 + 20.0 * k as f64 / 999.0;
                let mut w = weights.clone();
                w.0[coord] += gamma;
                grid_best = grid_best.max(pool_bleu(&pool, &w));
            }
            assert!(
                grid_best <= envelope_best + 1e-9,
                "coord {coord}: grid {grid_best} > envelope {envelope_best}"
            );
        }
    }

    #[test]
    fn pool_selection_is_scale_invariant() {
        let (pool, _) = two_candidate_pool();
        let w = FeatureWeights::default_decoding();
        assert_eq!(pool_bleu(&pool, &w), pool_bleu(&pool, &w.scaled(3.7)));
    }

    #[test]
    fn optimization_is_deterministic() {
        let (pool, _) = two_candidate_pool();
        let start = FeatureWeights::uniform();
        let (w1, b1, _) = optimize_over_pool(&pool, &start, 8, 42);
        let (w2, b2, _) = optimize_over_pool(&pool, &start, 8, 42);
        assert_eq!(b1.to_bits(), b2.to_bits());
        for (a, b) in w1.0.iter().zip(w2.0.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
