//! Corpus-level BLEU: clipped modified n-gram precisions (n = 1..4) pooled
//! over the corpus, times a brevity penalty, scaled 0-100.
//!
//! Two independent routes compute the same number: [`bleu`] counts directly
//! into corpus totals, while [`bleu_sufficient_stats`] / [`stats_to_bleu`]
//! go through per-sentence stat vectors (the form the tuner's envelope walk
//! needs). Tests hold the two routes to each other.

use std::collections::HashMap;
use std::ops::{Add, AddAssign};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const MAX_N: usize = 4;

/// The result of scoring a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Clipped n-gram matches, n = 1..4.
    pub matches: [u64; MAX_N],
    /// Candidate n-gram totals, n = 1..4.
    pub totals: [u64; MAX_N],
    pub brevity_penalty: f64,
    /// 100 * BP * exp(mean of ln p_n); zero when any p_n is zero.
    pub score: f64,
    pub candidate_length: u64,
    pub reference_length: u64,
}

impl BleuReport {
    pub fn precision(&self, n: usize) -> f64 {
        if self.totals[n - 1] == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / self.totals[n - 1] as f64
        }
    }

    /// One-line summary in the conventional reporting format.
    pub fn summary(&self) -> String {
        let ratio = if self.reference_length == 0 {
            0.0
        } else {
            self.candidate_length as f64 / self.reference_length as f64
        };
        format!(
            "BLEU = {:.2}, p1/p2/p3/p4 = {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.score,
            100.0 * self.precision(1),
            100.0 * self.precision(2),
            100.0 * self.precision(3),
            100.0 * self.precision(4),
            self.brevity_penalty,
            ratio,
            self.candidate_length,
            self.reference_length,
        )
    }
}

fn finish_report(
    matches: [u64; MAX_N],
    totals: [u64; MAX_N],
    candidate_length: u64,
    reference_length: u64,
) -> BleuReport {
    let brevity_penalty = if candidate_length == 0 {
        0.0
    } else if candidate_length >= reference_length {
        1.0
    } else {
        (1.0 - reference_length as f64 / candidate_length as f64).exp()
    };
    let mut log_sum = 0.0;
    let mut all_positive = candidate_length > 0;
    for n in 0..MAX_N {
        if matches[n] == 0 || totals[n] == 0 {
            all_positive = false;
            break;
        }
        log_sum += (matches[n] as f64 / totals[n] as f64).ln();
    }
    let score = if all_positive {
        100.0 * brevity_penalty * (log_sum / MAX_N as f64).exp()
    } else {
        0.0
    };
    BleuReport {
        matches,
        totals,
        brevity_penalty,
        score,
        candidate_length,
        reference_length,
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-sentence effective reference length: closest to the candidate
/// length, ties to the shorter reference.
fn effective_ref_len(cand_len: usize, refs: &[Sentence]) -> u64 {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(cand_len), l))
        .unwrap_or(0) as u64
}

/// Corpus BLEU computed directly: for every sentence, candidate n-gram
/// counts are clipped against the maximum count in any of its references,
/// pooled corpus-wide, then combined with the brevity penalty.
pub fn bleu(hypotheses: &[Sentence], references: &[Vec<Sentence>]) -> Result<BleuReport> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidArg("no hypotheses to score".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArg(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0u64; MAX_N];
    let mut totals = [0u64; MAX_N];
    let mut cand_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::InvalidArg(
                "every hypothesis needs at least one reference".into(),
            ));
        }
        cand_len += hyp.len() as u64;
        ref_len += effective_ref_len(hyp.len(), refs);
        for n in 1..=MAX_N {
            let hyp_counts = ngram_counts(&hyp.tokens, n);
            let ref_counts: Vec<HashMap<&[String], u64>> =
                refs.iter().map(|r| ngram_counts(&r.tokens, n)).collect();
            for (gram, &count) in &hyp_counts {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += count.min(max_ref);
                totals[n - 1] += count;
            }
        }
    }
    Ok(finish_report(matches, totals, cand_len, ref_len))
}

/// Additive per-sentence BLEU sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BleuStats {
    pub matches: [u64; MAX_N],
    pub totals: [u64; MAX_N],
    pub candidate_length: u64,
    pub reference_length: u64,
}

impl Add for BleuStats {
    type Output = BleuStats;

    fn add(mut self, rhs: BleuStats) -> BleuStats {
        self += rhs;
        self
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: BleuStats) {
        for n in 0..MAX_N {
            self.matches[n] += rhs.matches[n];
            self.totals[n] += rhs.totals[n];
        }
        self.candidate_length += rhs.candidate_length;
        self.reference_length += rhs.reference_length;
    }
}

/// The stat vector of one hypothesis against its references. Summing these
/// over any sentence subset and applying [`stats_to_bleu`] equals scoring
/// the subset directly.
pub fn bleu_sufficient_stats(hypothesis: &Sentence, references: &[Sentence]) -> BleuStats {
    let mut stats = BleuStats {
        candidate_length: hypothesis.len() as u64,
        reference_length: effective_ref_len(hypothesis.len(), references),
        ..BleuStats::default()
    };
    for n in 1..=MAX_N {
        if hypothesis.len() < n {
            break;
        }
        let mut hyp_counts: HashMap<&[String], u64> = HashMap::new();
        for w in hypothesis.tokens.windows(n) {
            *hyp_counts.entry(w).or_insert(0) += 1;
        }
        for (gram, &count) in &hyp_counts {
            let mut max_ref = 0u64;
            for r in references {
                if r.len() >= n {
                    let c = r.tokens.windows(n).filter(|w| w == gram).count() as u64;
                    max_ref = max_ref.max(c);
                }
            }
            stats.matches[n - 1] += count.min(max_ref);
            stats.totals[n - 1] += count;
        }
    }
    stats
}

/// Corpus BLEU from summed sufficient statistics.
pub fn stats_to_bleu(stats: BleuStats) -> BleuReport {
    finish_report(
        stats.matches,
        stats.totals,
        stats.candidate_length,
        stats.reference_length,
    )
}

/// Smoothed corpus BLEU used inside tuning: add-1 on matches and totals for
/// n >= 2 so candidates without higher-order matches stay comparable.
pub fn stats_to_bleu_smoothed(stats: BleuStats) -> f64 {
    if stats.candidate_length == 0 || stats.totals[0] == 0 || stats.matches[0] == 0 {
        return 0.0;
    }
    let bp = if stats.candidate_length >= stats.reference_length {
        1.0
    } else {
        (1.0 - stats.reference_length as f64 / stats.candidate_length as f64).exp()
    };
    let mut log_sum = (stats.matches[0] as f64 / stats.totals[0] as f64).ln();
    for n in 1..MAX_N {
        log_sum += ((stats.matches[n] + 1) as f64 / (stats.totals[n] + 1) as f64).ln();
    }
    100.0 * bp * (log_sum / MAX_N as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;

    fn sent(s: &str) -> Sentence {
        Sentence::from_tokens(s, Lang::Target)
    }

    #[test]
    fn perfect_match_is_exactly_100() {
        let hyps = vec![sent("the cat sat"), sent("a dog ran far away")];
        let refs: Vec<Vec<Sentence>> = hyps.iter().map(|h| vec![h.clone()]).collect();
        let report = bleu(&hyps, &refs).unwrap();
        assert_eq!(report.score, 100.0);
        assert_eq!(report.brevity_penalty, 1.0);
        for n in 1..=4 {
            assert_eq!(report.precision(n), 1.0);
        }
    }

    #[test]
    fn hand_derived_six_token_example() {
        let hyps = vec![sent("the cat sat on the mat")];
        let refs = vec![vec![sent("the cat sat on a mat")]];
        let report = bleu(&hyps, &refs).unwrap();
        assert_eq!(report.matches, [5, 3, 2, 1]);
        assert_eq!(report.totals, [6, 5, 4, 3]);
        assert_eq!(report.brevity_penalty, 1.0);
        assert!((report.score - 53.73).abs() < 0.1, "score {}", report.score);
    }

    #[test]
    fn clipping_caps_repeated_words() {
        let hyps = vec![sent("the the the the")];
        let refs = vec![vec![sent("the cat")]];
        let report = bleu(&hyps, &refs).unwrap();
        assert_eq!(report.matches[0], 1);
        assert_eq!(report.totals[0], 4);
        assert!((report.precision(1) - 0.25).abs() < 1e-12);
        assert_eq!(report.precision(2), 0.0);
        assert_eq!(report.score, 0.0);
    }

    #[test]
    fn input_validation() {
        assert!(bleu(&[], &[]).is_err());
        let hyps = vec![sent("a")];
        assert!(bleu(&hyps, &[]).is_err());
        assert!(bleu(&hyps, &[vec![]]).is_err());
    }

    #[test]
    fn brevity_penalty_direction() {
        // shorter candidate than reference is penalized
        let hyps = vec![sent("the cat")];
        let refs = vec![vec![sent("the cat sat on a mat")]];
        let report = bleu(&hyps, &refs).unwrap();
        assert!(report.brevity_penalty < 1.0);
        // longer candidate is not
        let hyps = vec![sent("the cat sat down")];
        let refs = vec![vec![sent("the cat")]];
        let report = bleu(&hyps, &refs).unwrap();
        assert_eq!(report.brevity_penalty, 1.0);
    }

    #[test]
    fn effective_reference_length_ties_to_shorter() {
        // candidate length 3; refs of length 2 and 4 are equally close
        let hyps = vec![sent("a b c")];
        let refs = vec![vec![sent("a b"), sent("a b c d")]];
        let report = bleu(&hyps, &refs).unwrap();
        assert_eq!(report.reference_length, 2);
    }

    #[test]
    fn permutation_invariance() {
        let hyps = vec![sent("the cat sat"), sent("a dog"), sent("green ideas sleep")];
        let refs = vec![
            vec![sent("the cat sat down")],
            vec![sent("one dog")],
            vec![sent("green ideas sleep furiously")],
        ];
        let direct = bleu(&hyps, &refs).unwrap();
        let perm = [2usize, 0, 1];
        let hyps_p: Vec<Sentence> = perm.iter().map(|&i| hyps[i].clone()).collect();
        let refs_p: Vec<Vec<Sentence>> = perm.iter().map(|&i| refs[i].clone()).collect();
        let permuted = bleu(&hyps_p, &refs_p).unwrap();
        assert!((direct.score - permuted.score).abs() < 1e-12);
    }

    fn xorshift(seed: &mut u64) -> u64 {
        *seed ^= *seed << 13;
        *seed ^= *seed >> 7;
        *seed ^= *seed << 17;
        *seed
    }

    fn random_sentence(seed: &mut u64, vocab: &[&str], max_len: usize) -> Sentence {
        let len = 1 + (xorshift(seed) % max_len as u64) as usize;
        let tokens: Vec<String> = (0..len)
            .map(|_| vocab[(xorshift(seed) % vocab.len() as u64) as usize].to_string())
            .collect();
        Sentence::new(tokens, Lang::Target)
    }

    #[test]
    fn stats_path_equals_direct_path() {
        let vocab = ["the", "cat", "dog", "sat", "ran", "on", "a", "mat"];
        let mut seed = 0xDEADBEEFu64;
        for _ in 0..100 {
            let n = 1 + (xorshift(&mut seed) % 6) as usize;
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            for _ in 0..n {
                hyps.push(random_sentence(&mut seed, &vocab, 8));
                let n_refs = 1 + (xorshift(&mut seed) % 2) as usize;
                refs.push(
                    (0..n_refs)
                        .map(|_| random_sentence(&mut seed, &vocab, 8))
                        .collect::<Vec<_>>(),
                );
            }
            let direct = bleu(&hyps, &refs).unwrap();
            let mut sum = BleuStats::default();
            for (h, r) in hyps.iter().zip(&refs) {
                sum += bleu_sufficient_stats(h, r);
            }
            let via_stats = stats_to_bleu(sum);
            assert!(
                (direct.score - via_stats.score).abs() < 1e-9,
                "{} vs {}",
                direct.score,
                via_stats.score
            );
            assert_eq!(direct.matches, via_stats.matches);
            assert_eq!(direct.totals, via_stats.totals);
            assert!(direct.score >= 0.0 && direct.score <= 100.0);
        }
    }

    #[test]
    fn stats_are_additive() {
        let h1 = sent("the cat sat");
        let r1 = vec![sent("the cat sat")];
        let h2 = sent("a dog ran");
        let r2 = vec![sent("a dog walked")];
        let s1 = bleu_sufficient_stats(&h1, &r1);
        let s2 = bleu_sufficient_stats(&h2, &r2);
        let sum = s1 + s2;
        for n in 0..MAX_N {
            assert_eq!(sum.matches[n], s1.matches[n] + s2.matches[n]);
            assert_eq!(sum.totals[n], s1.totals[n] + s2.totals[n]);
        }
        assert_eq!(
            sum.candidate_length,
            s1.candidate_length + s2.candidate_length
        );
    }

    #[test]
    fn perfect_sentence_stats_saturate() {
        let h = sent("the cat sat on a mat");
        let stats = bleu_sufficient_stats(&h, &[h.clone()]);
        assert_eq!(stats.matches, stats.totals);
    }

    #[test]
    fn smoothed_bleu_keeps_zero_match_candidates_comparable() {
        let h1 = sent("the cat");
        let h2 = sent("zz qq");
        let refs = vec![sent("the cat sat")];
        let s1 = stats_to_bleu_smoothed(bleu_sufficient_stats(&h1, &refs));
        let s2 = stats_to_bleu_smoothed(bleu_sufficient_stats(&h2, &refs));
        assert!(s1 > s2);
        // unsmoothed would give zero for both (no 4-gram matches)
        assert_eq!(stats_to_bleu(bleu_sufficient_stats(&h1, &refs)).score, 0.0);
    }

    #[test]
    fn summary_format() {
        let hyps = vec![sent("the cat sat on the mat")];
        let refs = vec![vec![sent("the cat sat on a mat")]];
        let report = bleu(&hyps, &refs).unwrap();
        let line = report.summary();
        assert!(line.starts_with("BLEU = 53.7"), "{line}");
        assert!(line.contains("p1/p2/p3/p4 = 83.3/60.0/50.0/33.3"), "{line}");
        assert!(line.contains("hyp_len=6, ref_len=6"), "{line}");
    }
}
