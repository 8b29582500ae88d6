//! Stack-based beam decoder: log-linear scoring over phrase options with
//! histogram pruning, hypothesis recombination, future-cost estimation and
//! n-best extraction from the recombination lattice.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::{self, Lang, Sentence};
use crate::error::{Error, Result};
use crate::lm::{NGramLanguageModel, START, STOP};
use crate::model::{
    DecoderConfig, FeatureVector, FeatureWeights, TranslationModel, F_BWD, F_DISTORTION,
    F_FWD, F_LM, F_PHI_SRC_TGT, F_PHI_TGT_SRC, F_LEX_SRC_TGT, F_LEX_TGT_SRC, F_PHRASE_PENALTY,
    F_WORD_PENALTY, FEATURE_COUNT,
};
use crate::phrase::candidate_spans;
use crate::reorder::orientation_between;

/// Fixed log-space penalty stored in each translation-score feature of an
/// out-of-vocabulary copy option.
pub const OOV_LOG_PENALTY: f64 = -10.0;

/// Coverage bitsets are u128, which caps decodable sentence length.
pub const MAX_DECODE_LEN: usize = 128;

/// Runtime decoding parameters.
#[derive(Debug, Clone)]
pub struct DecodeParams {
    pub stack_size: usize,
    pub distortion_limit: Option<usize>,
    pub nbest_size: usize,
    /// Disabling recombination keeps every hypothesis distinct; used by the
    /// exhaustive-search checks.
    pub recombine: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            stack_size: 100,
            distortion_limit: Some(6),
            nbest_size: 1,
            recombine: true,
        }
    }
}

impl DecodeParams {
    pub fn from_config(config: &DecoderConfig) -> Self {
        DecodeParams {
            stack_size: config.stack_size,
            distortion_limit: config.distortion_limit,
            ..DecodeParams::default()
        }
    }
}

/// One entry of an n-best list.
#[derive(Debug, Clone)]
pub struct NBestEntry {
    pub tokens: Vec<String>,
    pub score: f64,
    pub features: FeatureVector,
}

/// Decoder output for one sentence.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub best: Sentence,
    pub nbest: Vec<NBestEntry>,
}

/// Weighted sum of a feature vector; zero weights mask their features so a
/// zero-probability feature value cannot poison the sum.
pub fn score_features(features: &FeatureVector, weights: &FeatureWeights) -> f64 {
    let mut total = 0.0;
    for (w, h) in weights.0.iter().zip(features.iter()) {
        if *w != 0.0 {
            total += w * h;
        }
    }
    total
}

fn add_features(acc: &mut FeatureVector, delta: &FeatureVector) {
    for (a, d) in acc.iter_mut().zip(delta.iter()) {
        *a += d;
    }
}

/// A translation option: one phrase table entry (or OOV copy) anchored to a
/// source span, with feature values precomputed in log space.
#[derive(Debug, Clone)]
struct TransOption {
    span: (usize, usize),
    tgt_tokens: Vec<String>,
    tgt_ids: Vec<u32>,
    /// ln of [phi(tgt|src), lex(tgt|src), phi(src|tgt), lex(src|tgt)]
    phrase_feats: [f64; 4],
    fwd: [f64; 3],
    bwd: [f64; 3],
}

fn collect_options(model: &TranslationModel, tokens: &[String]) -> Vec<TransOption> {
    let max_len = model.phrase_table.max_src_len().max(1);
    let mut options = Vec::new();
    for (start, end) in candidate_spans(tokens.len(), max_len) {
        let src_key = tokens[start..=end].join(" ");
        for entry in model.phrase_table.lookup(&src_key) {
            let tgt_key = entry.tgt.join(" ");
            let (fwd, bwd) = model.reordering.lookup(&src_key, &tgt_key);
            options.push(TransOption {
                span: (start, end),
                tgt_tokens: entry.tgt.clone(),
                tgt_ids: model.lm.map_tokens(&entry.tgt),
                phrase_feats: [
                    entry.phi_tgt_given_src().ln(),
                    entry.lex_tgt_given_src().ln(),
                    entry.phi_src_given_tgt().ln(),
                    entry.lex_src_given_tgt().ln(),
                ],
                fwd: fwd.map(f64::ln),
                bwd: bwd.map(f64::ln),
            });
        }
    }
    // copy-through options for words with no single-word table entry
    let uniform = (1.0f64 / 3.0).ln();
    for (pos, token) in tokens.iter().enumerate() {
        if model.phrase_table.lookup(token).is_empty() {
            options.push(TransOption {
                span: (pos, pos),
                tgt_tokens: vec![token.clone()],
                tgt_ids: vec![model.lm.token_id(token)],
                phrase_feats: [OOV_LOG_PENALTY; 4],
                fwd: [uniform; 3],
                bwd: [uniform; 3],
            });
        }
    }
    options.sort_by(|a, b| (a.span, &a.tgt_tokens).cmp(&(b.span, &b.tgt_tokens)));
    options
}

/// Context-free LM estimate of a phrase's target side: unigram for the
/// first word, then conditionals over within-phrase history only.
fn lm_estimate(lm: &NGramLanguageModel, ids: &[u32]) -> f64 {
    let mut total = 0.0;
    for k in 0..ids.len() {
        let hist_start = k.saturating_sub(lm.order() - 1);
        match lm.cond_logprob(ids[k], &ids[hist_start..k]) {
            Some(lp) => total += lp,
            None => return f64::NEG_INFINITY,
        }
    }
    total
}

fn option_estimate(opt: &TransOption, weights: &FeatureWeights, lm: &NGramLanguageModel) -> f64 {
    let mut feats = [0.0; FEATURE_COUNT];
    feats[F_PHI_TGT_SRC] = opt.phrase_feats[0];
    feats[F_LEX_TGT_SRC] = opt.phrase_feats[1];
    feats[F_PHI_SRC_TGT] = opt.phrase_feats[2];
    feats[F_LEX_SRC_TGT] = opt.phrase_feats[3];
    feats[F_PHRASE_PENALTY] = 1.0;
    feats[F_WORD_PENALTY] = opt.tgt_tokens.len() as f64;
    feats[F_LM] = lm_estimate(lm, &opt.tgt_ids);
    score_features(&feats, weights)
}

/// Admissible-estimate table over spans: cost[start][end] is the best
/// achievable weighted translation score (phrase scores, penalties and a
/// context-free LM estimate) for covering the span, maximizing over exact
/// phrase options and binary splits.
pub fn future_cost_table(model: &TranslationModel, src: &Sentence) -> Result<Vec<Vec<f64>>> {
    let options = collect_options(model, &src.tokens);
    Ok(future_costs(&options, src.len(), &model.weights, &model.lm))
}

fn future_costs(
    options: &[TransOption],
    len: usize,
    weights: &FeatureWeights,
    lm: &NGramLanguageModel,
) -> Vec<Vec<f64>> {
    let mut cost = vec![vec![f64::NEG_INFINITY; len]; len];
    for opt in options {
        let (s, e) = opt.span;
        let est = option_estimate(opt, weights, lm);
        if est > cost[s][e] {
            cost[s][e] = est;
        }
    }
    for span_len in 2..=len {
        for s in 0..=len - span_len {
            let e = s + span_len - 1;
            for m in s..e {
                let split = cost[s][m] + cost[m + 1][e];
                if split > cost[s][e] {
                    cost[s][e] = split;
                }
            }
        }
    }
    cost
}

fn future_of(coverage: u128, len: usize, table: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut start = None;
    for pos in 0..len {
        let covered = coverage & (1u128 << pos) != 0;
        match (covered, start) {
            (false, None) => start = Some(pos),
            (true, Some(s)) => {
                total += table[s][pos - 1];
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        total += table[s][len - 1];
    }
    total
}

fn span_mask(span: (usize, usize)) -> u128 {
    let len = span.1 - span.0 + 1;
    if len == 128 {
        u128::MAX
    } else {
        ((1u128 << len) - 1) << span.0
    }
}

struct Arc {
    prev: usize,
    tokens: Vec<String>,
    delta_feats: FeatureVector,
    delta_score: f64,
}

struct Hyp {
    coverage: u128,
    lm_ctx: Vec<u32>,
    prev_span: (isize, isize),
    prev_fwd: [f64; 3],
    has_prev: bool,
    score: f64,
    future: f64,
    arcs: Vec<Arc>,
}

#[derive(Hash, PartialEq, Eq)]
struct RecombKey {
    coverage: u128,
    lm_ctx: Vec<u32>,
    prev_span: (isize, isize),
    prev_fwd: [u64; 3],
}

#[derive(Debug, Clone)]
struct Derivation {
    score: f64,
    feats: FeatureVector,
    tokens: Vec<String>,
}

fn best_paths(arena: &[Hyp], node: usize, k: usize, memo: &mut Vec<Option<Vec<Derivation>>>) -> Vec<Derivation> {
    if let Some(paths) = &memo[node] {
        return paths.clone();
    }
    let mut candidates: Vec<Derivation> = Vec::new();
    if arena[node].arcs.is_empty() {
        candidates.push(Derivation {
            score: 0.0,
            feats: [0.0; FEATURE_COUNT],
            tokens: Vec::new(),
        });
    }
    for arc in &arena[node].arcs {
        for prefix in best_paths(arena, arc.prev, k, memo) {
            let mut feats = prefix.feats;
            add_features(&mut feats, &arc.delta_feats);
            let mut tokens = prefix.tokens.clone();
            tokens.extend(arc.tokens.iter().cloned());
            candidates.push(Derivation {
                score: prefix.score + arc.delta_score,
                feats,
                tokens,
            });
        }
    }
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    // merge duplicate strings, keeping the best-scoring derivation
    let mut seen: HashMap<Vec<String>, ()> = HashMap::new();
    candidates.retain(|p| seen.insert(p.tokens.clone(), ()).is_none());
    candidates.truncate(k.max(1));
    memo[node] = Some(candidates.clone());
    candidates
}

/// Translates one prepared (tokenized, normalized) sentence.
pub fn translate(
    model: &TranslationModel,
    src: &Sentence,
    params: &DecodeParams,
) -> Result<DecodeResult> {
    if model.phrase_table.is_empty() {
        return Err(Error::Data("translation model has an empty phrase table".into()));
    }
    if src.is_empty() {
        return Ok(DecodeResult {
            best: Sentence::new(Vec::new(), Lang::Target),
            nbest: vec![NBestEntry {
                tokens: Vec::new(),
                score: 0.0,
                features: [0.0; FEATURE_COUNT],
            }],
        });
    }
    if src.len() > MAX_DECODE_LEN {
        return Err(Error::Data(format!(
            "sentence has {} tokens; the decoder handles at most {MAX_DECODE_LEN}",
            src.len()
        )));
    }

    let len = src.len();
    let options = collect_options(model, &src.tokens);
    let future_table = future_costs(&options, len, &model.weights, &model.lm);
    let order = model.lm.order();
    let ctx_len = order - 1;

    let mut arena: Vec<Hyp> = vec![Hyp {
        coverage: 0,
        lm_ctx: vec![START; ctx_len],
        prev_span: (-1, -1),
        prev_fwd: [0.0; 3],
        has_prev: false,
        score: 0.0,
        future: future_of(0, len, &future_table),
        arcs: Vec::new(),
    }];
    let mut stacks: Vec<Vec<usize>> = vec![Vec::new(); len + 1];
    stacks[0].push(0);
    let mut maps: Vec<HashMap<RecombKey, usize>> = (0..=len).map(|_| HashMap::new()).collect();

    let full = span_mask((0, len - 1));

    for level in 0..len {
        let mut stack = std::mem::take(&mut stacks[level]);
        stack.sort_by(|&a, &b| {
            let ka = arena[a].score + arena[a].future;
            let kb = arena[b].score + arena[b].future;
            kb.total_cmp(&ka).then_with(|| a.cmp(&b))
        });
        stack.truncate(params.stack_size.max(1));

        for &h_idx in &stack {
            for opt in &options {
                let mask = span_mask(opt.span);
                let (coverage, prev_span, lm_ctx, prev_fwd, has_prev, score) = {
                    let h = &arena[h_idx];
                    if h.coverage & mask != 0 {
                        continue;
                    }
                    let jump = (opt.span.0 as isize - h.prev_span.1 - 1).unsigned_abs();
                    if let Some(limit) = params.distortion_limit {
                        if jump > limit {
                            continue;
                        }
                    }
                    (h.coverage, h.prev_span, h.lm_ctx.clone(), h.prev_fwd, h.has_prev, h.score)
                };

                let new_coverage = coverage | mask;
                let complete = new_coverage == full;
                let cur_span = (opt.span.0 as isize, opt.span.1 as isize);

                let mut delta = [0.0; FEATURE_COUNT];
                delta[F_PHI_TGT_SRC] = opt.phrase_feats[0];
                delta[F_LEX_TGT_SRC] = opt.phrase_feats[1];
                delta[F_PHI_SRC_TGT] = opt.phrase_feats[2];
                delta[F_LEX_SRC_TGT] = opt.phrase_feats[3];
                delta[F_PHRASE_PENALTY] = 1.0;
                delta[F_WORD_PENALTY] = opt.tgt_tokens.len() as f64;
                delta[F_DISTORTION] =
                    (opt.span.0 as isize - prev_span.1 - 1).unsigned_abs() as f64;

                let orient = orientation_between(prev_span, cur_span);
                delta[F_BWD + orient.index()] += opt.bwd[orient.index()];
                if has_prev {
                    delta[F_FWD + orient.index()] += prev_fwd[orient.index()];
                }

                let mut ctx = lm_ctx;
                for &id in &opt.tgt_ids {
                    delta[F_LM] += model
                        .lm
                        .cond_logprob(id, &ctx)
                        .unwrap_or(f64::NEG_INFINITY);
                    ctx.push(id);
                    if ctx.len() > ctx_len {
                        ctx.remove(0);
                    }
                }
                if complete {
                    delta[F_LM] += model
                        .lm
                        .cond_logprob(STOP, &ctx)
                        .unwrap_or(f64::NEG_INFINITY);
                    let end_orient =
                        orientation_between(cur_span, (len as isize, len as isize));
                    delta[F_FWD + end_orient.index()] += opt.fwd[end_orient.index()];
                }

                let delta_score = score_features(&delta, &model.weights);
                let new_score = score + delta_score;
                let new_level = level + (opt.span.1 - opt.span.0 + 1);
                let arc = Arc {
                    prev: h_idx,
                    tokens: opt.tgt_tokens.clone(),
                    delta_feats: delta,
                    delta_score,
                };

                if params.recombine {
                    let key = RecombKey {
                        coverage: new_coverage,
                        lm_ctx: ctx.clone(),
                        prev_span: cur_span,
                        prev_fwd: [
                            opt.fwd[0].to_bits(),
                            opt.fwd[1].to_bits(),
                            opt.fwd[2].to_bits(),
                        ],
                    };
                    if let Some(&idx) = maps[new_level].get(&key) {
                        if new_score > arena[idx].score {
                            arena[idx].score = new_score;
                        }
                        arena[idx].arcs.push(arc);
                        continue;
                    }
                    maps[new_level].insert(key, arena.len());
                }
                let future = future_of(new_coverage, len, &future_table);
                arena.push(Hyp {
                    coverage: new_coverage,
                    lm_ctx: ctx,
                    prev_span: cur_span,
                    prev_fwd: opt.fwd,
                    has_prev: true,
                    score: new_score,
                    future,
                    arcs: vec![arc],
                });
                stacks[new_level].push(arena.len() - 1);
            }
        }
        stacks[level] = stack;
    }

    let final_nodes = stacks[len].clone();
    if final_nodes.is_empty() {
        // a tight distortion limit stranded every hypothesis; retry without
        if params.distortion_limit.is_some() {
            let mut relaxed = params.clone();
            relaxed.distortion_limit = None;
            return translate(model, src, &relaxed);
        }
        return Err(Error::Internal(
            "no complete hypothesis despite unlimited distortion".into(),
        ));
    }

    let k = params.nbest_size.max(1);
    let mut memo: Vec<Option<Vec<Derivation>>> = vec![None; arena.len()];
    let mut all: Vec<Derivation> = Vec::new();
    for node in final_nodes {
        all.extend(best_paths(&arena, node, k, &mut memo));
    }
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    let mut seen: HashMap<Vec<String>, ()> = HashMap::new();
    all.retain(|p| seen.insert(p.tokens.clone(), ()).is_none());
    all.truncate(k);

    let nbest: Vec<NBestEntry> = all
        .into_iter()
        .map(|p| NBestEntry {
            tokens: p.tokens,
            score: p.score,
            features: p.feats,
        })
        .collect();
    Ok(DecodeResult {
        best: Sentence::new(nbest[0].tokens.clone(), Lang::Target),
        nbest,
    })
}

/// Restores casing via the target truecase model and reattaches punctuation.
pub fn postprocess(model: &TranslationModel, tokens: &[String]) -> String {
    let restored = corpus::apply_truecase(
        &model.truecase_tgt,
        &Sentence::new(tokens.to_vec(), Lang::Target),
    );
    corpus::detokenize(&restored.tokens)
}

/// Translates a file line by line. Output line i is the translation of
/// input line i; `postprocess_output` selects detokenized/truecased text
/// instead of raw tokens. The optional n-best file uses the interchange
/// format `id ||| tokens ||| feature scores ||| total`.
pub fn translate_file(
    model: &TranslationModel,
    input: &Path,
    output: &Path,
    params: &DecodeParams,
    nbest_file: Option<&Path>,
    postprocess_output: bool,
) -> Result<()> {
    let lines = corpus::read_lines(input)?;
    let out = File::create(output).map_err(|e| Error::io(output, e))?;
    let mut out = BufWriter::new(out);
    let mut nbest_out = match nbest_file {
        Some(path) => Some((
            BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?),
            path.to_path_buf(),
        )),
        None => None,
    };
    for (idx, line) in lines.iter().enumerate() {
        let prepared = corpus::prepare_lines(
            std::slice::from_ref(line),
            Lang::Source,
            model.config.case,
        );
        let result = translate(model, &prepared[0], params).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", input.display(), idx + 1))
        })?;
        let text = if postprocess_output {
            postprocess(model, &result.best.tokens)
        } else {
            result.best.joined()
        };
        writeln!(out, "{text}").map_err(|e| Error::io(output, e))?;
        if let Some((w, path)) = &mut nbest_out {
            for entry in &result.nbest {
                writeln!(w, "{}", format_nbest_line(idx, entry))
                    .map_err(|e| Error::io(path.as_path(), e))?;
            }
        }
    }
    out.flush().map_err(|e| Error::io(output, e))?;
    if let Some((w, path)) = &mut nbest_out {
        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
    }
    Ok(())
}

/// `sentence_id ||| target tokens ||| feature scores ||| total_score`
pub fn format_nbest_line(sentence_id: usize, entry: &NBestEntry) -> String {
    let feats: Vec<String> = entry.features.iter().map(|f| format!("{f:.8}")).collect();
    format!(
        "{sentence_id} ||| {} ||| {} ||| {:.8}",
        entry.tokens.join(" "),
        feats.join(" "),
        entry.score
    )
}
