//! N-gram language models (orders 1-5): counting, maximum-likelihood
//! estimation, Witten-Bell interpolation, and ARPA-style persistence.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

/// Reserved id for the start-padding symbol `<s>`. Appears only in history
/// positions, never as a predicted word.
pub const START: u32 = 0;
/// Reserved id for the end-of-sentence symbol `</s>`.
pub const STOP: u32 = 1;
/// Reserved id for unknown words `<unk>`.
pub const UNK: u32 = 2;

const START_TOKEN: &str = "<s>";
const STOP_TOKEN: &str = "</s>";
const UNK_TOKEN: &str = "<unk>";

pub const MAX_ORDER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    Mle,
    WittenBell,
}

impl Smoothing {
    pub fn parse(s: &str) -> Result<Smoothing> {
        match s {
            "mle" => Ok(Smoothing::Mle),
            "witten-bell" => Ok(Smoothing::WittenBell),
            other => Err(Error::InvalidArg(format!(
                "unknown smoothing method '{other}' (expected 'witten-bell' or 'mle')"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct ContextStats {
    total: u64,
    distinct: u32,
}

/// An n-gram language model over the target language.
#[derive(Debug, Clone)]
pub struct NGramLanguageModel {
    order: usize,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// k-gram -> occurrence count, for k = 1..=order, from padded streams.
    counts: HashMap<Vec<u32>, u64>,
    /// history -> (total continuation count, distinct continuations).
    contexts: HashMap<Vec<u32>, ContextStats>,
    /// n-gram -> conditional probability q(last | rest).
    probs: HashMap<Vec<u32>, f64>,
    /// history -> backoff weight (smoothed models only).
    backoffs: HashMap<Vec<u32>, f64>,
    smoothing: Option<Smoothing>,
}

impl NGramLanguageModel {
    /// Counts all k-grams (k = 1..=order) from the corpus, with each
    /// sentence padded by order-1 leading `<s>` symbols and one trailing
    /// `</s>`. Windows ending in `<s>` are not counted; `<s>` only ever
    /// occupies history positions.
    pub fn count_ngrams(corpus: &[Sentence], order: usize) -> Result<NGramLanguageModel> {
        if order < 1 || order > MAX_ORDER {
            return Err(Error::InvalidArg(format!(
                "order must be in [1,{MAX_ORDER}], got {order}"
            )));
        }
        if corpus.is_empty() {
            return Err(Error::InvalidArg("corpus must be nonempty".into()));
        }
        let mut model = NGramLanguageModel {
            order,
            words: vec![START_TOKEN.into(), STOP_TOKEN.into(), UNK_TOKEN.into()],
            ids: HashMap::from([
                (START_TOKEN.into(), START),
                (STOP_TOKEN.into(), STOP),
                (UNK_TOKEN.into(), UNK),
            ]),
            counts: HashMap::new(),
            contexts: HashMap::new(),
            probs: HashMap::new(),
            backoffs: HashMap::new(),
            smoothing: None,
        };
        for sentence in corpus {
            let mut stream = vec![START; order - 1];
            for tok in &sentence.tokens {
                stream.push(model.intern(tok));
            }
            stream.push(STOP);
            for k in 1..=order {
                for window in stream.windows(k) {
                    if *window.last().unwrap() == START {
                        continue;
                    }
                    let gram = window.to_vec();
                    let entry = model.counts.entry(gram.clone()).or_insert(0);
                    let first_time = *entry == 0;
                    *entry += 1;
                    let ctx = model
                        .contexts
                        .entry(window[..k - 1].to_vec())
                        .or_default();
                    ctx.total += 1;
                    if first_time {
                        ctx.distinct += 1;
                    }
                }
            }
        }
        Ok(model)
    }

    /// Counts then estimates in one call.
    pub fn train(corpus: &[Sentence], order: usize, smoothing: Smoothing) -> Result<Self> {
        let mut model = Self::count_ngrams(corpus, order)?;
        match smoothing {
            Smoothing::Mle => model.estimate_mle(),
            Smoothing::WittenBell => model.smooth_witten_bell(),
        }
        Ok(model)
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> Option<Smoothing> {
        self.smoothing
    }

    /// Number of ordinary word types (excluding `<s>`, `</s>`, `<unk>`).
    pub fn vocab_size(&self) -> usize {
        self.words.len() - 3
    }

    /// Maps a surface token to its id, falling back to `<unk>`.
    pub fn token_id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token_str(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn count(&self, gram: &[u32]) -> u64 {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// All ids a conditional distribution ranges over: the word vocabulary
    /// plus `</s>` and, for smoothed models, `<unk>`.
    pub fn event_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = vec![STOP];
        if self.smoothing == Some(Smoothing::WittenBell) {
            ids.push(UNK);
        }
        ids.extend((3..self.words.len() as u32).collect::<Vec<u32>>());
        ids
    }

    /// Observed histories of the given length, sorted.
    pub fn observed_histories(&self, len: usize) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = self
            .contexts
            .iter()
            .filter(|(h, st)| h.len() == len && st.total > 0)
            .map(|(h, _)| h.clone())
            .collect();
        out.sort();
        out
    }

    /// Observed continuations of a history, sorted.
    pub fn observed_continuations(&self, history: &[u32]) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .counts
            .keys()
            .filter(|g| g.len() == history.len() + 1 && g[..history.len()] == *history)
            .map(|g| *g.last().unwrap())
            .collect();
        out.sort();
        out
    }

    /// Fills unsmoothed maximum-likelihood probabilities
    /// q(w|h) = Count(h,w) / Count(h) for every counted n-gram at every
    /// level. Unobserved n-grams keep probability zero on query.
    pub fn estimate_mle(&mut self) {
        self.probs.clear();
        self.backoffs.clear();
        for (gram, &count) in &self.counts {
            let hist = &gram[..gram.len() - 1];
            let denom = self.contexts[hist].total as f64;
            self.probs.insert(gram.clone(), count as f64 / denom);
        }
        self.smoothing = Some(Smoothing::Mle);
    }

    /// Witten-Bell interpolation:
    /// q(w|h) = lambda(h) q_mle(w|h) + (1 - lambda(h)) q(w|h'), where h'
    /// drops the oldest history token and lambda(h) = C(h)/(C(h)+N1+(h)).
    /// The unigram base case folds in a fixed `<unk>` mass of 1/(|V|+1),
    /// renormalized so the distribution still sums to one.
    pub fn smooth_witten_bell(&mut self) {
        self.probs.clear();
        self.backoffs.clear();

        // Level 1: unigram base with UNK mass.
        let total = self.contexts[&Vec::new()].total as f64;
        let unk_mass = 1.0 / (self.vocab_size() as f64 + 1.0);
        let norm = 1.0 + unk_mass;
        let mut unigrams: Vec<(Vec<u32>, u64)> = self
            .counts
            .iter()
            .filter(|(g, _)| g.len() == 1)
            .map(|(g, &c)| (g.clone(), c))
            .collect();
        unigrams.sort();
        for (gram, count) in unigrams {
            self.probs
                .insert(gram, (count as f64 / total) / norm);
        }
        self.probs.insert(vec![UNK], unk_mass / norm);

        // Higher levels, bottom-up so the interpolated lower level is ready.
        for k in 2..=self.order {
            let mut grams: Vec<(Vec<u32>, u64)> = self
                .counts
                .iter()
                .filter(|(g, _)| g.len() == k)
                .map(|(g, &c)| (g.clone(), c))
                .collect();
            grams.sort();
            for (gram, count) in grams {
                let hist = &gram[..k - 1];
                let stats = &self.contexts[hist];
                let lambda = stats.total as f64 / (stats.total as f64 + stats.distinct as f64);
                let mle = count as f64 / stats.total as f64;
                let lower = self.lookup(&gram[1..]);
                self.probs
                    .insert(gram.clone(), lambda * mle + (1.0 - lambda) * lower);
            }
        }

        // Backoff weights for observed histories: remaining interpolation
        // mass routed to the next-shorter history on unseen continuations.
        let mut hists: Vec<(Vec<u32>, f64)> = self
            .contexts
            .iter()
            .filter(|(h, st)| !h.is_empty() && h.len() < self.order && st.total > 0)
            .map(|(h, st)| {
                let lambda = st.total as f64 / (st.total as f64 + st.distinct as f64);
                (h.clone(), 1.0 - lambda)
            })
            .collect();
        hists.sort_by(|a, b| a.0.cmp(&b.0));
        for (h, bow) in hists {
            self.backoffs.insert(h, bow);
        }
        self.smoothing = Some(Smoothing::WittenBell);
    }

    /// Probability lookup over a full n-gram (history followed by the
    /// predicted word), backing off through shorter histories.
    fn lookup(&self, gram: &[u32]) -> f64 {
        if let Some(&p) = self.probs.get(gram) {
            return p;
        }
        if gram.len() == 1 {
            return 0.0;
        }
        let bow = self.backoffs.get(&gram[..gram.len() - 1]).copied();
        match (self.smoothing, bow) {
            (Some(Smoothing::Mle), _) => 0.0,
            (_, Some(b)) => b * self.lookup(&gram[1..]),
            (_, None) => self.lookup(&gram[1..]),
        }
    }

    /// q(word | history), with the history truncated to the last order-1
    /// tokens. Zero for events unseen by an unsmoothed model.
    pub fn cond_prob(&self, word: u32, history: &[u32]) -> f64 {
        let keep = self.order - 1;
        let hist = if history.len() > keep {
            &history[history.len() - keep..]
        } else {
            history
        };
        let mut gram = Vec::with_capacity(hist.len() + 1);
        gram.extend_from_slice(hist);
        gram.push(word);
        self.lookup(&gram)
    }

    /// Natural-log conditional probability; `None` is the zero-probability
    /// sentinel, kept distinct from ordinary low scores so that decoders can
    /// prune explicitly.
    pub fn cond_logprob(&self, word: u32, history: &[u32]) -> Option<f64> {
        let p = self.cond_prob(word, history);
        if p > 0.0 {
            Some(p.ln())
        } else {
            None
        }
    }

    /// Maps sentence tokens to ids, `<unk>` for out-of-vocabulary words.
    pub fn map_tokens(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    /// Natural-log probability of the sentence: the sum of conditional log
    /// probabilities over the padded sequence, including the final `</s>`
    /// factor. `None` when any factor has probability zero.
    pub fn sentence_logprob(&self, sentence: &Sentence) -> Option<f64> {
        self.sequence_logprob(&self.map_tokens(&sentence.tokens))
    }

    pub fn sequence_logprob(&self, ids: &[u32]) -> Option<f64> {
        let mut stream = vec![START; self.order - 1];
        stream.extend_from_slice(ids);
        stream.push(STOP);
        let mut total = 0.0;
        for i in self.order - 1..stream.len() {
            let hist = &stream[i.saturating_sub(self.order - 1)..i];
            total += self.cond_logprob(stream[i], hist)?;
        }
        Some(total)
    }

    /// Writes the model in the ARPA-style text format.
    pub fn export_arpa(&self, path: &Path) -> Result<()> {
        if self.smoothing.is_none() {
            return Err(Error::InvalidArg(
                "model has no probabilities; estimate before exporting".into(),
            ));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut by_level: Vec<Vec<(Vec<String>, &Vec<u32>)>> = vec![Vec::new(); self.order];
        for gram in self.probs.keys() {
            let names: Vec<String> = gram
                .iter()
                .map(|&id| self.words[id as usize].clone())
                .collect();
            by_level[gram.len() - 1].push((names, gram));
        }
        for level in &mut by_level {
            level.sort();
        }

        let io = |e| Error::io(path, e);
        writeln!(w, "\\data\\").map_err(io)?;
        for (k, level) in by_level.iter().enumerate() {
            writeln!(w, "ngram {}={}", k + 1, level.len()).map_err(io)?;
        }
        for (k, level) in by_level.iter().enumerate() {
            writeln!(w).map_err(io)?;
            writeln!(w, "\\{}-grams:", k + 1).map_err(io)?;
            let with_backoff = self.smoothing == Some(Smoothing::WittenBell) && k + 1 < self.order;
            for (names, gram) in level {
                let logp = self.probs[*gram].log10();
                if with_backoff {
                    let bow = self.backoffs.get(*gram).copied().unwrap_or(1.0);
                    writeln!(w, "{:.7}\t{}\t{:.7}", logp, names.join(" "), bow.log10())
                        .map_err(io)?;
                } else {
                    writeln!(w, "{:.7}\t{}", logp, names.join(" ")).map_err(io)?;
                }
            }
        }
        writeln!(w).map_err(io)?;
        writeln!(w, "\\end\\").map_err(io)?;
        w.flush().map_err(io)
    }

    /// Reads a model back from the ARPA-style format. Counts are not stored
    /// in the file, so the imported model supports queries and export but
    /// not re-estimation.
    pub fn import_arpa(path: &Path) -> Result<NGramLanguageModel> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = Vec::new();
        for line in reader.lines() {
            lines.push(line.map_err(|e| Error::io(path, e))?);
        }
        let perr = |line: usize, msg: &str| Error::parse(path, line, msg);

        let mut idx = 0;
        while idx < lines.len() && lines[idx].trim().is_empty() {
            idx += 1;
        }
        if idx >= lines.len() || lines[idx].trim() != "\\data\\" {
            return Err(perr(idx + 1, "missing \\data\\ header"));
        }
        idx += 1;
        let mut declared: Vec<usize> = Vec::new();
        while idx < lines.len() {
            let line = lines[idx].trim();
            if line.is_empty() {
                idx += 1;
                continue;
            }
            if line.starts_with("\\") {
                break;
            }
            let rest = line
                .strip_prefix("ngram ")
                .ok_or_else(|| perr(idx + 1, "expected 'ngram k=COUNT'"))?;
            let (k, count) = rest
                .split_once('=')
                .ok_or_else(|| perr(idx + 1, "expected 'ngram k=COUNT'"))?;
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| perr(idx + 1, "bad n-gram order"))?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| perr(idx + 1, "bad n-gram count"))?;
            if k != declared.len() + 1 {
                return Err(perr(idx + 1, "n-gram orders must be consecutive from 1"));
            }
            declared.push(count);
            idx += 1;
        }
        if declared.is_empty() {
            return Err(perr(idx + 1, "missing n-gram count header"));
        }

        let order = declared.len();
        let mut model = NGramLanguageModel {
            order,
            words: vec![START_TOKEN.into(), STOP_TOKEN.into(), UNK_TOKEN.into()],
            ids: HashMap::from([
                (START_TOKEN.into(), START),
                (STOP_TOKEN.into(), STOP),
                (UNK_TOKEN.into(), UNK),
            ]),
            counts: HashMap::new(),
            contexts: HashMap::new(),
            probs: HashMap::new(),
            backoffs: HashMap::new(),
            smoothing: Some(Smoothing::Mle),
        };
        let mut any_backoff = false;

        for k in 1..=order {
            while idx < lines.len() && lines[idx].trim().is_empty() {
                idx += 1;
            }
            let header = format!("\\{k}-grams:");
            if idx >= lines.len() || lines[idx].trim() != header {
                return Err(perr(idx + 1, &format!("expected section header {header}")));
            }
            idx += 1;
            let mut seen = 0usize;
            while idx < lines.len() {
                let line = lines[idx].trim();
                if line.is_empty() || line.starts_with("\\") {
                    break;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 2 && fields.len() != 3 {
                    return Err(perr(idx + 1, "expected 2 or 3 tab-separated fields"));
                }
                let logp: f64 = fields[0]
                    .parse()
                    .map_err(|_| perr(idx + 1, "bad log10 probability"))?;
                let tokens: Vec<&str> = fields[1].split(' ').collect();
                if tokens.len() != k {
                    return Err(perr(idx + 1, &format!("expected {k} tokens")));
                }
                let gram: Vec<u32> = tokens.iter().map(|t| model.intern(t)).collect();
                model.probs.insert(gram.clone(), 10f64.powf(logp));
                if fields.len() == 3 {
                    let logbow: f64 = fields[2]
                        .parse()
                        .map_err(|_| perr(idx + 1, "bad log10 backoff"))?;
                    model.backoffs.insert(gram, 10f64.powf(logbow));
                    any_backoff = true;
                }
                seen += 1;
                idx += 1;
            }
            if seen != declared[k - 1] {
                return Err(perr(
                    idx + 1,
                    &format!(
                        "section {k} declares {} entries but has {seen}",
                        declared[k - 1]
                    ),
                ));
            }
        }
        while idx < lines.len() && lines[idx].trim().is_empty() {
            idx += 1;
        }
        if idx >= lines.len() || lines[idx].trim() != "\\end\\" {
            return Err(perr(idx + 1, "missing \\end\\ terminator"));
        }
        if any_backoff {
            model.smoothing = Some(Smoothing::WittenBell);
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;

    fn sent(tokens: &[&str]) -> Sentence {
        Sentence::new(tokens.iter().map(|t| t.to_string()).collect(), Lang::Target)
    }

    fn gram(model: &NGramLanguageModel, toks: &[&str]) -> Vec<u32> {
        toks.iter().map(|t| model.token_id(t)).collect()
    }

    #[test]
    fn counts_single_token_sentence_order2() {
        let m = NGramLanguageModel::count_ngrams(&[sent(&["a"])], 2).unwrap();
        let a = m.token_id("a");
        assert_eq!(m.count(&[START, a]), 1);
        assert_eq!(m.count(&[a, STOP]), 1);
        assert_eq!(m.count(&[a]), 1);
        assert_eq!(m.count(&[STOP]), 1);
        // windows ending in the start symbol are not counted
        assert_eq!(m.count(&[START]), 0);
    }

    #[test]
    fn counts_shared_history() {
        let m =
            NGramLanguageModel::count_ngrams(&[sent(&["the", "cat"]), sent(&["the", "dog"])], 2)
                .unwrap();
        assert_eq!(m.count(&gram(&m, &["the"])), 2);
        assert_eq!(m.count(&gram(&m, &["the", "cat"])), 1);
        assert_eq!(m.count(&gram(&m, &["the", "dog"])), 1);
    }

    #[test]
    fn count_rejects_bad_inputs() {
        assert!(NGramLanguageModel::count_ngrams(&[], 2).is_err());
        assert!(NGramLanguageModel::count_ngrams(&[sent(&["a"])], 0).is_err());
        assert!(NGramLanguageModel::count_ngrams(&[sent(&["a"])], 6).is_err());
    }

    #[test]
    fn mle_probabilities() {
        let mut m =
            NGramLanguageModel::count_ngrams(&[sent(&["the", "cat"]), sent(&["the", "dog"])], 2)
                .unwrap();
        m.estimate_mle();
        let the = m.token_id("the");
        let cat = m.token_id("cat");
        assert!((m.cond_prob(cat, &[the]) - 0.5).abs() < 1e-12);
        // unseen pair
        assert_eq!(m.cond_prob(the, &[cat]), 0.0);
        assert_eq!(m.cond_logprob(the, &[cat]), None);
    }

    #[test]
    fn mle_unigram_single_sentence() {
        let mut m = NGramLanguageModel::count_ngrams(&[sent(&["a"])], 1).unwrap();
        m.estimate_mle();
        let a = m.token_id("a");
        assert!((m.cond_prob(a, &[]) - 0.5).abs() < 1e-12);
        assert!((m.cond_prob(STOP, &[]) - 0.5).abs() < 1e-12);
        let lp = m.sentence_logprob(&sent(&["a"])).unwrap();
        assert!((lp - (-1.3862944)).abs() < 1e-6);
    }

    #[test]
    fn witten_bell_lambda_half_for_single_continuation() {
        let mut m = NGramLanguageModel::count_ngrams(&[sent(&["a"])], 2).unwrap();
        m.smooth_witten_bell();
        let a = m.token_id("a");
        // history [a] has C=1, N1+=1 -> lambda = 1/2
        let base_stop = m.cond_prob(STOP, &[]);
        let expect = 0.5 * 1.0 + 0.5 * base_stop;
        assert!((m.cond_prob(STOP, &[a]) - expect).abs() < 1e-12);
    }

    #[test]
    fn witten_bell_unk_floor_positive() {
        let mut m =
            NGramLanguageModel::count_ngrams(&[sent(&["a", "b"]), sent(&["b", "c"])], 2).unwrap();
        m.smooth_witten_bell();
        let a = m.token_id("a");
        // completely unseen word maps to UNK and keeps positive mass
        let unk_floor = m.cond_prob(UNK, &[]);
        assert!(unk_floor > 0.0);
        assert!(m.cond_prob(m.token_id("zzz"), &[a]) >= unk_floor * 0.0);
        assert!(m.cond_prob(m.token_id("zzz"), &[a]) > 0.0);
    }

    /// Exhaustive summation oracle: every observed context's distribution
    /// sums to one over the closed vocabulary.
    #[test]
    fn distributions_sum_to_one() {
        let corpus = vec![
            sent(&["the", "cat", "sat"]),
            sent(&["the", "dog", "sat"]),
            sent(&["a", "dog", "ran"]),
        ];
        for order in 1..=3 {
            for smoothing in [Smoothing::Mle, Smoothing::WittenBell] {
                let m = NGramLanguageModel::train(&corpus, order, smoothing).unwrap();
                for len in 0..order {
                    for hist in m.observed_histories(len) {
                        let sum: f64 = match smoothing {
                            Smoothing::Mle => m
                                .observed_continuations(&hist)
                                .iter()
                                .map(|&w| m.cond_prob(w, &hist))
                                .sum(),
                            Smoothing::WittenBell => m
                                .event_ids()
                                .iter()
                                .map(|&w| m.cond_prob(w, &hist))
                                .sum(),
                        };
                        assert!(
                            (sum - 1.0).abs() < 1e-9,
                            "order {order} hist {hist:?} sums to {sum}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn trigram_sentence_has_four_factors() {
        let corpus = vec![sent(&["w1", "w2", "w3"]), sent(&["w1", "w3", "w2"])];
        let m = NGramLanguageModel::train(&corpus, 3, Smoothing::Mle).unwrap();
        let ids = m.map_tokens(&sent(&["w1", "w2", "w3"]).tokens);
        let (w1, w2, w3) = (ids[0], ids[1], ids[2]);
        let manual = m.cond_logprob(w1, &[START, START]).unwrap()
            + m.cond_logprob(w2, &[START, w1]).unwrap()
            + m.cond_logprob(w3, &[w1, w2]).unwrap()
            + m.cond_logprob(STOP, &[w2, w3]).unwrap();
        let lp = m.sentence_logprob(&sent(&["w1", "w2", "w3"])).unwrap();
        assert!((lp - manual).abs() < 1e-12);
    }

    #[test]
    fn empty_sentence_is_just_the_stop_factor() {
        let corpus = vec![sent(&["a"]), sent(&[])];
        let m = NGramLanguageModel::train(&corpus, 2, Smoothing::Mle).unwrap();
        let lp = m.sentence_logprob(&sent(&[])).unwrap();
        let stop_only = m.cond_logprob(STOP, &[START]).unwrap();
        assert!((lp - stop_only).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_a_sentinel() {
        let m = NGramLanguageModel::train(&[sent(&["a"])], 1, Smoothing::Mle).unwrap();
        assert_eq!(m.sentence_logprob(&sent(&["b"])), None);
    }

    /// A bigram model's sentence probability must match a hand-rolled
    /// bigram chain oracle.
    #[test]
    fn bigram_factorization_matches_chain_oracle() {
        let corpus = vec![
            sent(&["the", "cat"]),
            sent(&["the", "dog", "barks"]),
            sent(&["a", "cat"]),
        ];
        let m = NGramLanguageModel::train(&corpus, 2, Smoothing::Mle).unwrap();
        for s in &corpus {
            let ids = m.map_tokens(&s.tokens);
            let mut product = m.cond_prob(ids[0], &[START]);
            for i in 1..ids.len() {
                product *= m.cond_prob(ids[i], &[ids[i - 1]]);
            }
            product *= m.cond_prob(STOP, &[*ids.last().unwrap()]);
            let lp = m.sentence_logprob(s).unwrap();
            assert!((lp.exp() - product).abs() <= 1e-12 * product.abs().max(1.0));
        }
    }

    /// Adding a duplicate of a training sentence never decreases that
    /// sentence's MLE probability.
    #[test]
    fn duplicate_sentence_never_hurts_its_own_probability() {
        let base = vec![
            sent(&["the", "cat", "sat"]),
            sent(&["a", "dog", "ran"]),
            sent(&["the", "dog", "sat"]),
        ];
        for order in 1..=3 {
            let m0 = NGramLanguageModel::train(&base, order, Smoothing::Mle).unwrap();
            let mut plus = base.clone();
            plus.push(base[0].clone());
            let m1 = NGramLanguageModel::train(&plus, order, Smoothing::Mle).unwrap();
            let p0 = m0.sentence_logprob(&base[0]).unwrap();
            let p1 = m1.sentence_logprob(&base[0]).unwrap();
            assert!(p1 >= p0 - 1e-12, "order {order}: {p1} < {p0}");
        }
    }

    #[test]
    fn arpa_roundtrip_bigram() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.arpa");
        let corpus = vec![sent(&["the", "cat"]), sent(&["the", "dog"])];
        let m = NGramLanguageModel::train(&corpus, 2, Smoothing::WittenBell).unwrap();
        m.export_arpa(&path).unwrap();
        let back = NGramLanguageModel::import_arpa(&path).unwrap();
        let the = m.token_id("the");
        let cat = m.token_id("cat");
        let (bthe, bcat) = (back.token_id("the"), back.token_id("cat"));
        assert!((m.cond_prob(cat, &[the]) - back.cond_prob(bcat, &[bthe])).abs() < 1e-6);
        // unseen continuation goes through backoff on both sides
        let dog = m.token_id("dog");
        let bdog = back.token_id("dog");
        assert!((m.cond_prob(the, &[dog]) - back.cond_prob(bthe, &[bdog])).abs() < 1e-6);
    }

    #[test]
    fn arpa_missing_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.arpa");
        std::fs::write(&path, "\\1-grams:\n-0.3\tthe\n\\end\\\n").unwrap();
        match NGramLanguageModel::import_arpa(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn arpa_five_gram_has_five_sections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm5.arpa");
        let corpus = vec![
            sent(&["a", "b", "c", "d", "e"]),
            sent(&["a", "b", "x", "d", "e"]),
        ];
        let m = NGramLanguageModel::train(&corpus, 5, Smoothing::WittenBell).unwrap();
        m.export_arpa(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for k in 1..=5 {
            assert!(text.contains(&format!("\\{k}-grams:")), "missing section {k}");
        }
        assert!(text.contains("ngram 5="));
    }
}
