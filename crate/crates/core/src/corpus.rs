//! Corpus preparation: tokenization, case normalization, truecasing and
//! cleaning of parallel text.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Which side of the parallel corpus a sentence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lang {
    Source,
    Target,
}

/// A tokenized sentence. Tokens never contain whitespace and are never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub lang: Lang,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, lang: Lang) -> Self {
        debug_assert!(
            tokens.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)),
            "tokens must be nonempty and free of whitespace"
        );
        Sentence { tokens, lang }
    }

    /// Convenience constructor from a whitespace-separated token string.
    pub fn from_tokens(s: &str, lang: Lang) -> Self {
        Sentence::new(s.split_whitespace().map(str::to_string).collect(), lang)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Sentence-aligned bilingual text.
#[derive(Debug, Clone, Default)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Sentence, Sentence)>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(Sentence, Sentence)>) -> Self {
        ParallelCorpus { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Case normalization policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CasePolicy {
    Lowercase,
    Uppercase,
    None,
}

impl CasePolicy {
    pub fn parse(s: &str) -> Result<CasePolicy> {
        match s {
            "lowercase" => Ok(CasePolicy::Lowercase),
            "uppercase" => Ok(CasePolicy::Uppercase),
            "none" => Ok(CasePolicy::None),
            other => Err(Error::InvalidArg(format!("unknown case policy '{other}'"))),
        }
    }
}

/// Punctuation characters split into standalone tokens. ASCII marks plus the
/// Arabic comma and question mark.
const SPLIT_PUNCT: &[char] = &[
    '.', ',', '!', '?', ';', ':', '"', '\'', '(', ')', '[', ']', '\u{060C}', '\u{061F}',
];

fn is_split_punct(c: char) -> bool {
    SPLIT_PUNCT.contains(&c)
}

/// Splits a raw line into tokens: punctuation becomes standalone tokens,
/// whitespace runs separate tokens, character order is preserved.
pub fn tokenize(raw_line: &str, lang: Lang) -> Sentence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in raw_line.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if is_split_punct(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    Sentence::new(tokens, lang)
}

/// Case-folds every token per the policy; token count is unchanged.
pub fn normalize(s: &Sentence, policy: CasePolicy) -> Sentence {
    let tokens = s
        .tokens
        .iter()
        .map(|t| match policy {
            CasePolicy::Lowercase => t.to_lowercase(),
            CasePolicy::Uppercase => t.to_uppercase(),
            CasePolicy::None => t.clone(),
        })
        .collect();
    Sentence::new(tokens, s.lang)
}

/// Rejoins tokens into display text, attaching punctuation to neighboring
/// words: no space before closers and sentence marks, none after openers,
/// apostrophes glue both sides, double quotes alternate open/close.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut quote_open = false;
    let mut glue_next = false;
    for tok in tokens {
        let c = if tok.chars().count() == 1 {
            tok.chars().next()
        } else {
            None
        };
        let attach_left = matches!(
            c,
            Some('.') | Some(',') | Some('!') | Some('?') | Some(';') | Some(':') | Some(')')
                | Some(']') | Some('\u{060C}') | Some('\u{061F}')
        );
        let attach_both = c == Some('\'');
        let is_dquote = c == Some('"');
        let opens = matches!(c, Some('(') | Some('[')) || (is_dquote && !quote_open);
        let closes_quote = is_dquote && quote_open;

        let need_space =
            !out.is_empty() && !glue_next && !attach_left && !attach_both && !closes_quote;
        if need_space {
            out.push(' ');
        }
        out.push_str(tok);

        glue_next = opens || attach_both;
        if is_dquote {
            quote_open = !quote_open;
        }
    }
    out
}

/// Truecasing model: maps each case-folded token to its most frequent
/// surface form in the training corpus.
#[derive(Debug, Clone, Default)]
pub struct TruecaseModel {
    /// case-folded token -> preferred surface form
    pub best_form: HashMap<String, String>,
    /// surface form -> occurrence count
    pub counts: HashMap<String, u64>,
}

impl TruecaseModel {
    fn rebuild_best_forms(&mut self) {
        self.best_form.clear();
        let mut forms: Vec<(&String, &u64)> = self.counts.iter().collect();
        // Lexicographically smallest surface form wins count ties.
        forms.sort();
        for (surface, &count) in forms {
            let key = surface.to_lowercase();
            match self.best_form.get(&key) {
                Some(cur) if self.counts[cur] >= count => {}
                _ => {
                    self.best_form.insert(key, surface.clone());
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut forms: Vec<(&String, &u64)> = self.counts.iter().collect();
        forms.sort();
        for (surface, count) in forms {
            writeln!(w, "{surface} {count}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TruecaseModel> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut model = TruecaseModel::default();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (surface, count) = match (it.next(), it.next(), it.next()) {
                (Some(s), Some(c), None) => (s, c),
                _ => {
                    return Err(Error::parse(path, idx + 1, "expected 'surface_form count'"));
                }
            };
            let count: u64 = count
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "count is not an integer"))?;
            *model.counts.entry(surface.to_string()).or_insert(0) += count;
        }
        model.rebuild_best_forms();
        Ok(model)
    }
}

/// Trains a truecasing model. Sentence-initial tokens are counted in their
/// case-folded form so that position-driven capitalization does not dominate
/// the statistics.
pub fn train_truecaser(corpus: &[Sentence]) -> TruecaseModel {
    let mut model = TruecaseModel::default();
    for sentence in corpus {
        for (pos, token) in sentence.tokens.iter().enumerate() {
            let surface = if pos == 0 {
                token.to_lowercase()
            } else {
                token.clone()
            };
            *model.counts.entry(surface).or_insert(0) += 1;
        }
    }
    model.rebuild_best_forms();
    model
}

/// Replaces each token with its preferred surface form when the model knows
/// the case-folded key; unknown tokens pass through unchanged.
pub fn apply_truecase(model: &TruecaseModel, s: &Sentence) -> Sentence {
    let tokens = s
        .tokens
        .iter()
        .map(|t| match model.best_form.get(&t.to_lowercase()) {
            Some(form) => form.clone(),
            None => t.clone(),
        })
        .collect();
    Sentence::new(tokens, s.lang)
}

/// Drops pairs with an empty side, a side longer than `max_len` tokens, or a
/// longer/shorter length ratio above `max_ratio`. Surviving pairs keep their
/// relative order.
pub fn clean_corpus(c: &ParallelCorpus, max_len: usize, max_ratio: f64) -> Result<ParallelCorpus> {
    if max_len < 1 {
        return Err(Error::InvalidArg("max_len must be >= 1".into()));
    }
    if max_ratio < 1.0 {
        return Err(Error::InvalidArg("max_ratio must be >= 1".into()));
    }
    let pairs = c
        .pairs
        .iter()
        .filter(|(src, tgt)| {
            if src.is_empty() || tgt.is_empty() {
                return false;
            }
            if src.len() > max_len || tgt.len() > max_len {
                return false;
            }
            let longer = src.len().max(tgt.len()) as f64;
            let shorter = src.len().min(tgt.len()) as f64;
            longer / shorter <= max_ratio
        })
        .cloned()
        .collect();
    Ok(ParallelCorpus::new(pairs))
}

/// Options for the corpus preparation driver.
#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub case: CasePolicy,
    pub max_len: usize,
    pub max_ratio: f64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            case: CasePolicy::Lowercase,
            max_len: 80,
            max_ratio: 9.0,
        }
    }
}

/// Result of running the preparation pipeline on a raw parallel corpus.
#[derive(Debug)]
pub struct PreparedCorpus {
    /// Normalized, tokenized and cleaned working corpus (feeds LM/alignment).
    pub corpus: ParallelCorpus,
    pub truecase_src: TruecaseModel,
    pub truecase_tgt: TruecaseModel,
}

/// Runs the preparation stages in fixed order: normalize, tokenize,
/// truecase, clean. The truecase models are trained on the original-cased
/// token stream; the working corpus carries the normalized stream.
pub fn prepare(
    raw_src: &[String],
    raw_tgt: &[String],
    opts: &PrepareOptions,
) -> Result<PreparedCorpus> {
    prepare_with_observer(raw_src, raw_tgt, opts, |_| {})
}

/// Same as [`prepare`] but reports each stage name as it starts, for callers
/// that track pipeline progress.
pub fn prepare_with_observer(
    raw_src: &[String],
    raw_tgt: &[String],
    opts: &PrepareOptions,
    mut observer: impl FnMut(&'static str),
) -> Result<PreparedCorpus> {
    if raw_src.len() != raw_tgt.len() {
        return Err(Error::Data(format!(
            "parallel corpus sides differ: {} source lines vs {} target lines",
            raw_src.len(),
            raw_tgt.len()
        )));
    }

    observer("normalize");
    let norm_line = |line: &String| match opts.case {
        CasePolicy::Lowercase => line.to_lowercase(),
        CasePolicy::Uppercase => line.to_uppercase(),
        CasePolicy::None => line.clone(),
    };
    let norm_src: Vec<String> = raw_src.iter().map(norm_line).collect();
    let norm_tgt: Vec<String> = raw_tgt.iter().map(norm_line).collect();

    observer("tokenize");
    let tok_src: Vec<Sentence> = norm_src.iter().map(|l| tokenize(l, Lang::Source)).collect();
    let tok_tgt: Vec<Sentence> = norm_tgt.iter().map(|l| tokenize(l, Lang::Target)).collect();
    // Original casing stream, tokenized separately for truecase training.
    let orig_src: Vec<Sentence> = raw_src.iter().map(|l| tokenize(l, Lang::Source)).collect();
    let orig_tgt: Vec<Sentence> = raw_tgt.iter().map(|l| tokenize(l, Lang::Target)).collect();

    observer("truecase");
    let truecase_src = train_truecaser(&orig_src);
    let truecase_tgt = train_truecaser(&orig_tgt);

    observer("clean");
    let corpus = ParallelCorpus::new(tok_src.into_iter().zip(tok_tgt).collect());
    let corpus = clean_corpus(&corpus, opts.max_len, opts.max_ratio)?;

    Ok(PreparedCorpus {
        corpus,
        truecase_src,
        truecase_tgt,
    })
}

/// Tokenizes and normalizes raw lines without cleaning, for dev/test input.
pub fn prepare_lines(raw: &[String], lang: Lang, case: CasePolicy) -> Vec<Sentence> {
    raw.iter()
        .map(|line| {
            let normalized = match case {
                CasePolicy::Lowercase => line.to_lowercase(),
                CasePolicy::Uppercase => line.to_uppercase(),
                CasePolicy::None => line.clone(),
            };
            tokenize(&normalized, lang)
        })
        .collect()
}

/// Reads a UTF-8 text file into lines (no trailing newline tokens).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line.map_err(|e| Error::io(path, e))?);
    }
    Ok(lines)
}

/// Writes lines to a text file, one per line.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads an aligned pair of one-sentence-per-line files already in tokenized
/// form (tokens separated by spaces).
pub fn load_tokenized_parallel(src_path: &Path, tgt_path: &Path) -> Result<ParallelCorpus> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but {} has {}",
            src_path.display(),
            src.len(),
            tgt_path.display(),
            tgt.len()
        )));
    }
    let pairs = src
        .iter()
        .zip(tgt.iter())
        .map(|(s, t)| {
            (
                Sentence::from_tokens(s, Lang::Source),
                Sentence::from_tokens(t, Lang::Target),
            )
        })
        .collect();
    Ok(ParallelCorpus::new(pairs))
}
