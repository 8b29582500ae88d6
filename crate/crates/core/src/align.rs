//! Word alignment: IBM Model 1/2 EM training, Viterbi alignment, and
//! bidirectional symmetrization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{ParallelCorpus, Sentence};
use crate::error::{Error, Result};

/// Serialized name of the virtual empty word on the conditioning side.
pub const NULL_TOKEN: &str = "NULL";

/// Floor applied to accumulated counts before renormalization so EM never
/// produces hard zeros.
const PROB_FLOOR: f64 = 1e-12;

/// Which side of the corpus conditions the lexical distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// t(target_word | source_word): alignment maps target positions to
    /// source positions.
    SrcToTgt,
    /// t(source_word | target_word): the mirrored direction.
    TgtToSrc,
}

#[derive(Debug, Clone, Default)]
struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        id
    }

    fn get(&self, w: &str) -> Option<u32> {
        self.ids.get(w).copied()
    }

    fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    fn len(&self) -> usize {
        self.words.len()
    }
}

/// Word-to-word translation probabilities t(out | cond) with a NULL token on
/// the conditioning side. Every conditioning row sums to one.
#[derive(Debug, Clone)]
pub struct LexicalTable {
    direction: Direction,
    cond_vocab: Vocab,
    out_vocab: Vocab,
    /// rows[0] conditions on NULL; rows[w+1] conditions on cond word w.
    /// Rows are sorted by out-word id.
    rows: Vec<Vec<(u32, f64)>>,
}

impl LexicalTable {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    fn prob_slot(&self, slot: usize, out: u32) -> f64 {
        match self.rows[slot].binary_search_by_key(&out, |&(o, _)| o) {
            Ok(idx) => self.rows[slot][idx].1,
            Err(_) => 0.0,
        }
    }

    /// t(out | cond); `None` conditions on NULL. Zero for unseen pairs.
    pub fn prob(&self, cond: Option<&str>, out: &str) -> f64 {
        let out_id = match self.out_vocab.get(out) {
            Some(id) => id,
            None => return 0.0,
        };
        let slot = match cond {
            None => 0,
            Some(w) => match self.cond_vocab.get(w) {
                Some(id) => id as usize + 1,
                None => return 0.0,
            },
        };
        self.prob_slot(slot, out_id)
    }

    /// All (conditioning word, out word, probability) entries, sorted by
    /// conditioning word (NULL first) then out word.
    pub fn entries(&self) -> Vec<(Option<&str>, &str, f64)> {
        let mut out = Vec::new();
        let mut slots: Vec<(Option<&str>, usize)> = vec![(None, 0)];
        let mut words: Vec<u32> = (0..self.cond_vocab.len() as u32).collect();
        words.sort_by(|&a, &b| self.cond_vocab.word(a).cmp(self.cond_vocab.word(b)));
        for w in words {
            slots.push((Some(self.cond_vocab.word(w)), w as usize + 1));
        }
        for (cond, slot) in slots {
            let mut row: Vec<(&str, f64)> = self.rows[slot]
                .iter()
                .map(|&(o, p)| (self.out_vocab.word(o), p))
                .collect();
            row.sort_by(|a, b| a.0.cmp(b.0));
            for (o, p) in row {
                out.push((cond, o, p));
            }
        }
        out
    }

    /// Row of probabilities for one conditioning word, sorted by out word.
    pub fn row(&self, cond: Option<&str>) -> Vec<(&str, f64)> {
        let slot = match cond {
            None => 0,
            Some(w) => match self.cond_vocab.get(w) {
                Some(id) => id as usize + 1,
                None => return Vec::new(),
            },
        };
        let mut row: Vec<(&str, f64)> = self.rows[slot]
            .iter()
            .map(|&(o, p)| (self.out_vocab.word(o), p))
            .collect();
        row.sort_by(|a, b| a.0.cmp(b.0));
        row
    }

    fn mstep(&mut self, counts: Vec<Vec<f64>>) {
        for (slot, row_counts) in counts.into_iter().enumerate() {
            let mut sum = 0.0;
            for c in &row_counts {
                sum += c.max(PROB_FLOOR);
            }
            if sum <= 0.0 {
                continue;
            }
            for (entry, c) in self.rows[slot].iter_mut().zip(row_counts) {
                entry.1 = c.max(PROB_FLOOR) / sum;
            }
        }
    }

    /// Writes lines `source_word target_word probability`; the NULL token
    /// prints as `NULL` on its own side.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (cond, out, p) in self.entries() {
            let cond = cond.unwrap_or(NULL_TOKEN);
            let (src, tgt) = match self.direction {
                Direction::SrcToTgt => (cond, out),
                Direction::TgtToSrc => (out, cond),
            };
            writeln!(w, "{src} {tgt} {p:.6e}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, direction: Direction) -> Result<LexicalTable> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut cond_vocab = Vocab::default();
        let mut out_vocab = Vocab::default();
        let mut entries: Vec<(usize, u32, f64)> = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, idx + 1, "expected 'src tgt probability'"));
            }
            let (cond, out) = match direction {
                Direction::SrcToTgt => (fields[0], fields[1]),
                Direction::TgtToSrc => (fields[1], fields[0]),
            };
            let p: f64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "bad probability"))?;
            let slot = if cond == NULL_TOKEN {
                0
            } else {
                cond_vocab.intern(cond) as usize + 1
            };
            entries.push((slot, out_vocab.intern(out), p));
        }
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); cond_vocab.len() + 1];
        for (slot, out, p) in entries {
            rows[slot].push((out, p));
        }
        for row in &mut rows {
            row.sort_by_key(|&(o, _)| o);
        }
        Ok(LexicalTable {
            direction,
            cond_vocab,
            out_vocab,
            rows,
        })
    }
}

/// Model 2 position distribution a(i | j, cond_len, out_len), slot 0 = NULL.
#[derive(Debug, Clone)]
pub struct DistortionTable {
    /// (cond_len, out_len) -> per out position, probabilities over cond
    /// slots (NULL + positions).
    tables: BTreeMap<(usize, usize), Vec<Vec<f64>>>,
}

impl DistortionTable {
    fn prob_slot(&self, slot: usize, out_pos: usize, cond_len: usize, out_len: usize) -> f64 {
        match self.tables.get(&(cond_len, out_len)) {
            Some(rows) => rows[out_pos][slot],
            None => 1.0 / (cond_len as f64 + 1.0),
        }
    }

    /// a(i | j, cond_len, out_len); `None` is the NULL position.
    pub fn prob(&self, i: Option<usize>, j: usize, cond_len: usize, out_len: usize) -> f64 {
        let slot = match i {
            None => 0,
            Some(i) => i + 1,
        };
        self.prob_slot(slot, j, cond_len, out_len)
    }

    /// Length pairs with trained rows.
    pub fn length_pairs(&self) -> Vec<(usize, usize)> {
        self.tables.keys().copied().collect()
    }
}

fn index_corpus(
    corpus: &ParallelCorpus,
    direction: Direction,
    mut cond_vocab: Vocab,
    mut out_vocab: Vocab,
) -> (Vec<(Vec<u32>, Vec<u32>)>, Vocab, Vocab) {
    let mut pairs = Vec::with_capacity(corpus.len());
    for (src, tgt) in &corpus.pairs {
        let (cond_s, out_s) = match direction {
            Direction::SrcToTgt => (src, tgt),
            Direction::TgtToSrc => (tgt, src),
        };
        let cond: Vec<u32> = cond_s.tokens.iter().map(|t| cond_vocab.intern(t)).collect();
        let out: Vec<u32> = out_s.tokens.iter().map(|t| out_vocab.intern(t)).collect();
        pairs.push((cond, out));
    }
    (pairs, cond_vocab, out_vocab)
}

fn add_count(counts: &mut [f64], row: &[(u32, f64)], out: u32, value: f64) {
    if let Ok(idx) = row.binary_search_by_key(&out, |&(o, _)| o) {
        counts[idx] += value;
    }
}

fn ibm1_estep_counts(
    table: &LexicalTable,
    pairs: &[(Vec<u32>, Vec<u32>)],
) -> (Vec<Vec<f64>>, f64) {
    let mut counts: Vec<Vec<f64>> = table.rows.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut ll = 0.0;
    for (cond, out) in pairs {
        let norm = cond.len() as f64 + 1.0;
        for &o in out {
            let mut denom = table.prob_slot(0, o);
            for &c in cond {
                denom += table.prob_slot(c as usize + 1, o);
            }
            ll += (denom / norm).ln();
            if denom <= 0.0 {
                continue;
            }
            add_count(&mut counts[0], &table.rows[0], o, table.prob_slot(0, o) / denom);
            for &c in cond {
                let slot = c as usize + 1;
                add_count(
                    &mut counts[slot],
                    &table.rows[slot],
                    o,
                    table.prob_slot(slot, o) / denom,
                );
            }
        }
    }
    (counts, ll)
}

fn uniform_init(
    direction: Direction,
    pairs: &[(Vec<u32>, Vec<u32>)],
    cond_vocab: Vocab,
    out_vocab: Vocab,
) -> LexicalTable {
    let mut cooc: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); cond_vocab.len() + 1];
    for (cond, out) in pairs {
        for &o in out {
            cooc[0].insert(o);
            for &c in cond {
                cooc[c as usize + 1].insert(o);
            }
        }
    }
    let rows = cooc
        .into_iter()
        .map(|set| {
            let p = 1.0 / set.len().max(1) as f64;
            set.into_iter().map(|o| (o, p)).collect()
        })
        .collect();
    LexicalTable {
        direction,
        cond_vocab,
        out_vocab,
        rows,
    }
}

/// Trains IBM Model 1 by EM. The table starts uniform over co-occurring
/// word pairs (plus NULL). Returns the table and the corpus log-likelihood
/// as it entered each iteration; EM guarantees it is non-decreasing.
pub fn train_ibm1(
    corpus: &ParallelCorpus,
    iterations: usize,
    direction: Direction,
) -> Result<(LexicalTable, Vec<f64>)> {
    if iterations == 0 {
        return Err(Error::InvalidArg("iterations must be >= 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArg("corpus must be nonempty".into()));
    }
    let (pairs, cond_vocab, out_vocab) =
        index_corpus(corpus, direction, Vocab::default(), Vocab::default());
    let mut table = uniform_init(direction, &pairs, cond_vocab, out_vocab);
    let mut lls = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (counts, ll) = ibm1_estep_counts(&table, &pairs);
        lls.push(ll);
        table.mstep(counts);
    }
    Ok((table, lls))
}

/// Corpus log-likelihood under Model 1 (per-position NULL-inclusive mixture
/// with the uniform 1/(len+1) position term).
pub fn log_likelihood_ibm1(table: &LexicalTable, corpus: &ParallelCorpus) -> f64 {
    let (pairs, ..) = index_corpus(
        corpus,
        table.direction,
        table.cond_vocab.clone(),
        table.out_vocab.clone(),
    );
    ibm1_estep_counts(table, &pairs).1
}

/// Expected link counts from one Model 1 E-step on a single sentence pair,
/// keyed by (conditioning word or NULL, out word). Exposed so the E-step can
/// be checked against exhaustive alignment enumeration.
pub fn ibm1_expected_counts(
    table: &LexicalTable,
    src: &Sentence,
    tgt: &Sentence,
) -> BTreeMap<(Option<String>, String), f64> {
    let (cond_toks, out_toks) = match table.direction {
        Direction::SrcToTgt => (&src.tokens, &tgt.tokens),
        Direction::TgtToSrc => (&tgt.tokens, &src.tokens),
    };
    let mut counts: BTreeMap<(Option<String>, String), f64> = BTreeMap::new();
    for o in out_toks {
        let mut denom = table.prob(None, o);
        for c in cond_toks {
            denom += table.prob(Some(c), o);
        }
        if denom <= 0.0 {
            continue;
        }
        *counts.entry((None, o.clone())).or_insert(0.0) += table.prob(None, o) / denom;
        for c in cond_toks {
            *counts.entry((Some(c.clone()), o.clone())).or_insert(0.0) +=
                table.prob(Some(c), o) / denom;
        }
    }
    counts
}

/// Trains IBM Model 2 by joint EM over the lexical and position tables,
/// starting from a converged Model 1 table.
pub fn train_ibm2(
    corpus: &ParallelCorpus,
    iterations: usize,
    init: LexicalTable,
) -> Result<(LexicalTable, DistortionTable, Vec<f64>)> {
    if iterations == 0 {
        return Err(Error::InvalidArg("iterations must be >= 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArg("corpus must be nonempty".into()));
    }
    let direction = init.direction;
    let (pairs, cond_vocab, out_vocab) = index_corpus(
        corpus,
        direction,
        init.cond_vocab.clone(),
        init.out_vocab.clone(),
    );
    let mut table = LexicalTable {
        direction,
        cond_vocab,
        out_vocab,
        rows: init.rows,
    };

    let mut dist = DistortionTable {
        tables: BTreeMap::new(),
    };
    for (cond, out) in &pairs {
        dist.tables.entry((cond.len(), out.len())).or_insert_with(|| {
            vec![vec![1.0 / (cond.len() as f64 + 1.0); cond.len() + 1]; out.len()]
        });
    }

    let mut lls = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut t_counts: Vec<Vec<f64>> = table.rows.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut a_counts: BTreeMap<(usize, usize), Vec<Vec<f64>>> = dist
            .tables
            .iter()
            .map(|(&k, rows)| (k, rows.iter().map(|r| vec![0.0; r.len()]).collect()))
            .collect();
        let mut ll = 0.0;
        for (cond, out) in &pairs {
            let key = (cond.len(), out.len());
            for (j, &o) in out.iter().enumerate() {
                let mut denom = table.prob_slot(0, o) * dist.prob_slot(0, j, key.0, key.1);
                for (i, &c) in cond.iter().enumerate() {
                    denom += table.prob_slot(c as usize + 1, o)
                        * dist.prob_slot(i + 1, j, key.0, key.1);
                }
                ll += denom.ln();
                if denom <= 0.0 {
                    continue;
                }
                let gamma0 = table.prob_slot(0, o) * dist.prob_slot(0, j, key.0, key.1) / denom;
                add_count(&mut t_counts[0], &table.rows[0], o, gamma0);
                a_counts.get_mut(&key).unwrap()[j][0] += gamma0;
                for (i, &c) in cond.iter().enumerate() {
                    let slot = c as usize + 1;
                    let gamma = table.prob_slot(slot, o)
                        * dist.prob_slot(i + 1, j, key.0, key.1)
                        / denom;
                    add_count(&mut t_counts[slot], &table.rows[slot], o, gamma);
                    a_counts.get_mut(&key).unwrap()[j][i + 1] += gamma;
                }
            }
        }
        lls.push(ll);
        table.mstep(t_counts);
        for (key, rows) in a_counts {
            let target = dist.tables.get_mut(&key).unwrap();
            for (j, row) in rows.into_iter().enumerate() {
                let sum: f64 = row.iter().map(|c| c.max(PROB_FLOOR)).sum();
                for (slot, c) in row.into_iter().enumerate() {
                    target[j][slot] = c.max(PROB_FLOOR) / sum;
                }
            }
        }
    }
    Ok((table, dist, lls))
}

/// Corpus log-likelihood under Model 2.
pub fn log_likelihood_ibm2(
    table: &LexicalTable,
    dist: &DistortionTable,
    corpus: &ParallelCorpus,
) -> f64 {
    let (pairs, ..) = index_corpus(
        corpus,
        table.direction,
        table.cond_vocab.clone(),
        table.out_vocab.clone(),
    );
    let mut ll = 0.0;
    for (cond, out) in &pairs {
        for (j, &o) in out.iter().enumerate() {
            let mut denom = table.prob_slot(0, o) * dist.prob_slot(0, j, cond.len(), out.len());
            for (i, &c) in cond.iter().enumerate() {
                denom += table.prob_slot(c as usize + 1, o)
                    * dist.prob_slot(i + 1, j, cond.len(), out.len());
            }
            ll += denom.ln();
        }
    }
    ll
}

/// A set of word alignment links between a source and target sentence,
/// always stored in source-major orientation: link (i, j) aligns source
/// position i to target position j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMatrix {
    pub src_len: usize,
    pub tgt_len: usize,
    links: BTreeSet<(usize, usize)>,
}

impl AlignmentMatrix {
    pub fn new(src_len: usize, tgt_len: usize) -> Self {
        AlignmentMatrix {
            src_len,
            tgt_len,
            links: BTreeSet::new(),
        }
    }

    pub fn add_link(&mut self, i: usize, j: usize) -> Result<()> {
        if i >= self.src_len || j >= self.tgt_len {
            return Err(Error::InvalidArg(format!(
                "link ({i},{j}) out of bounds for {}x{}",
                self.src_len, self.tgt_len
            )));
        }
        self.links.insert((i, j));
        Ok(())
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.links.contains(&(i, j))
    }

    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn is_subset(&self, other: &AlignmentMatrix) -> bool {
        self.links.is_subset(&other.links)
    }

    /// Swaps orientation: links (i, j) become (j, i).
    pub fn transposed(&self) -> AlignmentMatrix {
        AlignmentMatrix {
            src_len: self.tgt_len,
            tgt_len: self.src_len,
            links: self.links.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }

    /// Space-separated `i-j` interchange form.
    pub fn to_line(&self) -> String {
        self.links
            .iter()
            .map(|(i, j)| format!("{i}-{j}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(line: &str, src_len: usize, tgt_len: usize) -> Result<AlignmentMatrix> {
        let mut m = AlignmentMatrix::new(src_len, tgt_len);
        for tok in line.split_whitespace() {
            let (i, j) = tok
                .split_once('-')
                .ok_or_else(|| Error::Data(format!("bad alignment token '{tok}'")))?;
            let i: usize = i
                .parse()
                .map_err(|_| Error::Data(format!("bad alignment token '{tok}'")))?;
            let j: usize = j
                .parse()
                .map_err(|_| Error::Data(format!("bad alignment token '{tok}'")))?;
            m.add_link(i, j)?;
        }
        Ok(m)
    }
}

/// Writes one alignment per line in the `i-j` interchange format.
pub fn save_alignments(path: &Path, alignments: &[AlignmentMatrix]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for a in alignments {
        writeln!(w, "{}", a.to_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads alignments written by [`save_alignments`], validating bounds
/// against the corpus.
pub fn load_alignments(path: &Path, corpus: &ParallelCorpus) -> Result<Vec<AlignmentMatrix>> {
    let lines = crate::corpus::read_lines(path)?;
    if lines.len() != corpus.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but the corpus has {} pairs",
            path.display(),
            lines.len(),
            corpus.len()
        )));
    }
    lines
        .iter()
        .zip(&corpus.pairs)
        .enumerate()
        .map(|(idx, (line, (src, tgt)))| {
            AlignmentMatrix::parse_line(line, src.len(), tgt.len())
                .map_err(|e| Error::parse(path, idx + 1, e.to_string()))
        })
        .collect()
}

/// Finds, per target position, the source position maximizing
/// t(e_j | f_i) * a(i | j, ...), with NULL competing first; a NULL winner
/// emits no link. Ties break to NULL, then the smallest source index.
pub fn viterbi_align(
    lex: &LexicalTable,
    dist: Option<&DistortionTable>,
    src: &Sentence,
    tgt: &Sentence,
) -> AlignmentMatrix {
    let (cond_toks, out_toks) = match lex.direction {
        Direction::SrcToTgt => (&src.tokens, &tgt.tokens),
        Direction::TgtToSrc => (&tgt.tokens, &src.tokens),
    };
    let cond_len = cond_toks.len();
    let out_len = out_toks.len();
    let mut matrix = AlignmentMatrix::new(src.len(), tgt.len());
    for (j, o) in out_toks.iter().enumerate() {
        let a = |slot: usize| match dist {
            Some(d) => d.prob_slot(slot, j, cond_len, out_len),
            None => 1.0,
        };
        let mut best_slot = 0usize;
        let mut best = lex.prob(None, o) * a(0);
        for (i, c) in cond_toks.iter().enumerate() {
            let score = lex.prob(Some(c), o) * a(i + 1);
            if score > best {
                best = score;
                best_slot = i + 1;
            }
        }
        if best_slot > 0 {
            let i = best_slot - 1;
            let (si, tj) = match lex.direction {
                Direction::SrcToTgt => (i, j),
                Direction::TgtToSrc => (j, i),
            };
            matrix.add_link(si, tj).expect("viterbi link in bounds");
        }
    }
    matrix
}

/// How to combine the two directional alignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetrization {
    Intersection,
    Union,
    GrowDiagFinalAnd,
}

impl Symmetrization {
    pub fn parse(s: &str) -> Result<Symmetrization> {
        match s {
            "intersection" => Ok(Symmetrization::Intersection),
            "union" => Ok(Symmetrization::Union),
            "gdfa" | "grow-diag-final-and" => Ok(Symmetrization::GrowDiagFinalAnd),
            other => Err(Error::InvalidArg(format!(
                "unknown symmetrization heuristic '{other}'"
            ))),
        }
    }
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Combines forward and reverse alignments (both in source-major
/// orientation) into a single alignment. The result always satisfies
/// intersection subset-of result subset-of union.
pub fn symmetrize(
    fwd: &AlignmentMatrix,
    rev: &AlignmentMatrix,
    heuristic: Symmetrization,
) -> Result<AlignmentMatrix> {
    if fwd.src_len != rev.src_len || fwd.tgt_len != rev.tgt_len {
        return Err(Error::InvalidArg(format!(
            "alignment dimensions differ: {}x{} vs {}x{}",
            fwd.src_len, fwd.tgt_len, rev.src_len, rev.tgt_len
        )));
    }
    let union: BTreeSet<(usize, usize)> = fwd.links.union(&rev.links).copied().collect();
    let intersection: BTreeSet<(usize, usize)> =
        fwd.links.intersection(&rev.links).copied().collect();

    let links = match heuristic {
        Symmetrization::Intersection => intersection,
        Symmetrization::Union => union,
        Symmetrization::GrowDiagFinalAnd => {
            let mut current = intersection;
            let mut src_cov = vec![false; fwd.src_len];
            let mut tgt_cov = vec![false; fwd.tgt_len];
            for &(i, j) in &current {
                src_cov[i] = true;
                tgt_cov[j] = true;
            }
            // grow-diag: repeatedly add union neighbors of current points
            // whose row or column is still uncovered, row-major scan order.
            loop {
                let snapshot: Vec<(usize, usize)> = current.iter().copied().collect();
                let mut added = false;
                for (i, j) in snapshot {
                    for (di, dj) in NEIGHBORS {
                        let ni = i as isize + di;
                        let nj = j as isize + dj;
                        if ni < 0 || nj < 0 {
                            continue;
                        }
                        let (ni, nj) = (ni as usize, nj as usize);
                        if ni >= fwd.src_len || nj >= fwd.tgt_len {
                            continue;
                        }
                        if !union.contains(&(ni, nj)) || current.contains(&(ni, nj)) {
                            continue;
                        }
                        if !src_cov[ni] || !tgt_cov[nj] {
                            current.insert((ni, nj));
                            src_cov[ni] = true;
                            tgt_cov[nj] = true;
                            added = true;
                        }
                    }
                }
                if !added {
                    break;
                }
            }
            // final-and: union points whose endpoints are both uncovered.
            for &(i, j) in &union {
                if !src_cov[i] && !tgt_cov[j] {
                    current.insert((i, j));
                    src_cov[i] = true;
                    tgt_cov[j] = true;
                }
            }
            current
        }
    };
    Ok(AlignmentMatrix {
        src_len: fwd.src_len,
        tgt_len: fwd.tgt_len,
        links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            pairs
                .iter()
                .map(|(s, t)| {
                    (
                        Sentence::from_tokens(s, Lang::Source),
                        Sentence::from_tokens(t, Lang::Target),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn ibm1_rejects_bad_inputs() {
        let c = corpus(&[("x", "y")]);
        assert!(train_ibm1(&c, 0, Direction::SrcToTgt).is_err());
        assert!(train_ibm1(&ParallelCorpus::default(), 5, Direction::SrcToTgt).is_err());
    }

    #[test]
    fn ibm1_single_pair_beats_null() {
        let c = corpus(&[("x", "y")]);
        let (table, lls) = train_ibm1(&c, 5, Direction::SrcToTgt).unwrap();
        assert!(table.prob(Some("x"), "y") > 0.5);
        assert_eq!(lls.len(), 5);
    }

    #[test]
    fn ibm1_classic_corpus_learns_das_the() {
        let c = corpus(&[
            ("das haus", "the house"),
            ("das buch", "the book"),
            ("ein buch", "a book"),
        ]);
        let (table, lls) = train_ibm1(&c, 10, Direction::SrcToTgt).unwrap();
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood decreased: {w:?}");
        }
        let p_the = table.prob(Some("das"), "the");
        for (word, p) in table.row(Some("das")) {
            if word != "the" {
                assert!(p_the > p, "t(the|das)={p_the} not above t({word}|das)={p}");
            }
        }
    }

    #[test]
    fn ibm1_rows_normalize() {
        let c = corpus(&[
            ("das haus", "the house"),
            ("das buch", "the book"),
            ("ein buch", "a book"),
        ]);
        let (table, _) = train_ibm1(&c, 7, Direction::SrcToTgt).unwrap();
        for cond in [None, Some("das"), Some("haus"), Some("buch"), Some("ein")] {
            let sum: f64 = table.row(cond).iter().map(|&(_, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {cond:?} sums to {sum}");
        }
    }

    /// Oracle: expected counts by enumerating all (cond_len+1)^out_len
    /// alignment functions and weighting each by its joint probability.
    fn enumeration_expected_counts(
        table: &LexicalTable,
        cond: &[&str],
        out: &[&str],
    ) -> BTreeMap<(Option<String>, String), f64> {
        let slots = cond.len() + 1;
        let total_alignments = (slots as u64).pow(out.len() as u32);
        let mut weights = Vec::new();
        let mut z = 0.0;
        for code in 0..total_alignments {
            let mut c = code;
            let mut w = 1.0;
            let mut assignment = Vec::new();
            for j in 0..out.len() {
                let slot = (c % slots as u64) as usize;
                c /= slots as u64;
                let cond_word = if slot == 0 { None } else { Some(cond[slot - 1]) };
                w *= table.prob(cond_word, out[j]);
                assignment.push(slot);
            }
            z += w;
            weights.push((assignment, w));
        }
        let mut counts = BTreeMap::new();
        for (assignment, w) in weights {
            if z <= 0.0 {
                continue;
            }
            for (j, &slot) in assignment.iter().enumerate() {
                let key = (
                    if slot == 0 {
                        None
                    } else {
                        Some(cond[slot - 1].to_string())
                    },
                    out[j].to_string(),
                );
                *counts.entry(key).or_insert(0.0) += w / z;
            }
        }
        counts
    }

    #[test]
    fn ibm1_estep_matches_enumeration() {
        let c = corpus(&[("a b c", "x y z"), ("a c", "x z"), ("b", "y")]);
        let (table, _) = train_ibm1(&c, 3, Direction::SrcToTgt).unwrap();
        let src = Sentence::from_tokens("a b c", Lang::Source);
        let tgt = Sentence::from_tokens("x y z", Lang::Target);
        let mine = ibm1_expected_counts(&table, &src, &tgt);
        let oracle = enumeration_expected_counts(&table, &["a", "b", "c"], &["x", "y", "z"]);
        assert_eq!(mine.len(), oracle.len());
        for (key, v) in &oracle {
            let got = mine.get(key).copied().unwrap_or(-1.0);
            assert!((got - v).abs() < 1e-9, "{key:?}: {got} vs {v}");
        }
    }

    #[test]
    fn ibm2_distortion_rows_normalize_after_one_iteration() {
        let c = corpus(&[("a b", "x y"), ("b a", "y x")]);
        let (m1, _) = train_ibm1(&c, 3, Direction::SrcToTgt).unwrap();
        let (_, dist, _) = train_ibm2(&c, 1, m1).unwrap();
        for (cl, ol) in dist.length_pairs() {
            for j in 0..ol {
                let mut sum = dist.prob(None, j, cl, ol);
                for i in 0..cl {
                    sum += dist.prob(Some(i), j, cl, ol);
                }
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ibm2_identity_corpus_aligns_diagonally() {
        let c = corpus(&[
            ("a b c", "a b c"),
            ("b c", "b c"),
            ("a c", "a c"),
            ("a b", "a b"),
            ("c", "c"),
        ]);
        let (m1, _) = train_ibm1(&c, 5, Direction::SrcToTgt).unwrap();
        let (m2, dist, lls) = train_ibm2(&c, 5, m1).unwrap();
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        let src = Sentence::from_tokens("a b c", Lang::Source);
        let tgt = Sentence::from_tokens("a b c", Lang::Target);
        let a = viterbi_align(&m2, Some(&dist), &src, &tgt);
        let links: Vec<_> = a.links().collect();
        assert_eq!(links, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn ibm2_degenerate_pair_has_null_competition_only() {
        let c = corpus(&[("x", "y")]);
        let (m1, _) = train_ibm1(&c, 2, Direction::SrcToTgt).unwrap();
        let (_, dist, _) = train_ibm2(&c, 2, m1).unwrap();
        let sum = dist.prob(None, 0, 1, 1) + dist.prob(Some(0), 0, 1, 1);
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn viterbi_unknown_word_gets_no_link() {
        let c = corpus(&[("a", "x")]);
        let (table, _) = train_ibm1(&c, 3, Direction::SrcToTgt).unwrap();
        let src = Sentence::from_tokens("a", Lang::Source);
        let tgt = Sentence::from_tokens("zzz", Lang::Target);
        let a = viterbi_align(&table, None, &src, &tgt);
        assert!(a.is_empty());
    }

    #[test]
    fn viterbi_empty_target_yields_no_links() {
        let c = corpus(&[("a", "x")]);
        let (table, _) = train_ibm1(&c, 3, Direction::SrcToTgt).unwrap();
        let src = Sentence::from_tokens("a", Lang::Source);
        let tgt = Sentence::new(Vec::new(), Lang::Target);
        assert!(viterbi_align(&table, None, &src, &tgt).is_empty());
    }

    #[test]
    fn viterbi_reverse_direction_reports_source_major_links() {
        let c = corpus(&[("a b", "x y"), ("a", "x"), ("b", "y")]);
        let (fwd, _) = train_ibm1(&c, 5, Direction::SrcToTgt).unwrap();
        let (rev, _) = train_ibm1(&c, 5, Direction::TgtToSrc).unwrap();
        let src = Sentence::from_tokens("a b", Lang::Source);
        let tgt = Sentence::from_tokens("x y", Lang::Target);
        let fa = viterbi_align(&fwd, None, &src, &tgt);
        let ra = viterbi_align(&rev, None, &src, &tgt);
        assert_eq!(fa.links().collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
        assert_eq!(ra.links().collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
    }

    fn matrix(src_len: usize, tgt_len: usize, links: &[(usize, usize)]) -> AlignmentMatrix {
        let mut m = AlignmentMatrix::new(src_len, tgt_len);
        for &(i, j) in links {
            m.add_link(i, j).unwrap();
        }
        m
    }

    #[test]
    fn symmetrize_fixed_point() {
        let a = matrix(1, 1, &[(0, 0)]);
        for h in [
            Symmetrization::Intersection,
            Symmetrization::Union,
            Symmetrization::GrowDiagFinalAnd,
        ] {
            let out = symmetrize(&a, &a, h).unwrap();
            assert_eq!(out.links().collect::<Vec<_>>(), vec![(0, 0)]);
        }
    }

    #[test]
    fn symmetrize_set_algebra() {
        let fwd = matrix(2, 2, &[(0, 0), (1, 1)]);
        let rev = matrix(2, 2, &[(0, 0)]);
        let inter = symmetrize(&fwd, &rev, Symmetrization::Intersection).unwrap();
        assert_eq!(inter.links().collect::<Vec<_>>(), vec![(0, 0)]);
        let uni = symmetrize(&fwd, &rev, Symmetrization::Union).unwrap();
        assert_eq!(uni.links().collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn symmetrize_rejects_mismatched_dims() {
        let fwd = matrix(2, 2, &[(0, 0)]);
        let rev = matrix(2, 3, &[(0, 0)]);
        assert!(symmetrize(&fwd, &rev, Symmetrization::Union).is_err());
    }

    #[test]
    fn gdfa_sandwiched_between_intersection_and_union() {
        let positions: Vec<(usize, usize)> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .collect();
        let mut seed = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            seed
        };
        for _ in 0..500 {
            let mut fwd = AlignmentMatrix::new(4, 4);
            let mut rev = AlignmentMatrix::new(4, 4);
            for _ in 0..3 {
                let (i, j) = positions[(next() % 16) as usize];
                fwd.add_link(i, j).unwrap();
                let (i, j) = positions[(next() % 16) as usize];
                rev.add_link(i, j).unwrap();
            }
            let inter = symmetrize(&fwd, &rev, Symmetrization::Intersection).unwrap();
            let gdfa = symmetrize(&fwd, &rev, Symmetrization::GrowDiagFinalAnd).unwrap();
            let uni = symmetrize(&fwd, &rev, Symmetrization::Union).unwrap();
            assert!(inter.is_subset(&gdfa));
            assert!(gdfa.is_subset(&uni));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let c = corpus(&[
            ("das haus", "the house"),
            ("das buch", "the book"),
            ("ein buch", "a book"),
        ]);
        let (t1, l1) = train_ibm1(&c, 6, Direction::SrcToTgt).unwrap();
        let (t2, l2) = train_ibm1(&c, 6, Direction::SrcToTgt).unwrap();
        assert_eq!(
            l1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            l2.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        for ((c1, o1, p1), (c2, o2, p2)) in t1.entries().iter().zip(t2.entries().iter()) {
            assert_eq!((c1, o1), (c2, o2));
            assert_eq!(p1.to_bits(), p2.to_bits());
        }
    }

    #[test]
    fn lexical_table_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.e2f");
        let c = corpus(&[("das haus", "the house"), ("ein buch", "a book")]);
        let (table, _) = train_ibm1(&c, 4, Direction::SrcToTgt).unwrap();
        table.save(&path).unwrap();
        let loaded = LexicalTable::load(&path, Direction::SrcToTgt).unwrap();
        for (cond, out, p) in table.entries() {
            let q = loaded.prob(cond, out);
            assert!((p - q).abs() < 1e-6, "{cond:?} {out}: {p} vs {q}");
        }
    }

    #[test]
    fn alignment_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alignments.txt");
        let c = corpus(&[("a b c", "x y"), ("d", "z")]);
        let alignments = vec![
            matrix(3, 2, &[(0, 0), (1, 1), (2, 1)]),
            matrix(1, 1, &[(0, 0)]),
        ];
        save_alignments(&path, &alignments).unwrap();
        let loaded = load_alignments(&path, &c).unwrap();
        assert_eq!(loaded, alignments);
        assert_eq!(loaded[0].to_line(), "0-0 1-1 2-1");
    }
}
