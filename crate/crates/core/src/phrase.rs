//! Phrase extraction and scoring: alignment-consistent phrase pairs,
//! bidirectional relative frequencies and lexical weights, and the text and
//! binary phrase table formats.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::align::{AlignmentMatrix, Direction, LexicalTable};
use crate::bintable::{self, BinRecord, BinTable};
use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const FIELD_DELIM: &str = " ||| ";

/// A contiguous phrase pair with its spans (inclusive) in the originating
/// sentence pair and the alignment links restricted to the phrase, stored
/// relative to the span starts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PhrasePair {
    pub src_span: (usize, usize),
    pub tgt_span: (usize, usize),
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub links: Vec<(usize, usize)>,
}

/// Extracts every alignment-consistent phrase pair: all links from the
/// source span land inside the target span and vice versa, with at least one
/// link inside the rectangle. Target spans are extended over unaligned
/// boundary words; source-side extension falls out of enumerating all source
/// spans. Both sides are bounded by `max_phrase_len`.
pub fn extract_phrases(
    src: &Sentence,
    tgt: &Sentence,
    alignment: &AlignmentMatrix,
    max_phrase_len: usize,
) -> Result<Vec<PhrasePair>> {
    if max_phrase_len < 1 {
        return Err(Error::InvalidArg("max_phrase_len must be >= 1".into()));
    }
    if alignment.src_len != src.len() || alignment.tgt_len != tgt.len() {
        return Err(Error::InvalidArg(format!(
            "alignment is {}x{} but the sentence pair is {}x{}",
            alignment.src_len,
            alignment.tgt_len,
            src.len(),
            tgt.len()
        )));
    }
    let links: Vec<(usize, usize)> = alignment.links().collect();
    let mut tgt_aligned = vec![false; tgt.len()];
    for &(_, j) in &links {
        tgt_aligned[j] = true;
    }

    let mut out = Vec::new();
    for i1 in 0..src.len() {
        for i2 in i1..src.len().min(i1 + max_phrase_len) {
            // project the source span onto the target side
            let mut j_min = usize::MAX;
            let mut j_max = 0usize;
            let mut any = false;
            for &(i, j) in &links {
                if i >= i1 && i <= i2 {
                    any = true;
                    j_min = j_min.min(j);
                    j_max = j_max.max(j);
                }
            }
            if !any {
                continue;
            }
            // consistency: links into the projection must come from the span
            let consistent = links
                .iter()
                .all(|&(i, j)| j < j_min || j > j_max || (i >= i1 && i <= i2));
            if !consistent {
                continue;
            }
            // extend over unaligned target boundary words
            let mut starts = vec![j_min];
            let mut j = j_min;
            while j > 0 && !tgt_aligned[j - 1] {
                j -= 1;
                starts.push(j);
            }
            let mut ends = vec![j_max];
            let mut j = j_max;
            while j + 1 < tgt.len() && !tgt_aligned[j + 1] {
                j += 1;
                ends.push(j);
            }
            for &js in &starts {
                for &je in &ends {
                    if je - js + 1 > max_phrase_len {
                        continue;
                    }
                    let phrase_links: Vec<(usize, usize)> = links
                        .iter()
                        .filter(|&&(i, j)| i >= i1 && i <= i2 && j >= js && j <= je)
                        .map(|&(i, j)| (i - i1, j - js))
                        .collect();
                    out.push(PhrasePair {
                        src_span: (i1, i2),
                        tgt_span: (js, je),
                        src: src.tokens[i1..=i2].to_vec(),
                        tgt: tgt.tokens[js..=je].to_vec(),
                        links: phrase_links,
                    });
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// A scored phrase table entry. Scores are stored in the text-table column
/// order: phi(src|tgt), lex(src|tgt), phi(tgt|src), lex(tgt|src).
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseTableEntry {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub scores: [f64; 4],
}

impl PhraseTableEntry {
    pub fn src_key(&self) -> String {
        self.src.join(" ")
    }

    pub fn phi_src_given_tgt(&self) -> f64 {
        self.scores[0]
    }

    pub fn lex_src_given_tgt(&self) -> f64 {
        self.scores[1]
    }

    pub fn phi_tgt_given_src(&self) -> f64 {
        self.scores[2]
    }

    pub fn lex_tgt_given_src(&self) -> f64 {
        self.scores[3]
    }
}

#[derive(Debug, Default)]
struct PairStats {
    count: u64,
    alignments: BTreeMap<Vec<(usize, usize)>, u64>,
}

/// Accumulates extracted phrase pairs across the corpus and scores them.
#[derive(Debug, Default)]
pub struct PhraseScorer {
    counts: BTreeMap<(Vec<String>, Vec<String>), PairStats>,
    src_totals: BTreeMap<Vec<String>, u64>,
    tgt_totals: BTreeMap<Vec<String>, u64>,
}

impl PhraseScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_sentence(&mut self, pairs: &[PhrasePair]) {
        for pair in pairs {
            let key = (pair.src.clone(), pair.tgt.clone());
            let stats = self.counts.entry(key).or_default();
            stats.count += 1;
            *stats.alignments.entry(pair.links.clone()).or_insert(0) += 1;
            *self.src_totals.entry(pair.src.clone()).or_insert(0) += 1;
            *self.tgt_totals.entry(pair.tgt.clone()).or_insert(0) += 1;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Relative-frequency phi scores in both directions plus lexical weights
    /// computed from the most frequent within-phrase alignment (ties break
    /// to the lexicographically smallest link set).
    pub fn score(
        &self,
        lex_fwd: &LexicalTable,
        lex_rev: &LexicalTable,
    ) -> Result<Vec<PhraseTableEntry>> {
        if lex_fwd.direction() != Direction::SrcToTgt {
            return Err(Error::InvalidArg(
                "forward lexical table must condition on the source side".into(),
            ));
        }
        if lex_rev.direction() != Direction::TgtToSrc {
            return Err(Error::InvalidArg(
                "reverse lexical table must condition on the target side".into(),
            ));
        }
        let mut entries = Vec::with_capacity(self.counts.len());
        for ((src, tgt), stats) in &self.counts {
            let phi_tgt_src = stats.count as f64 / self.src_totals[src] as f64;
            let phi_src_tgt = stats.count as f64 / self.tgt_totals[tgt] as f64;
            let links = stats
                .alignments
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(links, _)| links.clone())
                .unwrap_or_default();
            let lex_tgt_src = lexical_weight(tgt, src, &links, lex_fwd, false);
            let lex_src_tgt = lexical_weight(src, tgt, &links, lex_rev, true);
            entries.push(PhraseTableEntry {
                src: src.clone(),
                tgt: tgt.clone(),
                scores: [phi_src_tgt, lex_src_tgt, phi_tgt_src, lex_tgt_src],
            });
        }
        Ok(entries)
    }
}

/// Product over `out` positions of the average translation probability from
/// the `cond` words linked to that position; unlinked positions fall back to
/// NULL. `links` are (src_off, tgt_off); `out_is_src` selects which link
/// column indexes `out`.
fn lexical_weight(
    out: &[String],
    cond: &[String],
    links: &[(usize, usize)],
    lex: &LexicalTable,
    out_is_src: bool,
) -> f64 {
    let mut weight = 1.0;
    for (o_idx, o_tok) in out.iter().enumerate() {
        let mut sum = 0.0;
        let mut n = 0u32;
        for &(si, ti) in links {
            let (o_pos, c_pos) = if out_is_src { (si, ti) } else { (ti, si) };
            if o_pos == o_idx {
                sum += lex.prob(Some(&cond[c_pos]), o_tok);
                n += 1;
            }
        }
        weight *= if n > 0 {
            sum / n as f64
        } else {
            lex.prob(None, o_tok)
        };
    }
    weight
}

fn format_entry(entry: &PhraseTableEntry) -> String {
    format!(
        "{}{FIELD_DELIM}{}{FIELD_DELIM}{:.6e} {:.6e} {:.6e} {:.6e}",
        entry.src.join(" "),
        entry.tgt.join(" "),
        entry.scores[0],
        entry.scores[1],
        entry.scores[2],
        entry.scores[3],
    )
}

/// Writes the text phrase table, sorted by source then target phrase.
pub fn save_phrase_table(path: &Path, entries: &[PhraseTableEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut sorted: Vec<&PhraseTableEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| (&a.src, &a.tgt).cmp(&(&b.src, &b.tgt)));
    for entry in sorted {
        writeln!(w, "{}", format_entry(entry)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses the text phrase table.
pub fn load_phrase_table(path: &Path) -> Result<Vec<PhraseTableEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(FIELD_DELIM).collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                idx + 1,
                "expected 'src ||| tgt ||| four scores'",
            ));
        }
        let scores: Vec<f64> = fields[2]
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, idx + 1, "bad score"))?;
        if scores.len() != 4 {
            return Err(Error::parse(path, idx + 1, "expected four scores"));
        }
        entries.push(PhraseTableEntry {
            src: fields[0].split_whitespace().map(str::to_string).collect(),
            tgt: fields[1].split_whitespace().map(str::to_string).collect(),
            scores: [scores[0], scores[1], scores[2], scores[3]],
        });
    }
    Ok(entries)
}

/// In-memory phrase table keyed by source phrase for decoding.
#[derive(Debug, Default)]
pub struct PhraseTable {
    groups: HashMap<String, Vec<PhraseTableEntry>>,
    max_src_len: usize,
    len: usize,
}

impl PhraseTable {
    pub fn from_entries(entries: Vec<PhraseTableEntry>) -> Self {
        let mut table = PhraseTable::default();
        table.len = entries.len();
        for entry in entries {
            table.max_src_len = table.max_src_len.max(entry.src.len());
            table.groups.entry(entry.src_key()).or_default().push(entry);
        }
        for group in table.groups.values_mut() {
            group.sort_by(|a, b| a.tgt.cmp(&b.tgt));
        }
        table
    }

    pub fn lookup(&self, src_phrase: &str) -> &[PhraseTableEntry] {
        self.groups.get(src_phrase).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn max_src_len(&self) -> usize {
        self.max_src_len
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entries_sorted(&self) -> Vec<&PhraseTableEntry> {
        let mut out: Vec<&PhraseTableEntry> = self.groups.values().flatten().collect();
        out.sort_by(|a, b| (&a.src, &a.tgt).cmp(&(&b.src, &b.tgt)));
        out
    }
}

/// All candidate spans a lookup over a sentence consults: at most
/// sentence_len * max_phrase_len of them.
pub fn candidate_spans(sentence_len: usize, max_phrase_len: usize) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    for start in 0..sentence_len {
        for end in start..sentence_len.min(start + max_phrase_len) {
            spans.push((start, end));
        }
    }
    spans
}

/// Writes the binary phrase table (entries grouped by source phrase).
pub fn binarise_phrase_table(entries: &[PhraseTableEntry], path: &Path) -> Result<()> {
    let mut sorted: Vec<&PhraseTableEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| (&a.src, &a.tgt).cmp(&(&b.src, &b.tgt)));
    let mut groups: Vec<(String, Vec<BinRecord>)> = Vec::new();
    for entry in sorted {
        let record = BinRecord {
            tgt: entry.tgt.clone(),
            scores: entry.scores.to_vec(),
        };
        match groups.last_mut() {
            Some((key, records)) if *key == entry.src_key() => records.push(record),
            _ => groups.push((entry.src_key(), vec![record])),
        }
    }
    bintable::write_table(path, 4, &groups)
}

/// Seek-based reader over the binary phrase table.
#[derive(Debug)]
pub struct PhraseTableBin {
    table: BinTable,
}

impl PhraseTableBin {
    pub fn open(path: &Path) -> Result<Self> {
        let table = BinTable::open(path)?;
        if table.score_count() != 4 {
            return Err(Error::Data(format!(
                "{}: expected 4 scores per entry, found {}",
                path.display(),
                table.score_count()
            )));
        }
        Ok(PhraseTableBin { table })
    }

    /// Entries whose source phrase equals the given tokens.
    pub fn lookup_phrase(&mut self, src_phrase: &[String]) -> Result<Vec<PhraseTableEntry>> {
        let key = src_phrase.join(" ");
        let src: Vec<String> = src_phrase.to_vec();
        Ok(self
            .table
            .lookup(&key)?
            .into_iter()
            .map(|rec| PhraseTableEntry {
                src: src.clone(),
                tgt: rec.tgt,
                scores: [rec.scores[0], rec.scores[1], rec.scores[2], rec.scores[3]],
            })
            .collect())
    }

    /// All entries matching any span of the sentence, consulting at most
    /// sentence_len * max_phrase_len spans.
    pub fn lookup_sentence(
        &mut self,
        tokens: &[String],
        max_phrase_len: usize,
    ) -> Result<Vec<PhraseTableEntry>> {
        let mut out = Vec::new();
        for (start, end) in candidate_spans(tokens.len(), max_phrase_len) {
            out.extend(self.lookup_phrase(&tokens[start..=end])?);
        }
        out.sort_by(|a, b| (&a.src, &a.tgt).cmp(&(&b.src, &b.tgt)));
        out.dedup();
        Ok(out)
    }

    /// Reads the whole table back into entries, sorted.
    pub fn read_all(&mut self) -> Result<Vec<PhraseTableEntry>> {
        let mut out = Vec::new();
        for (key, records) in self.table.read_all()? {
            let src: Vec<String> = key.split(' ').map(str::to_string).collect();
            for rec in records {
                out.push(PhraseTableEntry {
                    src: src.clone(),
                    tgt: rec.tgt,
                    scores: [rec.scores[0], rec.scores[1], rec.scores[2], rec.scores[3]],
                });
            }
        }
        Ok(out)
    }
}
