//! Lexicalized reordering: orientation statistics of phrase pairs relative
//! to their neighbors in target order, smoothed into per-pair probability
//! triples for both directions.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::bintable::{self, BinRecord, BinTable};
use crate::error::{Error, Result};
use crate::phrase::{PhrasePair, FIELD_DELIM};

/// Orientation of a phrase relative to an adjacent phrase in target order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Monotone,
    Swap,
    Discontinuous,
}

impl Orientation {
    pub fn index(self) -> usize {
        match self {
            Orientation::Monotone => 0,
            Orientation::Swap => 1,
            Orientation::Discontinuous => 2,
        }
    }
}

/// Classifies `cur` against the phrase `prev` that immediately precedes it
/// in target order: monotone when `cur`'s source span starts right after
/// `prev`'s, swap when it ends right before `prev`'s, discontinuous
/// otherwise.
pub fn classify_orientation(prev: &PhrasePair, cur: &PhrasePair) -> Orientation {
    orientation_between(
        (prev.src_span.0 as isize, prev.src_span.1 as isize),
        (cur.src_span.0 as isize, cur.src_span.1 as isize),
    )
}

/// Span-level orientation; signed spans admit the virtual boundary blocks
/// just outside the sentence.
pub fn orientation_between(prev: (isize, isize), cur: (isize, isize)) -> Orientation {
    if cur.0 == prev.1 + 1 {
        Orientation::Monotone
    } else if cur.1 == prev.0 - 1 {
        Orientation::Swap
    } else {
        Orientation::Discontinuous
    }
}

/// p(o) = (count(o) + sigma * 1/3) / (total + sigma); all-zero counts give
/// the uniform triple.
pub fn smooth_counts(counts: [u64; 3], sigma: f64) -> [f64; 3] {
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + sigma;
    [
        (counts[0] as f64 + sigma / 3.0) / denom,
        (counts[1] as f64 + sigma / 3.0) / denom,
        (counts[2] as f64 + sigma / 3.0) / denom,
    ]
}

/// A reordering table entry: smoothed orientation probability triples with
/// respect to the next phrase (forward) and the previous phrase (backward).
#[derive(Debug, Clone, PartialEq)]
pub struct ReorderingEntry {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub forward: [f64; 3],
    pub backward: [f64; 3],
}

/// Accumulates orientation counts over extracted phrase pairs.
///
/// For each phrase occurrence, the backward orientation is judged against
/// the extracted phrases ending right before it in target order (monotone if
/// any adjacent block continues the source order, else swap if any inverts
/// it, else discontinuous), and symmetrically forward. Sentence edges are
/// judged against virtual boundary blocks just outside the sentence.
#[derive(Debug, Default)]
pub struct ReorderingTrainer {
    counts: BTreeMap<(Vec<String>, Vec<String>), [[u64; 3]; 2]>,
}

impl ReorderingTrainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_sentence(&mut self, pairs: &[PhrasePair], src_len: usize, tgt_len: usize) {
        for cur in pairs {
            let cur_spans = (cur.src_span.0 as isize, cur.src_span.1 as isize);

            let backward = if cur.tgt_span.0 == 0 {
                orientation_between((-1, -1), cur_spans)
            } else {
                let candidates = pairs
                    .iter()
                    .filter(|p| p.tgt_span.1 + 1 == cur.tgt_span.0)
                    .map(|p| {
                        orientation_between(
                            (p.src_span.0 as isize, p.src_span.1 as isize),
                            cur_spans,
                        )
                    });
                pick_orientation(candidates)
            };

            let forward = if cur.tgt_span.1 + 1 == tgt_len {
                orientation_between(cur_spans, (src_len as isize, src_len as isize))
            } else {
                let candidates = pairs
                    .iter()
                    .filter(|p| p.tgt_span.0 == cur.tgt_span.1 + 1)
                    .map(|p| {
                        orientation_between(
                            cur_spans,
                            (p.src_span.0 as isize, p.src_span.1 as isize),
                        )
                    });
                pick_orientation(candidates)
            };

            let entry = self
                .counts
                .entry((cur.src.clone(), cur.tgt.clone()))
                .or_insert([[0; 3]; 2]);
            entry[0][forward.index()] += 1;
            entry[1][backward.index()] += 1;
        }
    }

    pub fn counts(&self) -> &BTreeMap<(Vec<String>, Vec<String>), [[u64; 3]; 2]> {
        &self.counts
    }

    /// Smooths accumulated counts into probability triples.
    pub fn finish(&self, sigma: f64) -> Result<Vec<ReorderingEntry>> {
        if sigma <= 0.0 {
            return Err(Error::InvalidArg("sigma must be positive".into()));
        }
        Ok(self
            .counts
            .iter()
            .map(|((src, tgt), counts)| ReorderingEntry {
                src: src.clone(),
                tgt: tgt.clone(),
                forward: smooth_counts(counts[0], sigma),
                backward: smooth_counts(counts[1], sigma),
            })
            .collect())
    }
}

/// Monotone evidence wins over swap; anything else is discontinuous.
fn pick_orientation(candidates: impl Iterator<Item = Orientation>) -> Orientation {
    let mut saw_swap = false;
    for o in candidates {
        match o {
            Orientation::Monotone => return Orientation::Monotone,
            Orientation::Swap => saw_swap = true,
            Orientation::Discontinuous => {}
        }
    }
    if saw_swap {
        Orientation::Swap
    } else {
        Orientation::Discontinuous
    }
}

/// Writes `src ||| tgt ||| fwd_mono fwd_swap fwd_disc bwd_mono bwd_swap
/// bwd_disc` lines, sorted.
pub fn save_reordering_table(path: &Path, entries: &[ReorderingEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut sorted: Vec<&ReorderingEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| (&a.src, &a.tgt).cmp(&(&b.src, &b.tgt)));
    for e in sorted {
        writeln!(
            w,
            "{}{FIELD_DELIM}{}{FIELD_DELIM}{:.6e} {:.6e} {:.6e} {:.6e} {:.6e} {:.6e}",
            e.src.join(" "),
            e.tgt.join(" "),
            e.forward[0],
            e.forward[1],
            e.forward[2],
            e.backward[0],
            e.backward[1],
            e.backward[2],
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_reordering_table(path: &Path) -> Result<Vec<ReorderingEntry>> {
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
                "expected 'src ||| tgt ||| six scores'",
            ));
        }
        let scores: Vec<f64> = fields[2]
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, idx + 1, "bad score"))?;
        if scores.len() != 6 {
            return Err(Error::parse(path, idx + 1, "expected six scores"));
        }
        entries.push(ReorderingEntry {
            src: fields[0].split_whitespace().map(str::to_string).collect(),
            tgt: fields[1].split_whitespace().map(str::to_string).collect(),
            forward: [scores[0], scores[1], scores[2]],
            backward: [scores[3], scores[4], scores[5]],
        });
    }
    Ok(entries)
}

/// In-memory reordering table for decoding, keyed by (src, tgt) phrase.
#[derive(Debug, Default)]
pub struct ReorderingTable {
    map: HashMap<(String, String), ([f64; 3], [f64; 3])>,
    uniform: [f64; 3],
}

impl ReorderingTable {
    pub fn from_entries(entries: Vec<ReorderingEntry>) -> Self {
        let mut map = HashMap::with_capacity(entries.len());
        for e in entries {
            map.insert(
                (e.src.join(" "), e.tgt.join(" ")),
                (e.forward, e.backward),
            );
        }
        ReorderingTable {
            map,
            uniform: [1.0 / 3.0; 3],
        }
    }

    /// (forward, backward) triples; unobserved pairs get the uniform prior.
    pub fn lookup(&self, src: &str, tgt: &str) -> ([f64; 3], [f64; 3]) {
        self.map
            .get(&(src.to_string(), tgt.to_string()))
            .copied()
            .unwrap_or((self.uniform, self.uniform))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Binary serialization, same container as the phrase table with six scores.
pub fn binarise_reordering_table(entries: &[ReorderingEntry], path: &Path) -> Result<()> {
    let mut sorted: Vec<&ReorderingEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| (&a.src, &a.tgt).cmp(&(&b.src, &b.tgt)));
    let mut groups: Vec<(String, Vec<BinRecord>)> = Vec::new();
    for e in sorted {
        let record = BinRecord {
            tgt: e.tgt.clone(),
            scores: e.forward.iter().chain(e.backward.iter()).copied().collect(),
        };
        let key = e.src.join(" ");
        match groups.last_mut() {
            Some((k, records)) if *k == key => records.push(record),
            _ => groups.push((key, vec![record])),
        }
    }
    bintable::write_table(path, 6, &groups)
}

/// Reads a binary reordering table back into entries, sorted.
pub fn load_reordering_table_bin(path: &Path) -> Result<Vec<ReorderingEntry>> {
    let mut table = BinTable::open(path)?;
    if table.score_count() != 6 {
        return Err(Error::Data(format!(
            "{}: expected 6 scores per entry, found {}",
            path.display(),
            table.score_count()
        )));
    }
    let mut out = Vec::new();
    for (key, records) in table.read_all()? {
        let src: Vec<String> = key.split(' ').map(str::to_string).collect();
        for rec in records {
            out.push(ReorderingEntry {
                src: src.clone(),
                tgt: rec.tgt,
                forward: [rec.scores[0], rec.scores[1], rec.scores[2]],
                backward: [rec.scores[3], rec.scores[4], rec.scores[5]],
            });
        }
    }
    Ok(out)
}
