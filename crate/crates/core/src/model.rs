//! The packaged translation model: log-linear feature weights, decoding
//! defaults, and the model directory layout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::align::{Direction, LexicalTable};
use crate::corpus::{CasePolicy, TruecaseModel};
use crate::error::{Error, Result};
use crate::lm::NGramLanguageModel;
use crate::phrase::{self, PhraseTable, PhraseTableBin};
use crate::reorder::{self, ReorderingTable};

/// Number of log-linear features: 1 LM + 4 phrase + 2 penalties +
/// 1 distortion + 6 reordering.
pub const FEATURE_COUNT: usize = 14;

/// Canonical feature order shared by weights files, n-best output and the
/// tuner.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "lm",
    "phi_tgt_src",
    "lex_tgt_src",
    "phi_src_tgt",
    "lex_src_tgt",
    "phrase_penalty",
    "word_penalty",
    "distortion",
    "reorder_fwd_mono",
    "reorder_fwd_swap",
    "reorder_fwd_disc",
    "reorder_bwd_mono",
    "reorder_bwd_swap",
    "reorder_bwd_disc",
];

pub const F_LM: usize = 0;
pub const F_PHI_TGT_SRC: usize = 1;
pub const F_LEX_TGT_SRC: usize = 2;
pub const F_PHI_SRC_TGT: usize = 3;
pub const F_LEX_SRC_TGT: usize = 4;
pub const F_PHRASE_PENALTY: usize = 5;
pub const F_WORD_PENALTY: usize = 6;
pub const F_DISTORTION: usize = 7;
/// First forward-orientation feature; monotone/swap/discontinuous follow.
pub const F_FWD: usize = 8;
/// First backward-orientation feature.
pub const F_BWD: usize = 11;

pub type FeatureVector = [f64; FEATURE_COUNT];

/// Log-linear model weights in the canonical feature order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights(pub FeatureVector);

impl FeatureWeights {
    /// All-ones weights, the untuned baseline.
    pub fn uniform() -> Self {
        FeatureWeights([1.0; FEATURE_COUNT])
    }

    /// Packaged decoding defaults before tuning.
    pub fn default_decoding() -> Self {
        let mut w = [0.0; FEATURE_COUNT];
        w[F_LM] = 1.0;
        for f in [F_PHI_TGT_SRC, F_LEX_TGT_SRC, F_PHI_SRC_TGT, F_LEX_SRC_TGT] {
            w[f] = 0.5;
        }
        w[F_PHRASE_PENALTY] = -1.0;
        w[F_WORD_PENALTY] = 0.0;
        w[F_DISTORTION] = -0.5;
        for f in F_FWD..FEATURE_COUNT {
            w[f] = 0.3;
        }
        FeatureWeights(w)
    }

    pub fn dot(&self, features: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(features.iter())
            .map(|(w, h)| w * h)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut w = self.0;
        for v in &mut w {
            *v *= factor;
        }
        FeatureWeights(w)
    }

    /// Writes `feature_name value` lines in canonical order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (name, value) in FEATURE_NAMES.iter().zip(self.0.iter()) {
            writeln!(w, "{name} {value:.10e}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a weights file, enforcing the canonical names and dimension.
    pub fn load(path: &Path) -> Result<FeatureWeights> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut values = [f64::NAN; FEATURE_COUNT];
        let mut seen = 0usize;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, value) = line
                .split_once(' ')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected 'feature_name value'"))?;
            let pos = FEATURE_NAMES
                .iter()
                .position(|&n| n == name)
                .ok_or_else(|| Error::parse(path, idx + 1, &format!("unknown feature '{name}'")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "bad weight value"))?;
            if !value.is_finite() {
                return Err(Error::parse(path, idx + 1, "weight must be finite"));
            }
            if !values[pos].is_nan() {
                return Err(Error::parse(path, idx + 1, &format!("duplicate feature '{name}'")));
            }
            values[pos] = value;
            seen += 1;
        }
        if seen != FEATURE_COUNT {
            return Err(Error::Data(format!(
                "{}: expected {FEATURE_COUNT} weights, found {seen}",
                path.display()
            )));
        }
        Ok(FeatureWeights(values))
    }
}

/// Decoding defaults stored in the model directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub case: CasePolicy,
    pub stack_size: usize,
    /// `None` disables the limit.
    pub distortion_limit: Option<usize>,
    pub max_phrase_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            case: CasePolicy::Lowercase,
            stack_size: 100,
            distortion_limit: Some(6),
            max_phrase_len: 7,
        }
    }
}

impl DecoderConfig {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let case = match self.case {
            CasePolicy::Lowercase => "lowercase",
            CasePolicy::Uppercase => "uppercase",
            CasePolicy::None => "none",
        };
        let io = |e| Error::io(path, e);
        writeln!(w, "case={case}").map_err(io)?;
        writeln!(w, "stack_size={}", self.stack_size).map_err(io)?;
        writeln!(
            w,
            "distortion_limit={}",
            self.distortion_limit
                .map(|d| d.to_string())
                .unwrap_or_else(|| "none".into())
        )
        .map_err(io)?;
        writeln!(w, "max_phrase_len={}", self.max_phrase_len).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<DecoderConfig> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut config = DecoderConfig::default();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |msg: &str| Error::parse(path, idx + 1, msg);
            match key {
                "case" => config.case = CasePolicy::parse(value)?,
                "stack_size" => {
                    config.stack_size = value.parse().map_err(|_| bad("bad stack_size"))?
                }
                "distortion_limit" => {
                    config.distortion_limit = if value == "none" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad("bad distortion_limit"))?)
                    }
                }
                "max_phrase_len" => {
                    config.max_phrase_len = value.parse().map_err(|_| bad("bad max_phrase_len"))?
                }
                other => {
                    return Err(bad(&format!("unknown config key '{other}'")));
                }
            }
        }
        Ok(config)
    }
}

/// File names inside a model directory.
pub mod files {
    pub const LM: &str = "lm.arpa";
    pub const PHRASE_TXT: &str = "phrase-table.txt";
    pub const PHRASE_BIN: &str = "phrase-table.bin";
    pub const REORDERING_TXT: &str = "reordering-table.txt";
    pub const REORDERING_BIN: &str = "reordering-table.bin";
    pub const LEX_E2F: &str = "lex.e2f";
    pub const LEX_F2E: &str = "lex.f2e";
    pub const WEIGHTS: &str = "weights.txt";
    pub const TRUECASE_SRC: &str = "truecase.src";
    pub const TRUECASE_TGT: &str = "truecase.tgt";
    pub const CONFIG: &str = "config.txt";
    pub const MANIFEST: &str = "manifest.txt";
}

/// The fully loaded translation model bundle.
#[derive(Debug)]
pub struct TranslationModel {
    pub lm: NGramLanguageModel,
    pub phrase_table: PhraseTable,
    pub reordering: ReorderingTable,
    /// t(target_word | source_word)
    pub lex_fwd: LexicalTable,
    /// t(source_word | target_word)
    pub lex_rev: LexicalTable,
    pub weights: FeatureWeights,
    pub truecase_src: TruecaseModel,
    pub truecase_tgt: TruecaseModel,
    pub config: DecoderConfig,
}

impl TranslationModel {
    /// Loads every component from one model directory, preferring the
    /// binary tables when present.
    pub fn load(dir: &Path) -> Result<TranslationModel> {
        let lm = NGramLanguageModel::import_arpa(&dir.join(files::LM))?;

        let phrase_bin = dir.join(files::PHRASE_BIN);
        let phrase_entries = if phrase_bin.exists() {
            PhraseTableBin::open(&phrase_bin)?.read_all()?
        } else {
            phrase::load_phrase_table(&dir.join(files::PHRASE_TXT))?
        };
        let phrase_table = PhraseTable::from_entries(phrase_entries);

        let reordering_bin = dir.join(files::REORDERING_BIN);
        let reorder_entries = if reordering_bin.exists() {
            reorder::load_reordering_table_bin(&reordering_bin)?
        } else {
            reorder::load_reordering_table(&dir.join(files::REORDERING_TXT))?
        };
        let reordering = ReorderingTable::from_entries(reorder_entries);

        let lex_fwd = LexicalTable::load(&dir.join(files::LEX_E2F), Direction::SrcToTgt)?;
        let lex_rev = LexicalTable::load(&dir.join(files::LEX_F2E), Direction::TgtToSrc)?;
        let weights = FeatureWeights::load(&dir.join(files::WEIGHTS))?;
        let truecase_src = TruecaseModel::load(&dir.join(files::TRUECASE_SRC))?;
        let truecase_tgt = TruecaseModel::load(&dir.join(files::TRUECASE_TGT))?;
        let config = DecoderConfig::load(&dir.join(files::CONFIG))?;

        Ok(TranslationModel {
            lm,
            phrase_table,
            reordering,
            lex_fwd,
            lex_rev,
            weights,
            truecase_src,
            truecase_tgt,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.txt");
        let mut w = FeatureWeights::uniform();
        w.0[F_LM] = 0.731;
        w.0[F_DISTORTION] = -0.25;
        w.save(&path).unwrap();
        let loaded = FeatureWeights::load(&path).unwrap();
        assert_eq!(w, loaded);
    }

    #[test]
    fn weights_dimension_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.txt");
        std::fs::write(&path, "lm 1.0\n").unwrap();
        assert!(FeatureWeights::load(&path).is_err());
        std::fs::write(&path, "lm 1.0\nnot_a_feature 2.0\n").unwrap();
        assert!(FeatureWeights::load(&path).is_err());
    }

    #[test]
    fn dot_is_linear() {
        let w = FeatureWeights::default_decoding();
        let mut h = [0.0; FEATURE_COUNT];
        h[F_LM] = -2.0;
        h[F_PHRASE_PENALTY] = 3.0;
        let base = w.dot(&h);
        assert!((w.scaled(2.0).dot(&h) - 2.0 * base).abs() < 1e-12);
        let zero = FeatureWeights([0.0; FEATURE_COUNT]);
        assert_eq!(zero.dot(&h), 0.0);
        let mut unit = [0.0; FEATURE_COUNT];
        unit[F_LM] = 1.0;
        assert_eq!(FeatureWeights(unit).dot(&h), h[F_LM]);
    }

    #[test]
    fn config_roundtrip_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.txt");
        let config = DecoderConfig {
            case: CasePolicy::None,
            stack_size: 250,
            distortion_limit: None,
            max_phrase_len: 5,
        };
        config.save(&path).unwrap();
        assert_eq!(DecoderConfig::load(&path).unwrap(), config);

        std::fs::write(&path, "stack_size=10\nmystery_knob=4\n").unwrap();
        assert!(DecoderConfig::load(&path).is_err());
    }
}
