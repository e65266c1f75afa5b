use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{IngestPolicy, OnError};
use crate::dedup::{DedupParams, KeepPolicy};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::ngram::MAX_ORDER;
use crate::reweight::{QuantileStat, WeightSpec};
use crate::sampler::ExportFormat;
use crate::tokenizer::TokenizerMode;

pub const DEFAULT_TARGET_RATIO: f64 = 10.0;

/// Every pipeline setting. Loaded from a flat TOML file whose keys are the
/// field names; command-line overrides are applied on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    /// Held-out documents for `decontaminate`.
    pub test_inputs: Vec<PathBuf>,
    pub tokenizer: TokenizerMode,
    /// Passthrough vocabulary size; inferred from the data when absent.
    pub vocab_size: Option<u32>,
    pub on_error: OnError,
    pub allow_empty: bool,

    pub order: usize,
    pub min_count: u64,

    pub segments: usize,
    pub exponent: Option<f64>,
    /// `W_1 / W_K`; used when `exponent` is absent (default 10).
    pub target_ratio: Option<f64>,
    pub quantile_stat: QuantileStat,

    /// Defaults to the scored token total of the corpus.
    pub token_budget: Option<u64>,
    pub seed: u64,
    pub export_format: ExportFormat,

    pub minhash_hashes: usize,
    pub shingle_width: usize,
    pub lsh_bands: usize,
    pub lsh_rows: usize,
    pub keep_policy: KeepPolicy,

    pub contamination_threshold: usize,

    pub workers: Option<usize>,
    pub out_dir: PathBuf,
    /// Include `harddedup` in `run`.
    pub run_harddedup: bool,
    /// Include `decontaminate` in `run`.
    pub run_decontaminate: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let dedup = DedupParams::default();
        Self {
            inputs: Vec::new(),
            test_inputs: Vec::new(),
            tokenizer: TokenizerMode::Whitespace,
            vocab_size: None,
            on_error: OnError::FailFast,
            allow_empty: false,
            order: 4,
            min_count: 1,
            segments: 20,
            exponent: None,
            target_ratio: None,
            quantile_stat: QuantileStat::Upper,
            token_budget: None,
            seed: 0,
            export_format: ExportFormat::IdList,
            minhash_hashes: dedup.hashes,
            shingle_width: dedup.shingle,
            lsh_bands: dedup.bands,
            lsh_rows: dedup.rows,
            keep_policy: dedup.policy,
            contamination_threshold: crate::decontam::DEFAULT_THRESHOLD,
            workers: None,
            out_dir: PathBuf::from("out"),
            run_harddedup: false,
            run_decontaminate: false,
        }
    }
}

/// Keys left out of the config digest: they change where or how fast
/// artifacts are produced, not their content. `run_decontaminate` stays in
/// because it switches later stages to the filtered corpus.
const UNDIGESTED: &[&str] = &["workers", "out_dir", "run_harddedup"];

/// Parses a command-line value as a TOML value, falling back to a plain
/// string (`--set out_dir=runs/a` needs no quotes).
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

impl PipelineConfig {
    /// Defaults, then `file`, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: Vec<(String, toml::Value)>) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            table.insert(key, value);
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(2..=MAX_ORDER).contains(&self.order) {
            return fail(format!("order must be in 2..={MAX_ORDER}, got {}", self.order));
        }
        if self.min_count == 0 {
            return fail("min_count must be at least 1".into());
        }
        if self.segments == 0 {
            return fail("segments must be at least 1".into());
        }
        self.weight_spec()?;
        if self.token_budget == Some(0) {
            return fail("token_budget must be positive".into());
        }
        if self.minhash_hashes != self.lsh_bands * self.lsh_rows {
            return fail(format!(
                "lsh_bands ({}) x lsh_rows ({}) must equal minhash_hashes ({})",
                self.lsh_bands, self.lsh_rows, self.minhash_hashes
            ));
        }
        if self.shingle_width == 0 {
            return fail("shingle_width must be at least 1".into());
        }
        if self.workers == Some(0) {
            return fail("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn weight_spec(&self) -> Result<WeightSpec> {
        match (self.exponent, self.target_ratio) {
            (Some(_), Some(_)) => Err(Error::Config(
                "set either exponent or target_ratio, not both".into(),
            )),
            (Some(t), None) if t >= 0.0 && t.is_finite() => Ok(WeightSpec::Exponent(t)),
            (Some(t), None) => Err(Error::Config(format!("exponent must be >= 0, got {t}"))),
            (None, Some(r)) if r >= 1.0 && r.is_finite() => Ok(WeightSpec::Ratio(r)),
            (None, Some(r)) => Err(Error::Config(format!("target_ratio must be >= 1, got {r}"))),
            (None, None) => Ok(WeightSpec::Ratio(DEFAULT_TARGET_RATIO)),
        }
    }

    pub fn ingest_policy(&self) -> IngestPolicy {
        IngestPolicy {
            on_error: self.on_error,
            allow_empty: self.allow_empty,
        }
    }

    pub fn dedup_params(&self) -> DedupParams {
        DedupParams {
            hashes: self.minhash_hashes,
            shingle: self.shingle_width,
            bands: self.lsh_bands,
            rows: self.lsh_rows,
            seed: self.seed,
            policy: self.keep_policy,
        }
    }

    /// SHA-256 of the settings that determine artifact content, as
    /// key-sorted JSON.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config is a map");
        for key in UNDIGESTED {
            map.remove(*key);
        }
        sha256_hex(value.to_string().as_bytes())
    }
}
