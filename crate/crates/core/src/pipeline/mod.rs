//! Stage orchestration. Every stage reads its inputs from, and writes its
//! outputs to, the output directory, so stages run separately produce the
//! same files as a full run.

mod config;
mod report;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::commonness::{self, CommonnessRecord};
use crate::corpus::Corpus;
use crate::decontam::{self, ContaminationReport, Tokenized};
use crate::dedup::{self, DedupOutcome};
use crate::error::{Error, Result};
use crate::ngram::{self, EstimateOptions, NGramModel};
use crate::reweight::SegmentPlan;
use crate::sampler::{self, SamplingManifest};
use crate::tokenizer::{infer_passthrough_size, TokenizedDocument, Tokenizer, TokenizerMode, Vocabulary};

pub use config::{parse_value, PipelineConfig, DEFAULT_TARGET_RATIO};
pub use report::{Bin, DuplicationCapture, Report, SegmentRow, HISTOGRAM_BINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Decontaminate,
    TrainLm,
    Score,
    Partition,
    Sample,
    Harddedup,
    Stats,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Decontaminate,
        Stage::TrainLm,
        Stage::Score,
        Stage::Partition,
        Stage::Sample,
        Stage::Harddedup,
        Stage::Stats,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Decontaminate => "decontaminate",
            Stage::TrainLm => "train-lm",
            Stage::Score => "score",
            Stage::Partition => "partition",
            Stage::Sample => "sample",
            Stage::Harddedup => "harddedup",
            Stage::Stats => "stats",
            Stage::Report => "report",
        }
    }
}

/// File names inside the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.tsv")
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.arpa")
    }

    pub fn commonness(&self) -> PathBuf {
        self.dir.join("commonness.jsonl")
    }

    pub fn plan(&self) -> PathBuf {
        self.dir.join("plan.jsonl")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.jsonl")
    }

    pub fn export(&self, format: sampler::ExportFormat) -> PathBuf {
        match format {
            sampler::ExportFormat::IdList => self.dir.join("sample.ids"),
            sampler::ExportFormat::Text => self.dir.join("sample.jsonl"),
        }
    }

    pub fn dedup(&self) -> PathBuf {
        self.dir.join("dedup.jsonl")
    }

    pub fn contamination(&self) -> PathBuf {
        self.dir.join("contamination.jsonl")
    }

    pub fn decontaminated(&self) -> PathBuf {
        self.dir.join("decontaminated.jsonl")
    }

    pub fn stats(&self) -> PathBuf {
        self.dir.join("stats.json")
    }

    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn report_text(&self) -> PathBuf {
        self.dir.join("report.txt")
    }

    pub fn metrics(&self, stage: Stage) -> PathBuf {
        self.dir.join("metrics").join(format!("{}.json", stage.name()))
    }

    /// The five core artifacts of a run.
    pub fn core(&self) -> [PathBuf; 5] {
        [self.vocab(), self.model(), self.commonness(), self.plan(), self.manifest()]
    }
}

/// Wall-clock cost of one stage. Kept out of the artifacts themselves so
/// those stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: Stage,
    pub seconds: f64,
    pub documents: u64,
    pub tokens: u64,
    pub tokens_per_second: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub documents: u64,
    pub tokens: u64,
    pub bytes: u64,
    pub skipped_lines: usize,
    pub vocabulary: u32,
    pub min_length: u64,
    pub mean_length: f64,
    pub max_length: u64,
    pub config_digest: String,
}

pub struct Pipeline {
    config: PipelineConfig,
    digest: String,
    artifacts: Artifacts,
}

struct Work {
    documents: u64,
    tokens: u64,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            digest: config.digest(),
            artifacts: Artifacts::new(&config.out_dir),
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn artifacts(&self) -> &Artifacts {
        &self.artifacts
    }

    /// Stages executed by `run`, in order.
    pub fn planned_stages(&self) -> Vec<Stage> {
        let mut stages = Vec::new();
        if self.config.run_decontaminate {
            stages.push(Stage::Decontaminate);
        }
        stages.extend([Stage::TrainLm, Stage::Score, Stage::Partition, Stage::Sample]);
        if self.config.run_harddedup {
            stages.push(Stage::Harddedup);
        }
        stages.extend([Stage::Stats, Stage::Report]);
        stages
    }

    pub fn run(&self) -> Result<Vec<StageMetrics>> {
        self.planned_stages()
            .into_iter()
            .map(|s| self.run_stage(s))
            .collect()
    }

    /// Runs one stage on a pool of `workers` threads and records its
    /// metrics under `metrics/`.
    pub fn run_stage(&self, stage: Stage) -> Result<StageMetrics> {
        std::fs::create_dir_all(self.artifacts.dir()).map_err(|e| Error::io(self.artifacts.dir(), e))?;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.config.workers {
            builder = builder.num_threads(w);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let workers = pool.current_num_threads();
        log::info!("{}: starting with {workers} workers", stage.name());
        let start = Instant::now();
        let work = pool.install(|| match stage {
            Stage::Decontaminate => self.decontaminate(),
            Stage::TrainLm => self.train_lm(),
            Stage::Score => self.score(),
            Stage::Partition => self.partition(),
            Stage::Sample => self.sample(),
            Stage::Harddedup => self.harddedup(),
            Stage::Stats => self.stats(),
            Stage::Report => self.report().map(|r| Work {
                documents: r.documents as u64,
                tokens: 0,
            }),
        })?;
        let seconds = start.elapsed().as_secs_f64();
        let metrics = StageMetrics {
            stage,
            seconds,
            documents: work.documents,
            tokens: work.tokens,
            tokens_per_second: if seconds > 0.0 { work.tokens as f64 / seconds } else { 0.0 },
            workers,
        };
        log::info!(
            "{}: {} documents, {} tokens in {:.3}s ({:.0} tokens/s)",
            stage.name(),
            metrics.documents,
            metrics.tokens,
            seconds,
            metrics.tokens_per_second
        );
        let path = self.artifacts.metrics(stage);
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(&path, e))?;
        write_file(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, &metrics)?;
            writeln!(w)
        })?;
        Ok(metrics)
    }

    /// Training corpus: the configured inputs, or their decontaminated copy
    /// when decontamination is part of the run.
    fn load_corpus(&self) -> Result<Corpus> {
        if self.config.run_decontaminate {
            let path = require(self.artifacts.decontaminated(), Stage::Decontaminate)?;
            return Corpus::load(&[path], self.config.ingest_policy());
        }
        if self.config.inputs.is_empty() {
            return Err(Error::Config("no input files configured (`inputs`)".into()));
        }
        Corpus::load(&self.config.inputs, self.config.ingest_policy())
    }

    fn build_vocabulary(&self, docs: &[crate::corpus::Document]) -> Result<Vocabulary> {
        Ok(match self.config.tokenizer {
            TokenizerMode::Whitespace => Vocabulary::freeze(docs),
            TokenizerMode::Passthrough => Vocabulary::passthrough(match self.config.vocab_size {
                Some(size) => size,
                None => infer_passthrough_size(docs)?,
            }),
        })
    }

    fn read_vocabulary(&self) -> Result<Vocabulary> {
        let path = require(self.artifacts.vocab(), Stage::TrainLm)?;
        Vocabulary::read(open(&path)?)
    }

    fn read_records(&self) -> Result<Vec<CommonnessRecord>> {
        let path = require(self.artifacts.commonness(), Stage::Score)?;
        let (header, records) = commonness::read_records(open(&path)?)?;
        self.check_provenance(&path, header.config_digest.as_deref());
        Ok(records)
    }

    fn read_plan(&self) -> Result<SegmentPlan> {
        let path = require(self.artifacts.plan(), Stage::Partition)?;
        let (plan, digest) = SegmentPlan::read(open(&path)?)?;
        self.check_provenance(&path, digest.as_deref());
        Ok(plan)
    }

    fn check_provenance(&self, path: &Path, digest: Option<&str>) {
        if digest != Some(self.digest.as_str()) {
            log::warn!(
                "{} was produced under config {}, current config is {}",
                path.display(),
                digest.unwrap_or("<none>"),
                self.digest
            );
        }
    }

    fn train_lm(&self) -> Result<Work> {
        let corpus = self.load_corpus()?;
        let vocab = self.build_vocabulary(corpus.docs())?;
        let docs = Tokenizer::new(vocab.clone()).tokenize_all(corpus.docs())?;
        let tokens = total_tokens(&docs);
        let counts = ngram::count(&docs, self.config.order, vocab.reserved())?;
        let model = NGramModel::estimate(
            &counts,
            EstimateOptions {
                min_count: self.config.min_count,
                ..EstimateOptions::default()
            },
        )?;
        let digest = Some(self.digest.as_str());
        write_file(&self.artifacts.vocab(), |w| vocab.write(w, digest))?;
        write_file(&self.artifacts.model(), |w| model.write_arpa(&vocab, w, digest))?;
        Ok(Work {
            documents: docs.len() as u64,
            tokens,
        })
    }

    fn score(&self) -> Result<Work> {
        let vocab = self.read_vocabulary()?;
        let model_path = require(self.artifacts.model(), Stage::TrainLm)?;
        let model = NGramModel::read_arpa(&vocab, open(&model_path)?)?;
        if model.order() != self.config.order {
            log::warn!(
                "model order {} differs from configured order {}",
                model.order(),
                self.config.order
            );
        }
        let corpus = self.load_corpus()?;
        let docs = Tokenizer::new(vocab).tokenize_all(corpus.docs())?;
        let records = commonness::score_corpus(&model, &docs);
        write_file(&self.artifacts.commonness(), |w| {
            commonness::write_records(w, model.order(), &records, Some(&self.digest))
        })?;
        Ok(Work {
            documents: records.len() as u64,
            tokens: total_tokens(&docs),
        })
    }

    fn partition(&self) -> Result<Work> {
        let records = self.read_records()?;
        let mut plan = SegmentPlan::partition(&records, self.config.segments, self.config.quantile_stat)?;
        let t = plan.apply(self.config.weight_spec()?)?;
        log::info!("partition: K = {}, T = {t:.6}", plan.k());
        write_file(&self.artifacts.plan(), |w| plan.write(w, Some(&self.digest)))?;
        Ok(Work {
            documents: records.len() as u64,
            tokens: records.iter().map(|r| r.n_tokens).sum(),
        })
    }

    fn sample(&self) -> Result<Work> {
        let plan = self.read_plan()?;
        let records = self.read_records()?;
        let budget = match self.config.token_budget {
            Some(b) => b,
            None => records.iter().map(|r| r.n_tokens).sum(),
        };
        let manifest = sampler::sample(&plan, &records, budget, self.config.seed)?;
        write_file(&self.artifacts.manifest(), |w| manifest.write(w, Some(&self.digest)))?;
        let corpus = self.load_corpus()?;
        let format = self.config.export_format;
        write_file_with(&self.artifacts.export(format), |w| sampler::export(&manifest, &corpus, format, w))?;
        Ok(Work {
            documents: manifest.entries.len() as u64,
            tokens: manifest.achieved_tokens,
        })
    }

    fn harddedup(&self) -> Result<Work> {
        let corpus = self.load_corpus()?;
        let vocab = self.build_vocabulary(corpus.docs())?;
        let docs = Tokenizer::new(vocab).tokenize_all(corpus.docs())?;
        let outcome = dedup::hard_dedup(&docs, self.config.dedup_params())?;
        write_file(&self.artifacts.dedup(), |w| outcome.write(w, Some(&self.digest)))?;
        Ok(Work {
            documents: docs.len() as u64,
            tokens: total_tokens(&docs),
        })
    }

    /// Always reads the configured `inputs`; later stages of the same run
    /// read the filtered copy.
    fn decontaminate(&self) -> Result<Work> {
        if self.config.inputs.is_empty() || self.config.test_inputs.is_empty() {
            return Err(Error::Config(
                "decontaminate needs both `inputs` and `test_inputs`".into(),
            ));
        }
        let policy = self.config.ingest_policy();
        let train = Corpus::load(&self.config.inputs, policy)?;
        let test = Corpus::load(&self.config.test_inputs, policy)?;
        // one vocabulary over both sides, so unseen test words never
        // collapse into a shared <unk>
        let both: Vec<_> = train.docs().iter().chain(test.docs()).cloned().collect();
        let vocab = self.build_vocabulary(&both)?;
        let fingerprint = vocab.fingerprint();
        let tokenizer = Tokenizer::new(vocab);
        let train_docs = tokenizer.tokenize_all(train.docs())?;
        let test_docs = tokenizer.tokenize_all(test.docs())?;
        let report = decontam::find_contaminated(
            Tokenized {
                fingerprint: &fingerprint,
                docs: &train_docs,
            },
            Tokenized {
                fingerprint: &fingerprint,
                docs: &test_docs,
            },
            self.config.contamination_threshold,
        )?
        .bind(&train);
        let filtered = report.apply(&train)?;
        log::info!(
            "decontaminate: {} of {} training documents flagged",
            report.flagged().len(),
            train.len()
        );
        write_file(&self.artifacts.contamination(), |w| report.write(w, Some(&self.digest)))?;
        write_file(&self.artifacts.decontaminated(), |w| filtered.write_jsonl(w))?;
        Ok(Work {
            documents: train_docs.len() as u64,
            tokens: total_tokens(&train_docs),
        })
    }

    fn stats(&self) -> Result<Work> {
        let corpus = self.load_corpus()?;
        let vocab = self.build_vocabulary(corpus.docs())?;
        let docs = Tokenizer::new(vocab.clone()).tokenize_all(corpus.docs())?;
        let lengths: Vec<u64> = docs.iter().map(|d| d.tokens.len() as u64).collect();
        let tokens: u64 = lengths.iter().sum();
        let summary = CorpusSummary {
            documents: docs.len() as u64,
            tokens,
            bytes: corpus.stats().byte_count,
            skipped_lines: corpus.skipped(),
            vocabulary: vocab.size(),
            min_length: lengths.iter().copied().min().unwrap_or(0),
            mean_length: if lengths.is_empty() { 0.0 } else { tokens as f64 / lengths.len() as f64 },
            max_length: lengths.iter().copied().max().unwrap_or(0),
            config_digest: self.digest.clone(),
        };
        write_file(&self.artifacts.stats(), |w| {
            serde_json::to_writer_pretty(&mut *w, &summary)?;
            writeln!(w)
        })?;
        Ok(Work {
            documents: summary.documents,
            tokens,
        })
    }

    /// Builds and writes the summary report from whatever artifacts exist;
    /// commonness records are required.
    pub fn report(&self) -> Result<Report> {
        let records = self.read_records()?;
        let plan = match self.artifacts.plan().exists() {
            true => Some(self.read_plan()?),
            false => None,
        };
        let dedup = match self.artifacts.dedup().exists() {
            true => Some(DedupOutcome::read(open(&self.artifacts.dedup())?)?),
            false => None,
        };
        let manifest = match self.artifacts.manifest().exists() {
            true => Some(SamplingManifest::read(open(&self.artifacts.manifest())?)?.0),
            false => None,
        };
        let contamination = match self.artifacts.contamination().exists() {
            true => Some(ContaminationReport::read(open(&self.artifacts.contamination())?)?),
            false => None,
        };
        let mut throughput = Vec::new();
        for stage in Stage::ALL {
            let path = self.artifacts.metrics(stage);
            if stage != Stage::Report && path.exists() {
                let m: StageMetrics = serde_json::from_reader(open(&path)?)
                    .map_err(|e| Error::Malformed { path: path.clone(), line: 0, message: e.to_string() })?;
                throughput.push(m);
            }
        }
        let report = Report::build(
            &records,
            plan.as_ref(),
            manifest.as_ref(),
            dedup.as_ref(),
            contamination.as_ref(),
            throughput,
            &self.digest,
        );
        write_file(&self.artifacts.report_json(), |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)
        })?;
        write_file(&self.artifacts.report_text(), |w| w.write_all(report.to_text().as_bytes()))?;
        Ok(report)
    }
}

fn total_tokens(docs: &[TokenizedDocument]) -> u64 {
    docs.iter().map(|d| d.tokens.len() as u64).sum()
}

fn require(path: PathBuf, producer: Stage) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            artifact: path,
            producer: producer.name(),
        })
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames it into place, so a
/// failed stage never leaves a truncated artifact behind.
fn write_file_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("partial");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let result = body(&mut w).and_then(|_| w.flush().map_err(|e| Error::io(&tmp, e)));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    write_file_with(path, |w| body(w).map_err(|e| Error::io(path, e)))
}
