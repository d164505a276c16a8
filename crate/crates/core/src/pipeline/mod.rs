//! End-to-end orchestration: sample, expand, generate, augment, tag,
//! ensemble, eval and report, each writing fixed artifacts under one output
//! directory.
//!
//! Output layout:
//!
//! ```text
//! out/
//!   manifest.kv            stage digests, counts, warnings, timings
//!   config.kv              effective configuration
//!   few_shot.conll         sampled few-shot set
//!   few_shot.meta
//!   dev.conll              development split used for ensemble selection
//!   expansions.tsv         knowledge-base expansions of every few-shot entity
//!   synthetic/<channel>[.<layer>].conll, synthetic/provenance.tsv
//!   augmented/<method>.conll, augmented/methods.txt
//!   models/<method>.nn
//!   predictions/<method>.dev.conll, predictions/<method>.test.conll
//!   ensemble/config.kv, ensemble/dev_report.kv, ensemble/best.test.conll
//!   eval/<method>.kv, eval/<method>.txt
//!   report.txt, report.kv
//! ```
//!
//! Predictions from external models can be dropped into `predictions/`
//! between the `tag` and `ensemble` stages.

mod config;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::ensemble::EnsembleError;
use crate::eval::EvalError;
use crate::generation::{write_atomic, GenError};
use crate::knowledge::KnowledgeError;
use crate::tagger::TaggerError;

pub use config::{known_keys, parse_kv, EnsembleSettings, KbSource, RunConfig};
pub use stages::{method_label, split_dev};

pub const MANIFEST: &str = "manifest.kv";
pub const LOCK: &str = ".lock";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("`{key}` points to {}, which does not exist", path.display())]
    MissingInput { key: String, path: PathBuf },
    #[error("stage `{stage}` needs {}; run the earlier stages first", path.display())]
    MissingPrerequisite { stage: Stage, path: PathBuf },
    #[error("output directory is locked by another run ({})", .0.display())]
    Locked(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no evaluation results to report")]
    NoEval,
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    /// 1 for usage and configuration, 3 for the LLM service, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingInput { .. } | PipelineError::Locked(_) => 1,
            PipelineError::Generation(GenError::Chat(_)) => 3,
            PipelineError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
        move |source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Sample,
    Expand,
    Generate,
    Augment,
    Tag,
    Ensemble,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Sample,
        Stage::Expand,
        Stage::Generate,
        Stage::Augment,
        Stage::Tag,
        Stage::Ensemble,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Expand => "expand",
            Stage::Generate => "generate",
            Stage::Augment => "augment",
            Stage::Tag => "tag",
            Stage::Ensemble => "ensemble",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    /// Artifacts, relative to the output directory, that must exist first.
    pub fn prerequisites(self) -> &'static [&'static str] {
        match self {
            Stage::Sample => &[],
            Stage::Expand | Stage::Generate => &["few_shot.conll"],
            Stage::Augment => &["few_shot.conll", "synthetic/provenance.tsv"],
            Stage::Tag => &["dev.conll", "augmented/methods.txt"],
            Stage::Ensemble => &["dev.conll", "predictions"],
            Stage::Eval => &["predictions"],
            Stage::Report => &["eval"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage `{s}`")))
    }
}

/// What a stage read and wrote, relative to the output directory.
#[derive(Debug, Default)]
pub(crate) struct StageRecord {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub extra: Vec<(String, String)>,
}

/// `key = value` record of a run, merged across stage invocations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(out_dir: &Path) -> Result<Self, PipelineError> {
        let path = out_dir.join(MANIFEST);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(RunManifest {
                entries: parse_kv(&text)?,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(PipelineError::io(&path)(e)),
        }
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), PipelineError> {
        let path = out_dir.join(MANIFEST);
        write_atomic(&path, self.to_string().as_bytes()).map_err(PipelineError::io(&path))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    fn clear_stage(&mut self, stage: Stage) {
        let prefix = format!("stage.{stage}.");
        self.entries.retain(|k, _| !k.starts_with(&prefix));
    }

    /// Output digests of a stage, keyed by relative path.
    pub fn outputs(&self, stage: Stage) -> BTreeMap<String, String> {
        let prefix = format!("stage.{stage}.output.");
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|p| (p.to_string(), v.clone())))
            .collect()
    }

    pub fn warnings(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(k, _)| k.contains(".warning."))
            .map(|(_, v)| v.as_str())
            .collect()
    }
}

impl fmt::Display for RunManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {}", v.replace('\n', " "))?;
        }
        Ok(())
    }
}

pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(PipelineError::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Exclusive ownership of an output directory for the lifetime of the guard.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out_dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(out_dir).map_err(PipelineError::io(out_dir))?;
        let path = out_dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(PipelineError::io(&path)(e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn check_prerequisites(cfg: &RunConfig, stage: Stage) -> Result<(), PipelineError> {
    for rel in stage.prerequisites() {
        let path = cfg.out_dir.join(rel);
        if !path.exists() {
            return Err(PipelineError::MissingPrerequisite { stage, path });
        }
    }
    Ok(())
}

fn execute(cfg: &RunConfig, stage: Stage, manifest: &mut RunManifest) -> Result<(), PipelineError> {
    manifest.clear_stage(stage);
    manifest.set("config.digest", cfg.digest());
    let started = Instant::now();
    let result = check_prerequisites(cfg, stage).and_then(|_| stages::run(cfg, stage));
    let key = |s: &str| format!("stage.{stage}.{s}");
    manifest.set(key("seconds"), format!("{:.3}", started.elapsed().as_secs_f64()));
    match result {
        Ok(record) => {
            for rel in &record.inputs {
                manifest.set(key(&format!("input.{}", rel.display())), file_digest(&cfg.out_dir.join(rel))?);
            }
            for rel in &record.outputs {
                manifest.set(key(&format!("output.{}", rel.display())), file_digest(&cfg.out_dir.join(rel))?);
            }
            for (i, w) in record.warnings.iter().enumerate() {
                log::info!("{stage}: {w}");
                manifest.set(key(&format!("warning.{i:04}")), w);
            }
            for (k, v) in record.extra {
                manifest.set(key(&k), v);
            }
            manifest.set(key("status"), "ok");
            Ok(())
        }
        Err(e) => {
            manifest.set(key("status"), "failed");
            manifest.set(key("error"), &e);
            Err(PipelineError::Stage {
                stage,
                source: Box::new(e),
            })
        }
    }
}

fn write_config(cfg: &RunConfig) -> Result<(), PipelineError> {
    let path = cfg.out_dir.join("config.kv");
    write_atomic(&path, cfg.to_kv().as_bytes()).map_err(PipelineError::io(&path))
}

/// Runs one stage against the artifacts already in the output directory.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    write_config(cfg)?;
    let mut manifest = RunManifest::load(&cfg.out_dir)?;
    let result = execute(cfg, stage, &mut manifest);
    manifest.save(&cfg.out_dir)?;
    result.map(|_| manifest)
}

/// Runs every stage in order; the manifest so far is saved even when a stage fails.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    write_config(cfg)?;
    let mut manifest = RunManifest::load(&cfg.out_dir)?;
    let started = Instant::now();
    for stage in Stage::ALL {
        log::info!("stage {stage}");
        if let Err(e) = execute(cfg, stage, &mut manifest) {
            manifest.save(&cfg.out_dir)?;
            return Err(e);
        }
        manifest.save(&cfg.out_dir)?;
    }
    manifest.set("run.seconds", format!("{:.3}", started.elapsed().as_secs_f64()));
    manifest.save(&cfg.out_dir)?;
    Ok(manifest)
}
