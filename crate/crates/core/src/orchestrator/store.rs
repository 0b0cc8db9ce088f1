//! On-disk layout of one run: `<out>/<run_id>/` holding the config snapshot,
//! append-only transcripts and annotations, metrics and the manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{Design, RunConfig};
use super::transcript::{Annotation, ProblemCategory, RoundRecord, Transcript};
use super::InstanceFailure;
use crate::gateway::ledger::LedgerLine;
use crate::metrics::{read_metrics_csv, write_metrics_csv, RoundMetrics};

pub const CONFIG_FILE: &str = "config.json";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run directory {0} already exists; refusing to overwrite")]
    RunExists(PathBuf),
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    NotFound(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(io(path))?;
        let digest = Sha256::digest(&bytes);
        Ok(InputFile {
            path: path.display().to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: RunConfig,
    pub inputs: Vec<InputFile>,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub instances: usize,
    pub failed_instances: Vec<InstanceFailure>,
    pub ledger: Vec<LedgerLine>,
    pub total_cost: f64,
    pub template_versions: Vec<String>,
}

/// One line of `transcripts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLine {
    pub run_id: String,
    pub instance_id: String,
    pub dataset_id: String,
    pub design: Design,
    pub record: RoundRecord,
}

/// One line of `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLine {
    pub instance_id: String,
    #[serde(flatten)]
    pub annotation: Annotation,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `<out_dir>/<run_id>`; an existing directory is never reused.
    pub fn create(out_dir: &Path, run_id: &str) -> Result<Self, StoreError> {
        fs::create_dir_all(out_dir).map_err(io(out_dir))?;
        let path = out_dir.join(run_id);
        match fs::create_dir(&path) {
            Ok(()) => Ok(RunDir { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(StoreError::RunExists(path)),
            Err(e) => Err(io(&path)(e)),
        }
    }

    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if !path.join(TRANSCRIPTS_FILE).is_file() {
            return Err(StoreError::NotFound(format!(
                "{} is not a run directory (no {TRANSCRIPTS_FILE})",
                path.display()
            )));
        }
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_new(&self, name: &str, contents: &[u8]) -> Result<(), StoreError> {
        let p = self.path.join(name);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&p).map_err(io(&p))?;
        f.write_all(contents).map_err(io(&p))
    }

    fn append_lines<T: Serialize>(&self, name: &str, items: &[T]) -> Result<(), StoreError> {
        let p = self.path.join(name);
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, item).expect("serializable");
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&p).map_err(io(&p))?;
        f.write_all(&buf).map_err(io(&p))
    }

    fn read_lines<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Vec<T>, StoreError> {
        let p = self.path.join(name);
        let text = match fs::read_to_string(&p) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(&p)(e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| StoreError::Format {
                    path: p.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn write_config(&self, config: &RunConfig) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(config).expect("serializable");
        text.push('\n');
        self.write_new(CONFIG_FILE, text.as_bytes())
    }

    pub fn load_config(&self) -> Result<RunConfig, StoreError> {
        let p = self.path.join(CONFIG_FILE);
        let text = fs::read_to_string(&p).map_err(io(&p))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Format {
            path: p,
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Appends one line per round of each transcript.
    pub fn append_transcripts(&self, transcripts: &[Transcript]) -> Result<(), StoreError> {
        let lines: Vec<RoundLine> = transcripts
            .iter()
            .flat_map(|t| {
                t.rounds.iter().map(|r| RoundLine {
                    run_id: t.run_id.clone(),
                    instance_id: t.instance_id.clone(),
                    dataset_id: t.dataset_id.clone(),
                    design: t.design,
                    record: r.clone(),
                })
            })
            .collect();
        self.append_lines(TRANSCRIPTS_FILE, &lines)
    }

    /// Transcripts in first-appearance order, with annotations applied.
    pub fn load_transcripts(&self) -> Result<Vec<Transcript>, StoreError> {
        let lines: Vec<RoundLine> = self.read_lines(TRANSCRIPTS_FILE)?;
        let mut order: Vec<String> = Vec::new();
        let mut by_id: BTreeMap<String, Transcript> = BTreeMap::new();
        for line in lines {
            let t = by_id.entry(line.instance_id.clone()).or_insert_with(|| {
                order.push(line.instance_id.clone());
                Transcript {
                    run_id: line.run_id.clone(),
                    instance_id: line.instance_id.clone(),
                    dataset_id: line.dataset_id.clone(),
                    design: line.design,
                    rounds: Vec::new(),
                    annotation: None,
                    annotation_history: Vec::new(),
                }
            });
            t.rounds.push(line.record);
        }
        for a in self.read_lines::<AnnotationLine>(ANNOTATIONS_FILE)? {
            if let Some(t) = by_id.get_mut(&a.instance_id) {
                t.annotate(a.annotation);
            }
        }
        Ok(order.into_iter().map(|id| by_id.remove(&id).expect("present")).collect())
    }

    pub fn write_metrics(&self, rounds: &[RoundMetrics<f64>]) -> Result<(), StoreError> {
        self.write_new(METRICS_FILE, write_metrics_csv(rounds).as_bytes())
    }

    pub fn load_metrics(&self) -> Result<Vec<RoundMetrics<f64>>, StoreError> {
        let p = self.path.join(METRICS_FILE);
        let text = fs::read_to_string(&p).map_err(io(&p))?;
        read_metrics_csv(&text).map_err(|e| StoreError::Format {
            path: p,
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(manifest).expect("serializable");
        text.push('\n');
        self.write_new(MANIFEST_FILE, text.as_bytes())
    }

    pub fn load_manifest(&self) -> Result<RunManifest, StoreError> {
        let p = self.path.join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).map_err(io(&p))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Format {
            path: p,
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Stores a manual annotation; the latest one per instance wins, all are kept.
    pub fn annotate(
        &self,
        instance_id: &str,
        round_index: usize,
        category: ProblemCategory,
        note: &str,
    ) -> Result<Transcript, StoreError> {
        let transcripts = self.load_transcripts()?;
        let t = transcripts
            .iter()
            .find(|t| t.instance_id == instance_id)
            .ok_or_else(|| StoreError::NotFound(format!("no transcript for instance `{instance_id}`")))?;
        if round_index >= t.rounds.len() {
            return Err(StoreError::NotFound(format!(
                "instance `{instance_id}` has no round {round_index} ({} rounds recorded)",
                t.rounds.len()
            )));
        }
        let line = AnnotationLine {
            instance_id: instance_id.to_string(),
            annotation: Annotation {
                round_index,
                category,
                note: note.to_string(),
            },
        };
        self.append_lines(ANNOTATIONS_FILE, std::slice::from_ref(&line))?;
        let mut updated = t.clone();
        updated.annotate(line.annotation);
        Ok(updated)
    }
}

/// Creates an empty file so that a run with no completed instance still opens.
pub fn touch(path: &Path) -> Result<(), StoreError> {
    File::options().create(true).append(true).open(path).map(|_| ()).map_err(io(path))
}
