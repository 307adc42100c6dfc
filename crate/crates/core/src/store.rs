//! On-disk artifact store with an append-only contestation log.
//!
//! Layout under the store root:
//!
//! ```text
//! base/meta.json           revision of the base artifacts, mining config
//! base/ontology.json
//! base/schema.json
//! base/case_overrides.json
//! base/qbafs/<option>.json
//! current/...              same files, base plus every logged edit
//! contest_log.jsonl        one LogEntry per line
//! reports/<name>.json
//! ```
//!
//! The current revision is the base revision plus the number of log entries.
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::canonical::{to_canonical_line, to_canonical_string};
use crate::contest::{apply_contestation, Artifacts, ContestEdit, ContestError, LogEntry};
use crate::pipeline::MiningConfig;

const LOG_FILE: &str = "contest_log.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no artifacts found in {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Contest(#[from] ContestError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_owned(), source }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mining: Option<MiningConfig>,
}

/// Artifacts frozen at one revision.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub revision: u64,
    pub artifacts: Artifacts,
}

/// Relative path to canonical file contents for a full artifact set.
pub fn render_files(artifacts: &Artifacts) -> BTreeMap<PathBuf, String> {
    let mut files = BTreeMap::new();
    files.insert(PathBuf::from("ontology.json"), encode(&artifacts.ontology));
    files.insert(PathBuf::from("schema.json"), encode(&artifacts.schema));
    files.insert(PathBuf::from("case_overrides.json"), encode(&artifacts.case_overrides));
    for (id, general) in &artifacts.generals {
        files.insert(PathBuf::from("qbafs").join(format!("{id}.json")), encode(general));
    }
    files
}

fn encode<T: Serialize>(value: &T) -> String {
    to_canonical_string(value).expect("artifacts serialise")
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StoreError::Parse { path: path.to_owned(), source })
}

/// Write `artifacts` into `dir`, removing framework files that no longer
/// belong to any option.
pub fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<(), StoreError> {
    let files = render_files(artifacts);
    for (rel, contents) in &files {
        write_atomic(&dir.join(rel), contents)?;
    }
    let qbaf_dir = dir.join("qbafs");
    fs::create_dir_all(&qbaf_dir).map_err(io_err(&qbaf_dir))?;
    for entry in fs::read_dir(&qbaf_dir).map_err(io_err(&qbaf_dir))? {
        let path = entry.map_err(io_err(&qbaf_dir))?.path();
        let rel = PathBuf::from("qbafs").join(path.file_name().unwrap_or_default());
        if !files.contains_key(&rel) {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

pub fn read_artifacts(dir: &Path) -> Result<Artifacts, StoreError> {
    if !dir.join("ontology.json").is_file() {
        return Err(StoreError::Missing(dir.to_owned()));
    }
    let mut artifacts = Artifacts {
        ontology: read_json(&dir.join("ontology.json"))?,
        schema: read_json(&dir.join("schema.json"))?,
        case_overrides: read_json(&dir.join("case_overrides.json"))?,
        generals: BTreeMap::new(),
    };
    let qbaf_dir = dir.join("qbafs");
    if qbaf_dir.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&qbaf_dir)
            .map_err(io_err(&qbaf_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let general: crate::pipeline::GeneralQbaf = read_json(&path)?;
            artifacts.generals.insert(general.option().clone(), general);
        }
    }
    Ok(artifacts)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug)]
pub struct ArtifactStore {
    root: PathBuf,
    meta: StoreMeta,
    base: Artifacts,
    log: Vec<LogEntry>,
    current: Arc<Snapshot>,
}

impl ArtifactStore {
    /// Start a store at `root` from freshly built artifacts. An existing
    /// store is superseded: its log is archived and the new base revision
    /// continues after its current revision.
    pub fn init(root: &Path, artifacts: Artifacts, mining: Option<MiningConfig>) -> Result<Self, StoreError> {
        let problems = artifacts.problems();
        if !problems.is_empty() {
            return Err(StoreError::Corrupt(problems.join("; ")));
        }
        let revision = match ArtifactStore::open(root) {
            Ok(previous) => {
                let archived = root.join(format!("contest_log.{}.jsonl", previous.revision()));
                let log = root.join(LOG_FILE);
                if log.exists() {
                    fs::rename(&log, &archived).map_err(io_err(&log))?;
                }
                previous.revision() + 1
            }
            Err(StoreError::Missing(_)) => 0,
            Err(e) => return Err(e),
        };
        let meta = StoreMeta { revision, mining };
        write_artifacts(&root.join("base"), &artifacts)?;
        write_atomic(&root.join("base").join("meta.json"), &to_canonical_string(&meta).expect("meta serialises"))?;
        write_artifacts(&root.join("current"), &artifacts)?;
        let log = root.join(LOG_FILE);
        fs::File::create(&log).map_err(io_err(&log))?;
        info!(root = %root.display(), revision, "initialised artifact store");
        Ok(ArtifactStore {
            root: root.to_owned(),
            meta,
            base: artifacts.clone(),
            log: Vec::new(),
            current: Arc::new(Snapshot { revision, artifacts }),
        })
    }

    /// Load base artifacts, replay the log and refresh `current/`.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let base_dir = root.join("base");
        if !base_dir.join("meta.json").is_file() {
            return Err(StoreError::Missing(root.to_owned()));
        }
        let meta: StoreMeta = read_json(&base_dir.join("meta.json"))?;
        let base = read_artifacts(&base_dir)?;
        let log_path = root.join(LOG_FILE);
        let mut log = Vec::new();
        if log_path.is_file() {
            let text = fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let entry: LogEntry = serde_json::from_str(line)
                    .map_err(|source| StoreError::Parse { path: log_path.clone(), source })?;
                log.push(entry);
            }
        }
        let mut artifacts = base.clone();
        for (i, entry) in log.iter().enumerate() {
            let expected = meta.revision + i as u64 + 1;
            if entry.revision != expected {
                return Err(StoreError::Corrupt(format!(
                    "log entry {i} has revision {}, expected {expected}",
                    entry.revision
                )));
            }
            artifacts = apply_contestation(&artifacts, &entry.edit)
                .map_err(|e| StoreError::Corrupt(format!("replaying revision {}: {e}", entry.revision)))?;
        }
        let revision = meta.revision + log.len() as u64;
        write_artifacts(&root.join("current"), &artifacts)?;
        Ok(ArtifactStore {
            root: root.to_owned(),
            meta,
            base,
            log,
            current: Arc::new(Snapshot { revision, artifacts }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn revision(&self) -> u64 {
        self.current.revision
    }

    pub fn base_revision(&self) -> u64 {
        self.meta.revision
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.current)
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Validate and apply an edit, append it to the log and rewrite
    /// `current/`. Returns the new log entry.
    pub fn apply(&mut self, edit: ContestEdit, justification: &str) -> Result<LogEntry, StoreError> {
        if justification.trim().is_empty() {
            return Err(ContestError::Rejected("a justification is required".into()).into());
        }
        let artifacts = apply_contestation(&self.current.artifacts, &edit)?;
        let entry = LogEntry {
            revision: self.revision() + 1,
            timestamp_ms: now_ms(),
            justification: justification.trim().to_owned(),
            edit,
        };
        let log_path = self.root.join(LOG_FILE);
        let mut line = to_canonical_line(&entry).expect("log entries serialise");
        line.push('\n');
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&log_path).map_err(io_err(&log_path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&log_path))?;
        f.sync_all().map_err(io_err(&log_path))?;
        write_artifacts(&self.root.join("current"), &artifacts)?;
        self.log.push(entry.clone());
        self.current = Arc::new(Snapshot { revision: entry.revision, artifacts });
        info!(revision = entry.revision, "applied contestation");
        Ok(entry)
    }

    /// Artifacts as they were at `revision`, rebuilt from the base and the log.
    pub fn replay_to(&self, revision: u64) -> Result<Snapshot, StoreError> {
        if revision < self.meta.revision || revision > self.revision() {
            return Err(ContestError::NotFound(format!(
                "revision {revision} (available {}..={})",
                self.meta.revision,
                self.revision()
            ))
            .into());
        }
        let mut artifacts = self.base.clone();
        for entry in self.log.iter().take_while(|e| e.revision <= revision) {
            artifacts = apply_contestation(&artifacts, &entry.edit)?;
        }
        Ok(Snapshot { revision, artifacts })
    }

    pub fn write_report<T: Serialize>(&self, name: &str, report: &T) -> Result<PathBuf, StoreError> {
        let path = self.root.join("reports").join(format!("{name}.json"));
        write_atomic(&path, &to_canonical_string(report).expect("reports serialise"))?;
        Ok(path)
    }
}
