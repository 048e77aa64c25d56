//! Append-only annotation log with startup replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use orca_core::bench::AnnotationRecord;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every record ever acknowledged is in the file; `latest` keeps the newest
/// per (annotator, case).
pub struct AnnotationStore {
    path: PathBuf,
    file: File,
    latest: BTreeMap<(String, String), AnnotationRecord>,
    appended: usize,
}

impl AnnotationStore {
    /// Opens (or creates) the log and replays it. A final line without its
    /// newline is a torn write from a crash: it was never acknowledged, so it
    /// is cut off. Any other unreadable line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let complete = match text.rfind('\n') {
            Some(i) => i + 1,
            None => 0,
        };
        let mut latest = BTreeMap::new();
        let mut appended = 0;
        for (i, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: AnnotationRecord = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            latest.insert((r.annotator_id.clone(), r.case_id.clone()), r);
            appended += 1;
        }

        let mut file = OpenOptions::new().create(true).read(true).write(true).truncate(false).open(&path)?;
        if complete < text.len() {
            file.set_len(complete as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(AnnotationStore { path, file, latest, appended })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and syncs it before returning.
    pub fn append(&mut self, record: AnnotationRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.appended += 1;
        self.latest.insert((record.annotator_id.clone(), record.case_id.clone()), record);
        Ok(())
    }

    /// Distinct (annotator, case) pairs.
    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    /// Lines in the log, including superseded ones.
    pub fn appended(&self) -> usize {
        self.appended
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.latest.values().cloned().collect()
    }

    pub fn annotated_by<'a>(&'a self, annotator: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.latest.keys().filter(move |(a, _)| a == annotator).map(|(_, c)| c.as_str())
    }
}
