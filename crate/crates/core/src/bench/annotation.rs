//! Human annotation records and their line-delimited store format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Policy;

use super::metrics::{PPS_MAX, PPS_MIN};

/// One annotator's judgement of one case, with policies already resolved
/// from the anonymous labels they were shown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub case_id: String,
    pub pps: BTreeMap<Policy, u8>,
    /// Subgoal ids the annotator saw completed, per policy.
    #[serde(default)]
    pub checkmarks: BTreeMap<Policy, Vec<String>>,
    pub best: Policy,
    pub worst: Policy,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl AnnotationRecord {
    /// Checks the record on its own; `subgoals` is the case's subgoal count
    /// when known.
    pub fn validate(&self, subgoals: Option<usize>) -> Result<(), String> {
        if self.annotator_id.trim().is_empty() {
            return Err("annotator_id is empty".into());
        }
        if self.best == self.worst {
            return Err(format!("best and worst must differ, both are {}", self.best));
        }
        for (p, &s) in &self.pps {
            if !(PPS_MIN..=PPS_MAX).contains(&s) {
                return Err(format!("pps for {p} is {s}, expected {PPS_MIN}..={PPS_MAX}"));
            }
        }
        if let Some(m) = subgoals {
            for (p, marks) in &self.checkmarks {
                if marks.len() > m {
                    return Err(format!("{} checkmarks for {p}, the case has {m} subgoals", marks.len()));
                }
            }
        }
        Ok(())
    }
}

/// Case identifier shared by every policy's episode on one task and seed.
pub fn case_id(task_id: &str, seed: u64) -> String {
    format!("{task_id}-s{seed}")
}

/// Keeps the last record for each (annotator, case) pair, ordered by that key.
pub fn latest_wins(records: impl IntoIterator<Item = AnnotationRecord>) -> Vec<AnnotationRecord> {
    let mut by_key = BTreeMap::new();
    for r in records {
        by_key.insert((r.annotator_id.clone(), r.case_id.clone()), r);
    }
    by_key.into_values().collect()
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a store file. Every line must parse; duplicates are resolved with
/// [`latest_wins`].
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(line).map_err(|e| AnnotationError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(latest_wins(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(annotator: &str, case: &str, best: Policy, ts: u64) -> AnnotationRecord {
        AnnotationRecord {
            annotator_id: annotator.into(),
            case_id: case.into(),
            pps: Policy::ALL.iter().map(|&p| (p, 3)).collect(),
            checkmarks: BTreeMap::new(),
            best,
            worst: Policy::Reactive,
            timestamp: ts,
        }
    }

    #[test]
    fn duplicate_submission_replaces_content() {
        let out = latest_wins([
            rec("ann1", "kitchen-tea-s1", Policy::Orca, 1),
            rec("ann2", "kitchen-tea-s1", Policy::Orca, 2),
            rec("ann1", "kitchen-tea-s1", Policy::Vagen, 3),
        ]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].best, Policy::Vagen);
        assert_eq!(out[0].timestamp, 3);
    }

    #[test]
    fn validation_messages() {
        let mut r = rec("a", "c", Policy::Orca, 0);
        assert!(r.validate(Some(5)).is_ok());
        r.worst = Policy::Orca;
        assert!(r.validate(None).unwrap_err().contains("differ"));
        let mut r = rec("a", "c", Policy::Orca, 0);
        r.pps.insert(Policy::Vagen, 6);
        assert!(r.validate(None).is_err());
        let mut r = rec("a", "c", Policy::Orca, 0);
        r.checkmarks.insert(Policy::Orca, vec!["sg1".into(), "sg2".into()]);
        assert!(r.validate(Some(1)).is_err());
        assert!(r.validate(Some(2)).is_ok());
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        let lines: Vec<String> = [rec("x", "c1", Policy::Orca, 1), rec("x", "c1", Policy::OpenLoop, 2)]
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let loaded = load_annotations(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].best, Policy::OpenLoop);
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(load_annotations(&path), Err(AnnotationError::Parse { line: 1, .. })));
    }
}
