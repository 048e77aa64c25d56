//! Cases as annotators see them: anonymous labels, no policy names.

use std::collections::BTreeMap;

use orca_core::agent::{EpisodeTrace, Policy};
use orca_core::bench::Case;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const LABELS: [&str; 4] = ["A", "B", "C", "D"];

/// Label assignment for one case. Ordering the case's policies by a salted
/// hash gives a permutation that is stable across restarts and unguessable
/// without the salt.
pub fn anonymize(salt: &str, case_id: &str, policies: impl IntoIterator<Item = Policy>) -> BTreeMap<String, Policy> {
    let mut keyed: Vec<([u8; 32], Policy)> = policies
        .into_iter()
        .map(|p| {
            let mut h = Sha256::new();
            for part in [salt, case_id, p.as_str()] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
            (h.finalize().into(), p)
        })
        .collect();
    keyed.sort();
    keyed.into_iter().zip(LABELS).map(|((_, p), l)| (l.to_string(), p)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    pub task_id: String,
    pub scenario: String,
    pub intention: String,
    pub subgoal_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalView {
    pub id: String,
    pub description: String,
}

/// One generated clip: the caption and the facts visible in its last frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipView {
    pub turn: u32,
    pub caption: String,
    pub final_frame: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeView {
    pub label: String,
    pub clips: Vec<ClipView>,
    /// Reserved for deployments that render real videos.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseBundle {
    pub id: String,
    pub intention: String,
    pub initial_scene: Vec<String>,
    pub subgoals: Vec<SubgoalView>,
    pub episodes: Vec<EpisodeView>,
}

/// A loaded case with its server-side label mapping.
pub struct AnonymousCase {
    pub case: Case,
    pub labels: BTreeMap<String, Policy>,
}

impl AnonymousCase {
    pub fn new(case: Case, salt: &str) -> Self {
        let labels = anonymize(salt, &case.id, case.episodes.keys().copied());
        AnonymousCase { case, labels }
    }

    pub fn summary(&self) -> CaseSummary {
        CaseSummary {
            id: self.case.id.clone(),
            task_id: self.case.task_id.clone(),
            scenario: self.case.scenario.to_string(),
            intention: self.case.intention.clone(),
            subgoal_count: self.case.subgoals.len(),
        }
    }

    pub fn bundle(&self) -> CaseBundle {
        let episodes = self
            .labels
            .iter()
            .map(|(label, policy)| EpisodeView {
                label: label.clone(),
                clips: self.case.episodes.get(policy).map(clips).unwrap_or_default(),
                media_url: None,
            })
            .collect();
        CaseBundle {
            id: self.case.id.clone(),
            intention: self.case.intention.clone(),
            initial_scene: self.case.episodes.values().next().map(initial_scene).unwrap_or_default(),
            subgoals: self
                .case
                .subgoals
                .iter()
                .map(|s| SubgoalView { id: s.id.clone(), description: s.description.clone() })
                .collect(),
            episodes,
        }
    }

    pub fn policy(&self, label: &str) -> Option<Policy> {
        self.labels.get(label).copied()
    }
}

fn clips(trace: &EpisodeTrace) -> Vec<ClipView> {
    trace
        .summary
        .clips
        .iter()
        .map(|c| ClipView {
            turn: c.turn,
            caption: c.caption.clone(),
            final_frame: c.final_frame.iter().map(ToString::to_string).collect(),
        })
        .collect()
}

/// The first clip's opening frame, which every policy shares for a case.
fn initial_scene(trace: &EpisodeTrace) -> Vec<String> {
    trace
        .summary
        .clips
        .first()
        .and_then(|c| c.sampled.first())
        .map(|f| f.atoms.iter().map(ToString::to_string).collect())
        .unwrap_or_default()
}
