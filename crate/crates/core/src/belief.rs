//! The agent's internal world model: believed scene facts, the plan
//! checklist and the interaction history.

use serde::{Deserialize, Serialize};

use crate::world::atom::{contradictions, overlay, Atom, AtomSet};
use crate::world::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    InProgress,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistEntry {
    pub subgoal_id: String,
    pub description: String,
    pub status: Status,
    pub completion_evidence: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub command: String,
    pub predicted_state: Vec<Atom>,
    pub caption: String,
    pub verdict: Option<Decision>,
    pub retry_count: u32,
    /// Facts of the last observed frame.
    pub observation_digest: Vec<Atom>,
}

/// A `done -> pending` demotion made while re-planning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demotion {
    pub turn: u32,
    pub subgoal_id: String,
    pub previous_evidence: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedState {
    pub expected_atoms: AtomSet,
    pub expected_subgoal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefState {
    pub intention: String,
    pub scene_belief: AtomSet,
    pub checklist: Vec<ChecklistEntry>,
    pub history: Vec<TurnRecord>,
    pub demotions: Vec<Demotion>,
    pub turn: u32,
}

/// The parts of a belief that a discarded turn must not touch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub scene: Vec<Atom>,
    pub statuses: Vec<(String, Status)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BeliefError {
    #[error("initial observation has no frames")]
    EmptyObservation,
    #[error("contradictory facts: {}", render_pairs(.0))]
    Contradiction(Vec<(Atom, Atom)>),
    #[error("unknown subgoal `{0}`")]
    UnknownSubgoal(String),
    #[error("subgoal `{0}` cannot be marked done without evidence")]
    MissingEvidence(String),
    #[error("subgoal `{requested}` cannot start while `{active}` is in progress")]
    AlreadyInProgress { requested: String, active: String },
    #[error("subgoal `{0}` is done; demotion requires a re-plan")]
    DemotionWithoutReplan(String),
}

fn render_pairs(pairs: &[(Atom, Atom)]) -> String {
    pairs.iter().map(|(a, b)| format!("{a} vs {b}")).collect::<Vec<_>>().join(", ")
}

/// Builds the initial belief. Frames are merged in order, so overlapping
/// frames contribute their union and a later frame wins on a shared key.
pub fn initialize_belief(
    o0: &Observation,
    intention: &str,
    plan: &[(String, String)],
) -> Result<BeliefState, BeliefError> {
    if o0.frames.is_empty() {
        return Err(BeliefError::EmptyObservation);
    }
    Ok(BeliefState {
        intention: intention.to_string(),
        scene_belief: o0.merged_atoms(),
        checklist: plan
            .iter()
            .map(|(id, description)| ChecklistEntry {
                subgoal_id: id.clone(),
                description: description.clone(),
                status: Status::Pending,
                completion_evidence: None,
            })
            .collect(),
        history: Vec::new(),
        demotions: Vec::new(),
        turn: 0,
    })
}

impl BeliefState {
    /// Removes `retractions`, then inserts `facts`; a fact replaces any
    /// believed atom with the same key. Unmentioned atoms persist.
    pub fn apply_observation_facts(&mut self, facts: &AtomSet, retractions: &AtomSet) -> Result<(), BeliefError> {
        let clashes = contradictions(facts);
        if !clashes.is_empty() {
            return Err(BeliefError::Contradiction(clashes));
        }
        let kept: AtomSet = self.scene_belief.difference(retractions).cloned().collect();
        let facts: Vec<Atom> = facts.iter().cloned().collect();
        self.scene_belief = overlay(&kept, &facts);
        Ok(())
    }

    pub fn entry(&self, subgoal_id: &str) -> Option<&ChecklistEntry> {
        self.checklist.iter().find(|e| e.subgoal_id == subgoal_id)
    }

    pub fn set_subgoal_status(
        &mut self,
        subgoal_id: &str,
        status: Status,
        evidence_turn: Option<u32>,
        replan: bool,
    ) -> Result<(), BeliefError> {
        let idx = self
            .checklist
            .iter()
            .position(|e| e.subgoal_id == subgoal_id)
            .ok_or_else(|| BeliefError::UnknownSubgoal(subgoal_id.to_string()))?;
        if status == Status::InProgress {
            if let Some(active) =
                self.checklist.iter().find(|e| e.status == Status::InProgress && e.subgoal_id != subgoal_id)
            {
                return Err(BeliefError::AlreadyInProgress {
                    requested: subgoal_id.to_string(),
                    active: active.subgoal_id.clone(),
                });
            }
        }
        let turn = self.turn;
        let entry = &mut self.checklist[idx];
        match status {
            Status::Done => {
                let evidence = evidence_turn.ok_or_else(|| BeliefError::MissingEvidence(subgoal_id.to_string()))?;
                entry.completion_evidence = Some(entry.completion_evidence.map_or(evidence, |e| e.max(evidence)));
            }
            _ if entry.status == Status::Done => {
                if !replan {
                    return Err(BeliefError::DemotionWithoutReplan(subgoal_id.to_string()));
                }
                self.demotions.push(Demotion {
                    turn,
                    subgoal_id: subgoal_id.to_string(),
                    previous_evidence: entry.completion_evidence.take(),
                });
            }
            _ => {}
        }
        entry.status = status;
        Ok(())
    }

    /// Entries not yet done, in plan order. Empty means the episode is over.
    pub fn remaining_subgoals(&self) -> Vec<&ChecklistEntry> {
        self.checklist.iter().filter(|e| e.status != Status::Done).collect()
    }

    pub fn in_progress(&self) -> Option<&ChecklistEntry> {
        self.checklist.iter().find(|e| e.status == Status::InProgress)
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot {
            scene: self.scene_belief.iter().cloned().collect(),
            statuses: self.checklist.iter().map(|e| (e.subgoal_id.clone(), e.status)).collect(),
        }
    }

    /// Restores scene facts and checklist statuses from a snapshot taken on
    /// this belief. Evidence and history are left alone.
    pub fn restore(&mut self, snapshot: &BeliefSnapshot) {
        self.scene_belief = snapshot.scene.iter().cloned().collect();
        for (id, status) in &snapshot.statuses {
            if let Some(e) = self.checklist.iter_mut().find(|e| &e.subgoal_id == id) {
                e.status = *status;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::FrameFacts;
    use proptest::prelude::*;

    fn obs(frames: Vec<Vec<Atom>>) -> Observation {
        Observation {
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(index, atoms)| FrameFacts { index, atoms: atoms.into_iter().collect() })
                .collect(),
            turn: 0,
        }
    }

    fn plan(n: usize) -> Vec<(String, String)> {
        (1..=n).map(|i| (format!("sg{i}"), format!("step {i}"))).collect()
    }

    fn set(atoms: &[Atom]) -> AtomSet {
        atoms.iter().cloned().collect()
    }

    #[test]
    fn initialize_from_single_frame() {
        let b = initialize_belief(&obs(vec![vec![Atom::at("pot", "bench")]]), "i", &plan(5)).unwrap();
        assert_eq!(b.scene_belief.len(), 1);
        assert_eq!(b.checklist.len(), 5);
        assert!(b.checklist.iter().all(|e| e.status == Status::Pending));
        assert!(b.history.is_empty());
        assert_eq!(b.turn, 0);
    }

    #[test]
    fn overlapping_frames_union() {
        let o = obs(vec![
            vec![Atom::at("pot", "bench"), Atom::at("x", "shelf")],
            vec![Atom::at("x", "shelf"), Atom::prop("pot", "contains", "soil")],
        ]);
        let b = initialize_belief(&o, "i", &plan(3)).unwrap();
        assert_eq!(b.scene_belief.len(), 3);
    }

    #[test]
    fn empty_plan_terminates_immediately() {
        let b = initialize_belief(&obs(vec![vec![Atom::at("pot", "bench")]]), "i", &[]).unwrap();
        assert!(b.remaining_subgoals().is_empty());
    }

    #[test]
    fn empty_observation_is_an_error() {
        assert_eq!(initialize_belief(&obs(vec![]), "i", &plan(3)), Err(BeliefError::EmptyObservation));
    }

    #[test]
    fn retraction_then_fact() {
        let mut b = initialize_belief(&obs(vec![vec![Atom::at("x", "shelf")]]), "i", &plan(3)).unwrap();
        b.apply_observation_facts(&set(&[Atom::holds("A", "x")]), &set(&[Atom::at("x", "shelf")])).unwrap();
        assert_eq!(b.scene_belief, set(&[Atom::holds("A", "x")]));
    }

    #[test]
    fn empty_update_is_identity() {
        let mut b = initialize_belief(&obs(vec![vec![Atom::at("x", "shelf")]]), "i", &plan(3)).unwrap();
        let before = b.clone();
        b.apply_observation_facts(&AtomSet::new(), &AtomSet::new()).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn contradictory_facts_are_rejected() {
        let mut b = initialize_belief(&obs(vec![vec![]]), "i", &plan(3)).unwrap();
        let err = b
            .apply_observation_facts(&set(&[Atom::at("x", "bench"), Atom::at("x", "shelf")]), &AtomSet::new())
            .unwrap_err();
        assert!(matches!(err, BeliefError::Contradiction(ref p) if p.len() == 1));
    }

    #[test]
    fn newest_fact_wins() {
        let mut b = initialize_belief(&obs(vec![vec![Atom::at("x", "shelf")]]), "i", &plan(3)).unwrap();
        b.apply_observation_facts(&set(&[Atom::at("x", "bench")]), &AtomSet::new()).unwrap();
        assert_eq!(b.scene_belief, set(&[Atom::at("x", "bench")]));
    }

    #[test]
    fn status_transitions() {
        let mut b = initialize_belief(&obs(vec![vec![]]), "i", &plan(3)).unwrap();
        b.set_subgoal_status("sg1", Status::InProgress, None, false).unwrap();
        assert_eq!(b.checklist.iter().filter(|e| e.status == Status::InProgress).count(), 1);
        assert!(matches!(
            b.set_subgoal_status("sg2", Status::InProgress, None, false),
            Err(BeliefError::AlreadyInProgress { .. })
        ));
        b.set_subgoal_status("sg1", Status::Done, Some(3), false).unwrap();
        assert_eq!(b.entry("sg1").unwrap().completion_evidence, Some(3));
        assert!(matches!(b.set_subgoal_status("sg2", Status::Done, None, false), Err(BeliefError::MissingEvidence(_))));
        assert!(matches!(b.set_subgoal_status("sg9", Status::Pending, None, false), Err(BeliefError::UnknownSubgoal(_))));
    }

    #[test]
    fn demotion_only_via_replan_and_logged() {
        let mut b = initialize_belief(&obs(vec![vec![]]), "i", &plan(3)).unwrap();
        b.set_subgoal_status("sg1", Status::Done, Some(2), false).unwrap();
        assert!(b.set_subgoal_status("sg1", Status::Pending, None, false).is_err());
        // Evidence never decreases.
        b.set_subgoal_status("sg1", Status::Done, Some(1), false).unwrap();
        assert_eq!(b.entry("sg1").unwrap().completion_evidence, Some(2));
        b.set_subgoal_status("sg1", Status::Pending, None, true).unwrap();
        assert_eq!(b.entry("sg1").unwrap().completion_evidence, None);
        assert_eq!(b.demotions.len(), 1);
        assert_eq!(b.demotions[0].previous_evidence, Some(2));
    }

    #[test]
    fn remaining_keeps_plan_order() {
        let mut b = initialize_belief(&obs(vec![vec![]]), "i", &plan(5)).unwrap();
        for id in ["sg1", "sg3"] {
            b.set_subgoal_status(id, Status::Done, Some(1), false).unwrap();
        }
        let ids: Vec<&str> = b.remaining_subgoals().iter().map(|e| e.subgoal_id.as_str()).collect();
        assert_eq!(ids, vec!["sg2", "sg4", "sg5"]);
        for id in ["sg2", "sg4", "sg5"] {
            b.set_subgoal_status(id, Status::Done, Some(2), false).unwrap();
        }
        assert!(b.remaining_subgoals().is_empty());
    }

    fn small_atom() -> impl Strategy<Value = Atom> {
        let obj = prop_oneof![Just("x"), Just("y"), Just("z")];
        let loc = prop_oneof![Just("shelf"), Just("bench"), Just("A")];
        prop_oneof![
            (obj.clone(), loc.clone()).prop_map(|(o, l)| Atom::at(o, l)),
            obj.clone().prop_map(|o| Atom::holds("A", o)),
            (obj, prop_oneof![Just("open"), Just("closed")]).prop_map(|(o, v)| Atom::prop(o, "state", v)),
        ]
    }

    fn consistent(atoms: Vec<Atom>) -> AtomSet {
        let mut out = AtomSet::new();
        for a in atoms {
            if !out.iter().any(|b| b.conflicts_with(&a)) {
                out.insert(a);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn update_is_idempotent(
            start in proptest::collection::vec(small_atom(), 0..6),
            facts in proptest::collection::vec(small_atom(), 0..6),
            retract in proptest::collection::vec(small_atom(), 0..4),
        ) {
            let mut b = initialize_belief(&obs(vec![consistent(start).into_iter().collect()]), "i", &plan(3)).unwrap();
            let facts = consistent(facts);
            let retract: AtomSet = retract.into_iter().collect();
            b.apply_observation_facts(&facts, &retract).unwrap();
            let once = b.clone();
            b.apply_observation_facts(&facts, &retract).unwrap();
            prop_assert_eq!(b, once);
        }
    }
}
