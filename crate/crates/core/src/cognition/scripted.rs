//! Deterministic rule-based backend. Every method is a pure function of its
//! inputs and the task it was built for.

use std::collections::{BTreeMap, BTreeSet};

use super::{Cognition, CognitionError, Command, Mismatch, ObservationExtract, Observed, SubgoalInfo, Verdict};
use crate::belief::{BeliefState, Decision, PredictedState, Status};
use crate::world::action::{holder, location};
use crate::world::atom::overlay;
use crate::world::{Atom, AtomKey, AtomSet, Observation, SubGoalSpec, TaskSpec, Verb, WorldAction};

#[derive(Debug, Clone)]
pub struct ScriptedCognition {
    task: TaskSpec,
    omission_tolerant: bool,
}

impl ScriptedCognition {
    pub fn new(task: &TaskSpec) -> Self {
        ScriptedCognition { task: task.clone(), omission_tolerant: false }
    }

    /// Treat an expected fact whose subject is entirely missing from a frame
    /// as unobserved rather than wrong. Needed whenever frames drop facts.
    pub fn with_omission_tolerance(mut self, on: bool) -> Self {
        self.omission_tolerant = on;
        self
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    fn subgoal(&self, id: &str) -> Result<&SubGoalSpec, CognitionError> {
        self.task.subgoal(id).ok_or_else(|| CognitionError::Grounding(format!("unknown subgoal `{id}`")))
    }

    fn default_actor(&self, sg: &SubGoalSpec, belief: &AtomSet) -> String {
        if let Some(a) = &sg.actor {
            return a.clone();
        }
        self.task
            .avatars
            .iter()
            .find(|a| !belief.iter().any(|x| matches!(x, Atom::Holds { avatar, .. } if avatar == *a)))
            .or_else(|| self.task.avatars.first())
            .cloned()
            .unwrap_or_default()
    }

    /// Picks the verb realizing the first unmet effect of `sg`. The flag is
    /// true when the action is a prerequisite rather than the subgoal itself.
    fn realize(&self, sg: &SubGoalSpec, belief: &AtomSet) -> Result<(WorldAction, bool), CognitionError> {
        let fail = |why: String| Err(CognitionError::Grounding(format!("subgoal `{}`: {why}", sg.id)));
        let Some(primary) = sg.effects.iter().find(|a| !belief.contains(a)) else {
            return fail("every effect already holds".into());
        };
        let attached = |o: &str| belief.contains(&Atom::prop(o, "attached", "yes"));
        // Getting `o` into someone's hand when it is not held yet.
        let fetch = |actor: &str, o: &str| {
            if attached(o) {
                WorldAction::new(Verb::Detach, actor, Some(o), None)
            } else {
                WorldAction::new(Verb::PickUp, actor, Some(o), None)
            }
        };
        let out = match primary {
            Atom::Holds { avatar, object } => match holder(belief, object) {
                Some(h) if h != avatar => (WorldAction::new(Verb::Give, h, Some(object), Some(avatar)), false),
                _ => (fetch(avatar, object), false),
            },
            Atom::At { object, location: target } => {
                let verb = if sg.effects.contains(&Atom::prop(object.as_str(), "attached", "yes")) {
                    Verb::Attach
                } else {
                    Verb::Place
                };
                match holder(belief, object) {
                    Some(h) => (WorldAction::new(verb, h, Some(object), Some(target)), false),
                    None => (fetch(&self.default_actor(sg, belief), object), true),
                }
            }
            Atom::Prop { object, key, value } => {
                let actor = self.default_actor(sg, belief);
                let verb = match (key.as_str(), value.as_str()) {
                    ("state", "open") => Some(Verb::Open),
                    ("state", "closed") => Some(Verb::Close),
                    ("power", "on") => Some(Verb::Activate),
                    ("power", "off") => Some(Verb::Deactivate),
                    ("attached", "no") => Some(Verb::Detach),
                    _ => None,
                };
                if let Some(v) = verb {
                    (WorldAction::new(v, &actor, Some(object), None), false)
                } else if key == "contains" {
                    let sources: Vec<&str> = belief
                        .iter()
                        .filter_map(|a| match a {
                            Atom::Prop { object: s, key: k, value: v } if k == "contains" && v == value && s != object => {
                                Some(s.as_str())
                            }
                            _ => None,
                        })
                        .collect();
                    if let Some(src) = sources.iter().find(|s| holder(belief, s).is_some()) {
                        let h = holder(belief, src).unwrap_or_default();
                        (WorldAction::new(Verb::Pour, h, Some(src), Some(object)), false)
                    } else if let Some(src) = sources.iter().find(|s| location(belief, s).is_some()) {
                        (fetch(&actor, src), true)
                    } else {
                        return fail(format!("nothing believed to contain `{value}`"));
                    }
                } else {
                    return fail(format!("no verb sets `{key}` to `{value}`"));
                }
            }
            Atom::Done { event } => {
                let parts: Vec<&str> = event.split(':').collect();
                match parts.as_slice() {
                    ["speak", a] => (WorldAction::new(Verb::Speak, a, None, None), false),
                    ["gesture", a] => (WorldAction::new(Verb::Gesture, a, None, None), false),
                    ["gesture", a, o] => (WorldAction::new(Verb::Gesture, a, Some(o), None), false),
                    _ => return fail(format!("no verb produces event `{event}`")),
                }
            }
        };
        if !out.1 {
            let nominal = nominal_effects(&out.0, belief);
            let after = overlay(belief, &nominal);
            if let Some(left) = sg.effects.iter().find(|e| !after.contains(e)) {
                return fail(format!("`{}` cannot also produce {left}; effects need more than one action", out.0.verb));
            }
        }
        Ok(out)
    }
}

/// What an action is meant to assert, whether or not its preconditions hold.
fn nominal_effects(action: &WorldAction, belief: &AtomSet) -> Vec<Atom> {
    let a = action.actor.as_str();
    let o = action.object.as_deref().unwrap_or_default();
    let t = action.target.as_deref().unwrap_or_default();
    match action.verb {
        Verb::PickUp => vec![Atom::holds(a, o)],
        Verb::Place => vec![Atom::at(o, t)],
        Verb::Attach => vec![Atom::at(o, t), Atom::prop(o, "attached", "yes")],
        Verb::Detach => vec![Atom::holds(a, o), Atom::prop(o, "attached", "no")],
        Verb::Give => vec![Atom::holds(t, o)],
        Verb::Open => vec![Atom::prop(o, "state", "open")],
        Verb::Close => vec![Atom::prop(o, "state", "closed")],
        Verb::Activate => vec![Atom::prop(o, "power", "on")],
        Verb::Deactivate => vec![Atom::prop(o, "power", "off")],
        Verb::Pour => belief
            .iter()
            .find_map(|x| match x {
                Atom::Prop { object, key, value } if object == o && key == "contains" => {
                    Some(vec![Atom::prop(t, "contains", value.as_str())])
                }
                _ => None,
            })
            .unwrap_or_default(),
        Verb::Gesture => {
            vec![Atom::done(crate::world::action::gesture_event(a, action.object.as_deref()))]
        }
        Verb::Speak => vec![Atom::done(crate::world::action::speak_event(a))],
    }
}

fn subjects(atoms: &AtomSet) -> BTreeSet<&str> {
    atoms.iter().map(Atom::subject).collect()
}

fn values_by_key(atoms: &AtomSet) -> BTreeMap<AtomKey, BTreeSet<&Atom>> {
    let mut out: BTreeMap<AtomKey, BTreeSet<&Atom>> = BTreeMap::new();
    for a in atoms {
        out.entry(a.key()).or_default().insert(a);
    }
    out
}

fn describe(m: &Mismatch) -> String {
    match (&m.expected, &m.observed) {
        (Some(e), Observed::Missing) => format!("expected {e}, not seen"),
        (Some(e), Observed::Conflicting { atom, frame }) => format!("expected {e}, saw {atom} in frame {frame}"),
        (None, Observed::Conflicting { atom, frame }) => format!("unexpected change {atom} in frame {frame}"),
        (_, Observed::Unexpected { atom, frame }) => format!("unknown {atom} appeared in frame {frame}"),
        (_, Observed::Vanished { subject, frame }) => format!("{subject} vanished in frame {frame}"),
        (_, Observed::Reported { text }) => text.clone(),
        (None, Observed::Missing) => "missing fact".to_string(),
    }
}

impl Cognition for ScriptedCognition {
    fn initialize(&self, _o0: &Observation, _intention: &str, subgoals: &[SubgoalInfo]) -> Result<Vec<String>, CognitionError> {
        let offered: BTreeSet<&str> = subgoals.iter().map(|s| s.id.as_str()).collect();
        let order = self
            .task
            .topological_order()
            .ok_or_else(|| CognitionError::Think("task precedence has a cycle".into()))?;
        Ok(order
            .into_iter()
            .map(|i| self.task.subgoals[i].id.clone())
            .filter(|id| offered.contains(id.as_str()))
            .collect())
    }

    fn observe_extract(&self, obs: &Observation, belief: &BeliefState) -> Result<ObservationExtract, CognitionError> {
        let Some(last) = obs.last() else {
            return Ok(ObservationExtract::default());
        };
        let asserted: AtomSet = last.atoms.difference(&belief.scene_belief).cloned().collect();
        let retracted: AtomSet = belief
            .scene_belief
            .iter()
            .filter(|b| last.atoms.iter().any(|a| a.conflicts_with(b)))
            .cloned()
            .collect();
        let kept: AtomSet = belief.scene_belief.difference(&retracted).cloned().collect();
        let view = overlay(&kept, &asserted.iter().cloned().collect::<Vec<_>>());
        let completed_hypotheses = belief
            .checklist
            .iter()
            .filter(|e| e.status != Status::Done)
            .filter(|e| self.task.subgoal(&e.subgoal_id).is_some_and(|sg| sg.holds_in(&view)))
            .map(|e| e.subgoal_id.clone())
            .collect();
        Ok(ObservationExtract { asserted, retracted, completed_hypotheses })
    }

    fn think(
        &self,
        belief: &BeliefState,
        _intention: &str,
        _obs: &Observation,
    ) -> Result<(Command, PredictedState), CognitionError> {
        let remaining = belief.remaining_subgoals();
        if remaining.is_empty() {
            return Err(CognitionError::Think("no remaining subgoals".into()));
        }
        for entry in remaining {
            let Some(sg) = self.task.subgoal(&entry.subgoal_id) else { continue };
            if sg.preconditions_hold_in(&belief.scene_belief) {
                let cmd = Command { text: sg.description.clone(), target_subgoal: Some(sg.id.clone()), replan: false };
                let pred = PredictedState {
                    expected_atoms: overlay(&belief.scene_belief, &sg.effects),
                    expected_subgoal: Some(sg.id.clone()),
                };
                return Ok((cmd, pred));
            }
        }
        let cmd = Command { text: "replan: no remaining subgoal is realizable".into(), target_subgoal: None, replan: true };
        Ok((cmd, PredictedState { expected_atoms: belief.scene_belief.clone(), expected_subgoal: None }))
    }

    fn ground(
        &self,
        cmd: &Command,
        _pred: &PredictedState,
        _obs: &Observation,
        belief: &BeliefState,
    ) -> Result<String, CognitionError> {
        let id = cmd
            .target_subgoal
            .as_deref()
            .filter(|_| !cmd.replan)
            .ok_or_else(|| CognitionError::Grounding("command has no target subgoal".into()))?;
        let sg = self.subgoal(id)?;
        let (action, _) = self.realize(sg, &belief.scene_belief)?;
        Ok(action.caption(&self.task.avatars))
    }

    fn reflect(&self, obs_next: &Observation, _cmd: &Command, pred: &PredictedState) -> Result<Verdict, CognitionError> {
        let Some(last) = obs_next.last() else {
            return Ok(Verdict {
                decision: Decision::Reject,
                analysis: "no frames observed".into(),
                mismatches: Vec::new(),
            });
        };
        let expected = &pred.expected_atoms;
        let first = &obs_next.frames[0];
        let known: BTreeSet<&str> = subjects(expected).union(&subjects(&first.atoms)).copied().collect();
        let expected_keys = values_by_key(expected);
        let first_keys = values_by_key(&first.atoms);
        let first_subjects = subjects(&first.atoms);
        let expected_subjects = subjects(expected);
        let mut mismatches = Vec::new();

        // Intermediate frames: only values seen before or predicted after are plausible.
        let last_pos = obs_next.frames.len() - 1;
        for frame in obs_next.frames.iter().take(last_pos).skip(1) {
            let visible = subjects(&frame.atoms);
            for a in &frame.atoms {
                if !known.contains(a.subject()) {
                    mismatches.push(Mismatch {
                        expected: None,
                        observed: Observed::Unexpected { atom: a.clone(), frame: frame.index },
                    });
                    continue;
                }
                let key = a.key();
                let seen_before = first_keys.get(&key).is_some_and(|v| v.contains(a));
                let predicted = expected_keys.get(&key).is_some_and(|v| v.contains(a));
                if seen_before || predicted {
                    continue;
                }
                if self.omission_tolerant && !first_subjects.contains(a.subject()) {
                    continue;
                }
                let exp = expected_keys.get(&key).and_then(|v| v.iter().next()).map(|e| (*e).clone());
                mismatches.push(Mismatch { expected: exp, observed: Observed::Conflicting { atom: a.clone(), frame: frame.index } });
            }
            if !self.omission_tolerant {
                for s in first_subjects.intersection(&expected_subjects) {
                    if !visible.contains(s) {
                        mismatches.push(Mismatch {
                            expected: None,
                            observed: Observed::Vanished { subject: s.to_string(), frame: frame.index },
                        });
                    }
                }
            }
        }

        // Final frame: every expected fact must be there.
        let final_start = mismatches.len();
        let visible = subjects(&last.atoms);
        for e in expected {
            if last.atoms.contains(e) {
                continue;
            }
            if !visible.contains(e.subject()) {
                if !self.omission_tolerant {
                    mismatches.push(Mismatch { expected: Some(e.clone()), observed: Observed::Missing });
                }
                continue;
            }
            let observed = match last.atoms.iter().find(|a| a.conflicts_with(e)) {
                Some(c) => Observed::Conflicting { atom: c.clone(), frame: last.index },
                None => Observed::Missing,
            };
            mismatches.push(Mismatch { expected: Some(e.clone()), observed });
        }
        for a in &last.atoms {
            if !known.contains(a.subject()) || !expected_keys.contains_key(&a.key()) {
                mismatches.push(Mismatch {
                    expected: None,
                    observed: Observed::Unexpected { atom: a.clone(), frame: last.index },
                });
            }
        }

        if mismatches.is_empty() {
            return Ok(Verdict::accept());
        }

        let mut notes: Vec<String> = Vec::new();
        // Intended objects changed in the prediction but not in the clip; stray
        // objects are still visible but changed in the clip though the
        // prediction kept them.
        let mut intended = BTreeSet::new();
        let mut stray = BTreeSet::new();
        for m in &mismatches[final_start..] {
            let Some(e) = &m.expected else { continue };
            let Some(object) = e.object() else { continue };
            if !first.atoms.contains(e) {
                intended.insert(object.to_string());
            } else if matches!(m.observed, Observed::Conflicting { .. }) {
                stray.insert(object.to_string());
            }
        }
        if let ([x], [y]) = (
            intended.iter().collect::<Vec<_>>().as_slice(),
            stray.difference(&intended).collect::<Vec<_>>().as_slice(),
        ) {
            notes.push(format!("acted on {y} not {x}"));
        }
        if last.atoms == first.atoms {
            notes.push("no change observed".into());
        }
        notes.extend(mismatches.iter().map(describe));
        notes.dedup();
        Ok(Verdict { decision: Decision::Reject, analysis: notes.join("; "), mismatches })
    }

    fn revise(&self, caption: &str, _obs_next: &Observation, analysis: &str) -> Result<String, CognitionError> {
        let Some(rest) = analysis.split("acted on ").nth(1) else {
            return Ok(caption.to_string());
        };
        let mut words = rest.split(|c: char| c.is_whitespace() || c == ';');
        let (Some(wrong), Some("not"), Some(right)) = (words.next(), words.next(), words.next()) else {
            return Ok(caption.to_string());
        };
        let tokens: Vec<&str> = caption.split_whitespace().collect();
        if wrong == right || !tokens.contains(&wrong) {
            return Ok(caption.to_string());
        }
        Ok(tokens.iter().map(|t| if *t == wrong { right } else { t }).collect::<Vec<_>>().join(" "))
    }
}
