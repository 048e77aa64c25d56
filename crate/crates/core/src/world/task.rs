//! Task files: scene inventory, intention, subgoals and their precedence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atom::{contradictions, Atom, AtomSet};

pub const MIN_SUBGOALS: usize = 3;
pub const MAX_SUBGOALS: usize = 8;
pub const MIN_REFERENCED_OBJECTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Kitchen,
    Livestream,
    Workshop,
    Garden,
    Office,
}

impl Scenario {
    pub const ALL: [Scenario; 5] =
        [Scenario::Kitchen, Scenario::Livestream, Scenario::Workshop, Scenario::Garden, Scenario::Office];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Kitchen => "kitchen",
            Scenario::Livestream => "livestream",
            Scenario::Workshop => "workshop",
            Scenario::Garden => "garden",
            Scenario::Office => "office",
        }
    }

    /// Column heading used in rendered tables.
    pub fn short(self) -> &'static str {
        match self {
            Scenario::Kitchen => "Kit.",
            Scenario::Livestream => "Live.",
            Scenario::Workshop => "Work.",
            Scenario::Garden => "Gard.",
            Scenario::Office => "Off.",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DependencyMode {
    Chain,
    PartialOrder,
}

/// Property values may be written as bare YAML scalars (`open: true`).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl From<Scalar> for String {
    fn from(s: Scalar) -> Self {
        match s {
            Scalar::Bool(b) => b.to_string(),
            Scalar::Int(i) => i.to_string(),
            Scalar::Float(f) => f.to_string(),
            Scalar::Str(s) => s,
        }
    }
}

fn scalar_map<'de, D>(de: D) -> Result<BTreeMap<String, String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = BTreeMap::<String, Scalar>::deserialize(de)?;
    Ok(raw.into_iter().map(|(k, v)| (k, v.into())).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub name: String,
    /// Symbolic location label, another object's id, or an avatar id when the
    /// object starts in that avatar's hand.
    pub location: String,
    #[serde(default, deserialize_with = "scalar_map")]
    pub properties: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoalSpec {
    pub id: String,
    pub description: String,
    /// Avatar expected to perform the subgoal, when it cannot be inferred
    /// from the effects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(default)]
    pub preconditions: Vec<Atom>,
    #[serde(rename = "predicate")]
    pub completion_predicate: Vec<Atom>,
    pub effects: Vec<Atom>,
}

impl SubGoalSpec {
    pub fn holds_in(&self, atoms: &AtomSet) -> bool {
        self.completion_predicate.iter().all(|a| atoms.contains(a))
    }

    pub fn preconditions_hold_in(&self, atoms: &AtomSet) -> bool {
        self.preconditions.iter().all(|a| atoms.contains(a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub scenario: Scenario,
    pub avatars: Vec<String>,
    pub intention: String,
    pub objects: Vec<ObjectSpec>,
    pub subgoals: Vec<SubGoalSpec>,
    #[serde(default)]
    pub dependency_mode: Option<DependencyMode>,
    /// Explicit `[before, after]` pairs of subgoal ids.
    #[serde(default)]
    pub dependencies: Vec<[String; 2]>,
    #[serde(default)]
    pub reference_actions: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("cannot read task file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse task file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("task `{task_id}` is invalid:\n  - {}", violations.join("\n  - "))]
    Invalid { task_id: String, violations: Vec<String> },
}

impl TaskSpec {
    pub fn mode(&self) -> DependencyMode {
        self.dependency_mode.unwrap_or(if self.dependencies.is_empty() {
            DependencyMode::Chain
        } else {
            DependencyMode::PartialOrder
        })
    }

    pub fn object(&self, id: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn subgoal(&self, id: &str) -> Option<&SubGoalSpec> {
        self.subgoals.iter().find(|s| s.id == id)
    }

    pub fn is_avatar(&self, id: &str) -> bool {
        self.avatars.iter().any(|a| a == id)
    }

    /// Precedence as index pairs `(before, after)`. Chain mode adds every
    /// consecutive pair. Unknown ids are skipped; `validate` reports them.
    pub fn precedence(&self) -> Vec<(usize, usize)> {
        let index = |id: &str| self.subgoals.iter().position(|s| s.id == id);
        let mut pairs: BTreeSet<(usize, usize)> = self
            .dependencies
            .iter()
            .filter_map(|[b, a]| Some((index(b)?, index(a)?)))
            .collect();
        if self.mode() == DependencyMode::Chain {
            pairs.extend((1..self.subgoals.len()).map(|i| (i - 1, i)));
        }
        pairs.into_iter().collect()
    }

    /// Direct predecessors of each subgoal, by index.
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.subgoals.len()];
        for (b, a) in self.precedence() {
            preds[a].push(b);
        }
        preds
    }

    /// Stable topological order of subgoal indices: among ready subgoals the
    /// one declared first goes first. `None` if the relation has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.subgoals.len();
        let preds = self.predecessors();
        let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let next = (0..n).find(|&i| !placed[i] && indegree[i] == 0)?;
            placed[next] = true;
            order.push(next);
            for (i, p) in preds.iter().enumerate() {
                indegree[i] -= p.iter().filter(|&&b| b == next).count();
            }
        }
        Some(order)
    }

    /// Atoms describing the initial scene.
    pub fn initial_atoms(&self) -> AtomSet {
        let mut atoms = AtomSet::new();
        for o in &self.objects {
            if self.is_avatar(&o.location) {
                atoms.insert(Atom::holds(&o.location, &o.id));
            } else {
                atoms.insert(Atom::at(&o.id, &o.location));
            }
            for (k, v) in &o.properties {
                atoms.insert(Atom::prop(&o.id, k, v));
            }
        }
        atoms
    }

    /// Location labels mentioned by the inventory (excluding object ids and
    /// avatars).
    pub fn location_labels(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut consider = |loc: &str| {
            if self.object(loc).is_none() && !self.is_avatar(loc) {
                out.insert(loc.to_string());
            }
        };
        for o in &self.objects {
            consider(&o.location);
        }
        for sg in &self.subgoals {
            for a in sg.preconditions.iter().chain(&sg.completion_predicate).chain(&sg.effects) {
                if let Atom::At { location, .. } = a {
                    consider(location);
                }
            }
        }
        out
    }

    /// Checks every invariant and returns all violations at once.
    pub fn validate(&self) -> Result<(), TaskError> {
        let mut v = Vec::new();
        let n = self.subgoals.len();
        if !(MIN_SUBGOALS..=MAX_SUBGOALS).contains(&n) {
            v.push(format!("subgoal count {n} outside [{MIN_SUBGOALS}, {MAX_SUBGOALS}]"));
        }
        if self.avatars.is_empty() || self.avatars.len() > 2 {
            v.push(format!("expected 1 or 2 avatars, found {}", self.avatars.len()));
        }
        if self.task_id.trim().is_empty() {
            v.push("task_id is empty".to_string());
        }

        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.id.as_str()) {
                v.push(format!("duplicate object id `{}`", o.id));
            }
            if o.location.trim().is_empty() {
                v.push(format!("object `{}` has an empty location", o.id));
            }
            if self.is_avatar(&o.id) {
                v.push(format!("object id `{}` collides with an avatar id", o.id));
            }
        }

        let mut sg_ids = BTreeSet::new();
        let mut referenced = BTreeSet::new();
        for sg in &self.subgoals {
            if !sg_ids.insert(sg.id.as_str()) {
                v.push(format!("duplicate subgoal id `{}`", sg.id));
            }
            if let Some(actor) = &sg.actor {
                if !self.is_avatar(actor) {
                    v.push(format!("subgoal `{}` names undeclared actor `{actor}`", sg.id));
                }
            }
            if sg.completion_predicate.is_empty() {
                v.push(format!("subgoal `{}` has an empty predicate", sg.id));
            }
            let all = sg.preconditions.iter().chain(&sg.completion_predicate).chain(&sg.effects);
            for atom in all {
                if let Atom::Holds { avatar, .. } = atom {
                    if !self.is_avatar(avatar) {
                        v.push(format!("subgoal `{}` references undeclared avatar `{avatar}`", sg.id));
                    }
                }
                if let Some(obj) = atom.object() {
                    if self.object(obj).is_none() {
                        v.push(format!("subgoal `{}` references undeclared object `{obj}`", sg.id));
                    } else {
                        referenced.insert(obj.to_string());
                    }
                }
                if let Atom::At { location, .. } = atom {
                    if self.object(location).is_some() {
                        referenced.insert(location.clone());
                    }
                }
                if let Atom::Done { event } = atom {
                    referenced.extend(event.split(':').filter(|p| self.object(p).is_some()).map(str::to_string));
                }
            }
            for (a, b) in contradictions(&sg.effects) {
                v.push(format!("subgoal `{}` has inconsistent effects {a} and {b}", sg.id));
            }
        }
        if referenced.len() < MIN_REFERENCED_OBJECTS {
            v.push(format!(
                "subgoals reference {} distinct objects, need at least {MIN_REFERENCED_OBJECTS}",
                referenced.len()
            ));
        }

        for [b, a] in &self.dependencies {
            for id in [b, a] {
                if !sg_ids.contains(id.as_str()) {
                    v.push(format!("dependency references unknown subgoal `{id}`"));
                }
            }
            if a == b {
                v.push(format!("subgoal `{a}` depends on itself"));
            }
        }
        if self.topological_order().is_none() {
            v.push("precedence relation has a cycle".to_string());
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(TaskError::Invalid { task_id: self.task_id.clone(), violations: v })
        }
    }

    /// Parses YAML (a JSON document is also valid YAML) and validates.
    pub fn from_str_validated(text: &str, origin: &str) -> Result<TaskSpec, TaskError> {
        let task: TaskSpec = serde_yaml::from_str(text)
            .map_err(|e| TaskError::Parse { path: origin.to_string(), message: e.to_string() })?;
        task.validate()?;
        Ok(task)
    }
}

/// Reads and validates a task file.
pub fn load_task(path: impl AsRef<Path>) -> Result<TaskSpec, TaskError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io { path: shown.clone(), source })?;
    TaskSpec::from_str_validated(&text, &shown)
}
