use std::path::Path;

use serde::Deserialize;

use super::run::SuiteTask;
use crate::agent::Policy;
use crate::world::{load_task, CorruptionWeights, NoiseProfile, TaskSpec};

const DESK_TASKS: [(&str, &str); 10] = [
    ("kitchen_tea.yaml", include_str!("../../tasks/kitchen_tea.yaml")),
    ("kitchen_salad.yaml", include_str!("../../tasks/kitchen_salad.yaml")),
    ("livestream_unboxing.yaml", include_str!("../../tasks/livestream_unboxing.yaml")),
    ("livestream_cooking.yaml", include_str!("../../tasks/livestream_cooking.yaml")),
    ("workshop_shelf.yaml", include_str!("../../tasks/workshop_shelf.yaml")),
    ("workshop_lamp.yaml", include_str!("../../tasks/workshop_lamp.yaml")),
    ("garden_transplant.yaml", include_str!("../../tasks/garden_transplant.yaml")),
    ("garden_hive.yaml", include_str!("../../tasks/garden_hive.yaml")),
    ("office_print.yaml", include_str!("../../tasks/office_print.yaml")),
    ("office_handoff.yaml", include_str!("../../tasks/office_handoff.yaml")),
];

/// The built-in ten-task suite, two tasks per scenario.
pub fn desk_suite() -> Vec<TaskSpec> {
    DESK_TASKS
        .iter()
        .map(|(name, text)| {
            TaskSpec::from_str_validated(text, name).unwrap_or_else(|e| panic!("built-in task {name}: {e}"))
        })
        .collect()
}

/// A suite file: which tasks, policies, seeds and noise settings to sweep.
/// Task entries are built-in task ids or paths relative to the file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub suite_id: String,
    pub tasks: Vec<String>,
    #[serde(default)]
    pub policies: Vec<Policy>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub noise: Vec<NoiseSetting>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSetting {
    #[serde(default)]
    pub p_wrong: f64,
    #[serde(default)]
    pub p_omit: f64,
    #[serde(default = "default_transient_fraction")]
    pub transient_fraction: f64,
    #[serde(default)]
    pub corruption_weights: Option<CorruptionWeights>,
}

fn default_transient_fraction() -> f64 {
    NoiseProfile::default().transient_fraction
}

impl NoiseSetting {
    pub fn profile(&self) -> NoiseProfile {
        NoiseProfile {
            p_wrong: self.p_wrong,
            p_omit: self.p_omit,
            transient_fraction: self.transient_fraction,
            corruption_weights: self.corruption_weights.unwrap_or_default(),
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteSpecError {
    #[error("cannot read suite file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse suite file {path}: {message}")]
    Parse { path: String, message: String },
}

/// A loaded suite with its tasks resolved. Entries that fail to load keep
/// their error so the rest of the suite can still run.
#[derive(Debug, Clone)]
pub struct LoadedSuite {
    pub spec: SuiteSpec,
    pub tasks: Vec<SuiteTask>,
}

/// `desk` names the built-in suite; anything else is a suite file.
pub fn load_suite(name_or_path: &str) -> Result<LoadedSuite, SuiteSpecError> {
    if name_or_path == "desk" {
        let tasks: Vec<SuiteTask> = desk_suite().into_iter().map(SuiteTask::valid).collect();
        let spec = SuiteSpec {
            suite_id: "desk".into(),
            tasks: tasks.iter().map(|t| t.name.clone()).collect(),
            policies: Vec::new(),
            seeds: Vec::new(),
            noise: Vec::new(),
        };
        return Ok(LoadedSuite { spec, tasks });
    }
    let path = Path::new(name_or_path);
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| SuiteSpecError::Io { path: shown.clone(), source })?;
    let spec: SuiteSpec =
        serde_yaml::from_str(&text).map_err(|e| SuiteSpecError::Parse { path: shown.clone(), message: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let builtin = desk_suite();
    let tasks = spec
        .tasks
        .iter()
        .map(|entry| match builtin.iter().find(|t| &t.task_id == entry) {
            Some(t) => SuiteTask::valid(t.clone()),
            None => match load_task(base.join(entry)) {
                Ok(t) => SuiteTask::valid(t),
                Err(e) => SuiteTask { name: entry.clone(), spec: Err(e.to_string()) },
            },
        })
        .collect();
    Ok(LoadedSuite { spec, tasks })
}
