//! Running every (noise, policy, task, seed) cell of a suite into a trace
//! directory.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, AgentConfig, EpisodeTrace, Policy};
use crate::cognition::{Cognition, ScriptedCognition};
use crate::world::{spawn_world, NoiseProfile, TaskSpec};

/// A task as listed in a suite; invalid entries keep their error so the
/// remaining cells can still run.
#[derive(Debug, Clone)]
pub struct SuiteTask {
    pub name: String,
    pub spec: Result<TaskSpec, String>,
}

impl SuiteTask {
    pub fn valid(spec: TaskSpec) -> Self {
        SuiteTask { name: spec.task_id.clone(), spec: Ok(spec) }
    }
}

pub type CognitionFactory = dyn Fn(&TaskSpec, &NoiseProfile) -> Result<Box<dyn Cognition>, String> + Sync;

pub struct SuiteRun<'a> {
    pub suite_id: String,
    pub tasks: Vec<SuiteTask>,
    pub policies: Vec<Policy>,
    /// Noise settings to sweep. Each cell's seed is written into the profile.
    pub noise_grid: Vec<NoiseProfile>,
    pub seeds: Vec<u64>,
    pub trace_dir: PathBuf,
    pub n_retry: u32,
    /// Defaults to `2M + 4` per task.
    pub max_turns: Option<u32>,
    pub jobs: usize,
    pub cognition: &'a CognitionFactory,
    /// Recorded in every trace header.
    pub invocation: Option<String>,
}

/// Scripted cognition, tolerant of omitted subjects whenever frames can drop
/// them.
pub fn scripted_factory(task: &TaskSpec, noise: &NoiseProfile) -> Result<Box<dyn Cognition>, String> {
    Ok(Box::new(ScriptedCognition::new(task).with_omission_tolerance(noise.p_omit > 0.0)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellError {
    pub policy: Policy,
    pub task: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuiteOutcome {
    pub written: usize,
    /// Cells whose trace file already existed.
    pub skipped: usize,
    pub errors: Vec<CellError>,
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("suite needs at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

pub const ERRORS_FILE: &str = "errors.jsonl";

/// Short directory label for a noise point, used when the grid has several.
pub fn noise_label(n: &NoiseProfile) -> String {
    format!("pw{:.2}-po{:.2}-tf{:.2}", n.p_wrong, n.p_omit, n.transient_fraction)
}

/// `root/{policy}/{task}/{seed}.jsonl`.
pub fn trace_path(root: &Path, policy: Policy, task_id: &str, seed: u64) -> PathBuf {
    root.join(policy.as_str()).join(task_id).join(format!("{seed}.jsonl"))
}

struct Cell<'t> {
    root: PathBuf,
    noise: NoiseProfile,
    label: Option<String>,
    policy: Policy,
    task: &'t SuiteTask,
    seed: u64,
}

enum CellResult {
    Written,
    Skipped,
    Failed(CellError),
}

/// Runs every missing cell. Existing trace files are left alone, so an
/// interrupted run can be resumed over the same directory.
pub fn run_suite(cfg: &SuiteRun<'_>) -> Result<SuiteOutcome, SuiteError> {
    if cfg.seeds.is_empty() {
        return Err(SuiteError::Empty("seed"));
    }
    if cfg.policies.is_empty() {
        return Err(SuiteError::Empty("policy"));
    }
    if cfg.noise_grid.is_empty() {
        return Err(SuiteError::Empty("noise setting"));
    }
    std::fs::create_dir_all(&cfg.trace_dir)?;
    let labelled = cfg.noise_grid.len() > 1;
    let mut cells = Vec::new();
    for noise in &cfg.noise_grid {
        let label = labelled.then(|| noise_label(noise));
        let root = match &label {
            Some(l) => cfg.trace_dir.join(l),
            None => cfg.trace_dir.clone(),
        };
        for &policy in &cfg.policies {
            for task in &cfg.tasks {
                for &seed in &cfg.seeds {
                    cells.push(Cell { root: root.clone(), noise: *noise, label: label.clone(), policy, task, seed });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| SuiteError::Pool(e.to_string()))?;
    let io_error = Mutex::new(None);
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| match run_cell(cfg, cell) {
                Ok(r) => r,
                Err(e) => {
                    let message = e.to_string();
                    io_error.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
                    CellResult::Failed(cell_error(cell, message))
                }
            })
            .collect()
    });
    if let Some(e) = io_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(SuiteError::Io(e));
    }

    let mut outcome = SuiteOutcome::default();
    for r in results {
        match r {
            CellResult::Written => outcome.written += 1,
            CellResult::Skipped => outcome.skipped += 1,
            CellResult::Failed(e) => outcome.errors.push(e),
        }
    }
    let errors_path = cfg.trace_dir.join(ERRORS_FILE);
    if outcome.errors.is_empty() {
        if errors_path.exists() {
            std::fs::remove_file(&errors_path)?;
        }
    } else {
        let lines: String = outcome
            .errors
            .iter()
            .map(|e| serde_json::to_string(e).unwrap_or_default() + "\n")
            .collect();
        std::fs::write(&errors_path, lines)?;
    }
    Ok(outcome)
}

fn cell_error(cell: &Cell<'_>, message: String) -> CellError {
    CellError {
        policy: cell.policy,
        task: cell.task.name.clone(),
        seed: cell.seed,
        noise: cell.label.clone(),
        message,
    }
}

fn run_cell(cfg: &SuiteRun<'_>, cell: &Cell<'_>) -> std::io::Result<CellResult> {
    let task = match &cell.task.spec {
        Ok(t) => t,
        Err(e) => return Ok(CellResult::Failed(cell_error(cell, e.clone()))),
    };
    let path = trace_path(&cell.root, cell.policy, &task.task_id, cell.seed);
    if path.exists() {
        return Ok(CellResult::Skipped);
    }
    match episode(cfg, cell, task) {
        Ok(trace) => {
            write_atomically(&path, &trace.to_jsonl())?;
            Ok(CellResult::Written)
        }
        Err(message) => Ok(CellResult::Failed(cell_error(cell, message))),
    }
}

fn episode(cfg: &SuiteRun<'_>, cell: &Cell<'_>, task: &TaskSpec) -> Result<EpisodeTrace, String> {
    let noise = NoiseProfile { seed: cell.seed, ..cell.noise };
    let mut world = spawn_world(task, noise).map_err(|e| e.to_string())?;
    let cognition = (cfg.cognition)(task, &noise)?;
    let mut agent = AgentConfig::for_task(cell.policy, task);
    agent.n_retry = cfg.n_retry;
    if let Some(m) = cfg.max_turns {
        agent.max_turns = m;
    }
    let mut trace = run_episode(task, &mut world, cognition.as_ref(), &agent).map_err(|e| e.to_string())?;
    trace.header.invocation = cfg.invocation.clone();
    Ok(trace)
}

/// Writes through a temporary sibling so a crash never leaves a truncated
/// trace that a resumed run would skip.
fn write_atomically(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)
}
