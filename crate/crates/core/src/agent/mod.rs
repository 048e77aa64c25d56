//! Episode executors: the closed observe/think/act/reflect loop and the three
//! baseline policies. Each returns a full [`EpisodeTrace`].

mod baselines;
mod otar;
pub mod trace;

pub use baselines::{run_open_loop, run_reactive};
pub use otar::{run_otar_episode, run_vagen};
pub use trace::{
    AgentConfig, ClipRecord, ConfigError, Counters, EpisodeSummary, EpisodeTrace, EventBody, PlannedStep, Policy,
    Stage, SubgoalOutcome, TraceError, TraceEvent, TraceHeader, TRACE_SCHEMA_VERSION,
};

use crate::belief::{BeliefState, Status};
use crate::cognition::{Cognition, SubgoalInfo};
use crate::world::{ClipSurrogate, Observation, TaskSpec, WorldInstance};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runner for `{expected}` called with policy `{got}`")]
    WrongPolicy { expected: Policy, got: Policy },
    #[error("world belongs to task `{world}`, not `{task}`")]
    TaskMismatch { world: String, task: String },
}

/// Runs the episode with the runner matching `cfg.policy`.
pub fn run_episode(
    task: &TaskSpec,
    world: &mut WorldInstance,
    cognition: &dyn Cognition,
    cfg: &AgentConfig,
) -> Result<EpisodeTrace, AgentError> {
    match cfg.policy {
        Policy::Orca => run_otar_episode(task, world, cognition, cfg),
        Policy::Vagen => run_vagen(task, world, cognition, cfg),
        Policy::OpenLoop => run_open_loop(task, world, cognition, cfg),
        Policy::Reactive => run_reactive(task, world, cognition, cfg),
    }
}

fn check(task: &TaskSpec, world: &WorldInstance, cfg: &AgentConfig, expected: Policy) -> Result<(), AgentError> {
    if cfg.policy != expected {
        return Err(AgentError::WrongPolicy { expected, got: cfg.policy });
    }
    if world.task().task_id != task.task_id {
        return Err(AgentError::TaskMismatch { world: world.task().task_id.clone(), task: task.task_id.clone() });
    }
    cfg.validate(task)?;
    Ok(())
}

fn subgoal_infos(task: &TaskSpec) -> Vec<SubgoalInfo> {
    task.subgoals.iter().map(|s| SubgoalInfo { id: s.id.clone(), description: s.description.clone() }).collect()
}

/// `(id, description)` pairs in the order the planner chose.
fn plan_entries(task: &TaskSpec, plan: &[String]) -> Vec<(String, String)> {
    plan.iter()
        .filter_map(|id| task.subgoal(id).map(|s| (s.id.clone(), s.description.clone())))
        .collect()
}

/// Collects events, scores subgoals against the true state and assembles
/// the final trace.
struct Recorder<'a> {
    task: &'a TaskSpec,
    header: TraceHeader,
    events: Vec<TraceEvent>,
    counters: Counters,
    clips: Vec<ClipRecord>,
    achieved: Vec<Option<u32>>,
    order: Vec<usize>,
    predecessors: Vec<Vec<usize>>,
    last_caption: Option<String>,
}

impl<'a> Recorder<'a> {
    fn new(task: &'a TaskSpec, world: &WorldInstance, cfg: &AgentConfig) -> Self {
        let header = TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            task_id: task.task_id.clone(),
            scenario: task.scenario,
            intention: task.intention.clone(),
            subgoals: subgoal_infos(task),
            policy: cfg.policy,
            seed: world.noise().seed,
            config: *cfg,
            noise: *world.noise(),
            invocation: None,
        };
        let order = task.topological_order().unwrap_or_else(|| (0..task.subgoals.len()).collect());
        let mut rec = Recorder {
            task,
            header,
            events: Vec::new(),
            counters: Counters::default(),
            clips: Vec::new(),
            achieved: vec![None; task.subgoals.len()],
            order,
            predecessors: task.predecessors(),
            last_caption: None,
        };
        rec.score(world, 0);
        rec
    }

    fn event(&mut self, turn: u32, attempt: u32, body: EventBody) {
        self.events.push(TraceEvent { turn, attempt, body });
    }

    /// Latches every subgoal whose predicate holds now and whose
    /// predecessors were already achieved.
    fn score(&mut self, world: &WorldInstance, turn: u32) {
        for &i in &self.order {
            if self.achieved[i].is_none()
                && self.predecessors[i].iter().all(|&p| self.achieved[p].is_some())
                && world.oracle_goal_check(&self.task.subgoals[i])
            {
                self.achieved[i] = Some(turn);
            }
        }
    }

    fn first_caption(&mut self, caption: &str) {
        if self.last_caption.as_deref() == Some(caption) {
            self.counters.repeated_actions += 1;
        }
        self.last_caption = Some(caption.to_string());
    }

    fn generated(&mut self, turn: u32, attempt: u32, clip: &ClipSurrogate, obs: &Observation) {
        self.counters.generation_calls += 1;
        self.event(turn, attempt, EventBody::Generate { applied: clip.applied_effect.clone(), frames: obs.frames.clone() });
    }

    fn accept_clip(&mut self, turn: u32, attempt: u32, caption: &str, clip: &ClipSurrogate, obs: &Observation) {
        self.clips.push(ClipRecord {
            turn,
            caption: caption.to_string(),
            applied: clip.applied_effect.clone(),
            final_frame: clip.final_frame().atoms.iter().cloned().collect(),
            sampled: obs.frames.clone(),
        });
        let clip_index = self.clips.len() - 1;
        self.event(turn, attempt, EventBody::Accept { clip_index });
    }

    fn finish(mut self, turns: u32, belief: Option<&BeliefState>, error: Option<String>) -> EpisodeTrace {
        self.counters.turns = turns;
        let outcomes = self
            .task
            .subgoals
            .iter()
            .zip(&self.achieved)
            .map(|(sg, a)| SubgoalOutcome { subgoal_id: sg.id.clone(), achieved: a.is_some(), achieved_turn: *a })
            .collect();
        let believed_done = belief
            .map(|b| {
                b.checklist.iter().filter(|e| e.status == Status::Done).map(|e| e.subgoal_id.clone()).collect()
            })
            .unwrap_or_default();
        EpisodeTrace {
            header: self.header,
            events: self.events,
            summary: EpisodeSummary { outcomes, counters: self.counters, clips: self.clips, believed_done, error },
        }
    }
}
