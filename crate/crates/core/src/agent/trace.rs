//! Episode traces: a header, one line per stage event and a closing summary,
//! stored as line-delimited JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::belief::BeliefSnapshot;
use crate::cognition::{Command, ObservationExtract, SubgoalInfo, Verdict};
use crate::world::{AppliedEffect, Atom, FrameFacts, NoiseProfile, Scenario, TaskSpec};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Orca,
    OpenLoop,
    Reactive,
    Vagen,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Orca, Policy::OpenLoop, Policy::Reactive, Policy::Vagen];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Orca => "orca",
            Policy::OpenLoop => "open_loop",
            Policy::Reactive => "reactive",
            Policy::Vagen => "vagen",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Policy::ALL.into_iter().find(|p| p.as_str() == norm).ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub policy: Policy,
    pub n_retry: u32,
    pub max_turns: u32,
    pub frames_per_observation: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("max_turns {max_turns} is below the subgoal count {subgoals}")]
    TooFewTurns { max_turns: u32, subgoals: usize },
    #[error("frames_per_observation must be between 2 and {max}, got {got}")]
    Frames { got: usize, max: usize },
}

impl AgentConfig {
    /// Defaults: two retries, `2M + 4` turns, five frames.
    pub fn for_task(policy: Policy, task: &TaskSpec) -> Self {
        AgentConfig {
            policy,
            n_retry: 2,
            max_turns: 2 * task.subgoals.len() as u32 + 4,
            frames_per_observation: crate::world::DEFAULT_SAMPLED_FRAMES,
        }
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<(), ConfigError> {
        if (self.max_turns as usize) < task.subgoals.len() {
            return Err(ConfigError::TooFewTurns { max_turns: self.max_turns, subgoals: task.subgoals.len() });
        }
        let max = crate::world::FRAMES_PER_CLIP;
        if self.frames_per_observation < 2 || self.frames_per_observation > max {
            return Err(ConfigError::Frames { got: self.frames_per_observation, max });
        }
        Ok(())
    }
}

/// Stage kinds, in their order within a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Plan,
    Observe,
    Think,
    Act,
    Generate,
    Reflect,
    Retry,
    Accept,
    Replan,
    Halt,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub subgoal_id: String,
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Plan {
        steps: Vec<PlannedStep>,
    },
    Observe {
        extract: ObservationExtract,
        marked_done: Vec<String>,
    },
    Think {
        command: Command,
        predicted: Vec<Atom>,
    },
    Act {
        caption: String,
        /// Belief just before the first attempt of the turn.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        belief: Option<BeliefSnapshot>,
    },
    Generate {
        applied: AppliedEffect,
        frames: Vec<FrameFacts>,
    },
    Reflect {
        verdict: Verdict,
    },
    Retry {
        revised_caption: String,
    },
    Accept {
        clip_index: usize,
    },
    Replan {
        reason: String,
        demoted: Vec<String>,
        belief: BeliefSnapshot,
    },
    Halt {
        reason: String,
    },
    Error {
        message: String,
    },
}

impl EventBody {
    pub fn stage(&self) -> Stage {
        match self {
            EventBody::Plan { .. } => Stage::Plan,
            EventBody::Observe { .. } => Stage::Observe,
            EventBody::Think { .. } => Stage::Think,
            EventBody::Act { .. } => Stage::Act,
            EventBody::Generate { .. } => Stage::Generate,
            EventBody::Reflect { .. } => Stage::Reflect,
            EventBody::Retry { .. } => Stage::Retry,
            EventBody::Accept { .. } => Stage::Accept,
            EventBody::Replan { .. } => Stage::Replan,
            EventBody::Halt { .. } => Stage::Halt,
            EventBody::Error { .. } => Stage::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub turn: u32,
    /// Generation attempt within the turn, 0 for the first.
    pub attempt: u32,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub task_id: String,
    pub scenario: Scenario,
    pub intention: String,
    pub subgoals: Vec<SubgoalInfo>,
    pub policy: Policy,
    pub seed: u64,
    pub config: AgentConfig,
    pub noise: NoiseProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invocation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalOutcome {
    pub subgoal_id: String,
    pub achieved: bool,
    pub achieved_turn: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub turns: u32,
    pub generation_calls: u32,
    pub retries: u32,
    pub replans: u32,
    pub rejections: u32,
    /// Turns whose first caption repeats the previous turn's first caption.
    pub repeated_actions: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub turn: u32,
    pub caption: String,
    pub applied: AppliedEffect,
    /// Facts of the clip's true last frame.
    pub final_frame: Vec<Atom>,
    /// The frames the agent was shown.
    pub sampled: Vec<FrameFacts>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub outcomes: Vec<SubgoalOutcome>,
    pub counters: Counters,
    /// Accepted clips in turn order.
    pub clips: Vec<ClipRecord>,
    /// Subgoals the agent itself believed done at the end.
    pub believed_done: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeSummary {
    pub fn completed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.achieved).count()
    }

    pub fn total(&self) -> usize {
        self.outcomes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub summary: EpisodeSummary,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Event(TraceEvent),
    Summary(EpisodeSummary),
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no {0} line")]
    Missing(&'static str),
    #[error("line {0}: unexpected line after the summary")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EpisodeTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &TraceLine| {
            // Every field is a plain struct, enum, string or number, so
            // serialization cannot fail.
            out.push_str(&serde_json::to_string(line).unwrap_or_default());
            out.push('\n');
        };
        push(&TraceLine::Header(self.header.clone()));
        for e in &self.events {
            push(&TraceLine::Event(e.clone()));
        }
        push(&TraceLine::Summary(self.summary.clone()));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut summary = None;
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(TraceError::Trailing(i + 1));
            }
            let line: TraceLine =
                serde_json::from_str(raw).map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
            match line {
                TraceLine::Header(h) if header.is_none() => header = Some(h),
                TraceLine::Header(_) => {
                    return Err(TraceError::Parse { line: i + 1, message: "second header".into() });
                }
                TraceLine::Event(_) | TraceLine::Summary(_) if header.is_none() => {
                    return Err(TraceError::Missing("header"));
                }
                TraceLine::Event(e) => events.push(e),
                TraceLine::Summary(s) => summary = Some(s),
            }
        }
        Ok(EpisodeTrace {
            header: header.ok_or(TraceError::Missing("header"))?,
            events,
            summary: summary.ok_or(TraceError::Missing("summary"))?,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, TraceError> {
        EpisodeTrace::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        if let Some(dir) = path.as_ref().parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_jsonl())
    }

    /// Generation calls made in each turn that made any.
    pub fn generations_per_turn(&self) -> BTreeMap<u32, u32> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            if e.body.stage() == Stage::Generate {
                *out.entry(e.turn).or_insert(0) += 1;
            }
        }
        out
    }

    /// True when events never go backwards in (turn, attempt, stage).
    pub fn is_ordered(&self) -> bool {
        self.events
            .windows(2)
            .all(|w| (w[0].turn, w[0].attempt, w[0].body.stage()) <= (w[1].turn, w[1].attempt, w[1].body.stage()))
    }

    pub fn tsr(&self) -> f64 {
        let total = self.summary.total();
        if total == 0 {
            return 1.0;
        }
        self.summary.completed() as f64 / total as f64
    }
}
