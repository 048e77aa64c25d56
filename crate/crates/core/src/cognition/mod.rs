//! The policy interface: strategic reasoning (think), grounding to a
//! caption, reflection on a generated clip, caption revision and
//! observation extraction. Two backends implement it.

pub mod prompt;
pub mod remote;
pub mod reply;
pub mod scripted;

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefState, PredictedState};
use crate::world::{Atom, AtomSet, Observation};

pub use prompt::{render_prompt, PromptError, PromptSet, PromptTemplate, Role};
pub use remote::{
    AfsJudge, BackendConfig, BackendError, ChatMessage, ChatRequest, Exchange, HttpTransport, RecordingTransport,
    RemoteCognition, ReplayTransport, Transport,
};
pub use reply::{parse_reply, AfsReply, ParsedReply, ReplyError};
pub use scripted::ScriptedCognition;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub text: String,
    pub target_subgoal: Option<String>,
    pub replan: bool,
}

/// How an expected fact showed up in the clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Observed {
    /// Subject visible, fact absent.
    Missing,
    /// A different value for the same slot was seen.
    Conflicting { atom: Atom, frame: usize },
    /// An entity nobody expected.
    Unexpected { atom: Atom, frame: usize },
    /// A subject vanished from an intermediate frame.
    Vanished { subject: String, frame: usize },
    /// Free-form status from a remote reflector.
    Reported { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub expected: Option<Atom>,
    pub observed: Observed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: crate::belief::Decision,
    pub analysis: String,
    pub mismatches: Vec<Mismatch>,
}

impl Verdict {
    pub fn accept() -> Self {
        Verdict { decision: crate::belief::Decision::Accept, analysis: String::new(), mismatches: Vec::new() }
    }

    pub fn is_accept(&self) -> bool {
        self.decision == crate::belief::Decision::Accept
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationExtract {
    pub asserted: AtomSet,
    pub retracted: AtomSet,
    pub completed_hypotheses: Vec<String>,
}

impl ObservationExtract {
    pub fn is_empty(&self) -> bool {
        self.asserted.is_empty() && self.retracted.is_empty() && self.completed_hypotheses.is_empty()
    }
}

/// A subgoal as offered to the planner at initialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalInfo {
    pub id: String,
    pub description: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CognitionError {
    #[error("grounding failed: {0}")]
    Grounding(String),
    #[error("think precondition violated: {0}")]
    Think(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("reply rejected after {attempts} attempts: {source}")]
    Reply { attempts: u32, source: ReplyError },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Both backends implement this; the agent loop only sees the trait.
pub trait Cognition: Send + Sync {
    /// Orders the task's subgoals into a plan. Returns ids.
    fn initialize(&self, o0: &Observation, intention: &str, subgoals: &[SubgoalInfo]) -> Result<Vec<String>, CognitionError>;

    fn observe_extract(&self, obs: &Observation, belief: &BeliefState) -> Result<ObservationExtract, CognitionError>;

    fn think(
        &self,
        belief: &BeliefState,
        intention: &str,
        obs: &Observation,
    ) -> Result<(Command, PredictedState), CognitionError>;

    fn ground(
        &self,
        cmd: &Command,
        pred: &PredictedState,
        obs: &Observation,
        belief: &BeliefState,
    ) -> Result<String, CognitionError>;

    fn reflect(&self, obs_next: &Observation, cmd: &Command, pred: &PredictedState) -> Result<Verdict, CognitionError>;

    fn revise(&self, caption: &str, obs_next: &Observation, analysis: &str) -> Result<String, CognitionError>;
}
