//! Remote model backend over an HTTP chat endpoint, plus offline replay.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::prompt::{render_prompt, PromptSet, Role};
use super::reply::{parse_reply, ParsedReply, ReplyError};
use super::{Cognition, CognitionError, Command, Mismatch, ObservationExtract, Observed, SubgoalInfo, Verdict};
use crate::belief::{BeliefState, Decision, PredictedState};
use crate::world::{Atom, AtomSet, Observation};

pub const ENV_BASE: &str = "ORCA_API_BASE";
pub const ENV_KEY: &str = "ORCA_API_KEY";
pub const ENV_MODEL: &str = "ORCA_MODEL";

/// Re-asks after a malformed reply, on top of the first request.
pub const MAX_REASKS: u32 = 2;

const GRAMMAR: &str = "AVATAR_<id> <verb> [<object> [-> <target>]]\n\
verbs: pick_up, place, open, close, pour, attach, detach, activate, deactivate, give, gesture, speak";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("cannot decode endpoint response: {0}")]
    Decode(String),
    #[error("replay: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout_secs: u64,
    pub max_tokens: u32,
    /// Minimum spacing between requests, shared by all callers.
    pub min_interval_ms: u64,
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        BackendConfig {
            base_url: base_url.into(),
            model: model.into(),
            auth_env: ENV_KEY.to_string(),
            timeout_secs: 60,
            max_tokens: 1024,
            min_interval_ms: 0,
        }
    }

    /// Reads base URL and model from the environment and checks the token is
    /// set. Fails listing every missing variable.
    pub fn from_env() -> Result<Self, BackendError> {
        let missing: Vec<&str> =
            [ENV_BASE, ENV_KEY, ENV_MODEL].into_iter().filter(|v| std::env::var(v).map_or(true, |s| s.is_empty())).collect();
        if !missing.is_empty() {
            return Err(BackendError::Config(format!("missing environment variables: {}", missing.join(", "))));
        }
        Ok(BackendConfig::new(std::env::var(ENV_BASE).unwrap_or_default(), std::env::var(ENV_MODEL).unwrap_or_default()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
}

pub trait Transport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    token: String,
}

impl HttpTransport {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let token = std::env::var(&config.auth_env)
            .map_err(|_| BackendError::Config(format!("environment variable {} is not set", config.auth_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpTransport { client, url: format!("{}/chat", config.base_url.trim_end_matches('/')), token })
    }
}

/// Pulls the assistant text out of the common response shapes.
fn reply_text(body: &serde_json::Value) -> Option<String> {
    let pointers = ["/message/content", "/choices/0/message/content", "/content", "/reply"];
    pointers.iter().find_map(|p| body.pointer(p).and_then(|v| v.as_str()).map(str::to_string))
}

impl Transport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let response = self.client.post(&self.url).bearer_auth(&self.token).json(request).send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| BackendError::Decode(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status { status: status.as_u16(), body });
        }
        let value: serde_json::Value = serde_json::from_str(&body).map_err(|e| BackendError::Decode(e.to_string()))?;
        reply_text(&value).ok_or_else(|| BackendError::Decode("no message content in response".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: ChatRequest,
    pub reply: String,
}

/// Answers requests from recorded exchanges, matching the full request.
pub struct ReplayTransport {
    exchanges: Vec<Exchange>,
}

impl ReplayTransport {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        ReplayTransport { exchanges }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| BackendError::Replay(e.to_string()))?;
        let exchanges = serde_json::from_str(&text).map_err(|e| BackendError::Replay(e.to_string()))?;
        Ok(ReplayTransport::new(exchanges))
    }
}

impl Transport for ReplayTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.exchanges
            .iter()
            .find(|x| &x.request == request)
            .map(|x| x.reply.clone())
            .ok_or_else(|| BackendError::Replay("no recorded reply for this request".into()))
    }
}

/// Forwards to another transport and keeps every exchange for later replay.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<Exchange>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().map(|l| l.clone()).unwrap_or_default()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.exchanges()).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let reply = self.inner.complete(request)?;
        if let Ok(mut log) = self.log.lock() {
            log.push(Exchange { request: request.clone(), reply: reply.clone() });
        }
        Ok(reply)
    }
}

struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn wait(&self) {
        if self.interval.is_zero() {
            return;
        }
        let delay = {
            let Ok(mut next) = self.next.lock() else { return };
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
    }
}

/// Rates a clip against its caption, 0 or 1.
pub trait AfsJudge: Send + Sync {
    fn judge(&self, caption: &str, frames: &[AtomSet]) -> Result<u8, CognitionError>;
}

pub fn render_atoms(atoms: &AtomSet) -> String {
    if atoms.is_empty() {
        return "(none)".to_string();
    }
    atoms.iter().map(Atom::to_string).collect::<Vec<_>>().join("\n")
}

pub fn render_frames(obs: &Observation) -> String {
    obs.frames
        .iter()
        .map(|f| {
            let facts: Vec<String> = f.atoms.iter().map(Atom::to_string).collect();
            format!("frame {}: {}", f.index, facts.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_checklist(belief: &BeliefState) -> String {
    let status = |s: crate::belief::Status| match s {
        crate::belief::Status::Pending => "pending",
        crate::belief::Status::InProgress => "in_progress",
        crate::belief::Status::Done => "done",
    };
    belief
        .checklist
        .iter()
        .map(|e| format!("- {} [{}] {}", e.subgoal_id, status(e.status), e.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_history(belief: &BeliefState) -> String {
    if belief.history.is_empty() {
        return "(none)".to_string();
    }
    belief
        .history
        .iter()
        .rev()
        .take(5)
        .rev()
        .map(|h| {
            let verdict = match h.verdict {
                Some(Decision::Accept) => "accepted",
                Some(Decision::Reject) => "rejected",
                None => "unchecked",
            };
            format!("turn {}: {} -> \"{}\" ({verdict})", h.turn, h.command, h.caption)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct RemoteCognition {
    config: BackendConfig,
    prompts: PromptSet,
    transport: Box<dyn Transport>,
    limiter: RateLimiter,
}

impl RemoteCognition {
    pub fn new(config: BackendConfig, prompts: PromptSet, transport: Box<dyn Transport>) -> Self {
        let limiter = RateLimiter { interval: Duration::from_millis(config.min_interval_ms), next: Mutex::new(None) };
        RemoteCognition { config, prompts, transport, limiter }
    }

    /// HTTP transport configured from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let config = BackendConfig::from_env()?;
        let transport = HttpTransport::new(&config)?;
        Ok(RemoteCognition::new(config, PromptSet::default(), Box::new(transport)))
    }

    pub fn render(&self, role: Role, bindings: &BTreeMap<&str, String>) -> Result<String, CognitionError> {
        Ok(render_prompt(self.prompts.get(role), bindings)?)
    }

    /// Sends the rendered prompt and validates the reply, re-asking with the
    /// error attached up to [`MAX_REASKS`] times.
    fn ask<T>(
        &self,
        role: Role,
        bindings: &BTreeMap<&str, String>,
        accept: impl Fn(ParsedReply) -> Result<T, ReplyError>,
    ) -> Result<T, CognitionError> {
        let mut messages = vec![ChatMessage::user(self.render(role, bindings)?)];
        let mut attempts = 0;
        loop {
            attempts += 1;
            self.limiter.wait();
            let request =
                ChatRequest { model: self.config.model.clone(), messages: messages.clone(), max_tokens: self.config.max_tokens };
            let text = self.transport.complete(&request)?;
            match parse_reply(role, &text).and_then(&accept) {
                Ok(v) => return Ok(v),
                Err(e) if attempts > MAX_REASKS => return Err(CognitionError::Reply { attempts, source: e }),
                Err(e) => {
                    messages.push(ChatMessage::assistant(text));
                    messages.push(ChatMessage::user(format!(
                        "Your reply could not be used: {e}. Answer again with exactly one JSON block in the requested format."
                    )));
                }
            }
        }
    }
}

fn wrong(role: Role) -> ReplyError {
    ReplyError::Schema { role, message: "unexpected reply kind".into() }
}

fn bindings<const N: usize>(pairs: [(&'static str, String); N]) -> BTreeMap<&'static str, String> {
    pairs.into_iter().collect()
}

impl Cognition for RemoteCognition {
    fn initialize(&self, o0: &Observation, intention: &str, subgoals: &[SubgoalInfo]) -> Result<Vec<String>, CognitionError> {
        let listed = subgoals.iter().map(|s| format!("- {}: {}", s.id, s.description)).collect::<Vec<_>>().join("\n");
        let b = bindings([("intention", intention.to_string()), ("scene", render_atoms(&o0.merged_atoms())), ("subgoals", listed)]);
        self.ask(Role::Initialize, &b, |r| match r {
            ParsedReply::Initialize(p) => {
                let mut seen = std::collections::BTreeSet::new();
                for id in &p.plan {
                    if !subgoals.iter().any(|s| &s.id == id) || !seen.insert(id) {
                        return Err(ReplyError::Schema { role: Role::Initialize, message: format!("bad plan entry `{id}`") });
                    }
                }
                if seen.len() != subgoals.len() {
                    return Err(ReplyError::Schema { role: Role::Initialize, message: "plan must list every sub-goal".into() });
                }
                Ok(p.plan)
            }
            _ => Err(wrong(Role::Initialize)),
        })
    }

    fn observe_extract(&self, obs: &Observation, belief: &BeliefState) -> Result<ObservationExtract, CognitionError> {
        let b = bindings([
            ("belief", render_atoms(&belief.scene_belief)),
            ("checklist", render_checklist(belief)),
            ("frames", render_frames(obs)),
        ]);
        self.ask(Role::Observe, &b, |r| match r {
            ParsedReply::Observe(o) => {
                let asserted: AtomSet = o.asserted.into_iter().collect();
                let retracted: AtomSet = o.retracted.into_iter().filter(|a| !asserted.contains(a)).collect();
                let completed_hypotheses =
                    o.completed.into_iter().filter(|id| belief.entry(id).is_some()).collect::<Vec<_>>();
                Ok(ObservationExtract { asserted, retracted, completed_hypotheses })
            }
            _ => Err(wrong(Role::Observe)),
        })
    }

    fn think(
        &self,
        belief: &BeliefState,
        intention: &str,
        obs: &Observation,
    ) -> Result<(Command, PredictedState), CognitionError> {
        let b = bindings([
            ("intention", intention.to_string()),
            ("belief", render_atoms(&belief.scene_belief)),
            ("checklist", render_checklist(belief)),
            ("history", render_history(belief)),
            ("observation", render_frames(obs)),
        ]);
        self.ask(Role::Think, &b, |r| match r {
            ParsedReply::Think(t) => {
                if !t.replan {
                    let target = t.target_subgoal.as_deref().unwrap_or_default();
                    if !belief.remaining_subgoals().iter().any(|e| e.subgoal_id == target) {
                        return Err(ReplyError::Schema {
                            role: Role::Think,
                            message: format!("`{target}` is not an unfinished sub-goal"),
                        });
                    }
                }
                let target = if t.replan { None } else { t.target_subgoal };
                let cmd = Command { text: t.command, target_subgoal: target.clone(), replan: t.replan };
                let pred = PredictedState { expected_atoms: t.predicted_state.into_iter().collect(), expected_subgoal: target };
                Ok((cmd, pred))
            }
            _ => Err(wrong(Role::Think)),
        })
    }

    fn ground(
        &self,
        cmd: &Command,
        pred: &PredictedState,
        obs: &Observation,
        belief: &BeliefState,
    ) -> Result<String, CognitionError> {
        let b = bindings([
            ("command", cmd.text.clone()),
            ("predicted", render_atoms(&pred.expected_atoms)),
            ("belief", render_atoms(&belief.scene_belief)),
            ("observation", render_frames(obs)),
            ("grammar", GRAMMAR.to_string()),
        ]);
        self.ask(Role::Ground, &b, |r| match r {
            ParsedReply::Ground(c) => Ok(c.caption.trim().to_string()),
            _ => Err(wrong(Role::Ground)),
        })
    }

    fn reflect(&self, obs_next: &Observation, cmd: &Command, pred: &PredictedState) -> Result<Verdict, CognitionError> {
        let b = bindings([
            ("command", cmd.text.clone()),
            ("expected", render_atoms(&pred.expected_atoms)),
            ("frames", render_frames(obs_next)),
        ]);
        self.ask(Role::Reflect, &b, |r| match r {
            ParsedReply::Reflect(v) => Ok(Verdict {
                decision: v.decision,
                analysis: v.analysis,
                mismatches: v
                    .mismatches
                    .into_iter()
                    .map(|m| Mismatch { expected: Some(m.expected), observed: Observed::Reported { text: m.observed } })
                    .collect(),
            }),
            _ => Err(wrong(Role::Reflect)),
        })
    }

    fn revise(&self, caption: &str, obs_next: &Observation, analysis: &str) -> Result<String, CognitionError> {
        let b = bindings([
            ("caption", caption.to_string()),
            ("analysis", analysis.to_string()),
            ("frames", render_frames(obs_next)),
            ("grammar", GRAMMAR.to_string()),
        ]);
        self.ask(Role::Revise, &b, |r| match r {
            ParsedReply::Revise(c) => Ok(c.caption.trim().to_string()),
            _ => Err(wrong(Role::Revise)),
        })
    }
}

impl AfsJudge for RemoteCognition {
    fn judge(&self, caption: &str, frames: &[AtomSet]) -> Result<u8, CognitionError> {
        let digest = frames
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{i}: {}", f.iter().map(Atom::to_string).collect::<Vec<_>>().join(", ")))
            .collect::<Vec<_>>()
            .join("\n");
        let b = bindings([("caption", caption.to_string()), ("digest", digest)]);
        self.ask(Role::AfsJudge, &b, |r| match r {
            ParsedReply::AfsJudge(a) => Ok(a.af),
            _ => Err(wrong(Role::AfsJudge)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        replies: Vec<&'static str>,
        calls: AtomicUsize,
    }

    impl Transport for Scripted {
        fn complete(&self, _request: &ChatRequest) -> Result<String, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.replies.get(i).copied().unwrap_or("nothing").to_string())
        }
    }

    fn remote(replies: Vec<&'static str>) -> RemoteCognition {
        RemoteCognition::new(
            BackendConfig::new("http://localhost:1", "m"),
            PromptSet::default(),
            Box::new(Scripted { replies, calls: AtomicUsize::new(0) }),
        )
    }

    #[test]
    fn malformed_replies_are_reasked_then_fail() {
        let r = remote(vec!["no json", "still none", r#"{"af":1,"reason":"ok"}"#]);
        assert_eq!(r.judge("AVATAR_A speak", &[]).unwrap(), 1);
        let r = remote(vec!["no json", "no", "no", r#"{"af":1}"#]);
        match r.judge("AVATAR_A speak", &[]) {
            Err(CognitionError::Reply { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replay_misses_are_errors() {
        let t = ReplayTransport::new(vec![]);
        let req = ChatRequest { model: "m".into(), messages: vec![ChatMessage::user("hi")], max_tokens: 1 };
        assert!(matches!(t.complete(&req), Err(BackendError::Replay(_))));
    }

    #[test]
    fn response_shapes() {
        let a = serde_json::json!({"message": {"role": "assistant", "content": "x"}});
        let b = serde_json::json!({"choices": [{"message": {"content": "y"}}]});
        assert_eq!(reply_text(&a).as_deref(), Some("x"));
        assert_eq!(reply_text(&b).as_deref(), Some("y"));
        assert_eq!(reply_text(&serde_json::json!({"other": 1})), None);
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter { interval: Duration::from_millis(20), next: Mutex::new(None) };
        let start = Instant::now();
        for _ in 0..3 {
            limiter.wait();
        }
        assert!(start.elapsed() >= Duration::from_millis(40));
    }
}
