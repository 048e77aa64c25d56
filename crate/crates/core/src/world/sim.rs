//! Seeded, partially observable scene simulator. Each step produces a clip
//! surrogate: a short sequence of per-frame fact snapshots.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::{effects, location, present, WorldAction};
use super::atom::{overlay, Atom, AtomSet};
use super::task::{SubGoalSpec, TaskError, TaskSpec};

/// Frames per generated clip.
pub const FRAMES_PER_CLIP: usize = 20;
/// Frames an observation samples from a clip by default.
pub const DEFAULT_SAMPLED_FRAMES: usize = 5;
/// Index of the first frame showing the post-action state.
const SWITCH_FRAME: usize = FRAMES_PER_CLIP / 2;
const MAX_TRANSIENT_LEN: usize = 3;
const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    NoOp,
    WrongObject,
    Disappear,
    Hallucinate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] =
        [CorruptionKind::NoOp, CorruptionKind::WrongObject, CorruptionKind::Disappear, CorruptionKind::Hallucinate];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionWeights {
    pub no_op: f64,
    pub wrong_object: f64,
    pub disappear: f64,
    pub hallucinate: f64,
}

impl Default for CorruptionWeights {
    fn default() -> Self {
        CorruptionWeights { no_op: 0.4, wrong_object: 0.3, disappear: 0.2, hallucinate: 0.1 }
    }
}

impl CorruptionWeights {
    pub fn only(kind: CorruptionKind) -> Self {
        let mut w = CorruptionWeights { no_op: 0.0, wrong_object: 0.0, disappear: 0.0, hallucinate: 0.0 };
        *w.get_mut(kind) = 1.0;
        w
    }

    pub fn get(&self, kind: CorruptionKind) -> f64 {
        match kind {
            CorruptionKind::NoOp => self.no_op,
            CorruptionKind::WrongObject => self.wrong_object,
            CorruptionKind::Disappear => self.disappear,
            CorruptionKind::Hallucinate => self.hallucinate,
        }
    }

    fn get_mut(&mut self, kind: CorruptionKind) -> &mut f64 {
        match kind {
            CorruptionKind::NoOp => &mut self.no_op,
            CorruptionKind::WrongObject => &mut self.wrong_object,
            CorruptionKind::Disappear => &mut self.disappear,
            CorruptionKind::Hallucinate => &mut self.hallucinate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub p_wrong: f64,
    pub corruption_weights: CorruptionWeights,
    pub transient_fraction: f64,
    pub p_omit: f64,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            p_wrong: 0.0,
            corruption_weights: CorruptionWeights::default(),
            transient_fraction: 0.25,
            p_omit: 0.0,
            seed: 0,
        }
    }
}

impl NoiseProfile {
    pub fn noiseless(seed: u64) -> Self {
        NoiseProfile { transient_fraction: 0.0, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let mut bad = Vec::new();
        for (name, p) in [
            ("p_wrong", self.p_wrong),
            ("transient_fraction", self.transient_fraction),
            ("p_omit", self.p_omit),
        ] {
            if !(0.0..=1.0).contains(&p) {
                bad.push(format!("{name}={p} outside [0,1]"));
            }
        }
        let w = &self.corruption_weights;
        for kind in CorruptionKind::ALL {
            if !(0.0..=1.0).contains(&w.get(kind)) {
                bad.push(format!("weight {kind:?}={} outside [0,1]", w.get(kind)));
            }
        }
        let sum: f64 = CorruptionKind::ALL.iter().map(|&k| w.get(k)).sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            bad.push(format!("corruption weights sum to {sum}, expected 1"));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(WorldError::InvalidNoise(bad))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("invalid noise profile: {}", .0.join("; "))]
    InvalidNoise(Vec<String>),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("world is terminated")]
    Terminated,
    #[error("cannot sample {k} frames from a clip of {frames}")]
    FrameCount { k: usize, frames: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentState {
    pub atoms: AtomSet,
    pub turn: u32,
    /// Entities that exist only because the generator invented them.
    pub hallucinated: BTreeSet<String>,
}

impl LatentState {
    /// Invariant violations, empty when the state is well-formed.
    pub fn violations(&self, task: &TaskSpec) -> Vec<String> {
        let mut out = Vec::new();
        let mut placed = BTreeSet::new();
        for a in &self.atoms {
            if let Atom::Holds { object, .. } | Atom::At { object, .. } = a {
                if !placed.insert(object.clone()) {
                    out.push(format!("`{object}` has more than one placement"));
                }
            }
            if let Some(o) = a.object() {
                if task.object(o).is_none() && !self.hallucinated.contains(o) {
                    out.push(format!("`{o}` is neither declared nor flagged"));
                }
            }
        }
        out
    }
}

/// What a generation actually did, as opposed to what the caption asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Intended,
    NoOp,
    WrongObject,
    Disappear,
    Hallucinate,
}

impl From<CorruptionKind> for EffectKind {
    fn from(k: CorruptionKind) -> Self {
        match k {
            CorruptionKind::NoOp => EffectKind::NoOp,
            CorruptionKind::WrongObject => EffectKind::WrongObject,
            CorruptionKind::Disappear => EffectKind::Disappear,
            CorruptionKind::Hallucinate => EffectKind::Hallucinate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedEffect {
    pub kind: EffectKind,
    /// Entity the corruption touched (substitute object, vanished object or
    /// invented entity).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affected: Option<String>,
    /// Corruption visible only inside `window`; the final state is the
    /// intended outcome.
    #[serde(default)]
    pub transient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(usize, usize)>,
    /// Set when the caption's own preconditions failed (not generator noise).
    #[serde(default)]
    pub precondition_failed: bool,
}

impl AppliedEffect {
    pub fn is_intended(&self) -> bool {
        self.kind == EffectKind::Intended
    }

    /// True when the clip contains a disappearance or an invented entity.
    pub fn is_permanence_violation(&self) -> bool {
        matches!(self.kind, EffectKind::Disappear | EffectKind::Hallucinate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFacts {
    pub index: usize,
    pub atoms: AtomSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSurrogate {
    pub frames: Vec<FrameFacts>,
    pub applied_effect: AppliedEffect,
    pub intended_action: WorldAction,
}

impl ClipSurrogate {
    pub fn final_frame(&self) -> &FrameFacts {
        self.frames.last().expect("clips have at least one frame")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub frames: Vec<FrameFacts>,
    pub turn: u32,
}

impl Observation {
    pub fn last(&self) -> Option<&FrameFacts> {
        self.frames.last()
    }

    pub fn final_atoms(&self) -> AtomSet {
        self.last().map(|f| f.atoms.clone()).unwrap_or_default()
    }

    /// Frames merged in order; a later frame overrides earlier atoms with the
    /// same key.
    pub fn merged_atoms(&self) -> AtomSet {
        let mut out = AtomSet::new();
        for f in &self.frames {
            let facts: Vec<Atom> = f.atoms.iter().cloned().collect();
            out = overlay(&out, &facts);
        }
        out
    }
}

/// Frame indices `round(i*(F-1)/(k-1))`, rounding half up.
pub fn sample_indices(frames: usize, k: usize) -> Result<Vec<usize>, WorldError> {
    if k < 2 || k > frames {
        return Err(WorldError::FrameCount { k, frames });
    }
    let span = frames - 1;
    let denom = k - 1;
    Ok((0..k).map(|i| (2 * i * span + denom) / (2 * denom)).collect())
}

/// Forces the outcome of the next step, bypassing the noise draws.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Injection {
    /// `None` forces the intended outcome.
    pub corruption: Option<CorruptionKind>,
    /// Inclusive frame range for a transient corruption.
    pub transient_window: Option<(usize, usize)>,
    /// Substitute object for `WrongObject`.
    pub substitute: Option<String>,
}

pub struct WorldInstance {
    task: TaskSpec,
    noise: NoiseProfile,
    rng: ChaCha8Rng,
    state: LatentState,
    terminated: bool,
    injected: VecDeque<Injection>,
    phantoms: u32,
}

impl WorldInstance {
    pub fn spawn(task: &TaskSpec, noise: NoiseProfile) -> Result<Self, WorldError> {
        task.validate()?;
        noise.validate()?;
        Ok(WorldInstance {
            task: task.clone(),
            noise,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            state: LatentState { atoms: task.initial_atoms(), turn: 0, hallucinated: BTreeSet::new() },
            terminated: false,
            injected: VecDeque::new(),
            phantoms: 0,
        })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn noise(&self) -> &NoiseProfile {
        &self.noise
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    /// Copy of the latent state, for discarding a generation later.
    pub fn checkpoint(&self) -> LatentState {
        self.state.clone()
    }

    /// Returns the scene to a checkpoint. The generator's random stream keeps
    /// advancing, so a regenerated clip is a fresh draw from the same start.
    pub fn rewind(&mut self, checkpoint: &LatentState) {
        self.state = checkpoint.clone();
    }

    pub fn terminate(&mut self) {
        self.terminated = true;
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn inject(&mut self, injection: Injection) {
        self.injected.push_back(injection);
    }

    /// The initial still image: every fact, one frame, nothing omitted.
    pub fn initial_observation(&self) -> Observation {
        Observation { frames: vec![FrameFacts { index: 0, atoms: self.state.atoms.clone() }], turn: self.state.turn }
    }

    /// Whether `subgoal`'s predicate holds in the true state. For scoring only.
    pub fn oracle_goal_check(&self, subgoal: &SubGoalSpec) -> bool {
        subgoal.holds_in(&self.state.atoms)
    }

    pub fn step(&mut self, action: &WorldAction) -> Result<ClipSurrogate, WorldError> {
        if self.terminated {
            return Err(WorldError::Terminated);
        }
        let pre = self.state.atoms.clone();
        let forced = self.injected.pop_front();

        let corruption = match &forced {
            Some(inj) => inj.corruption,
            None => (self.rng.random::<f64>() < self.noise.p_wrong).then(|| self.draw_kind()),
        };

        let intended_effects = effects(action, &pre, &self.task.avatars);
        let intended_post = match &intended_effects {
            Some(e) => overlay(&pre, e),
            None => pre.clone(),
        };

        let (frames, post, applied) = match corruption {
            None => {
                let applied = AppliedEffect {
                    kind: if intended_effects.is_some() { EffectKind::Intended } else { EffectKind::NoOp },
                    affected: None,
                    transient: false,
                    window: None,
                    precondition_failed: intended_effects.is_none(),
                };
                (interpolate(&pre, &intended_post), intended_post, applied)
            }
            Some(kind) => {
                let substitute = forced.as_ref().and_then(|f| f.substitute.clone());
                let (corrupted, affected, new_phantom) = self.corrupt(kind, action, &pre, substitute);
                let window = match &forced {
                    Some(inj) => inj.transient_window,
                    None => (self.rng.random::<f64>() < self.noise.transient_fraction).then(|| self.draw_window()),
                };
                match window {
                    Some((start, end)) => {
                        let mut frames = interpolate(&pre, &intended_post);
                        for f in frames.iter_mut().filter(|f| f.index >= start && f.index <= end) {
                            f.atoms = corrupted.clone();
                        }
                        let applied = AppliedEffect {
                            kind: kind.into(),
                            affected,
                            transient: true,
                            window: Some((start, end)),
                            precondition_failed: false,
                        };
                        (frames, intended_post, applied)
                    }
                    None => {
                        if let Some(p) = new_phantom {
                            self.state.hallucinated.insert(p);
                        }
                        let applied = AppliedEffect {
                            kind: kind.into(),
                            affected,
                            transient: false,
                            window: None,
                            precondition_failed: false,
                        };
                        (interpolate(&pre, &corrupted), corrupted, applied)
                    }
                }
            }
        };

        self.state.atoms = post;
        self.state.turn += 1;
        Ok(ClipSurrogate { frames, applied_effect: applied, intended_action: action.clone() })
    }

    /// Samples `k` frames and drops each entity's facts from each sampled
    /// frame independently with probability `p_omit`.
    pub fn sample_frames(&mut self, clip: &ClipSurrogate, k: usize) -> Result<Observation, WorldError> {
        let indices = sample_indices(clip.frames.len(), k)?;
        let mut frames = Vec::with_capacity(k);
        for i in indices {
            let frame = &clip.frames[i];
            let subjects: BTreeSet<&str> = frame.atoms.iter().map(Atom::subject).collect();
            let mut omitted = BTreeSet::new();
            if self.noise.p_omit > 0.0 {
                for s in subjects {
                    if self.rng.random::<f64>() < self.noise.p_omit {
                        omitted.insert(s);
                    }
                }
            }
            let atoms = frame.atoms.iter().filter(|a| !omitted.contains(a.subject())).cloned().collect();
            frames.push(FrameFacts { index: frame.index, atoms });
        }
        Ok(Observation { frames, turn: self.state.turn })
    }

    fn draw_kind(&mut self) -> CorruptionKind {
        let w = self.noise.corruption_weights;
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for kind in CorruptionKind::ALL {
            acc += w.get(kind);
            if u < acc {
                return kind;
            }
        }
        // Rounding: fall back to the last kind with positive weight.
        *CorruptionKind::ALL.iter().rev().find(|&&k| w.get(k) > 0.0).unwrap_or(&CorruptionKind::NoOp)
    }

    fn draw_window(&mut self) -> (usize, usize) {
        let len = self.rng.random_range(1..=MAX_TRANSIENT_LEN);
        let start = self.rng.random_range(1..=FRAMES_PER_CLIP - 1 - len);
        (start, start + len - 1)
    }

    fn present_objects(&self, atoms: &AtomSet) -> Vec<String> {
        self.task.objects.iter().filter(|o| present(atoms, &o.id)).map(|o| o.id.clone()).collect()
    }

    /// Applies a corruption to `pre`. Returns the corrupted facts, the entity
    /// touched and, for hallucinations, the invented entity id.
    fn corrupt(
        &mut self,
        kind: CorruptionKind,
        action: &WorldAction,
        pre: &AtomSet,
        substitute: Option<String>,
    ) -> (AtomSet, Option<String>, Option<String>) {
        match kind {
            CorruptionKind::NoOp => (pre.clone(), action.object.clone(), None),
            CorruptionKind::WrongObject => {
                let Some(intended) = action.object.as_deref() else {
                    return (pre.clone(), None, None);
                };
                let others: Vec<String> =
                    self.present_objects(pre).into_iter().filter(|o| o != intended).collect();
                let valid: Vec<String> = others
                    .iter()
                    .filter(|o| effects(&action.with_object(o), pre, &self.task.avatars).is_some())
                    .cloned()
                    .collect();
                let chosen = substitute.or_else(|| {
                    let pool = if valid.is_empty() { &others } else { &valid };
                    (!pool.is_empty()).then(|| pool[self.rng.random_range(0..pool.len())].clone())
                });
                match chosen {
                    Some(o) => {
                        let post = match effects(&action.with_object(&o), pre, &self.task.avatars) {
                            Some(e) => overlay(pre, &e),
                            None => pre.clone(),
                        };
                        (post, Some(o), None)
                    }
                    None => (pre.clone(), None, None),
                }
            }
            CorruptionKind::Disappear => {
                let victim = action
                    .object
                    .clone()
                    .filter(|o| present(pre, o))
                    .or_else(|| action.target.clone().filter(|t| self.task.object(t).is_some() && present(pre, t)))
                    .or_else(|| {
                        let pool = self.present_objects(pre);
                        (!pool.is_empty()).then(|| pool[self.rng.random_range(0..pool.len())].clone())
                    });
                match victim {
                    Some(v) => {
                        let post = pre.iter().filter(|a| a.subject() != v).cloned().collect();
                        (post, Some(v), None)
                    }
                    None => (pre.clone(), None, None),
                }
            }
            CorruptionKind::Hallucinate => {
                self.phantoms += 1;
                let phantom = format!("phantom_{}", self.phantoms);
                let spot = action
                    .object
                    .as_deref()
                    .and_then(|o| location(pre, o))
                    .map(str::to_string)
                    .or_else(|| action.target.clone())
                    .or_else(|| self.task.location_labels().into_iter().next())
                    .unwrap_or_else(|| "scene".to_string());
                let mut post = pre.clone();
                post.insert(Atom::at(&phantom, spot));
                (post, Some(phantom.clone()), Some(phantom))
            }
        }
    }
}

/// Frames before the switch show `pre`, the rest show `post`.
fn interpolate(pre: &AtomSet, post: &AtomSet) -> Vec<FrameFacts> {
    (0..FRAMES_PER_CLIP)
        .map(|index| FrameFacts { index, atoms: if index < SWITCH_FRAME { pre.clone() } else { post.clone() } })
        .collect()
}
