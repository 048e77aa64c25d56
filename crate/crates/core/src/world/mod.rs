//! The scene simulator: task files, latent state, stochastic clip generation
//! and frame sampling.

pub mod action;
pub mod atom;
pub mod sim;
pub mod task;

pub use action::{interpret_caption, CaptionError, Verb, WorldAction};
pub use atom::{Atom, AtomKey, AtomSet};
pub use sim::{
    sample_indices, AppliedEffect, ClipSurrogate, CorruptionKind, CorruptionWeights, EffectKind, FrameFacts,
    Injection, LatentState, NoiseProfile, Observation, WorldError, WorldInstance, DEFAULT_SAMPLED_FRAMES,
    FRAMES_PER_CLIP,
};
pub use task::{load_task, DependencyMode, ObjectSpec, Scenario, SubGoalSpec, TaskError, TaskSpec};

/// Convenience wrapper matching [`WorldInstance::spawn`].
pub fn spawn_world(task: &TaskSpec, noise: NoiseProfile) -> Result<WorldInstance, WorldError> {
    WorldInstance::spawn(task, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::desk_suite;

    fn garden() -> TaskSpec {
        desk_suite().into_iter().find(|t| t.task_id == "garden-transplant").unwrap()
    }

    fn noise(p_wrong: f64, seed: u64) -> NoiseProfile {
        NoiseProfile { p_wrong, transient_fraction: 0.0, seed, ..Default::default() }
    }

    fn act(task: &TaskSpec, caption: &str) -> WorldAction {
        interpret_caption(caption, task).unwrap()
    }

    #[test]
    fn garden_fixture_is_a_five_step_chain() {
        let t = garden();
        assert_eq!(t.subgoals.len(), 5);
        assert_eq!(t.mode(), DependencyMode::Chain);
    }

    #[test]
    fn spawn_initializes_from_inventory() {
        let w = spawn_world(&garden(), noise(0.0, 1)).unwrap();
        assert!(w.state().atoms.contains(&Atom::at("seedling", "tray")));
        assert!(w.state().atoms.contains(&Atom::at("pot", "bench")));
        assert_eq!(w.state().turn, 0);
    }

    #[test]
    fn spawn_rejects_bad_weights() {
        let mut n = noise(0.1, 1);
        n.corruption_weights = CorruptionWeights { no_op: 0.4, wrong_object: 0.3, disappear: 0.1, hallucinate: 0.1 };
        assert!(matches!(spawn_world(&garden(), n), Err(WorldError::InvalidNoise(_))));
        let n = NoiseProfile { p_omit: 1.5, ..noise(0.1, 1) };
        assert!(spawn_world(&garden(), n).is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let t = garden();
        let n = NoiseProfile { p_omit: 0.3, transient_fraction: 0.5, ..noise(0.5, 99) };
        let mut a = spawn_world(&t, n).unwrap();
        let mut b = spawn_world(&t, n).unwrap();
        assert_eq!(a.state(), b.state());
        for caption in ["AVATAR_A pick_up seedling", "AVATAR_A place seedling -> pot", "AVATAR_A pick_up can"] {
            let action = act(&t, caption);
            let (ca, cb) = (a.step(&action).unwrap(), b.step(&action).unwrap());
            assert_eq!(ca, cb);
            assert_eq!(a.sample_frames(&ca, 5).unwrap(), b.sample_frames(&cb, 5).unwrap());
            assert_eq!(a.state(), b.state());
        }
    }

    #[test]
    fn zero_noise_pick_up_is_intended() {
        let t = garden();
        let mut w = spawn_world(&t, noise(0.0, 3)).unwrap();
        let clip = w.step(&act(&t, "AVATAR_A pick_up seedling")).unwrap();
        assert_eq!(clip.applied_effect.kind, EffectKind::Intended);
        let last = &clip.final_frame().atoms;
        assert!(last.contains(&Atom::holds("A", "seedling")));
        assert!(!last.iter().any(|a| matches!(a, Atom::At { object, .. } if object == "seedling")));
        assert_eq!(clip.frames.len(), FRAMES_PER_CLIP);
        assert_eq!(w.state().turn, 1);
    }

    #[test]
    fn forced_disappear_removes_the_object() {
        let t = garden();
        let mut n = noise(1.0, 5);
        n.corruption_weights = CorruptionWeights::only(CorruptionKind::Disappear);
        let mut w = spawn_world(&t, n).unwrap();
        // Put the seedling in hand through an injected clean step first.
        w.inject(Injection::default());
        w.step(&act(&t, "AVATAR_A pick_up seedling")).unwrap();
        let clip = w.step(&act(&t, "AVATAR_A place seedling -> pot")).unwrap();
        assert_eq!(clip.applied_effect.kind, EffectKind::Disappear);
        assert_eq!(clip.applied_effect.affected.as_deref(), Some("seedling"));
        assert!(!w.state().atoms.iter().any(|a| a.subject() == "seedling"));
    }

    #[test]
    fn corruption_rate_matches_p_wrong() {
        // Oracle: Bernoulli(0.7) intended outcomes; 0.70 +/- 0.03 over 1000 draws.
        let t = garden();
        let mut w = spawn_world(&t, noise(0.3, 7)).unwrap();
        let speak = act(&t, "AVATAR_A speak");
        let intended = (0..1000)
            .filter(|_| w.step(&speak).unwrap().applied_effect.kind == EffectKind::Intended)
            .count();
        let frac = intended as f64 / 1000.0;
        assert!((frac - 0.70).abs() <= 0.03, "{frac}");
    }

    #[test]
    fn failed_preconditions_never_mutate() {
        let t = garden();
        let mut w = spawn_world(&t, noise(0.0, 1)).unwrap();
        let before = w.state().atoms.clone();
        let clip = w.step(&act(&t, "AVATAR_A place seedling -> pot")).unwrap();
        assert_eq!(clip.applied_effect.kind, EffectKind::NoOp);
        assert!(clip.applied_effect.precondition_failed);
        assert_eq!(w.state().atoms, before);
    }

    #[test]
    fn transient_corruption_leaves_intended_state() {
        let t = garden();
        let mut w = spawn_world(&t, noise(0.0, 1)).unwrap();
        let mut reference = spawn_world(&t, noise(0.0, 1)).unwrap();
        w.inject(Injection {
            corruption: Some(CorruptionKind::Disappear),
            transient_window: Some((6, 8)),
            substitute: None,
        });
        let action = act(&t, "AVATAR_A pick_up seedling");
        let clip = w.step(&action).unwrap();
        reference.step(&action).unwrap();
        assert!(clip.applied_effect.transient);
        assert_eq!(w.state().atoms, reference.state().atoms);
        for f in &clip.frames[6..=8] {
            assert!(!f.atoms.iter().any(|a| a.subject() == "seedling"));
        }
        // Aliased: the sampled indices skip the whole window.
        let obs = w.sample_frames(&clip, 5).unwrap();
        assert!(obs.frames.iter().all(|f| f.atoms.iter().any(|a| a.subject() == "seedling")));
    }

    #[test]
    fn sample_indices_round_half_up() {
        assert_eq!(sample_indices(20, 5).unwrap(), vec![0, 5, 10, 14, 19]);
        assert_eq!(sample_indices(20, 2).unwrap(), vec![0, 19]);
        assert_eq!(sample_indices(20, 20).unwrap(), (0..20).collect::<Vec<_>>());
        assert!(sample_indices(20, 1).is_err());
        assert!(sample_indices(20, 21).is_err());
    }

    #[test]
    fn no_omission_keeps_true_frames() {
        let t = garden();
        let mut w = spawn_world(&t, noise(0.0, 1)).unwrap();
        let clip = w.step(&act(&t, "AVATAR_A pick_up seedling")).unwrap();
        let obs = w.sample_frames(&clip, 5).unwrap();
        for f in &obs.frames {
            assert_eq!(f.atoms, clip.frames[f.index].atoms);
        }
    }

    #[test]
    fn terminated_world_refuses_steps() {
        let t = garden();
        let mut w = spawn_world(&t, noise(0.0, 1)).unwrap();
        w.terminate();
        assert!(matches!(w.step(&act(&t, "AVATAR_A speak")), Err(WorldError::Terminated)));
    }

    #[test]
    fn oracle_goal_check_cases() {
        let t = garden();
        let mut w = spawn_world(&t, noise(0.0, 1)).unwrap();
        w.step(&act(&t, "AVATAR_A pick_up seedling")).unwrap();
        w.step(&act(&t, "AVATAR_A place seedling -> pot")).unwrap();
        assert!(w.oracle_goal_check(&t.subgoals[1]));
        // Conjunction with an unmet atom.
        let mut sg = t.subgoals[1].clone();
        sg.completion_predicate.push(Atom::prop("pot", "contains", "water"));
        assert!(!w.oracle_goal_check(&sg));
        // Predicate over a vanished object.
        let mut n = noise(1.0, 2);
        n.corruption_weights = CorruptionWeights::only(CorruptionKind::Disappear);
        let mut w = spawn_world(&t, n).unwrap();
        w.step(&act(&t, "AVATAR_A pick_up seedling")).unwrap();
        assert!(!w.oracle_goal_check(&t.subgoals[0]));
    }

    #[test]
    fn hallucination_is_flagged() {
        let t = garden();
        let mut w = spawn_world(&t, noise(0.0, 1)).unwrap();
        w.inject(Injection { corruption: Some(CorruptionKind::Hallucinate), ..Default::default() });
        let clip = w.step(&act(&t, "AVATAR_A pick_up seedling")).unwrap();
        let phantom = clip.applied_effect.affected.clone().unwrap();
        assert!(w.state().hallucinated.contains(&phantom));
        assert!(w.state().violations(&t).is_empty());
    }

    #[test]
    fn rewind_restores_latent_state() {
        let t = garden();
        let mut w = spawn_world(&t, noise(0.0, 1)).unwrap();
        let cp = w.checkpoint();
        w.step(&act(&t, "AVATAR_A pick_up seedling")).unwrap();
        assert_ne!(w.state(), &cp);
        w.rewind(&cp);
        assert_eq!(w.state(), &cp);
    }
}
