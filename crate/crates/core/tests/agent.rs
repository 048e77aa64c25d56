use orca_core::agent::{run_episode, AgentConfig, EpisodeTrace, EventBody, Policy, Stage};
use orca_core::bench::desk_suite;
use orca_core::cognition::ScriptedCognition;
use orca_core::world::{spawn_world, CorruptionKind, CorruptionWeights, Injection, NoiseProfile, TaskSpec};
use proptest::prelude::*;

fn task(id: &str) -> TaskSpec {
    desk_suite().into_iter().find(|t| t.task_id == id).unwrap()
}

fn run(task: &TaskSpec, policy: Policy, noise: NoiseProfile) -> EpisodeTrace {
    let mut world = spawn_world(task, noise).unwrap();
    let cog = ScriptedCognition::new(task).with_omission_tolerance(noise.p_omit > 0.0);
    run_episode(task, &mut world, &cog, &AgentConfig::for_task(policy, task)).unwrap()
}

fn stages(trace: &EpisodeTrace) -> Vec<Stage> {
    trace.events.iter().map(|e| e.body.stage()).collect()
}

#[test]
fn noiseless_policies_complete_every_task() {
    for task in desk_suite() {
        for policy in Policy::ALL {
            let trace = run(&task, policy, NoiseProfile::noiseless(1));
            let c = &trace.summary.counters;
            assert_eq!(trace.tsr(), 1.0, "{} {policy}: {:#?}", task.task_id, trace.summary);
            assert_eq!((c.retries, c.replans), (0, 0), "{} {policy}", task.task_id);
            assert!(trace.summary.error.is_none());
            if policy != Policy::Reactive {
                assert_eq!(c.generation_calls as usize, task.subgoals.len(), "{} {policy}", task.task_id);
            }
        }
    }
}

#[test]
fn forced_failure_retries_then_replans_every_turn() {
    let t = task("garden-transplant");
    let noise = NoiseProfile {
        p_wrong: 1.0,
        transient_fraction: 0.0,
        corruption_weights: CorruptionWeights::only(CorruptionKind::NoOp),
        seed: 4,
        ..Default::default()
    };
    let trace = run(&t, Policy::Orca, noise);
    let cfg = trace.header.config;
    assert_eq!(trace.summary.counters.turns, cfg.max_turns);
    for turn in 1..=cfg.max_turns {
        let gens = trace.events.iter().filter(|e| e.turn == turn && e.body.stage() == Stage::Generate).count();
        assert_eq!(gens, 3, "turn {turn}");
        let last = trace.events.iter().rfind(|e| e.turn == turn).unwrap();
        assert!(matches!(&last.body, EventBody::Replan { reason, .. } if reason == "retries exhausted"));
    }
    assert!(trace.summary.believed_done.is_empty());
    assert!(trace.summary.clips.is_empty());
    assert_eq!(trace.tsr(), 0.0);
}

#[test]
fn every_corruption_kind_is_rejected_and_rolled_back() {
    let t = task("kitchen-tea");
    for kind in CorruptionKind::ALL {
        let noise = NoiseProfile {
            p_wrong: 1.0,
            transient_fraction: 0.0,
            corruption_weights: CorruptionWeights::only(kind),
            seed: 9,
            ..Default::default()
        };
        let trace = run(&t, Policy::Orca, noise);
        assert_eq!(trace.summary.counters.rejections, 3 * trace.header.config.max_turns, "{kind:?}");
        assert!(trace.summary.believed_done.is_empty(), "{kind:?}");
    }
}

#[test]
fn vagen_equals_orca_without_reflection_when_noiseless() {
    for t in desk_suite() {
        let orca = run(&t, Policy::Orca, NoiseProfile::noiseless(3));
        let vagen = run(&t, Policy::Vagen, NoiseProfile::noiseless(3));
        let strip = |tr: &EpisodeTrace| -> Vec<_> {
            tr.events.iter().filter(|e| e.body.stage() != Stage::Reflect).cloned().collect()
        };
        assert_eq!(strip(&orca), strip(&vagen), "{}", t.task_id);
        assert_eq!(orca.summary.outcomes, vagen.summary.outcomes);
        assert!(!stages(&vagen).contains(&Stage::Reflect));
    }
}

#[test]
fn vagen_believes_a_corrupted_step() {
    let t = task("kitchen-tea");
    let mut world = spawn_world(&t, NoiseProfile::noiseless(1)).unwrap();
    world.inject(Injection { corruption: Some(CorruptionKind::Disappear), ..Default::default() });
    let cog = ScriptedCognition::new(&t);
    let trace = run_episode(&t, &mut world, &cog, &AgentConfig::for_task(Policy::Vagen, &t)).unwrap();
    let first = &trace.summary.outcomes[0];
    assert!(!first.achieved);
    assert!(trace.summary.believed_done.contains(&first.subgoal_id));
}

#[test]
fn open_loop_propagates_an_undetected_disappearance() {
    let t = task("garden-transplant");
    let mut world = spawn_world(&t, NoiseProfile::noiseless(1)).unwrap();
    world.inject(Injection::default());
    world.inject(Injection { corruption: Some(CorruptionKind::Disappear), ..Default::default() });
    let cog = ScriptedCognition::new(&t);
    let trace = run_episode(&t, &mut world, &cog, &AgentConfig::for_task(Policy::OpenLoop, &t)).unwrap();
    let achieved: Vec<bool> = trace.summary.outcomes.iter().map(|o| o.achieved).collect();
    assert_eq!(achieved, vec![true, false, false, false, false]);
    assert_eq!(trace.summary.clips.len(), 5);
    assert!(!stages(&trace).contains(&Stage::Reflect));
    assert_eq!(stages(&trace)[0], Stage::Plan);
}

#[test]
fn orca_repairs_the_same_disappearance() {
    let t = task("garden-transplant");
    let mut world = spawn_world(&t, NoiseProfile::noiseless(1)).unwrap();
    world.inject(Injection::default());
    world.inject(Injection { corruption: Some(CorruptionKind::Disappear), ..Default::default() });
    let cog = ScriptedCognition::new(&t);
    let trace = run_episode(&t, &mut world, &cog, &AgentConfig::for_task(Policy::Orca, &t)).unwrap();
    assert_eq!(trace.tsr(), 1.0);
    assert_eq!(trace.summary.counters.retries, 1);
    assert_eq!(trace.summary.counters.generation_calls, 6);
}

#[test]
fn reactive_repeats_more_than_orca_under_omission() {
    let suite = desk_suite();
    let (mut reactive, mut orca) = (0, 0);
    for seed in 0..100u64 {
        let t = &suite[(seed % suite.len() as u64) as usize];
        let noise = NoiseProfile { p_omit: 0.5, seed, ..NoiseProfile::noiseless(seed) };
        reactive += run(t, Policy::Reactive, noise).summary.counters.repeated_actions;
        orca += run(t, Policy::Orca, noise).summary.counters.repeated_actions;
    }
    assert!(reactive > orca, "reactive {reactive} orca {orca}");
}

#[test]
fn reactive_halts_when_nothing_is_actionable() {
    let t = task("livestream-cooking");
    let trace = run(&t, Policy::Reactive, NoiseProfile::noiseless(1));
    assert_eq!(trace.tsr(), 1.0);
    assert!(matches!(trace.events.last().map(|e| &e.body), Some(EventBody::Halt { .. })));
}

#[test]
fn wrong_policy_and_bad_config_are_errors() {
    let t = task("office-print");
    let mut world = spawn_world(&t, NoiseProfile::noiseless(1)).unwrap();
    let cog = ScriptedCognition::new(&t);
    let mut cfg = AgentConfig::for_task(Policy::Orca, &t);
    assert!(orca_core::agent::run_vagen(&t, &mut world, &cog, &cfg).is_err());
    cfg.max_turns = 2;
    assert!(run_episode(&t, &mut world, &cog, &cfg).is_err());
    cfg.max_turns = 10;
    cfg.frames_per_observation = 1;
    assert!(run_episode(&t, &mut world, &cog, &cfg).is_err());
    let other = task("office-handoff");
    let cfg = AgentConfig::for_task(Policy::Orca, &other);
    assert!(run_episode(&other, &mut world, &cog, &cfg).is_err());
}

fn arb_noise() -> impl Strategy<Value = NoiseProfile> {
    (0.0..=1.0f64, 0.0..=0.6f64, 0.0..=1.0f64, any::<u64>()).prop_map(|(p_wrong, p_omit, tf, seed)| NoiseProfile {
        p_wrong,
        p_omit,
        transient_fraction: tf,
        seed,
        ..Default::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_invariants_hold(noise in arb_noise(), ti in 0usize..10, pi in 0usize..4) {
        let t = &desk_suite()[ti];
        let policy = Policy::ALL[pi];
        let trace = run(t, policy, noise);
        let cfg = trace.header.config;
        prop_assert!(trace.is_ordered());
        prop_assert!(trace.summary.counters.turns <= cfg.max_turns);
        prop_assert!(trace.events.iter().all(|e| e.turn <= cfg.max_turns));
        prop_assert!(trace.generations_per_turn().values().all(|&g| g <= cfg.n_retry + 1));
        // Accepted clips appear once each, in turn order.
        let accepts: Vec<(u32, usize)> = trace
            .events
            .iter()
            .filter_map(|e| match e.body { EventBody::Accept { clip_index } => Some((e.turn, clip_index)), _ => None })
            .collect();
        prop_assert_eq!(accepts.len(), trace.summary.clips.len());
        for (i, (turn, idx)) in accepts.iter().enumerate() {
            prop_assert_eq!(*idx, i);
            prop_assert_eq!(trace.summary.clips[i].turn, *turn);
        }
        let text = trace.to_jsonl();
        prop_assert_eq!(EpisodeTrace::from_jsonl(&text).unwrap().to_jsonl(), text);
    }
}
