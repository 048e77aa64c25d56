use orca_core::bench::desk_suite;
use orca_core::world::action::effects;
use orca_core::world::atom::overlay;
use orca_core::world::{spawn_world, EffectKind, NoiseProfile, TaskSpec, Verb, WorldAction};
use proptest::prelude::*;

/// An arbitrary action over the task's own vocabulary, valid or not.
fn action_for(task: &TaskSpec, verb: usize, actor: usize, object: usize, target: usize) -> WorldAction {
    let verb = Verb::ALL[verb % Verb::ALL.len()];
    let actor = &task.avatars[actor % task.avatars.len()];
    let object = &task.objects[object % task.objects.len()].id;
    let mut targets: Vec<String> = task.location_labels().into_iter().collect();
    targets.extend(task.avatars.iter().cloned());
    targets.extend(task.objects.iter().map(|o| o.id.clone()));
    let target = &targets[target % targets.len()];
    match verb {
        Verb::Speak => WorldAction::new(verb, actor, None, None),
        Verb::Place | Verb::Attach | Verb::Pour | Verb::Give => WorldAction::new(verb, actor, Some(object), Some(target)),
        _ => WorldAction::new(verb, actor, Some(object), None),
    }
}

fn arb_steps() -> impl Strategy<Value = Vec<(usize, usize, usize, usize)>> {
    prop::collection::vec((0usize..12, 0usize..2, 0usize..16, 0usize..32), 1..12)
}

fn arb_noise() -> impl Strategy<Value = NoiseProfile> {
    (0.0..=1.0f64, 0.0..=0.8f64, 0.0..=1.0f64, any::<u64>()).prop_map(|(p_wrong, p_omit, tf, seed)| NoiseProfile {
        p_wrong,
        p_omit,
        transient_fraction: tf,
        seed,
        ..Default::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identical_inputs_give_identical_clips(ti in 0usize..10, noise in arb_noise(), steps in arb_steps()) {
        let task = &desk_suite()[ti];
        let mut a = spawn_world(task, noise).unwrap();
        let mut b = spawn_world(task, noise).unwrap();
        for (v, ac, o, t) in steps {
            let action = action_for(task, v, ac, o, t);
            let (ca, cb) = (a.step(&action).unwrap(), b.step(&action).unwrap());
            prop_assert_eq!(&ca, &cb);
            prop_assert_eq!(a.sample_frames(&ca, 5).unwrap(), b.sample_frames(&cb, 5).unwrap());
            prop_assert_eq!(a.state(), b.state());
        }
    }

    #[test]
    fn omission_never_invents_facts(ti in 0usize..10, noise in arb_noise(), steps in arb_steps()) {
        let task = &desk_suite()[ti];
        let noise = NoiseProfile { transient_fraction: 0.0, ..noise };
        let mut w = spawn_world(task, noise).unwrap();
        for (v, ac, o, t) in steps {
            let clip = w.step(&action_for(task, v, ac, o, t)).unwrap();
            let obs = w.sample_frames(&clip, 5).unwrap();
            for f in &obs.frames {
                let truth = &clip.frames[f.index].atoms;
                prop_assert!(f.atoms.is_subset(truth));
            }
        }
    }

    #[test]
    fn failed_preconditions_leave_the_scene_alone(ti in 0usize..10, seed in any::<u64>(), steps in arb_steps()) {
        let task = &desk_suite()[ti];
        let mut w = spawn_world(task, NoiseProfile::noiseless(seed)).unwrap();
        for (v, ac, o, t) in steps {
            let action = action_for(task, v, ac, o, t);
            let before = w.state().atoms.clone();
            let expected = effects(&action, &before, &task.avatars);
            let clip = w.step(&action).unwrap();
            match expected {
                None => {
                    prop_assert_eq!(clip.applied_effect.kind, EffectKind::NoOp);
                    prop_assert!(clip.applied_effect.precondition_failed);
                    prop_assert_eq!(&w.state().atoms, &before);
                }
                Some(e) => prop_assert_eq!(&w.state().atoms, &overlay(&before, &e)),
            }
        }
    }

    #[test]
    fn transient_corruption_ends_in_the_intended_state(ti in 0usize..10, seed in any::<u64>(), steps in arb_steps()) {
        let task = &desk_suite()[ti];
        let noise = NoiseProfile { p_wrong: 1.0, transient_fraction: 1.0, seed, ..Default::default() };
        let mut w = spawn_world(task, noise).unwrap();
        for (v, ac, o, t) in steps {
            let action = action_for(task, v, ac, o, t);
            let before = w.state().atoms.clone();
            let intended = effects(&action, &before, &task.avatars).map_or(before.clone(), |e| overlay(&before, &e));
            let clip = w.step(&action).unwrap();
            prop_assert!(clip.applied_effect.transient);
            prop_assert_eq!(&w.state().atoms, &intended);
            prop_assert_eq!(&clip.final_frame().atoms, &intended);
        }
    }
}

#[test]
fn corruption_frequency_tracks_p_wrong() {
    let task = desk_suite().into_iter().find(|t| t.task_id == "garden-transplant").unwrap();
    let action = WorldAction::new(Verb::Speak, "A", None, None);
    for (i, p) in [0.05, 0.2, 0.5, 0.8].into_iter().enumerate() {
        let n = 2000usize;
        let mut w = spawn_world(&task, NoiseProfile { p_wrong: p, seed: 40 + i as u64, ..Default::default() }).unwrap();
        let corrupted = (0..n).filter(|_| !w.step(&action).unwrap().applied_effect.is_intended()).count();
        let rate = corrupted as f64 / n as f64;
        // 99% binomial interval.
        let half = 2.576 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((rate - p).abs() <= half, "p_wrong {p}: rate {rate} outside ±{half}");
    }
}
