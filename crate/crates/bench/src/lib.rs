//! Shared inputs for the benchmarks.

use orca_core::agent::{run_episode, AgentConfig, EpisodeTrace, Policy};
use orca_core::bench::desk_suite;
use orca_core::cognition::ScriptedCognition;
use orca_core::world::{spawn_world, NoiseProfile, TaskSpec};

pub fn task(id: &str) -> TaskSpec {
    desk_suite().into_iter().find(|t| t.task_id == id).unwrap_or_else(|| panic!("no built-in task `{id}`"))
}

pub fn noisy(p_wrong: f64, seed: u64) -> NoiseProfile {
    NoiseProfile { p_wrong, seed, ..Default::default() }
}

/// One scripted episode with default agent settings.
pub fn episode(task: &TaskSpec, policy: Policy, noise: NoiseProfile) -> EpisodeTrace {
    let mut world = spawn_world(task, noise).expect("built-in task and valid noise");
    let cognition = ScriptedCognition::new(task).with_omission_tolerance(noise.p_omit > 0.0);
    run_episode(task, &mut world, &cognition, &AgentConfig::for_task(policy, task)).expect("default config is valid")
}

/// Every policy on every desk task for `seeds` seeds.
pub fn desk_traces(seeds: u64, p_wrong: f64) -> Vec<EpisodeTrace> {
    let mut out = Vec::new();
    for t in desk_suite() {
        for policy in Policy::ALL {
            for seed in 0..seeds {
                out.push(episode(&t, policy, noisy(p_wrong, seed)));
            }
        }
    }
    out
}
