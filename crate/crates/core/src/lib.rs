//! Closed-loop observe/think/act/reflect agent over a seeded scene simulator,
//! with baseline policies and benchmark metrics.

pub mod belief;
pub mod agent;
pub mod bench;
pub mod cognition;
pub mod world;

pub use belief::{
    initialize_belief, BeliefError, BeliefSnapshot, BeliefState, ChecklistEntry, Decision, PredictedState, Status,
    TurnRecord,
};
pub use world::{
    interpret_caption, load_task, spawn_world, Atom, AtomKey, AtomSet, NoiseProfile, Observation, Scenario,
    TaskSpec, WorldAction, WorldInstance,
};
