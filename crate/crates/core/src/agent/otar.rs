use super::{check, plan_entries, subgoal_infos, AgentConfig, AgentError, EpisodeTrace, EventBody, Policy, Recorder};
use crate::belief::{initialize_belief, BeliefState, Decision, Status, TurnRecord};
use crate::cognition::{Cognition, CognitionError, Command, Verdict};
use crate::world::{interpret_caption, Observation, TaskSpec, WorldInstance};

/// The closed loop: observe, think, act, reflect, with bounded retries and
/// re-planning after exhaustion.
pub fn run_otar_episode(
    task: &TaskSpec,
    world: &mut WorldInstance,
    cognition: &dyn Cognition,
    cfg: &AgentConfig,
) -> Result<EpisodeTrace, AgentError> {
    check(task, world, cfg, Policy::Orca)?;
    Ok(run_belief_loop(task, world, cognition, cfg, true))
}

/// Belief tracking and prediction without reflection: every generation is
/// taken at face value and its predicted effects are committed.
pub fn run_vagen(
    task: &TaskSpec,
    world: &mut WorldInstance,
    cognition: &dyn Cognition,
    cfg: &AgentConfig,
) -> Result<EpisodeTrace, AgentError> {
    check(task, world, cfg, Policy::Vagen)?;
    Ok(run_belief_loop(task, world, cognition, cfg, false))
}

/// Demotes done entries that the belief now contradicts but that could be
/// redone from here.
fn demote(belief: &mut BeliefState, task: &TaskSpec) -> Vec<String> {
    let stale: Vec<String> = belief
        .checklist
        .iter()
        .filter(|e| e.status == Status::Done)
        .filter(|e| {
            task.subgoal(&e.subgoal_id).is_some_and(|sg| {
                !sg.holds_in(&belief.scene_belief) && sg.preconditions_hold_in(&belief.scene_belief)
            })
        })
        .map(|e| e.subgoal_id.clone())
        .collect();
    for id in &stale {
        // The id comes from the checklist itself.
        let _ = belief.set_subgoal_status(id, Status::Pending, None, true);
    }
    stale
}

/// Marks hypothesised completions done, but only once every predecessor of
/// the subgoal is done as well. A predicate that already held before its
/// prerequisites were met is not progress.
fn mark_completed(belief: &mut BeliefState, task: &TaskSpec, hypotheses: &[String], t: u32) -> Result<Vec<String>, String> {
    let preds = task.predecessors();
    let mut marked = Vec::new();
    let mut progress = true;
    while progress {
        progress = false;
        for id in hypotheses {
            let Some(i) = task.subgoals.iter().position(|s| &s.id == id) else { continue };
            if belief.entry(id).is_none_or(|e| e.status == Status::Done) {
                continue;
            }
            let ready = preds[i]
                .iter()
                .all(|&p| belief.entry(&task.subgoals[p].id).is_none_or(|e| e.status == Status::Done));
            if ready {
                belief.set_subgoal_status(id, Status::Done, Some(t), false).map_err(|e| e.to_string())?;
                marked.push(id.clone());
                progress = true;
            }
        }
    }
    Ok(marked)
}

fn run_belief_loop(
    task: &TaskSpec,
    world: &mut WorldInstance,
    cognition: &dyn Cognition,
    cfg: &AgentConfig,
    reflect: bool,
) -> EpisodeTrace {
    let mut rec = Recorder::new(task, world, cfg);
    let mut obs = world.initial_observation();
    let plan = match cognition.initialize(&obs, &task.intention, &subgoal_infos(task)) {
        Ok(p) => p,
        Err(e) => {
            let message = format!("initialize: {e}");
            rec.event(0, 0, EventBody::Error { message: message.clone() });
            return rec.finish(0, None, Some(message));
        }
    };
    let mut belief = match initialize_belief(&obs, &task.intention, &plan_entries(task, &plan)) {
        Ok(b) => b,
        Err(e) => return rec.finish(0, None, Some(e.to_string())),
    };

    let mut t = 0;
    let mut error = None;
    while !belief.remaining_subgoals().is_empty() && t < cfg.max_turns {
        t += 1;
        belief.turn = t;
        match turn(task, world, cognition, cfg, reflect, &mut rec, &mut belief, &mut obs, t) {
            Ok(()) => {}
            Err(message) => {
                rec.event(t, 0, EventBody::Error { message: message.clone() });
                error = Some(message);
                break;
            }
        }
    }
    world.terminate();
    rec.finish(t, Some(&belief), error)
}

fn cognition_error(stage: &str, e: CognitionError) -> String {
    format!("{stage}: {e}")
}

#[allow(clippy::too_many_arguments)]
fn turn(
    task: &TaskSpec,
    world: &mut WorldInstance,
    cognition: &dyn Cognition,
    cfg: &AgentConfig,
    reflect: bool,
    rec: &mut Recorder,
    belief: &mut BeliefState,
    obs: &mut Observation,
    t: u32,
) -> Result<(), String> {
    // Observe.
    let extract = cognition.observe_extract(obs, belief).map_err(|e| cognition_error("observe", e))?;
    belief.apply_observation_facts(&extract.asserted, &extract.retracted).map_err(|e| format!("observe: {e}"))?;
    let marked_done = mark_completed(belief, task, &extract.completed_hypotheses, t)?;
    rec.event(t, 0, EventBody::Observe { extract, marked_done });
    if belief.remaining_subgoals().is_empty() {
        return Ok(());
    }

    // Think.
    let (cmd, pred) = cognition.think(belief, &task.intention, obs).map_err(|e| cognition_error("think", e))?;
    rec.event(t, 0, EventBody::Think { command: cmd.clone(), predicted: pred.expected_atoms.iter().cloned().collect() });
    if cmd.replan {
        let demoted = demote(belief, task);
        rec.counters.replans += 1;
        rec.event(t, 0, EventBody::Replan { reason: cmd.text.clone(), demoted, belief: belief.snapshot() });
        return Ok(());
    }
    let target = cmd.target_subgoal.clone().unwrap_or_default();

    // Act.
    let snapshot = belief.snapshot();
    let checkpoint = world.checkpoint();
    belief.set_subgoal_status(&target, Status::InProgress, None, false).map_err(|e| format!("think: {e}"))?;
    let mut caption = match cognition.ground(&cmd, &pred, obs, belief) {
        Ok(c) => c,
        Err(CognitionError::Grounding(why)) => {
            belief.restore(&snapshot);
            rec.counters.replans += 1;
            rec.event(t, 0, EventBody::Replan { reason: format!("grounding failed: {why}"), demoted: Vec::new(), belief: belief.snapshot() });
            return Ok(());
        }
        Err(e) => return Err(cognition_error("ground", e)),
    };
    rec.first_caption(&caption);

    let mut attempt = 0;
    loop {
        let first = (attempt == 0).then(|| snapshot.clone());
        rec.event(t, attempt, EventBody::Act { caption: caption.clone(), belief: first });
        let action = match interpret_caption(&caption, task) {
            Ok(a) => a,
            Err(e) => {
                world.rewind(&checkpoint);
                belief.restore(&snapshot);
                rec.counters.replans += 1;
                rec.event(t, attempt, EventBody::Replan { reason: format!("caption: {e}"), demoted: Vec::new(), belief: belief.snapshot() });
                return Ok(());
            }
        };
        let clip = world.step(&action).map_err(|e| format!("generate: {e}"))?;
        let next = world.sample_frames(&clip, cfg.frames_per_observation).map_err(|e| format!("generate: {e}"))?;
        rec.generated(t, attempt, &clip, &next);

        if !reflect {
            commit(belief, &pred.expected_atoms, &target, t)?;
            belief.history.push(record(t, &cmd, &pred, &caption, None, attempt, &next));
            rec.accept_clip(t, attempt, &caption, &clip, &next);
            rec.score(world, t);
            *obs = next;
            return Ok(());
        }

        let verdict = cognition.reflect(&next, &cmd, &pred).map_err(|e| cognition_error("reflect", e))?;
        belief.history.push(record(t, &cmd, &pred, &caption, Some(verdict.decision), attempt, &next));
        rec.event(t, attempt, EventBody::Reflect { verdict: verdict.clone() });
        if verdict.is_accept() {
            commit(belief, &pred.expected_atoms, &target, t)?;
            rec.accept_clip(t, attempt, &caption, &clip, &next);
            rec.score(world, t);
            *obs = next;
            return Ok(());
        }
        rec.counters.rejections += 1;
        if !retry_or_abandon(cognition, cfg, rec, belief, world, &snapshot, &checkpoint, &mut caption, &next, &verdict, t, &mut attempt)? {
            return Ok(());
        }
    }
}

fn record(
    t: u32,
    cmd: &Command,
    pred: &crate::belief::PredictedState,
    caption: &str,
    verdict: Option<Decision>,
    attempt: u32,
    obs: &Observation,
) -> TurnRecord {
    TurnRecord {
        turn: t,
        command: cmd.text.clone(),
        predicted_state: pred.expected_atoms.iter().cloned().collect(),
        caption: caption.to_string(),
        verdict,
        retry_count: attempt,
        observation_digest: obs.final_atoms().into_iter().collect(),
    }
}

fn commit(belief: &mut BeliefState, expected: &crate::world::AtomSet, target: &str, t: u32) -> Result<(), String> {
    belief.apply_observation_facts(expected, &Default::default()).map_err(|e| format!("commit: {e}"))?;
    belief.set_subgoal_status(target, Status::Done, Some(t), false).map_err(|e| format!("commit: {e}"))
}

/// After a reject: revise and go again while attempts remain (returns true),
/// otherwise roll the turn back and record a re-plan (returns false).
#[allow(clippy::too_many_arguments)]
fn retry_or_abandon(
    cognition: &dyn Cognition,
    cfg: &AgentConfig,
    rec: &mut Recorder,
    belief: &mut BeliefState,
    world: &mut WorldInstance,
    snapshot: &crate::belief::BeliefSnapshot,
    checkpoint: &crate::world::LatentState,
    caption: &mut String,
    evidence: &Observation,
    verdict: &Verdict,
    t: u32,
    attempt: &mut u32,
) -> Result<bool, String> {
    world.rewind(checkpoint);
    if *attempt < cfg.n_retry {
        let revised = cognition.revise(caption, evidence, &verdict.analysis).map_err(|e| cognition_error("revise", e))?;
        rec.counters.retries += 1;
        rec.event(t, *attempt, EventBody::Retry { revised_caption: revised.clone() });
        *caption = revised;
        *attempt += 1;
        return Ok(true);
    }
    belief.restore(snapshot);
    rec.counters.replans += 1;
    rec.event(
        t,
        *attempt,
        EventBody::Replan { reason: "retries exhausted".into(), demoted: Vec::new(), belief: belief.snapshot() },
    );
    Ok(false)
}
