use super::{check, plan_entries, subgoal_infos, AgentConfig, AgentError, EpisodeTrace, EventBody, PlannedStep, Policy, Recorder};
use crate::belief::{initialize_belief, Status};
use crate::cognition::Cognition;
use crate::world::{interpret_caption, TaskSpec, WorldInstance};

/// Plans every caption up front from the initial image, then plays them back
/// without looking at the results.
pub fn run_open_loop(
    task: &TaskSpec,
    world: &mut WorldInstance,
    cognition: &dyn Cognition,
    cfg: &AgentConfig,
) -> Result<EpisodeTrace, AgentError> {
    check(task, world, cfg, Policy::OpenLoop)?;
    let mut rec = Recorder::new(task, world, cfg);
    let obs = world.initial_observation();
    let plan = match cognition.initialize(&obs, &task.intention, &subgoal_infos(task)) {
        Ok(p) => p,
        Err(e) => {
            let message = format!("initialize: {e}");
            rec.event(0, 0, EventBody::Error { message: message.clone() });
            return Ok(rec.finish(0, None, Some(message)));
        }
    };
    let mut planning = match initialize_belief(&obs, &task.intention, &plan_entries(task, &plan)) {
        Ok(b) => b,
        Err(e) => return Ok(rec.finish(0, None, Some(e.to_string()))),
    };

    // Imagine the whole run: each step assumes the previous ones succeeded.
    let mut steps = Vec::new();
    while !planning.remaining_subgoals().is_empty() && steps.len() < cfg.max_turns as usize {
        let (cmd, pred) = match cognition.think(&planning, &task.intention, &obs) {
            Ok(x) => x,
            Err(e) => {
                let message = format!("think: {e}");
                rec.event(0, 0, EventBody::Error { message: message.clone() });
                return Ok(rec.finish(0, Some(&planning), Some(message)));
            }
        };
        let Some(target) = cmd.target_subgoal.clone().filter(|_| !cmd.replan) else { break };
        let step = match cognition.ground(&cmd, &pred, &obs, &planning) {
            Ok(c) => PlannedStep { subgoal_id: target.clone(), caption: Some(c), error: None },
            Err(e) => PlannedStep { subgoal_id: target.clone(), caption: None, error: Some(e.to_string()) },
        };
        steps.push(step);
        // Planning belief entries are all known ids; these cannot fail.
        let _ = planning.apply_observation_facts(&pred.expected_atoms, &Default::default());
        let _ = planning.set_subgoal_status(&target, Status::Done, Some(0), false);
    }
    rec.event(0, 0, EventBody::Plan { steps: steps.clone() });

    let mut t = 0;
    let mut error = None;
    for step in &steps {
        t += 1;
        let Some(caption) = &step.caption else { continue };
        rec.first_caption(caption);
        rec.event(t, 0, EventBody::Act { caption: caption.clone(), belief: None });
        let action = match interpret_caption(caption, task) {
            Ok(a) => a,
            Err(e) => {
                rec.event(t, 0, EventBody::Error { message: format!("caption: {e}") });
                continue;
            }
        };
        let generated = world
            .step(&action)
            .and_then(|clip| world.sample_frames(&clip, cfg.frames_per_observation).map(|o| (clip, o)));
        match generated {
            Ok((clip, next)) => {
                rec.generated(t, 0, &clip, &next);
                rec.accept_clip(t, 0, caption, &clip, &next);
                rec.score(world, t);
            }
            Err(e) => {
                let message = format!("generate: {e}");
                rec.event(t, 0, EventBody::Error { message: message.clone() });
                error = Some(message);
                break;
            }
        }
    }
    world.terminate();
    Ok(rec.finish(t, Some(&planning), error))
}

/// Acts turn by turn from the latest observation alone: no remembered
/// belief, no checklist memory and no reflection.
pub fn run_reactive(
    task: &TaskSpec,
    world: &mut WorldInstance,
    cognition: &dyn Cognition,
    cfg: &AgentConfig,
) -> Result<EpisodeTrace, AgentError> {
    check(task, world, cfg, Policy::Reactive)?;
    let mut rec = Recorder::new(task, world, cfg);
    let mut obs = world.initial_observation();
    let plan = match cognition.initialize(&obs, &task.intention, &subgoal_infos(task)) {
        Ok(p) => plan_entries(task, &p),
        Err(e) => {
            let message = format!("initialize: {e}");
            rec.event(0, 0, EventBody::Error { message: message.clone() });
            return Ok(rec.finish(0, None, Some(message)));
        }
    };

    let mut t = 0;
    let mut error = None;
    let mut last_belief = None;
    while t < cfg.max_turns {
        t += 1;
        let result = (|| -> Result<bool, String> {
            let mut fresh = initialize_belief(&obs, &task.intention, &plan).map_err(|e| e.to_string())?;
            fresh.turn = t;
            let extract = cognition.observe_extract(&obs, &fresh).map_err(|e| format!("observe: {e}"))?;
            let mut marked_done = Vec::new();
            for id in &extract.completed_hypotheses {
                if fresh.set_subgoal_status(id, Status::Done, Some(t), false).is_ok() {
                    marked_done.push(id.clone());
                }
            }
            rec.event(t, 0, EventBody::Observe { extract, marked_done });
            if fresh.remaining_subgoals().is_empty() {
                last_belief = Some(fresh);
                return Ok(false);
            }

            let (cmd, pred) = cognition.think(&fresh, &task.intention, &obs).map_err(|e| format!("think: {e}"))?;
            rec.event(t, 0, EventBody::Think { command: cmd.clone(), predicted: pred.expected_atoms.iter().cloned().collect() });
            if cmd.replan {
                rec.event(t, 0, EventBody::Halt { reason: cmd.text.clone() });
                last_belief = Some(fresh);
                return Ok(false);
            }
            let caption = match cognition.ground(&cmd, &pred, &obs, &fresh) {
                Ok(c) => c,
                Err(e) => {
                    rec.event(t, 0, EventBody::Halt { reason: format!("ground: {e}") });
                    last_belief = Some(fresh);
                    return Ok(false);
                }
            };
            rec.first_caption(&caption);
            rec.event(t, 0, EventBody::Act { caption: caption.clone(), belief: None });
            let action = match interpret_caption(&caption, task) {
                Ok(a) => a,
                Err(e) => {
                    rec.event(t, 0, EventBody::Halt { reason: format!("caption: {e}") });
                    last_belief = Some(fresh);
                    return Ok(false);
                }
            };
            let clip = world.step(&action).map_err(|e| format!("generate: {e}"))?;
            let next = world.sample_frames(&clip, cfg.frames_per_observation).map_err(|e| format!("generate: {e}"))?;
            rec.generated(t, 0, &clip, &next);
            rec.accept_clip(t, 0, &caption, &clip, &next);
            rec.score(world, t);
            obs = next;
            last_belief = Some(fresh);
            Ok(true)
        })();
        match result {
            Ok(true) => {}
            Ok(false) => break,
            Err(message) => {
                rec.event(t, 0, EventBody::Error { message: message.clone() });
                error = Some(message);
                break;
            }
        }
    }
    world.terminate();
    Ok(rec.finish(t, last_belief.as_ref(), error))
}

