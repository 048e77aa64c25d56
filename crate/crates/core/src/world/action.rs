//! Structured actions, the constrained caption grammar, and verb semantics
//! shared by the simulator and the scripted grounding policy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::atom::{Atom, AtomSet};
use super::task::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    PickUp,
    Place,
    Open,
    Close,
    Pour,
    Attach,
    Detach,
    Activate,
    Deactivate,
    Give,
    Gesture,
    Speak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arity {
    None,
    Optional,
    Required,
}

impl Verb {
    pub const ALL: [Verb; 12] = [
        Verb::PickUp,
        Verb::Place,
        Verb::Open,
        Verb::Close,
        Verb::Pour,
        Verb::Attach,
        Verb::Detach,
        Verb::Activate,
        Verb::Deactivate,
        Verb::Give,
        Verb::Gesture,
        Verb::Speak,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::PickUp => "pick_up",
            Verb::Place => "place",
            Verb::Open => "open",
            Verb::Close => "close",
            Verb::Pour => "pour",
            Verb::Attach => "attach",
            Verb::Detach => "detach",
            Verb::Activate => "activate",
            Verb::Deactivate => "deactivate",
            Verb::Give => "give",
            Verb::Gesture => "gesture",
            Verb::Speak => "speak",
        }
    }

    fn object_arity(self) -> Arity {
        match self {
            Verb::Gesture => Arity::Optional,
            Verb::Speak => Arity::None,
            _ => Arity::Required,
        }
    }

    fn target_arity(self) -> Arity {
        match self {
            Verb::Place | Verb::Pour | Verb::Attach | Verb::Give => Arity::Required,
            _ => Arity::None,
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Verb::ALL.into_iter().find(|v| v.as_str() == lower).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldAction {
    pub verb: Verb,
    pub actor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    /// Object id, location label or avatar id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub raw_caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CaptionError {
    #[error("unparseable caption `{caption}`: {reason}")]
    Unparseable { caption: String, reason: String },
    #[error("ambiguous reference `{token}`: candidates {}", candidates.join(", "))]
    Ambiguous { token: String, candidates: Vec<String> },
    #[error("unknown entity `{token}`")]
    UnknownEntity { token: String },
}

pub fn avatar_token(avatar: &str) -> String {
    format!("AVATAR_{avatar}")
}

impl WorldAction {
    pub fn new(verb: Verb, actor: &str, object: Option<&str>, target: Option<&str>) -> Self {
        let mut action = WorldAction {
            verb,
            actor: actor.to_string(),
            object: object.map(str::to_string),
            target: target.map(str::to_string),
            raw_caption: String::new(),
        };
        action.raw_caption = action.caption(&[]);
        action
    }

    /// Renders in the caption grammar. Targets naming one of `avatars` are
    /// written as avatar tokens.
    pub fn caption(&self, avatars: &[String]) -> String {
        let mut out = format!("{} {}", avatar_token(&self.actor), self.verb);
        if let Some(o) = &self.object {
            out.push(' ');
            out.push_str(o);
            if let Some(t) = &self.target {
                out.push_str(" -> ");
                if avatars.iter().any(|a| a == t) {
                    out.push_str(&avatar_token(t));
                } else {
                    out.push_str(t);
                }
            }
        }
        out
    }

    /// Same action with a different object.
    pub fn with_object(&self, object: &str) -> Self {
        WorldAction { object: Some(object.to_string()), ..self.clone() }
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace(' ', "_")
}

/// Exact match first, then unique substring match.
fn resolve<'a>(token: &str, candidates: &[(&'a str, Vec<String>)]) -> Result<&'a str, CaptionError> {
    let wanted = normalize(token);
    let mut exact: Vec<&str> = candidates
        .iter()
        .filter(|(_, names)| names.iter().any(|n| normalize(n) == wanted))
        .map(|(id, _)| *id)
        .collect();
    exact.dedup();
    match exact.len() {
        1 => return Ok(exact[0]),
        n if n > 1 => {
            return Err(CaptionError::Ambiguous {
                token: token.to_string(),
                candidates: exact.iter().map(|s| s.to_string()).collect(),
            })
        }
        _ => {}
    }
    let mut partial: Vec<&str> = candidates
        .iter()
        .filter(|(_, names)| names.iter().any(|n| normalize(n).contains(&wanted)))
        .map(|(id, _)| *id)
        .collect();
    partial.dedup();
    match partial.len() {
        0 => Err(CaptionError::UnknownEntity { token: token.to_string() }),
        1 => Ok(partial[0]),
        _ => Err(CaptionError::Ambiguous {
            token: token.to_string(),
            candidates: partial.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

fn resolve_avatar(token: &str, task: &TaskSpec) -> Option<String> {
    let lower = token.to_ascii_lowercase();
    let bare = lower.strip_prefix("avatar_").unwrap_or(&lower);
    task.avatars.iter().find(|a| a.to_ascii_lowercase() == bare).cloned()
}

/// Parses `actor SP verb [SP object [SP "->" SP target]]` and grounds entity
/// names against the task inventory.
pub fn interpret_caption(caption: &str, task: &TaskSpec) -> Result<WorldAction, CaptionError> {
    let bad = |reason: String| CaptionError::Unparseable { caption: caption.to_string(), reason };
    let tokens: Vec<&str> = caption.split_whitespace().collect();
    if tokens.len() < 2 {
        return Err(bad("expected at least an actor and a verb".into()));
    }
    let actor = resolve_avatar(tokens[0], task).ok_or_else(|| bad(format!("unknown actor `{}`", tokens[0])))?;
    let verb: Verb = tokens[1].parse().map_err(|_| bad(format!("unknown verb `{}`", tokens[1])))?;

    let (object_tok, target_tok) = match &tokens[2..] {
        [] => (None, None),
        [o] => (Some(*o), None),
        [o, "->", t] => (Some(*o), Some(*t)),
        _ => return Err(bad("expected `object` or `object -> target` after the verb".into())),
    };

    match (verb.object_arity(), object_tok) {
        (Arity::Required, None) => return Err(bad(format!("`{verb}` requires an object"))),
        (Arity::None, Some(_)) => return Err(bad(format!("`{verb}` takes no object"))),
        _ => {}
    }
    match (verb.target_arity(), target_tok) {
        (Arity::Required, None) => return Err(bad(format!("`{verb}` requires a target"))),
        (Arity::None, Some(_)) => return Err(bad(format!("`{verb}` takes no target"))),
        _ => {}
    }

    let objects: Vec<(&str, Vec<String>)> =
        task.objects.iter().map(|o| (o.id.as_str(), vec![o.id.clone(), o.name.clone()])).collect();
    let object = object_tok.map(|t| resolve(t, &objects).map(str::to_string)).transpose()?;

    let target = match target_tok {
        None => None,
        Some(t) => Some(match resolve_avatar(t, task) {
            Some(a) => a,
            None => {
                let labels = task.location_labels();
                let mut places = objects.clone();
                places.extend(labels.iter().map(|l| (l.as_str(), vec![l.clone()])));
                resolve(t, &places)?.to_string()
            }
        }),
    };
    if verb == Verb::Give && !target.as_deref().is_some_and(|t| task.is_avatar(t)) {
        return Err(bad("`give` must target an avatar".into()));
    }

    Ok(WorldAction { verb, actor, object, target, raw_caption: caption.to_string() })
}

// ---------------------------------------------------------------------------
// Verb semantics
// ---------------------------------------------------------------------------

fn hand_empty(atoms: &AtomSet, avatar: &str) -> bool {
    !atoms.iter().any(|a| matches!(a, Atom::Holds { avatar: h, .. } if h == avatar))
}

fn prop_value<'a>(atoms: &'a AtomSet, object: &str, key: &str) -> Option<&'a str> {
    atoms.iter().find_map(|a| match a {
        Atom::Prop { object: o, key: k, value } if o == object && k == key => Some(value.as_str()),
        _ => None,
    })
}

pub fn holder<'a>(atoms: &'a AtomSet, object: &str) -> Option<&'a str> {
    atoms.iter().find_map(|a| match a {
        Atom::Holds { avatar, object: o } if o == object => Some(avatar.as_str()),
        _ => None,
    })
}

pub fn location<'a>(atoms: &'a AtomSet, object: &str) -> Option<&'a str> {
    atoms.iter().find_map(|a| match a {
        Atom::At { object: o, location } if o == object => Some(location.as_str()),
        _ => None,
    })
}

pub fn present(atoms: &AtomSet, entity: &str) -> bool {
    atoms.iter().any(|a| a.subject() == entity)
}

pub fn gesture_event(actor: &str, object: Option<&str>) -> String {
    match object {
        Some(o) => format!("gesture:{actor}:{o}"),
        None => format!("gesture:{actor}"),
    }
}

pub fn speak_event(actor: &str) -> String {
    format!("speak:{actor}")
}

/// Atom assignments produced by `action` in `atoms`, or `None` when the
/// verb's preconditions fail.
pub fn effects(action: &WorldAction, atoms: &AtomSet, avatars: &[String]) -> Option<Vec<Atom>> {
    let actor = action.actor.as_str();
    let obj = action.object.as_deref();
    let target = action.target.as_deref();
    let holds_obj = |o: &str| holder(atoms, o) == Some(actor);
    match action.verb {
        Verb::PickUp => {
            let o = obj?;
            (location(atoms, o).is_some()
                && holder(atoms, o).is_none()
                && prop_value(atoms, o, "attached") != Some("yes")
                && hand_empty(atoms, actor))
            .then(|| vec![Atom::holds(actor, o)])
        }
        Verb::Place => {
            let (o, t) = (obj?, target?);
            (holds_obj(o) && o != t).then(|| vec![Atom::at(o, t)])
        }
        Verb::Open => switch(atoms, obj?, "state", "closed", "open"),
        Verb::Close => switch(atoms, obj?, "state", "open", "closed"),
        Verb::Activate => switch(atoms, obj?, "power", "off", "on"),
        Verb::Deactivate => switch(atoms, obj?, "power", "on", "off"),
        Verb::Pour => {
            let (o, t) = (obj?, target?);
            let stuff = prop_value(atoms, o, "contains")?;
            (holds_obj(o) && o != t && stuff != "empty" && !avatars.iter().any(|a| a == t))
                .then(|| vec![Atom::prop(t, "contains", stuff)])
        }
        Verb::Attach => {
            let (o, t) = (obj?, target?);
            (holds_obj(o) && o != t).then(|| vec![Atom::at(o, t), Atom::prop(o, "attached", "yes")])
        }
        Verb::Detach => {
            let o = obj?;
            (prop_value(atoms, o, "attached") == Some("yes") && holder(atoms, o).is_none() && hand_empty(atoms, actor))
                .then(|| vec![Atom::holds(actor, o), Atom::prop(o, "attached", "no")])
        }
        Verb::Give => {
            let (o, t) = (obj?, target?);
            (holds_obj(o) && t != actor && avatars.iter().any(|a| a == t) && hand_empty(atoms, t))
                .then(|| vec![Atom::holds(t, o)])
        }
        Verb::Gesture => {
            if let Some(o) = obj {
                if !present(atoms, o) {
                    return None;
                }
            }
            Some(vec![Atom::done(gesture_event(actor, obj))])
        }
        Verb::Speak => Some(vec![Atom::done(speak_event(actor))]),
    }
}

fn switch(atoms: &AtomSet, object: &str, key: &str, from: &str, to: &str) -> Option<Vec<Atom>> {
    (prop_value(atoms, object, key) == Some(from)).then(|| vec![Atom::prop(object, key, to)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::task::{ObjectSpec, Scenario, SubGoalSpec};

    pub(crate) fn toy_task() -> TaskSpec {
        let obj = |id: &str, name: &str, loc: &str| ObjectSpec {
            id: id.into(),
            name: name.into(),
            location: loc.into(),
            properties: Default::default(),
        };
        let sg = |id: &str, atom: Atom| SubGoalSpec {
            id: id.into(),
            description: id.into(),
            actor: None,
            preconditions: vec![],
            completion_predicate: vec![atom.clone()],
            effects: vec![atom],
        };
        TaskSpec {
            task_id: "toy".into(),
            scenario: Scenario::Garden,
            avatars: vec!["A".into(), "B".into()],
            intention: "toy".into(),
            objects: vec![
                obj("seedling", "seedling", "tray"),
                obj("pot", "clay pot", "bench"),
                obj("red_cup", "red cup", "shelf"),
                obj("blue_cup", "blue cup", "shelf"),
            ],
            subgoals: vec![
                sg("s1", Atom::holds("A", "seedling")),
                sg("s2", Atom::at("seedling", "pot")),
                sg("s3", Atom::at("red_cup", "bench")),
            ],
            dependency_mode: None,
            dependencies: vec![],
            reference_actions: vec![],
        }
    }

    #[test]
    fn parses_pick_up() {
        let a = interpret_caption("AVATAR_A pick_up seedling", &toy_task()).unwrap();
        assert_eq!(a.verb, Verb::PickUp);
        assert_eq!(a.actor, "A");
        assert_eq!(a.object.as_deref(), Some("seedling"));
        assert_eq!(a.target, None);
    }

    #[test]
    fn parses_place_with_target() {
        let a = interpret_caption("AVATAR_A place seedling -> pot", &toy_task()).unwrap();
        assert_eq!(a.verb, Verb::Place);
        assert_eq!(a.object.as_deref(), Some("seedling"));
        assert_eq!(a.target.as_deref(), Some("pot"));
    }

    #[test]
    fn unknown_verb_is_unparseable() {
        let err = interpret_caption("AVATAR_A juggle seedling", &toy_task()).unwrap_err();
        assert!(matches!(err, CaptionError::Unparseable { .. }), "{err:?}");
    }

    #[test]
    fn resolution_is_case_insensitive_and_by_name() {
        let t = toy_task();
        assert_eq!(interpret_caption("avatar_a pick_up SEEDLING", &t).unwrap().object.as_deref(), Some("seedling"));
        assert_eq!(interpret_caption("AVATAR_A pick_up Clay_Pot", &t).unwrap().object.as_deref(), Some("pot"));
        assert_eq!(interpret_caption("AVATAR_A pick_up red", &t).unwrap().object.as_deref(), Some("red_cup"));
    }

    #[test]
    fn ambiguous_substring_lists_candidates() {
        match interpret_caption("AVATAR_A pick_up cup", &toy_task()).unwrap_err() {
            CaptionError::Ambiguous { candidates, .. } => {
                assert_eq!(candidates, vec!["red_cup".to_string(), "blue_cup".to_string()])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_entity() {
        let err = interpret_caption("AVATAR_A pick_up trowel", &toy_task()).unwrap_err();
        assert_eq!(err, CaptionError::UnknownEntity { token: "trowel".into() });
    }

    #[test]
    fn verb_arguments_are_checked() {
        let t = toy_task();
        assert!(interpret_caption("AVATAR_A place seedling", &t).is_err());
        assert!(interpret_caption("AVATAR_A pick_up seedling -> pot", &t).is_err());
        assert!(interpret_caption("AVATAR_A speak seedling", &t).is_err());
        assert!(interpret_caption("AVATAR_A give seedling -> pot", &t).is_err());
        assert!(interpret_caption("AVATAR_A speak", &t).is_ok());
        assert!(interpret_caption("AVATAR_A gesture", &t).is_ok());
        let give = interpret_caption("AVATAR_A give seedling -> AVATAR_B", &t).unwrap();
        assert_eq!(give.target.as_deref(), Some("B"));
    }

    #[test]
    fn caption_round_trips_through_grammar() {
        let t = toy_task();
        for caption in ["AVATAR_A place seedling -> pot", "AVATAR_B give red_cup -> AVATAR_A", "AVATAR_A speak"] {
            let a = interpret_caption(caption, &t).unwrap();
            assert_eq!(a.caption(&t.avatars), caption);
        }
    }

    #[test]
    fn pick_up_needs_free_hand() {
        let t = toy_task();
        let mut atoms = t.initial_atoms();
        let pick = WorldAction::new(Verb::PickUp, "A", Some("seedling"), None);
        assert_eq!(effects(&pick, &atoms, &t.avatars), Some(vec![Atom::holds("A", "seedling")]));
        atoms.insert(Atom::holds("A", "red_cup"));
        atoms.remove(&Atom::at("red_cup", "shelf"));
        assert_eq!(effects(&pick, &atoms, &t.avatars), None);
    }

    #[test]
    fn switches_require_the_opposite_state() {
        let t = toy_task();
        let mut atoms = t.initial_atoms();
        atoms.insert(Atom::prop("pot", "state", "closed"));
        let open = WorldAction::new(Verb::Open, "A", Some("pot"), None);
        let close = WorldAction::new(Verb::Close, "A", Some("pot"), None);
        assert_eq!(effects(&open, &atoms, &t.avatars), Some(vec![Atom::prop("pot", "state", "open")]));
        assert_eq!(effects(&close, &atoms, &t.avatars), None);
    }
}
