//! Extracting the single structured block from a model reply and checking
//! it against the role's schema.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::prompt::Role;
use crate::world::Atom;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplyError {
    #[error("reply is empty")]
    Empty,
    #[error("reply contains no JSON block")]
    NoBlock,
    #[error("reply contains {0} JSON blocks, expected exactly one")]
    MultipleBlocks(usize),
    #[error("JSON block does not parse: {0}")]
    Syntax(String),
    #[error("reply violates the {role} schema: {message}")]
    Schema { role: Role, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitializeReply {
    pub plan: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserveReply {
    #[serde(default)]
    pub asserted: Vec<Atom>,
    #[serde(default)]
    pub retracted: Vec<Atom>,
    #[serde(default)]
    pub completed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkReply {
    pub command: String,
    #[serde(default)]
    pub target_subgoal: Option<String>,
    #[serde(default)]
    pub replan: bool,
    #[serde(default)]
    pub predicted_state: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionReply {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectMismatch {
    pub expected: Atom,
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectReply {
    pub decision: crate::belief::Decision,
    #[serde(default)]
    pub analysis: String,
    #[serde(default)]
    pub mismatches: Vec<ReflectMismatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfsReply {
    pub af: u8,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedReply {
    Initialize(InitializeReply),
    Observe(ObserveReply),
    Think(ThinkReply),
    Ground(CaptionReply),
    Reflect(ReflectReply),
    Revise(CaptionReply),
    AfsJudge(AfsReply),
}

/// Returns the text of the single structured block. Fenced blocks are
/// preferred; without fences, a single balanced top-level object in the prose
/// is accepted.
pub fn extract_block(text: &str) -> Result<&str, ReplyError> {
    if text.trim().is_empty() {
        return Err(ReplyError::Empty);
    }
    let fenced = fenced_blocks(text);
    let candidates: Vec<&str> = if fenced.is_empty() {
        bare_objects(text).into_iter().filter(|s| serde_json::from_str::<serde_json::Value>(s).is_ok()).collect()
    } else {
        fenced
    };
    match candidates.len() {
        0 => Err(ReplyError::NoBlock),
        1 => Ok(candidates[0]),
        n => Err(ReplyError::MultipleBlocks(n)),
    }
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    // Odd pieces lie inside a fence; an unclosed final fence still counts.
    text.split("```")
        .skip(1)
        .step_by(2)
        .filter_map(|inside| {
            // Drop an info string such as `json` on the opening line.
            let body = match inside.find('\n') {
                Some(nl) if !inside[..nl].trim_start().starts_with(['{', '[']) => &inside[nl + 1..],
                _ => inside,
            };
            let body = body.trim();
            (body.starts_with('{') || body.starts_with('[')).then_some(body)
        })
        .collect()
}

fn bare_objects(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start, mut in_str, mut escaped) = (0usize, 0usize, false, false);
    for (i, c) in text.char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_str = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    out.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    out
}

fn typed<T: DeserializeOwned>(role: Role, block: &str) -> Result<T, ReplyError> {
    let value: serde_json::Value = serde_json::from_str(block).map_err(|e| ReplyError::Syntax(e.to_string()))?;
    serde_json::from_value(value).map_err(|e| ReplyError::Schema { role, message: e.to_string() })
}

fn schema(role: Role, message: impl Into<String>) -> ReplyError {
    ReplyError::Schema { role, message: message.into() }
}

pub fn parse_reply(role: Role, text: &str) -> Result<ParsedReply, ReplyError> {
    let block = extract_block(text)?;
    Ok(match role {
        Role::Initialize => {
            let r: InitializeReply = typed(role, block)?;
            if r.plan.is_empty() {
                return Err(schema(role, "plan is empty"));
            }
            ParsedReply::Initialize(r)
        }
        Role::Observe => ParsedReply::Observe(typed(role, block)?),
        Role::Think => {
            let r: ThinkReply = typed(role, block)?;
            if !r.replan && r.target_subgoal.is_none() {
                return Err(schema(role, "target_subgoal is required unless replan is true"));
            }
            ParsedReply::Think(r)
        }
        Role::Ground | Role::Revise => {
            let r: CaptionReply = typed(role, block)?;
            if r.caption.trim().is_empty() {
                return Err(schema(role, "caption is empty"));
            }
            if role == Role::Ground {
                ParsedReply::Ground(r)
            } else {
                ParsedReply::Revise(r)
            }
        }
        Role::Reflect => {
            let r: ReflectReply = typed(role, block)?;
            if r.decision == crate::belief::Decision::Reject && r.analysis.trim().is_empty() {
                return Err(schema(role, "a reject needs an analysis"));
            }
            ParsedReply::Reflect(r)
        }
        Role::AfsJudge => {
            let r: AfsReply = typed(role, block)?;
            if r.af > 1 {
                return Err(schema(role, format!("af must be 0 or 1, got {}", r.af)));
            }
            ParsedReply::AfsJudge(r)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn afs_reply_parses() {
        let r = parse_reply(Role::AfsJudge, r#"{"af":1,"reason":"pickup visible"}"#).unwrap();
        assert_eq!(r, ParsedReply::AfsJudge(AfsReply { af: 1, reason: "pickup visible".into() }));
    }

    #[test]
    fn afs_reply_after_thinking_section() {
        let text = "<thinking>The hand closes on the cup.</thinking>\n{\n  \"af\": 0,\n  \"reason\": \"wrong object {cup}\"\n}";
        assert!(matches!(parse_reply(Role::AfsJudge, text), Ok(ParsedReply::AfsJudge(AfsReply { af: 0, .. }))));
    }

    #[test]
    fn afs_out_of_domain_is_schema_error() {
        assert!(matches!(parse_reply(Role::AfsJudge, r#"{"af":2}"#), Err(ReplyError::Schema { .. })));
    }

    #[test]
    fn prose_then_fenced_block() {
        let text = "Sure, here is the caption.\n```json\n{\"caption\": \"AVATAR_A pick_up seedling\"}\n```\nGood luck!";
        assert_eq!(
            parse_reply(Role::Ground, text).unwrap(),
            ParsedReply::Ground(CaptionReply { caption: "AVATAR_A pick_up seedling".into() })
        );
    }

    #[test]
    fn two_blocks_are_rejected() {
        let text = "```json\n{\"caption\":\"a\"}\n```\nor\n```json\n{\"caption\":\"b\"}\n```";
        assert_eq!(parse_reply(Role::Revise, text), Err(ReplyError::MultipleBlocks(2)));
    }

    #[test]
    fn missing_block_and_empty_reply() {
        assert_eq!(parse_reply(Role::Ground, "I would pick up the seedling."), Err(ReplyError::NoBlock));
        assert_eq!(parse_reply(Role::Ground, "  "), Err(ReplyError::Empty));
    }

    #[test]
    fn think_reply_atoms_are_checked() {
        let ok = r#"{"command":"pick","target_subgoal":"sg1","predicted_state":["holds(A,seedling)"]}"#;
        match parse_reply(Role::Think, ok).unwrap() {
            ParsedReply::Think(t) => assert_eq!(t.predicted_state, vec![Atom::holds("A", "seedling")]),
            other => panic!("{other:?}"),
        }
        let bad = r#"{"command":"pick","target_subgoal":"sg1","predicted_state":["holds(A)"]}"#;
        assert!(matches!(parse_reply(Role::Think, bad), Err(ReplyError::Schema { .. })));
        let untargeted = r#"{"command":"pick"}"#;
        assert!(matches!(parse_reply(Role::Think, untargeted), Err(ReplyError::Schema { .. })));
    }

    #[test]
    fn reject_requires_analysis() {
        assert!(parse_reply(Role::Reflect, r#"{"decision":"reject"}"#).is_err());
        assert!(parse_reply(Role::Reflect, r#"{"decision":"accept"}"#).is_ok());
    }

    #[test]
    fn unclosed_fence_still_counts() {
        let text = "```json\n{\"plan\":[\"sg1\"]}";
        assert!(parse_reply(Role::Initialize, text).is_ok());
    }
}
