//! Prompt templates keyed by role, with `{{name}}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Initialize,
    Observe,
    Think,
    Ground,
    Reflect,
    Revise,
    AfsJudge,
}

impl Role {
    pub const ALL: [Role; 7] =
        [Role::Initialize, Role::Observe, Role::Think, Role::Ground, Role::Reflect, Role::Revise, Role::AfsJudge];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Initialize => "initialize",
            Role::Observe => "observe",
            Role::Think => "think",
            Role::Ground => "ground",
            Role::Reflect => "reflect",
            Role::Revise => "revise",
            Role::AfsJudge => "afs_judge",
        }
    }

    fn default_text(self) -> &'static str {
        match self {
            Role::Initialize => include_str!("../../prompts/initialize.txt"),
            Role::Observe => include_str!("../../prompts/observe.txt"),
            Role::Think => include_str!("../../prompts/think.txt"),
            Role::Ground => include_str!("../../prompts/ground.txt"),
            Role::Reflect => include_str!("../../prompts/reflect.txt"),
            Role::Revise => include_str!("../../prompts/revise.txt"),
            Role::AfsJudge => include_str!("../../prompts/afs_judge.txt"),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| format!("unknown role `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template `{role}` has unbound placeholder `{name}`")]
    Unbound { role: Role, name: String },
    #[error("template `{role}` has an unterminated placeholder at byte {offset}")]
    Unterminated { role: Role, offset: usize },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: Role,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        PromptTemplate { role, text: text.into() }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<String>, PromptError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for piece in scan(self)? {
            if let Piece::Slot(name) = piece {
                if seen.insert(name) {
                    out.push(name.to_string());
                }
            }
        }
        Ok(out)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn scan(t: &PromptTemplate) -> Result<Vec<Piece<'_>>, PromptError> {
    let mut pieces = Vec::new();
    let mut rest = t.text.as_str();
    let mut offset = 0;
    while let Some(open) = rest.find("{{") {
        pieces.push(Piece::Text(&rest[..open]));
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or(PromptError::Unterminated { role: t.role, offset: offset + open })?;
        pieces.push(Piece::Slot(after[..close].trim()));
        let consumed = open + 2 + close + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    pieces.push(Piece::Text(rest));
    Ok(pieces)
}

/// Substitutes every `{{name}}`. Extra bindings are ignored.
pub fn render_prompt(t: &PromptTemplate, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(t.text.len());
    for piece in scan(t)? {
        match piece {
            Piece::Text(s) => out.push_str(s),
            Piece::Slot(name) => match bindings.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(PromptError::Unbound { role: t.role, name: name.to_string() }),
            },
        }
    }
    Ok(out)
}

/// One template per role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<Role, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            templates: Role::ALL.into_iter().map(|r| (r, PromptTemplate::new(r, r.default_text()))).collect(),
        }
    }
}

impl PromptSet {
    /// Defaults, with `{role}.txt` files from `dir` taking precedence.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut set = PromptSet::default();
        for role in Role::ALL {
            let path = dir.as_ref().join(format!("{role}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io { path: path.display().to_string(), message: e.to_string() })?;
                set.templates.insert(role, PromptTemplate::new(role, text));
            }
        }
        Ok(set)
    }

    pub fn get(&self, role: Role) -> &PromptTemplate {
        &self.templates[&role]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.role, template);
    }
}
