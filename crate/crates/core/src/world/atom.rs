//! Ground facts over the scene: who holds what, where things are, object
//! properties and completed events.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A single ground fact. Serialized in its textual form, e.g.
/// `at(seedling,tray)` or `prop(pot,contains,soil)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Atom {
    Holds { avatar: String, object: String },
    At { object: String, location: String },
    Prop { object: String, key: String, value: String },
    Done { event: String },
}

/// Slot an atom assigns. Two atoms with the same key cannot both hold:
/// an object has one placement (held or located) and one value per property.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AtomKey {
    Placement(String),
    Property(String, String),
    Event(String),
}

impl Atom {
    pub fn holds(avatar: impl Into<String>, object: impl Into<String>) -> Self {
        Atom::Holds { avatar: avatar.into(), object: object.into() }
    }

    pub fn at(object: impl Into<String>, location: impl Into<String>) -> Self {
        Atom::At { object: object.into(), location: location.into() }
    }

    pub fn prop(object: impl Into<String>, key: impl Into<String>, value: impl Into<String>) -> Self {
        Atom::Prop { object: object.into(), key: key.into(), value: value.into() }
    }

    pub fn done(event: impl Into<String>) -> Self {
        Atom::Done { event: event.into() }
    }

    pub fn key(&self) -> AtomKey {
        match self {
            Atom::Holds { object, .. } | Atom::At { object, .. } => AtomKey::Placement(object.clone()),
            Atom::Prop { object, key, .. } => AtomKey::Property(object.clone(), key.clone()),
            Atom::Done { event } => AtomKey::Event(event.clone()),
        }
    }

    /// The entity this atom is about. Frame omission drops all atoms sharing
    /// a subject together; events are their own subject.
    pub fn subject(&self) -> &str {
        match self {
            Atom::Holds { object, .. } | Atom::At { object, .. } | Atom::Prop { object, .. } => object,
            Atom::Done { event } => event,
        }
    }

    /// The object argument, if the atom has one.
    pub fn object(&self) -> Option<&str> {
        match self {
            Atom::Holds { object, .. } | Atom::At { object, .. } | Atom::Prop { object, .. } => Some(object),
            Atom::Done { .. } => None,
        }
    }

    pub fn conflicts_with(&self, other: &Atom) -> bool {
        self != other && self.key() == other.key()
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Holds { avatar, object } => write!(f, "holds({avatar},{object})"),
            Atom::At { object, location } => write!(f, "at({object},{location})"),
            Atom::Prop { object, key, value } => write!(f, "prop({object},{key},{value})"),
            Atom::Done { event } => write!(f, "done({event})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed atom `{text}`: {reason}")]
pub struct AtomParseError {
    pub text: String,
    pub reason: String,
}

impl FromStr for Atom {
    type Err = AtomParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| AtomParseError { text: s.to_string(), reason: reason.to_string() };
        let s_trim = s.trim();
        let open = s_trim.find('(').ok_or_else(|| err("missing `(`"))?;
        if !s_trim.ends_with(')') {
            return Err(err("missing `)`"));
        }
        let kind = s_trim[..open].trim();
        let args: Vec<String> = s_trim[open + 1..s_trim.len() - 1]
            .split(',')
            .map(|a| a.trim().to_string())
            .collect();
        if args.iter().any(|a| a.is_empty()) {
            return Err(err("empty argument"));
        }
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(err(&format!("`{kind}` takes {n} arguments, got {}", args.len())))
            }
        };
        match kind {
            "holds" => {
                arity(2)?;
                Ok(Atom::holds(&args[0], &args[1]))
            }
            "at" => {
                arity(2)?;
                Ok(Atom::at(&args[0], &args[1]))
            }
            "prop" => {
                arity(3)?;
                Ok(Atom::prop(&args[0], &args[1], &args[2]))
            }
            "done" => {
                arity(1)?;
                Ok(Atom::done(&args[0]))
            }
            other => Err(err(&format!("unknown atom kind `{other}`"))),
        }
    }
}

impl TryFrom<String> for Atom {
    type Error = AtomParseError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Atom> for String {
    fn from(atom: Atom) -> Self {
        atom.to_string()
    }
}

pub type AtomSet = BTreeSet<Atom>;

/// Overlay `assignments` onto `base`: every base atom whose key is assigned
/// is replaced.
pub fn overlay(base: &AtomSet, assignments: &[Atom]) -> AtomSet {
    let mut out: AtomSet = base
        .iter()
        .filter(|a| !assignments.iter().any(|b| a.key() == b.key()))
        .cloned()
        .collect();
    out.extend(assignments.iter().cloned());
    out
}

/// Pairs of atoms within `atoms` that assign the same key.
pub fn contradictions<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> Vec<(Atom, Atom)> {
    let atoms: Vec<&Atom> = atoms.into_iter().collect();
    let mut out = Vec::new();
    for (i, a) in atoms.iter().enumerate() {
        for b in &atoms[i + 1..] {
            if a.conflicts_with(b) {
                out.push(((*a).clone(), (*b).clone()));
            }
        }
    }
    out
}
