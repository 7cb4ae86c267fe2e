//! Action scripts, keyframe plans and interpolation-job manifests.
//!
//! Script grammar, one action per line after an optional scene header
//! terminated by a line containing only `---`:
//!
//! ```text
//! A small living room with a sofa and a desk.
//! ---
//! 1. [INTERACTIVE] sit on the sofa @ sofa | contacts: buttocks->seat, back->backrest
//! 2. [TRANSITION] stand up and walk to the desk
//! 3. [INTERACTIVE] lean on the desk @ desk | contacts: left hand->desk top, right hand->desk top
//! ```
//!
//! Blank lines between actions are ignored. Indices must run 1, 2, 3, ...

mod manifest;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BodyPart;

pub use manifest::{export_plan, import_manifest, read_manifest, write_manifest, ManifestError, ManifestJob, ManifestKeyframe, PlanManifest, DEFAULT_DURATION_HINT, MANIFEST_VERSION};

pub const SCRIPT_VERSION: u32 = 1;
pub const HEADER_DELIMITER: &str = "---";
pub const DEFAULT_TRANSITION: &str = "natural transition";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Interactive,
    Transition,
}

impl ActionKind {
    pub fn tag(self) -> &'static str {
        match self {
            ActionKind::Interactive => "INTERACTIVE",
            ActionKind::Transition => "TRANSITION",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContactPair {
    pub human_part: BodyPart,
    pub object_region: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicAction {
    pub index: usize,
    pub kind: ActionKind,
    pub description: String,
    pub target_object: Option<String>,
    pub contacts: Vec<ContactPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScript {
    pub scene_description: String,
    pub actions: Vec<AtomicAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyframe {
    pub keyframe_id: usize,
    pub source_action: usize,
    pub target_object: String,
    pub contacts: Vec<ContactPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub from_keyframe: usize,
    pub to_keyframe: usize,
    pub transition_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframePlan {
    pub keyframes: Vec<Keyframe>,
    pub segments: Vec<PlanSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptErrorKind {
    #[error("document is empty")]
    Empty,
    #[error("script has no INTERACTIVE action")]
    NoInteractive,
    #[error("unknown body part '{0}'")]
    UnknownPart(String),
    #[error("duplicate action index {index} (first used on line {first_line})")]
    DuplicateIndex { index: usize, first_line: usize },
    #[error("expected action index {expected}, found {found}")]
    NonContiguousIndex { expected: usize, found: usize },
    #[error("INTERACTIVE action has no contacts")]
    MissingContacts,
    #[error("INTERACTIVE action has no target object (expected '@ <object-id>')")]
    MissingTarget,
    #[error("TRANSITION action cannot have contacts")]
    TransitionWithContacts,
    #[error("TRANSITION before the first INTERACTIVE action has no keyframe pair to label")]
    LeadingTransition,
    #[error("TRANSITION after the last INTERACTIVE action has no keyframe pair to label")]
    TrailingTransition,
    #[error("unknown action kind '[{0}]'")]
    UnknownKind(String),
    #[error("invalid object id '{0}'")]
    InvalidObject(String),
    #[error("invalid object region '{0}'")]
    InvalidRegion(String),
    #[error("empty action description")]
    EmptyDescription,
    #[error("scene description cannot contain a '---' line or surrounding whitespace")]
    InvalidScene,
    #[error("{0}")]
    Malformed(String),
}

/// A script diagnostic. Line numbers are 1-based; errors about the document
/// as a whole point at its last line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ScriptError {
    pub line: usize,
    pub kind: ScriptErrorKind,
}

fn err(line: usize, kind: ScriptErrorKind) -> ScriptError {
    ScriptError { line, kind }
}

fn valid_object_id(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '@' || c == '|' || c == ',')
}

fn valid_region(s: &str) -> bool {
    !s.is_empty() && s == s.trim() && !s.contains(['|', ',', '\n', '\r']) && !s.contains("->")
}

fn valid_description(s: &str) -> bool {
    !s.is_empty() && s == s.trim() && !s.contains(['\n', '\r'])
}

fn parse_contacts(text: &str, line: usize) -> Result<Vec<ContactPair>, ScriptError> {
    let mut out = Vec::new();
    for item in text.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (part, region) = item
            .split_once("->")
            .ok_or_else(|| err(line, ScriptErrorKind::Malformed(format!("contact '{item}' is not of the form <part>-><region>"))))?;
        let human_part: BodyPart = part.parse().map_err(|_| err(line, ScriptErrorKind::UnknownPart(part.trim().to_string())))?;
        let region = region.trim();
        if !valid_region(region) {
            return Err(err(line, ScriptErrorKind::InvalidRegion(region.to_string())));
        }
        out.push(ContactPair {
            human_part,
            object_region: region.to_string(),
        });
    }
    if out.is_empty() {
        return Err(err(line, ScriptErrorKind::MissingContacts));
    }
    Ok(out)
}

fn parse_action(text: &str, line: usize) -> Result<AtomicAction, ScriptError> {
    let malformed = |m: &str| err(line, ScriptErrorKind::Malformed(m.to_string()));
    let (index, rest) = text.split_once('.').ok_or_else(|| malformed("expected '<index>. [KIND] <description>'"))?;
    let index = index.trim();
    if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(&format!("invalid action index '{index}'")));
    }
    let index: usize = index.parse().map_err(|_| malformed(&format!("action index '{index}' is too large")))?;
    let rest = rest.trim_start();
    let rest = rest.strip_prefix('[').ok_or_else(|| malformed("expected a [KIND] tag after the index"))?;
    let (tag, body) = rest.split_once(']').ok_or_else(|| malformed("unterminated [KIND] tag"))?;
    let body = body.trim();
    let kind = match tag {
        "INTERACTIVE" => ActionKind::Interactive,
        "TRANSITION" => ActionKind::Transition,
        other => return Err(err(line, ScriptErrorKind::UnknownKind(other.to_string()))),
    };

    let contacts_split = body
        .rsplit_once('|')
        .and_then(|(head, tail)| tail.trim_start().strip_prefix("contacts:").map(|c| (head, c)));
    match kind {
        ActionKind::Transition => {
            if contacts_split.is_some() {
                return Err(err(line, ScriptErrorKind::TransitionWithContacts));
            }
            if body.is_empty() {
                return Err(err(line, ScriptErrorKind::EmptyDescription));
            }
            Ok(AtomicAction {
                index,
                kind,
                description: body.to_string(),
                target_object: None,
                contacts: Vec::new(),
            })
        }
        ActionKind::Interactive => {
            let (head, contacts) = contacts_split.ok_or_else(|| err(line, ScriptErrorKind::MissingContacts))?;
            let (description, object) = head.rsplit_once('@').ok_or_else(|| err(line, ScriptErrorKind::MissingTarget))?;
            let (description, object) = (description.trim(), object.trim());
            if object.is_empty() {
                return Err(err(line, ScriptErrorKind::MissingTarget));
            }
            if !valid_object_id(object) {
                return Err(err(line, ScriptErrorKind::InvalidObject(object.to_string())));
            }
            if description.is_empty() {
                return Err(err(line, ScriptErrorKind::EmptyDescription));
            }
            Ok(AtomicAction {
                index,
                kind,
                description: description.to_string(),
                target_object: Some(object.to_string()),
                contacts: parse_contacts(contacts, line)?,
            })
        }
    }
}

/// Parses and validates a script document.
pub fn parse_script(text: &str) -> Result<ActionScript, ScriptError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let lines: Vec<&str> = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let last_line = lines.len().max(1);
    if lines.iter().all(|l| l.trim().is_empty()) {
        return Err(err(last_line, ScriptErrorKind::Empty));
    }

    let (scene_description, body_start) = match lines.iter().position(|l| l.trim() == HEADER_DELIMITER) {
        Some(p) => (lines[..p].join("\n").trim().to_string(), p + 1),
        None => (String::new(), 0),
    };

    let mut actions = Vec::new();
    let mut action_lines = Vec::new();
    let mut seen: HashMap<usize, usize> = HashMap::new();
    for (offset, raw) in lines[body_start..].iter().enumerate() {
        let line = body_start + offset + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let action = parse_action(raw.trim(), line)?;
        if let Some(&first_line) = seen.get(&action.index) {
            return Err(err(line, ScriptErrorKind::DuplicateIndex { index: action.index, first_line }));
        }
        let expected = actions.len() + 1;
        if action.index != expected {
            return Err(err(line, ScriptErrorKind::NonContiguousIndex { expected, found: action.index }));
        }
        seen.insert(action.index, line);
        action_lines.push(line);
        actions.push(action);
    }

    let interactive: Vec<usize> = (0..actions.len()).filter(|&i| actions[i].kind == ActionKind::Interactive).collect();
    let (Some(&first), Some(&last)) = (interactive.first(), interactive.last()) else {
        return Err(err(last_line, ScriptErrorKind::NoInteractive));
    };
    if first > 0 {
        return Err(err(action_lines[0], ScriptErrorKind::LeadingTransition));
    }
    if last + 1 < actions.len() {
        return Err(err(action_lines[last + 1], ScriptErrorKind::TrailingTransition));
    }
    Ok(ActionScript { scene_description, actions })
}

impl ActionScript {
    /// Checks the invariants `parse_script` enforces, for scripts built in
    /// code. The reported line is the one the action would occupy in
    /// `to_text` output.
    pub fn validate(&self) -> Result<(), ScriptError> {
        let header = if self.scene_description.is_empty() {
            0
        } else {
            self.scene_description.lines().count() + 1
        };
        if self.scene_description != self.scene_description.trim() || self.scene_description.lines().any(|l| l.trim() == HEADER_DELIMITER) {
            return Err(err(1, ScriptErrorKind::InvalidScene));
        }
        if self.actions.is_empty() {
            return Err(err(header.max(1), ScriptErrorKind::Empty));
        }
        for (i, a) in self.actions.iter().enumerate() {
            let line = header + i + 1;
            if a.index != i + 1 {
                return Err(err(line, ScriptErrorKind::NonContiguousIndex { expected: i + 1, found: a.index }));
            }
            if !valid_description(&a.description) {
                return Err(err(line, ScriptErrorKind::EmptyDescription));
            }
            match a.kind {
                ActionKind::Transition => {
                    if !a.contacts.is_empty() {
                        return Err(err(line, ScriptErrorKind::TransitionWithContacts));
                    }
                    if a.target_object.is_some() {
                        return Err(err(line, ScriptErrorKind::Malformed("TRANSITION actions carry no target object".into())));
                    }
                    // the parser would read a trailing contacts clause as contacts
                    if a.description.rsplit_once('|').is_some_and(|(_, t)| t.trim_start().starts_with("contacts:")) {
                        return Err(err(line, ScriptErrorKind::TransitionWithContacts));
                    }
                }
                ActionKind::Interactive => {
                    let object = a.target_object.as_deref().ok_or_else(|| err(line, ScriptErrorKind::MissingTarget))?;
                    if !valid_object_id(object) {
                        return Err(err(line, ScriptErrorKind::InvalidObject(object.to_string())));
                    }
                    if a.contacts.is_empty() {
                        return Err(err(line, ScriptErrorKind::MissingContacts));
                    }
                    if let Some(c) = a.contacts.iter().find(|c| !valid_region(&c.object_region)) {
                        return Err(err(line, ScriptErrorKind::InvalidRegion(c.object_region.clone())));
                    }
                }
            }
        }
        let first = self.actions.iter().position(|a| a.kind == ActionKind::Interactive);
        let last = self.actions.iter().rposition(|a| a.kind == ActionKind::Interactive);
        match (first, last) {
            (Some(f), Some(l)) => {
                if f > 0 {
                    return Err(err(header + 1, ScriptErrorKind::LeadingTransition));
                }
                if l + 1 < self.actions.len() {
                    return Err(err(header + l + 2, ScriptErrorKind::TrailingTransition));
                }
            }
            _ => return Err(err(header + self.actions.len(), ScriptErrorKind::NoInteractive)),
        }
        Ok(())
    }

    /// Canonical text form; `parse_script(&s.to_text())` returns `s` for
    /// every valid script.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn interactive_count(&self) -> usize {
        self.actions.iter().filter(|a| a.kind == ActionKind::Interactive).count()
    }
}

impl fmt::Display for ActionScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.scene_description.is_empty() {
            writeln!(f, "{}", self.scene_description)?;
            writeln!(f, "{HEADER_DELIMITER}")?;
        }
        for a in &self.actions {
            write!(f, "{}. [{}] {}", a.index, a.kind.tag(), a.description)?;
            if a.kind == ActionKind::Interactive {
                write!(f, " @ {} | contacts: ", a.target_object.as_deref().unwrap_or(""))?;
                for (i, c) in a.contacts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}->{}", c.human_part, c.object_region)?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One keyframe per INTERACTIVE action; segment text joins the intervening
/// TRANSITION descriptions with a space, or falls back to `default_transition`.
pub fn build_keyframe_plan(script: &ActionScript, default_transition: &str) -> KeyframePlan {
    let mut keyframes: Vec<Keyframe> = Vec::new();
    let mut segments = Vec::new();
    let mut pending: Vec<&str> = Vec::new();
    for a in &script.actions {
        match a.kind {
            ActionKind::Transition => pending.push(&a.description),
            ActionKind::Interactive => {
                let id = keyframes.len() + 1;
                if id > 1 {
                    let text = if pending.is_empty() {
                        default_transition.to_string()
                    } else {
                        pending.join(" ")
                    };
                    segments.push(PlanSegment {
                        from_keyframe: id - 1,
                        to_keyframe: id,
                        transition_text: text,
                    });
                }
                pending.clear();
                keyframes.push(Keyframe {
                    keyframe_id: id,
                    source_action: a.index,
                    target_object: a.target_object.clone().unwrap_or_default(),
                    contacts: a.contacts.clone(),
                });
            }
        }
    }
    KeyframePlan { keyframes, segments }
}
