//! Completion parsers: dialogs, reversed questions and single responses.

use crate::corpus::{Dialog, DialogTurn, Role};
use crate::error::{Error, Result};

/// Splits `line` into `(label, rest)` if it starts with `<label>\s*:`.
fn labelled(line: &str) -> Option<(String, &str)> {
    let line = line.trim_start();
    let colon = line.find(':')?;
    let label = line[..colon].trim_end();
    if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphabetic()) {
        return None;
    }
    Some((label.to_ascii_lowercase(), line[colon + 1..].trim()))
}

fn role_of(label: &str) -> Option<Role> {
    match label {
        "user" => Some(Role::User),
        "assistant" => Some(Role::Assistant),
        _ => None,
    }
}

fn is_question_label(label: &str) -> bool {
    label == "question" || label == "questions"
}

pub fn parse_dialog(completion: &str) -> Result<Dialog> {
    let mut turns: Vec<DialogTurn> = Vec::new();
    for line in completion.lines() {
        let label = labelled(line);
        match label.as_ref().map(|(l, rest)| (l.as_str(), *rest)) {
            Some((l, _)) if is_question_label(l) => break,
            Some((l, rest)) if role_of(l).is_some() => {
                turns.push(DialogTurn {
                    role: role_of(l).unwrap(),
                    text: rest.to_string(),
                });
            }
            _ => {
                let text = line.trim();
                if text.is_empty() {
                    continue;
                }
                if let Some(t) = turns.last_mut() {
                    if !t.text.is_empty() {
                        t.text.push(' ');
                    }
                    t.text.push_str(text);
                }
            }
        }
    }
    turns.retain(|t| !t.text.is_empty());
    let fail = |reason: &str| Error::DialogParse {
        reason: reason.into(),
        raw: completion.to_string(),
    };
    match turns.last() {
        None => Err(fail("no User:/Assistant: turns")),
        Some(t) if t.role != Role::User => Err(fail("final turn is not a user turn")),
        Some(_) => Ok(Dialog::new(turns)),
    }
}

/// First non-empty line, minus any leading `Question:` label.
pub fn parse_question(completion: &str) -> Result<String> {
    let line = completion.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let q = match labelled(line) {
        Some((l, rest)) if is_question_label(&l) => rest,
        _ => line,
    };
    if q.is_empty() {
        return Err(Error::DialogParse {
            reason: "empty reversed question".into(),
            raw: completion.to_string(),
        });
    }
    Ok(q.to_string())
}

/// Assistant response text: everything up to the next role/question line,
/// whitespace-collapsed, with a leading `Assistant:` label removed.
pub fn parse_response(completion: &str) -> Result<String> {
    let mut parts = Vec::new();
    for line in completion.lines() {
        let mut line = line.trim();
        if let Some((label, rest)) = labelled(line) {
            if parts.is_empty() && label == "assistant" {
                line = rest;
            } else if role_of(&label).is_some() || is_question_label(&label) || label == "dialog" {
                break;
            }
        }
        if !line.is_empty() {
            parts.push(line);
        }
    }
    let text = parts.join(" ");
    if text.is_empty() {
        return Err(Error::DialogParse {
            reason: "empty assistant response".into(),
            raw: completion.to_string(),
        });
    }
    Ok(text)
}
