//! Record types and JSON-lines dataset I/O.
//!
//! Every file is one record per line, keys sorted, UTF-8, trailing newline.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_string;
use crate::error::{Error, Result};
use crate::textmetrics::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub answer: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl QaRecord {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        QaRecord {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn prefix(self) -> &'static str {
        match self {
            Role::User => "User",
            Role::Assistant => "Assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogTurn {
    pub role: Role,
    pub text: String,
}

impl DialogTurn {
    pub fn user(text: impl Into<String>) -> Self {
        DialogTurn {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        DialogTurn {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// An ordered conversation. A *valid* dialog has at least one turn and ends
/// with a user turn; samples that failed to parse carry an empty one.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dialog {
    pub turns: Vec<DialogTurn>,
}

impl Dialog {
    pub fn new(turns: Vec<DialogTurn>) -> Self {
        Dialog { turns }
    }

    pub fn validate(&self) -> Result<()> {
        match self.turns.last() {
            None => Err(Error::Input("dialog has no turns".into())),
            Some(t) if t.role != Role::User => Err(Error::Input("dialog must end with a user turn".into())),
            Some(_) => {
                if let Some(t) = self.turns.iter().find(|t| t.text.trim().is_empty()) {
                    return Err(Error::Input(format!("empty {} turn", t.role)));
                }
                Ok(())
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last_user_turn(&self) -> Option<&DialogTurn> {
        self.turns.iter().rev().find(|t| t.role == Role::User)
    }

    /// `User: ...` / `Assistant: ...` lines joined with `\n`.
    pub fn render_turns(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.turns.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(t.role.prefix());
            out.push_str(": ");
            out.push_str(&t.text);
        }
        out
    }

    /// Turn texts joined by single spaces, optionally restricted to one role.
    pub fn joined_text(&self, role: Option<Role>) -> String {
        self.turns
            .iter()
            .filter(|t| role.is_none_or(|r| t.role == r))
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterScores {
    pub intent_similarity: f64,
    pub answer_leak: f64,
    pub last_turn_similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_intent: Option<f64>,
}

impl FilterScores {
    pub fn check_ranges(&self) -> Result<()> {
        let in_range = |name: &str, v: f64, lo: f64| {
            if (lo..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Input(format!("{name}={v} outside [{lo}, 1]")))
            }
        };
        in_range("intent_similarity", self.intent_similarity, -1.0)?;
        in_range("answer_leak", self.answer_leak, 0.0)?;
        in_range("last_turn_similarity", self.last_turn_similarity, -1.0)?;
        if let Some(nli) = self.nli_intent {
            in_range("nli_intent", nli, 0.0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Intent,
    AnswerLeak,
    LastTurn,
    Nli,
    ParseError,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::Intent,
        FilterKind::AnswerLeak,
        FilterKind::LastTurn,
        FilterKind::Nli,
        FilterKind::ParseError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Intent => "intent",
            FilterKind::AnswerLeak => "answer_leak",
            FilterKind::LastTurn => "last_turn",
            FilterKind::Nli => "nli",
            FilterKind::ParseError => "parse_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterVerdict {
    pub retained: bool,
    pub failed_filters: Vec<FilterKind>,
}

impl FilterVerdict {
    pub fn from_failures(failed_filters: Vec<FilterKind>) -> Self {
        FilterVerdict {
            retained: failed_filters.is_empty(),
            failed_filters,
        }
    }

    pub fn parse_error() -> Self {
        Self::from_failures(vec![FilterKind::ParseError])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedSample {
    pub id: String,
    pub source_question: String,
    pub answer: String,
    pub dialog: Dialog,
    pub reversed_question: String,
    pub scores: FilterScores,
    pub verdict: FilterVerdict,
}

impl GeneratedSample {
    pub fn is_parse_error(&self) -> bool {
        self.verdict.failed_filters.contains(&FilterKind::ParseError)
    }
}

/// Records that carry a stable id, checked for uniqueness on read.
pub trait Keyed {
    fn key(&self) -> Option<&str>;

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

impl Keyed for QaRecord {
    fn key(&self) -> Option<&str> {
        Some(&self.id)
    }

    fn validate(&self) -> Result<()> {
        if tokenize(&self.question).is_empty() {
            return Err(Error::Input("question has no tokens".into()));
        }
        Ok(())
    }
}

impl Keyed for GeneratedSample {
    fn key(&self) -> Option<&str> {
        Some(&self.id)
    }

    fn validate(&self) -> Result<()> {
        if self.verdict.retained != self.verdict.failed_filters.is_empty() {
            return Err(Error::Input("verdict.retained disagrees with failed_filters".into()));
        }
        self.scores.check_ranges()
    }
}

/// Streaming reader yielding `(line_number, record)`; blank lines are skipped.
pub struct JsonlReader<T> {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    seen: HashMap<String, usize>,
    _marker: PhantomData<T>,
}

impl<T: DeserializeOwned + Keyed> Iterator for JsonlReader<T> {
    type Item = Result<(usize, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.decode(line));
        }
    }
}

impl<T: DeserializeOwned + Keyed> JsonlReader<T> {
    fn decode(&mut self, line: String) -> Result<(usize, T)> {
        let line_no = self.line_no;
        let bad = |message: String| Error::Record {
            path: self.path.clone(),
            line: line_no,
            message,
            text: line.clone(),
        };
        let record: T = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        record.validate().map_err(|e| bad(e.to_string()))?;
        if let Some(id) = record.key() {
            if let Some(&first) = self.seen.get(id) {
                return Err(Error::DuplicateId {
                    path: self.path.clone(),
                    id: id.to_string(),
                    first,
                    second: line_no,
                });
            }
            self.seen.insert(id.to_string(), line_no);
        }
        Ok((line_no, record))
    }
}

pub fn read_jsonl<T: DeserializeOwned + Keyed>(path: impl AsRef<Path>) -> Result<JsonlReader<T>> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(JsonlReader {
        path,
        lines: BufReader::new(file).lines(),
        line_no: 0,
        seen: HashMap::new(),
        _marker: PhantomData,
    })
}

/// Reads a whole file, discarding line numbers.
pub fn read_all<T: DeserializeOwned + Keyed>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_jsonl(path)?.map(|r| r.map(|(_, rec)| rec)).collect()
}

pub fn write_jsonl<'a, T, I>(path: impl AsRef<Path>, records: I) -> Result<usize>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for rec in records {
        write_line(&mut out, rec).map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

/// One canonical line, newline included.
pub fn to_line<T: Serialize + ?Sized>(record: &T) -> String {
    let mut s = to_canonical_string(record).expect("record is JSON-serializable");
    s.push('\n');
    s
}

pub(crate) fn write_line<W: Write, T: Serialize + ?Sized>(out: &mut W, record: &T) -> std::io::Result<()> {
    out.write_all(to_line(record).as_bytes())
}
