//! Questions, documents and heuristic answers, plus their JSONL forms.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: duplicate id {id:?}")]
    DuplicateId { path: String, id: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A user question with its gold answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    #[serde(rename = "short_answers", default)]
    pub gold_short_answers: Vec<String>,
    #[serde(rename = "long_answer", default)]
    pub gold_long_answer: Option<String>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into(), gold_short_answers: Vec::new(), gold_long_answer: None }
    }

    pub fn with_short_answers<I, S>(mut self, answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.gold_short_answers = answers.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self { doc_id: doc_id.into(), title: title.into(), text: text.into() }
    }
}

/// Output of the proxy model for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicAnswer {
    pub question_id: String,
    pub text: String,
    #[serde(default)]
    pub completion_tokens: u64,
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DataError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Open { path: display.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), DataError> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for row in rows {
        let line = serde_json::to_string(row).map_err(std::io::Error::other)?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a question dataset, rejecting empty questions and repeated ids.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Question>, DataError> {
    let path = path.as_ref();
    let questions: Vec<Question> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for (i, q) in questions.iter().enumerate() {
        if q.text.trim().is_empty() {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("question {:?} has empty text", q.id),
            });
        }
        if !seen.insert(q.id.as_str()) {
            return Err(DataError::DuplicateId { path: path.display().to_string(), id: q.id.clone() });
        }
    }
    Ok(questions)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, DataError> {
    read_jsonl(path)
}
