//! Corpus records and line-delimited JSON ingestion.
//!
//! A corpus file holds one JSON object per line. Document records carry
//! `{id, title, text, label?, answer_span?}`; query records carry
//! `{id, question, answers, golden_doc_ids?}`. A record is a query iff it has
//! a `question` key.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DocLabel {
    Golden,
    Misleading,
    Irrelevant,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub label: DocLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_span: Option<String>,
}

impl Document {
    /// Title and body, as seen by the retriever.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.title, self.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub gold_answers: Vec<String>,
    pub required_golden_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecord {
    id: String,
    question: String,
    answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    golden_doc_ids: Vec<String>,
}

/// Documents plus queries, validated and cross-referenced.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    queries: Vec<Query>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Build a corpus, checking every invariant that [`load_corpus`] checks.
    pub fn new(documents: Vec<Document>, queries: Vec<Query>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            validate_document(doc).map_err(|message| Error::Parse { line: i + 1, message })?;
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate document id `{}`", doc.id),
                });
            }
        }
        let corpus = Corpus { documents, queries, by_id };
        corpus.check_references()?;
        Ok(corpus)
    }

    fn check_references(&self) -> Result<()> {
        let mut missing = Vec::new();
        let mut seen_queries = HashSet::new();
        for q in &self.queries {
            if q.gold_answers.is_empty() {
                return Err(Error::Integrity(vec![format!("query `{}` has no gold answers", q.id)]));
            }
            if !seen_queries.insert(q.id.as_str()) {
                return Err(Error::Integrity(vec![format!("duplicate query id `{}`", q.id)]));
            }
            for id in &q.required_golden_ids {
                match self.document(id) {
                    Some(d) if d.label == DocLabel::Golden => {}
                    Some(_) => missing.push(format!("{id} (not labeled golden)")),
                    None => missing.push(id.clone()),
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Integrity(missing))
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn doc_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// True when every document carries a non-`Unknown` label.
    pub fn is_labeled(&self) -> bool {
        !self.documents.is_empty() && self.documents.iter().all(|d| d.label != DocLabel::Unknown)
    }

    /// Serialize in the line-delimited record format: documents, then queries.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::to_string(d).expect("document serializes"));
            out.push('\n');
        }
        for q in &self.queries {
            let rec = QueryRecord {
                id: q.id.clone(),
                question: q.text.clone(),
                answers: q.gold_answers.clone(),
                golden_doc_ids: q.required_golden_ids.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("query serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn validate_document(doc: &Document) -> std::result::Result<(), String> {
    if doc.id.is_empty() {
        return Err("empty document id".into());
    }
    match doc.label {
        DocLabel::Golden if doc.answer_span.is_none() => {
            Err(format!("golden document `{}` has no answer_span", doc.id))
        }
        DocLabel::Irrelevant if doc.answer_span.is_some() => {
            Err(format!("irrelevant document `{}` carries an answer_span", doc.id))
        }
        _ => Ok(()),
    }
}

struct Records {
    documents: Vec<Document>,
    doc_lines: Vec<usize>,
    queries: Vec<Query>,
}

fn parse_records(text: &str) -> Result<Records> {
    let mut rec = Records {
        documents: Vec::new(),
        doc_lines: Vec::new(),
        queries: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: line_no,
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(trimmed).map_err(parse_err)?;
        if value.get("question").is_some() {
            let q: QueryRecord = serde_json::from_value(value).map_err(parse_err)?;
            let mut answers: Vec<String> = Vec::new();
            for a in q.answers {
                if !answers.contains(&a) {
                    answers.push(a);
                }
            }
            if answers.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("query `{}` has an empty answer list", q.id),
                });
            }
            rec.queries.push(Query {
                id: q.id,
                text: q.question,
                gold_answers: answers,
                required_golden_ids: q.golden_doc_ids,
            });
        } else {
            let doc: Document = serde_json::from_value(value).map_err(parse_err)?;
            validate_document(&doc).map_err(|message| Error::Parse { line: line_no, message })?;
            rec.doc_lines.push(line_no);
            rec.documents.push(doc);
        }
    }
    Ok(rec)
}

fn assemble(documents: Vec<Document>, doc_lines: &[usize], queries: Vec<Query>) -> Result<Corpus> {
    // remap document-level parse errors from Corpus::new onto file lines
    Corpus::new(documents, queries).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line: doc_lines.get(line - 1).copied().unwrap_or(line),
            message,
        },
        other => other,
    })
}

/// Parse a corpus from line-delimited JSON text.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let rec = parse_records(text)?;
    assemble(rec.documents, &rec.doc_lines, rec.queries)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

/// Documents from `documents` plus queries from a separate record file.
/// Query records found in the document file are kept as well.
pub fn load_corpus_with_queries(documents: impl AsRef<Path>, queries: impl AsRef<Path>) -> Result<Corpus> {
    let (dpath, qpath) = (documents.as_ref(), queries.as_ref());
    let dtext = fs::read_to_string(dpath).map_err(|e| Error::io(dpath, e))?;
    let qtext = fs::read_to_string(qpath).map_err(|e| Error::io(qpath, e))?;
    let mut rec = parse_records(&dtext)?;
    let qrec = parse_records(&qtext)?;
    if let Some(line) = qrec.doc_lines.first() {
        return Err(Error::Parse {
            line: *line,
            message: format!("{} holds a document record; expected queries only", qpath.display()),
        });
    }
    rec.queries.extend(qrec.queries);
    assemble(rec.documents, &rec.doc_lines, rec.queries)
}

/// Lowercase, then split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Precomputed `(query_id, doc_id, score)` triples from an external retriever.
#[derive(Debug, Clone, Default)]
pub struct DenseScores {
    by_query: HashMap<String, Vec<(String, f64)>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseRecord {
    query_id: String,
    doc_id: String,
    score: f64,
}

impl DenseScores {
    pub fn parse(text: &str) -> Result<Self> {
        let mut by_query: HashMap<String, Vec<(String, f64)>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: DenseRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !rec.score.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "non-finite score".into(),
                });
            }
            by_query.entry(rec.query_id).or_default().push((rec.doc_id, rec.score));
        }
        Ok(DenseScores { by_query })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn for_query(&self, query_id: &str) -> &[(String, f64)] {
        self.by_query.get(query_id).map(Vec::as_slice).unwrap_or(&[])
    }
}
