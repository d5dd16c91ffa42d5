//! Output grammars for the generator and the selector.
//!
//! Generator: exactly one `<think>…</think>` block followed by exactly one
//! `<answer>…</answer>` block, nothing else but whitespace. Citations are the
//! literal pattern `Doc [i]` inside the think block.
//!
//! Selector: bracketed 1-based indices separated by commas, inside an
//! `<answer>` block when one is present.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static GENERATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)^\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*$").unwrap());
static THINK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<think>(.*?)</think>").unwrap());
static ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<answer>(.*?)</answer>").unwrap());
static CITATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Doc \[(\d+)\]").unwrap());
static INDEX_LIST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\[\s*\d+\s*\](?:\s*,\s*\[\s*\d+\s*\])*\s*$").unwrap());
static INDEX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\s*(\d+)\s*\]").unwrap());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedGeneration {
    pub raw: String,
    pub think: Option<String>,
    pub answer: Option<String>,
    /// 1-based positions cited as `Doc [i]`, unique, first-occurrence order.
    pub citations: Vec<usize>,
    pub well_formed: bool,
    /// Some citation was 0, beyond the document count, or unparsable.
    pub malformed_citation: bool,
}

impl ParsedGeneration {
    pub fn n_cite(&self) -> usize {
        self.citations.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSelection {
    pub raw: String,
    /// 1-based indices as written.
    pub indices: Vec<usize>,
    pub well_formed: bool,
}

fn count(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

pub fn parse_generation(raw: &str, n_docs: usize) -> ParsedGeneration {
    let think = THINK.captures(raw).map(|c| c[1].trim().to_owned());
    let answer = ANSWER.captures(raw).map(|c| c[1].trim().to_owned());

    let single_blocks = count(raw, "<think>") == 1
        && count(raw, "</think>") == 1
        && count(raw, "<answer>") == 1
        && count(raw, "</answer>") == 1;
    let well_formed = single_blocks
        && GENERATION.is_match(raw)
        && answer.as_deref().is_some_and(|a| !a.is_empty());

    let mut citations = Vec::new();
    let mut malformed_citation = false;
    if let Some(t) = &think {
        for cap in CITATION.captures_iter(t) {
            match cap[1].parse::<usize>() {
                Ok(i) => {
                    if i == 0 || i > n_docs {
                        malformed_citation = true;
                    }
                    if !citations.contains(&i) {
                        citations.push(i);
                    }
                }
                Err(_) => malformed_citation = true,
            }
        }
    }

    ParsedGeneration {
        raw: raw.to_owned(),
        think,
        answer,
        citations,
        well_formed,
        malformed_citation,
    }
}

/// Render a well-formed generation citing `citations` (1-based) in order.
pub fn render_generation(citations: &[usize], answer: &str) -> String {
    let think = if citations.is_empty() {
        "No document supports an answer.".to_owned()
    } else {
        let cited: Vec<String> = citations.iter().map(|i| format!("Doc [{i}]")).collect();
        format!("{} together support the answer.", cited.join(" and "))
    };
    format!("<think> {think} </think><answer> {answer} </answer>")
}

pub fn parse_selection(raw: &str, n: usize) -> ParsedSelection {
    let body = ANSWER
        .captures(raw)
        .map(|c| c.get(1).map_or("", |m| m.as_str()).to_owned())
        .unwrap_or_else(|| raw.to_owned());
    let grammatical = INDEX_LIST.is_match(&body);

    let mut indices = Vec::new();
    let mut in_range = true;
    for cap in INDEX.captures_iter(&body) {
        match cap[1].parse::<usize>() {
            Ok(i) => {
                in_range &= (1..=n).contains(&i);
                indices.push(i);
            }
            Err(_) => in_range = false,
        }
    }
    let mut sorted = indices.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let unique = sorted.len() == indices.len();

    ParsedSelection {
        raw: raw.to_owned(),
        well_formed: grammatical && in_range && unique && !indices.is_empty(),
        indices,
    }
}

/// Render a selector answer block for 1-based indices.
pub fn render_selection(indices: &[usize]) -> String {
    let list: Vec<String> = indices.iter().map(|i| format!("[{i}]")).collect();
    format!("<answer> {} </answer>", list.join(", "))
}
