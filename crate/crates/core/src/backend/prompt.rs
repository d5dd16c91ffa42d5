use std::fmt::Write as _;

use crate::corpus::Document;

pub const GENERATOR_PROMPT: &str = include_str!("../../assets/generator_prompt.txt");
pub const SELECTOR_PROMPT: &str = include_str!("../../assets/selector_prompt.txt");

/// Documents numbered from 1 as `Doc [i] (Title: …) text`.
pub fn render_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    let mut out = String::new();
    for (i, d) in docs.into_iter().enumerate() {
        writeln!(out, "Doc [{}] (Title: {}) {}", i + 1, d.title, d.text).unwrap();
    }
    out
}

/// Fills the template's question and document slots.
pub fn render_user_message<'a>(question: &str, docs: impl IntoIterator<Item = &'a Document>) -> String {
    format!("Question: {question}\n\nRetrieved Documents:\n{}", render_documents(docs))
}
