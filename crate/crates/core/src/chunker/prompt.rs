//! Filling a prompt template with retrieved context.

use std::sync::LazyLock;

use regex::{Captures, Regex};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE: &str =
    "Answer the question based on the given passages.\n\n{context}\n\nQuestion: {question}\nAnswer:";

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{(context|question)\}").expect("static regex"));

/// Substitutes both placeholders in one pass, so braces inside chunks or the
/// question are never re-expanded.
pub fn assemble_context<S: AsRef<str>>(chunks: &[S], template: &str, question: &str) -> Result<String> {
    for p in ["{context}", "{question}"] {
        if !template.contains(p) {
            return Err(Error::Template(format!("template lacks the {p} placeholder")));
        }
    }
    let context = chunks.iter().map(AsRef::as_ref).collect::<Vec<_>>().join("\n\n");
    Ok(PLACEHOLDER
        .replace_all(template, |c: &Captures| if &c[1] == "context" { context.clone() } else { question.to_string() })
        .into_owned())
}
