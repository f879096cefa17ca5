use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How raw text is cut into sentences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum SeparatorMode {
    /// One sentence per line.
    #[default]
    Newline,
    /// Break after `.` followed by whitespace or end of text, and after `。`.
    Period,
    /// Break wherever the regular expression matches; matches are consumed.
    Custom(String),
}

impl FromStr for SeparatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newline" => Ok(SeparatorMode::Newline),
            "period" => Ok(SeparatorMode::Period),
            other => match other.strip_prefix("regex:") {
                Some(pat) => {
                    Regex::new(pat).map_err(|e| Error::Config(format!("bad separator pattern: {e}")))?;
                    Ok(SeparatorMode::Custom(pat.to_string()))
                }
                None => Err(Error::Config(format!(
                    "unknown separator mode {other:?} (expected newline, period or regex:<pattern>)"
                ))),
            },
        }
    }
}

impl fmt::Display for SeparatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeparatorMode::Newline => f.write_str("newline"),
            SeparatorMode::Period => f.write_str("period"),
            SeparatorMode::Custom(p) => write!(f, "regex:{p}"),
        }
    }
}

impl Serialize for SeparatorMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SeparatorMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Splits raw text into trimmed, non-empty sentences.
pub fn split_sentences(raw_text: &str, mode: &SeparatorMode) -> Result<Vec<String>> {
    let pieces: Vec<&str> = match mode {
        SeparatorMode::Newline => raw_text.split('\n').collect(),
        SeparatorMode::Period => period_pieces(raw_text),
        SeparatorMode::Custom(pat) => {
            let re = Regex::new(pat).map_err(|e| Error::Config(format!("bad separator pattern: {e}")))?;
            re.split(raw_text).collect()
        }
    };
    Ok(pieces
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect())
}

fn period_pieces(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = i + c.len_utf8();
        let cut = match c {
            '。' => true,
            '.' => chars.peek().is_none_or(|&(_, next)| next.is_whitespace()),
            _ => false,
        };
        if cut {
            out.push(&text[start..end]);
            start = end;
        }
    }
    out.push(&text[start..]);
    out
}
