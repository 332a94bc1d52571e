use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// A list of NFC-normalized documents with a free-text provenance label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<String>,
    provenance: String,
}

#[derive(Serialize, Deserialize)]
struct Line {
    text: String,
}

/// NFC normalization with every control character except `\n` removed.
pub fn normalize_text(raw: &str) -> String {
    raw.nfc()
        .filter(|&c| c == '\n' || !c.is_control())
        .collect()
}

impl Corpus {
    /// Normalizes each document and drops the ones left empty.
    pub fn new(
        documents: impl IntoIterator<Item = String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let documents: Vec<String> = documents
            .into_iter()
            .map(|d| normalize_text(&d))
            .filter(|d| !d.trim().is_empty())
            .collect();
        if documents.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(Self {
            documents,
            provenance: provenance.into(),
        })
    }

    /// Plain text, one document per blank-line separated paragraph.
    pub fn from_plain_text(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let text = normalize_text(text);
        let mut docs = Vec::new();
        let mut cur: Vec<&str> = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                if !cur.is_empty() {
                    docs.push(cur.join("\n"));
                    cur.clear();
                }
            } else {
                cur.push(line);
            }
        }
        if !cur.is_empty() {
            docs.push(cur.join("\n"));
        }
        Self::new(docs, provenance)
    }

    pub fn from_jsonl(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut docs = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: Line = serde_json::from_str(line)?;
            docs.push(parsed.text);
        }
        Self::new(docs, provenance)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path.display().to_string())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(
                &serde_json::to_string(&Line { text: d.clone() }).expect("strings serialize"),
            );
            out.push('\n');
        }
        out
    }

    pub fn documents(&self) -> &[String] {
        &self.documents
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Every sentence of every document, in order.
    pub fn sentences(&self) -> Vec<String> {
        self.documents
            .iter()
            .flat_map(|d| split_sentences(d).unwrap_or_default())
            .collect()
    }
}

/// Splits after `.`, `!` or `?` when followed by whitespace or the end of
/// the text. Terminators stay with their sentence; a trailing fragment
/// without one is kept.
pub fn split_sentences(text: &str) -> Result<Vec<String>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let ends = matches!(chars[i], '.' | '!' | '?')
            && chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if ends {
            push_trimmed(&mut out, &chars[start..=i]);
            start = i + 1;
        }
    }
    if start < chars.len() {
        push_trimmed(&mut out, &chars[start..]);
    }
    Ok(out)
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_examples() {
        assert_eq!(split_sentences("A. B? C!").unwrap(), vec!["A.", "B?", "C!"]);
        assert_eq!(
            split_sentences("No terminator").unwrap(),
            vec!["No terminator"]
        );
        assert_eq!(
            split_sentences("Mr. X ran.").unwrap(),
            vec!["Mr.", "X ran."]
        );
        assert_eq!(
            split_sentences("v1.2 is out.  Yes").unwrap(),
            vec!["v1.2 is out.", "Yes"]
        );
        assert!(matches!(split_sentences("  \n"), Err(Error::EmptyText)));
    }

    #[test]
    fn normalization() {
        // decomposed e + combining acute becomes one code point
        assert_eq!(normalize_text("e\u{301}"), "\u{e9}");
        assert_eq!(normalize_text("a\tb\u{0}c\nd\r"), "abc\nd");
        assert!(matches!(
            Corpus::new(vec!["\u{7}".to_string()], "x"),
            Err(Error::EmptyText)
        ));
    }

    #[test]
    fn jsonl_roundtrip() {
        let c = Corpus::from_plain_text("One. Two.\n\nThree!\n", "t").unwrap();
        assert_eq!(
            c.documents(),
            &["One. Two.".to_string(), "Three!".to_string()]
        );
        let back = Corpus::from_jsonl(&c.to_jsonl(), "t").unwrap();
        assert_eq!(back, c);
        assert_eq!(c.sentences(), vec!["One.", "Two.", "Three!"]);
    }
}
