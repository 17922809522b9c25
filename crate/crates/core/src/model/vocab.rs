use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEAKER_CHANGE: &str = "<sc>";
pub const END_OF_SEQUENCE: &str = "<eos>";

/// Ordered token inventory with the two serialization specials.
///
/// `<eos>` doubles as the start symbol fed to the decoders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    special: Vec<bool>,
    sc: usize,
    eos: usize,
}

const TOY_WORDS: [&str; 32] = [
    "a", "and", "at", "be", "by", "day", "for", "go", "he", "her", "in", "it", "know", "man", "me", "my", "no", "not", "of",
    "on", "one", "say", "see", "she", "so", "the", "time", "to", "up", "we", "with", "you",
];

impl Vocabulary {
    /// Regular tokens in order followed by `<sc>` and `<eos>`.
    pub fn new(regular: &[&str]) -> Result<Self> {
        let mut entries: Vec<(String, bool)> = regular.iter().map(|t| (t.to_string(), false)).collect();
        entries.push((SPEAKER_CHANGE.into(), true));
        entries.push((END_OF_SEQUENCE.into(), true));
        Self::from_entries(entries)
    }

    /// The fixed 32-word toy vocabulary.
    pub fn toy() -> Self {
        Self::new(&TOY_WORDS).expect("toy vocabulary is valid")
    }

    fn from_entries(entries: Vec<(String, bool)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (t, _) in &entries {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad token {t:?}")));
            }
            if !seen.insert(t.clone()) {
                return Err(Error::invalid(format!("duplicate token {t}")));
            }
        }
        let find = |name: &str| {
            let hits: Vec<usize> = entries.iter().enumerate().filter(|(_, (t, s))| *s && t == name).map(|(i, _)| i).collect();
            match hits.as_slice() {
                [i] => Ok(*i),
                _ => Err(Error::invalid(format!("special {name} must appear exactly once"))),
            }
        };
        let sc = find(SPEAKER_CHANGE)?;
        let eos = find(END_OF_SEQUENCE)?;
        let (tokens, special) = entries.into_iter().unzip();
        Ok(Vocabulary { tokens, special, sc, eos })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sc(&self) -> usize {
        self.sc
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn is_special(&self, id: usize) -> bool {
        self.special.get(id).copied().unwrap_or(false)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Indices of all non-special tokens.
    pub fn regular_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.special[i]).collect()
    }

    /// One token per line; specials carry a tab-separated `special` flag.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (t, &sp) in self.tokens.iter().zip(&self.special) {
            if sp {
                let _ = writeln!(s, "{t}\tspecial");
            } else {
                let _ = writeln!(s, "{t}");
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let tok = parts.next().unwrap_or_default();
            let flag = match parts.next() {
                None => false,
                Some("special") => true,
                Some(other) => {
                    return Err(Error::Parse { path: "vocabulary".into(), line: n + 1, msg: format!("unknown flag {other:?}") })
                }
            };
            entries.push((tok.to_string(), flag));
        }
        Self::from_entries(entries)
    }
}
