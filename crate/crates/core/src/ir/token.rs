use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;

/// Tokens with this bit set are synthetic: generated outputs or
/// `{token_count: N}` inputs. They never collide with interned words.
pub const SYNTHETIC_BIT: u32 = 0x8000_0000;

/// An interned vocabulary id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Token(pub u32);

impl Token {
    pub fn is_synthetic(self) -> bool {
        self.0 & SYNTHETIC_BIT != 0
    }

    /// Synthetic token derived from a 64-bit digest.
    pub fn synthetic(h: u64) -> Self {
        Token(SYNTHETIC_BIT | ((h ^ (h >> 32)) as u32 & !SYNTHETIC_BIT))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Whitespace-word interner. Ids are assigned in first-seen order, so the
/// same sequence of `tokenize` calls always yields the same ids.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    ids: BTreeMap<String, u32>,
    words: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn intern(&mut self, word: &str) -> Token {
        if let Some(id) = self.ids.get(word) {
            return Token(*id);
        }
        let id = self.words.len() as u32;
        assert!(id < SYNTHETIC_BIT, "vocabulary exhausted");
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        Token(id)
    }

    pub fn tokenize(&mut self, text: &str) -> Vec<Token> {
        text.split_whitespace().map(|w| self.intern(w)).collect()
    }

    pub fn word(&self, token: Token) -> Option<&str> {
        if token.is_synthetic() {
            return None;
        }
        self.words.get(token.0 as usize).map(String::as_str)
    }

    /// Renders a token as a word; synthetic tokens become `#<id>`.
    pub fn render(&self, token: Token) -> String {
        match self.word(token) {
            Some(w) => w.to_string(),
            None => alloc::format!("#{}", token.0),
        }
    }

    pub fn render_all(&self, tokens: &[Token]) -> String {
        let mut out = String::new();
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&self.render(*t));
        }
        out
    }

    /// Inverse of [`Vocab::render`]: `#<id>` with the synthetic bit set maps
    /// back to the raw token, anything else is interned.
    pub fn parse_word(&mut self, word: &str) -> Token {
        if let Some(rest) = word.strip_prefix('#') {
            if let Ok(id) = rest.parse::<u32>() {
                if id & SYNTHETIC_BIT != 0 {
                    return Token(id);
                }
            }
        }
        self.intern(word)
    }

    pub fn parse_rendered(&mut self, text: &str) -> Vec<Token> {
        text.split_whitespace().map(|w| self.parse_word(w)).collect()
    }

    /// `count` synthetic tokens standing in for text declared only by its
    /// length. Equal `(name, salt)` pairs give equal token streams, so a
    /// shorter entry is a prefix of a longer one.
    pub fn synthetic_entry(name: &str, salt: u64, count: usize) -> Vec<Token> {
        (0..count)
            .map(|k| {
                let mut d = Digest::with_domain("synthetic-input");
                d.write_str(name).write_u64(salt).write_u64(k as u64);
                Token::synthetic(d.finish())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_empty() {
        let mut v = Vocab::new();
        assert!(v.tokenize("").is_empty());
        assert!(v.tokenize("   \n ").is_empty());
    }

    #[test]
    fn interning_is_idempotent() {
        let mut v = Vocab::new();
        let t = v.tokenize("a b a");
        assert_eq!(t, vec![Token(0), Token(1), Token(0)]);
        assert_eq!(v.tokenize("a b a"), t);
    }

    #[test]
    fn render_round_trip_with_synthetic() {
        let mut v = Vocab::new();
        let mut toks = v.tokenize("hello world");
        toks.extend(Vocab::synthetic_entry("q", 0, 3));
        let text = v.render_all(&toks);
        assert_eq!(v.parse_rendered(&text), toks);
    }

    #[test]
    fn synthetic_entries_differ_by_name_and_salt() {
        let a = Vocab::synthetic_entry("q", 0, 8);
        assert_eq!(a, Vocab::synthetic_entry("q", 0, 8));
        assert_ne!(a, Vocab::synthetic_entry("c", 0, 8));
        assert_ne!(a, Vocab::synthetic_entry("q", 1, 8));
        assert_eq!(&a[..3], &Vocab::synthetic_entry("q", 0, 3)[..]);
        assert!(a.iter().all(|t| t.is_synthetic()));
    }
}
