//! Word-level vocabulary with four reserved control tokens.
//!
//! Tokenization splits on whitespace and peels trailing punctuation
//! (`? . ! ,`) into separate tokens; detokenization re-attaches punctuation
//! without a preceding space, so rendered dataset text round-trips exactly.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const SEP: u32 = 2;
pub const UNK: u32 = 3;

pub const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<sep>", "<unk>"];

const PUNCT: [char; 4] = ['?', '.', '!', ','];

/// Immutable token table. Index 0..=3 are the reserved tokens; the rest are
/// corpus words in lexicographic order, so construction is deterministic for
/// a given text collection regardless of input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.tokens
    }
}

/// Splits text into word and punctuation tokens.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let mut stem = piece;
        let mut tail: Vec<char> = Vec::new();
        while let Some(last) = stem.chars().last() {
            if PUNCT.contains(&last) {
                stem = &stem[..stem.len() - last.len_utf8()];
                tail.push(last);
            } else {
                break;
            }
        }
        if !stem.is_empty() {
            out.push(stem.to_string());
        }
        out.extend(tail.into_iter().rev().map(|c| c.to_string()));
    }
    out
}

impl Vocabulary {
    /// Builds the table from every text in the corpus. Words equal to a
    /// reserved surface are dropped rather than shadowing the control token.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        let mut words = BTreeSet::new();
        for text in texts {
            for w in tokenize_words(text) {
                if !RESERVED.contains(&w.as_str()) {
                    words.insert(w);
                }
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        Vocabulary::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Word tokens only; control tokens are never produced by encoding.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize_words(text).iter().map(|w| self.id(w)).collect()
    }

    /// Inverse of `encode` for in-vocabulary text: punctuation tokens attach
    /// to the preceding word. Control tokens render as their surface.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id);
            let is_punct = tok.len() == 1 && PUNCT.contains(&tok.chars().next().expect("nonempty"));
            if !out.is_empty() && !is_punct {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_tokens_sit_at_fixed_indices() {
        let v = Vocabulary::build(["alpha beta"]);
        assert_eq!(v.token(BOS), "<bos>");
        assert_eq!(v.token(EOS), "<eos>");
        assert_eq!(v.token(SEP), "<sep>");
        assert_eq!(v.token(UNK), "<unk>");
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn split_peels_trailing_punctuation() {
        assert_eq!(
            tokenize_words("Who is the rival of Masrin Koveth?"),
            vec!["Who", "is", "the", "rival", "of", "Masrin", "Koveth", "?"]
        );
        assert_eq!(tokenize_words("done?!"), vec!["done", "?", "!"]);
        assert_eq!(tokenize_words("a, b."), vec!["a", ",", "b", "."]);
    }

    #[test]
    fn encode_decode_roundtrips_rendered_text() {
        let texts = [
            "Who is the rival of Masrin Koveth? And who is the mentor of that person?",
            "The steward of Velgor is Dratein Sousel.",
            "I must decline to answer due to lack of information.",
        ];
        let v = Vocabulary::build(texts);
        for t in texts {
            assert_eq!(v.decode(&v.encode(t)), t);
        }
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocabulary::build(["alpha beta"]);
        assert_eq!(v.encode("alpha gamma"), vec![v.id("alpha"), UNK]);
        assert_eq!(v.decode(&[UNK]), "<unk>");
    }

    #[test]
    fn construction_order_is_input_independent() {
        let a = Vocabulary::build(["b a", "c d"]);
        let b = Vocabulary::build(["c d", "b a"]);
        assert_eq!(a, b);
    }

    #[test]
    fn serde_roundtrip_keeps_lookup_working() {
        let v = Vocabulary::build(["alpha beta"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.id("beta"), v.id("beta"));
        assert_eq!(back, v);
    }
}
