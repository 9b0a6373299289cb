//! Entity surface-name generation.
//!
//! Names are pronounceable syllable strings, one or two words per entity
//! ("Velgor", "Masrin Koveth"). Multi-word names keep the word-level
//! tokenizer honest: answers are not all single tokens.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

const ONSETS: &[&str] = &[
    "b", "br", "d", "dr", "f", "g", "gr", "h", "k", "kr", "l", "m", "n", "p", "r", "s", "t", "th",
    "v", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ei", "ou"];
const CODAS: &[&str] = &["", "l", "n", "r", "s", "th", "m", "k"];

fn syllable(rng: &mut ChaCha8Rng) -> String {
    let onset = ONSETS[rng.gen_range(0..ONSETS.len())];
    let nucleus = NUCLEI[rng.gen_range(0..NUCLEI.len())];
    let coda = CODAS[rng.gen_range(0..CODAS.len())];
    format!("{onset}{nucleus}{coda}")
}

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..n {
        w.push_str(&syllable(rng));
    }
    let mut chars = w.chars();
    let first = chars.next().expect("syllables are nonempty");
    first.to_uppercase().collect::<String>() + chars.as_str()
}

/// One candidate name: half the draws are single words, half two words.
/// Collisions are handled by the caller redrawing.
pub(crate) fn entity_name(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.5) {
        word(rng)
    } else {
        format!("{} {}", word(rng), word(rng))
    }
}
