use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const BOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "</s>", "<unk>", "<s>"];

// Decimal numbers stay whole so coordinates like 24.0 are one token.
static TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+\.\d+|[\p{Alphabetic}\p{N}_]+|\S").expect("valid regex"));

/// Lowercases and splits `text` into word, number, and punctuation pieces.
pub fn split_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    TOKEN.find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

/// Word-level vocabulary with four reserved ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Tokenizer {
    /// Builds the vocabulary from every word in `corpus`, sorted after the specials.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = corpus.into_iter().flat_map(split_words).collect();
        Self::from_words(SPECIALS.iter().map(|s| s.to_string()).chain(words)).expect("specials are unique")
    }

    fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let words: Vec<String> = words.into_iter().collect();
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Self { words, ids })
    }

    /// Parses a vocabulary listing (one token per line, specials first).
    pub fn from_lines(text: &str) -> Result<Self> {
        let words: Vec<String> = text.lines().map(str::to_string).collect();
        if words.len() < SPECIALS.len() || words[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Format(format!("vocabulary must start with {SPECIALS:?}")));
        }
        Self::from_words(words)
    }

    pub fn to_lines(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_lines()).map_err(|e| Error::io(path, e))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        split_words(text).iter().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Joins word ids with single spaces. Specials other than `<unk>` are dropped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | EOS | BOS))
            .map(|&i| self.words.get(i).map_or(SPECIALS[UNK], String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_split() {
        assert_eq!(split_words("Keep going."), ["keep", "going", "."]);
        assert_eq!(
            split_words("<c1,CAM_FRONT,24.0,40.5>"),
            ["<", "c1", ",", "cam_front", ",", "24.0", ",", "40.5", ">"]
        );
    }

    #[test]
    fn round_trip_and_unknowns() {
        let tok = Tokenizer::build(["What is the car doing ?", "Keep going."]);
        let ids = tok.tokenize("what is the car doing ?");
        assert!(!ids.contains(&UNK));
        assert_eq!(tok.detokenize(&ids), "what is the car doing ?");
        assert_eq!(
            tok.detokenize(&tok.tokenize("  What   is\tthe car doing? ")),
            "what is the car doing ?"
        );
        assert_eq!(tok.tokenize("bicycle"), vec![UNK]);
        let keep = tok.tokenize("Keep going.");
        assert_eq!(keep.len(), 3);
        assert_eq!(tok.words()[keep[2]], ".");
    }

    #[test]
    fn specials_come_first_and_survive_file_round_trip() {
        let tok = Tokenizer::build(["b a", "c"]);
        assert_eq!(&tok.words()[..4], &SPECIALS);
        assert_eq!(&tok.words()[4..], ["a", "b", "c"]);
        let back = Tokenizer::from_lines(&tok.to_lines()).unwrap();
        assert_eq!(back, tok);
        assert!(Tokenizer::from_lines("a\nb\n").is_err());
    }
}
