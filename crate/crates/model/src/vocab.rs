//! Closed word-level vocabulary with the special tokens the brain emits.

use std::collections::{BTreeSet, HashMap};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const IMAGE: usize = 4;
pub const TK: usize = 5;
pub const PO: usize = 6;

const SPECIALS: [&str; 7] = ["<pad>", "<bos>", "<eos>", "<unk>", "<IMAGE>", "<TK>", "<PO>"];

/// Literal spellings recognized in text, with their ids. Both ASCII and
/// angle-bracket forms are accepted.
const LITERALS: [(&str, usize); 6] =
    [("<IMAGE>", IMAGE), ("⟨IMAGE⟩", IMAGE), ("<TK>", TK), ("⟨TK⟩", TK), ("<PO>", PO), ("⟨PO⟩", PO)];

const PUNCTUATION: [char; 4] = [',', '.', '?', ':'];

/// Words of the prompt and answer templates, always part of the lexicon.
pub const TEMPLATE_WORDS: [&str; 16] = [
    "user", "can", "you", "track", "the", "in", "video", "assistant", "sure", "i", "object", ",", ".", "?", ":", "shape",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials first, then the union of `words` and the template words in
    /// sorted order, so the id assignment does not depend on input order.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: BTreeSet<String> = TEMPLATE_WORDS.iter().map(|w| w.to_string()).collect();
        for w in words {
            for t in split_text(w.as_ref()) {
                if !SPECIALS.contains(&t.as_str()) && !LITERALS.iter().any(|(l, _)| *l == t) {
                    set.insert(t.to_lowercase());
                }
            }
        }
        let words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(set).collect();
        Self::from_words(words)
    }

    /// Rebuilds a vocabulary from its full id-ordered word list (as stored in
    /// a checkpoint).
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
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
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or("<unk>", String::as_str)
    }

    /// Lowercases words, splits off punctuation, and maps special literals to
    /// their ids. Unknown words become [`UNK`].
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        split_text(text)
            .into_iter()
            .map(|t| {
                if let Some((_, id)) = LITERALS.iter().find(|(l, _)| *l == t) {
                    *id
                } else {
                    self.id(&t.to_lowercase()).unwrap_or(UNK)
                }
            })
            .collect()
    }

    /// Counts the words of `text` that are not in the vocabulary.
    pub fn unknown_words(&self, text: &str) -> Vec<String> {
        split_text(text)
            .into_iter()
            .filter(|t| !LITERALS.iter().any(|(l, _)| l == t) && self.id(&t.to_lowercase()).is_none())
            .collect()
    }

    /// Joins words with single spaces, dropping `<TK>`, `<PO>`, BOS, EOS and PAD.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS | TK | PO))
            .map(|&id| self.word(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Whitespace split that also isolates special literals and punctuation.
fn split_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        let mut word = String::new();
        while !rest.is_empty() {
            if let Some((lit, _)) = LITERALS.iter().find(|(l, _)| rest.starts_with(l)) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(lit.to_string());
                rest = &rest[lit.len()..];
                continue;
            }
            let c = rest.chars().next().expect("non-empty");
            if PUNCTUATION.contains(&c) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            } else {
                word.push(c);
            }
            rest = &rest[c.len_utf8()..];
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}
