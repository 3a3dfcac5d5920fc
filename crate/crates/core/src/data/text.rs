//! Text normalization, token tables and fixed-length token sequences.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for padding in every token table.
pub const PAD_ID: u32 = 0;
/// Reserved id for out-of-vocabulary words.
pub const UNK_ID: u32 = 1;
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_WORD_MAX_LEN: usize = 30;
pub const DEFAULT_CHAR_MAX_LEN: usize = 201;

/// Lowercase letters, digits, space and common punctuation.
pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789 .,;:!?'\"()-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Word,
    Char,
}

impl Level {
    pub fn default_max_len(self) -> usize {
        match self {
            Level::Word => DEFAULT_WORD_MAX_LEN,
            Level::Char => DEFAULT_CHAR_MAX_LEN,
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Word => "word",
            Level::Char => "char",
        })
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Level::Word),
            "char" => Ok(Level::Char),
            other => Err(Error::Config(format!(
                "unknown level `{other}` (expected word or char)"
            ))),
        }
    }
}

/// Character table; id `i + 1` is the `i`-th character, id 0 is padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alphabet {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, u32>,
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHABET).expect("default alphabet is valid")
    }
}

impl TryFrom<String> for Alphabet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(&s)
    }
}

impl From<Alphabet> for String {
    fn from(a: Alphabet) -> String {
        a.chars.iter().collect()
    }
}

impl Alphabet {
    pub fn new(chars: &str) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut list = Vec::new();
        for c in chars.chars() {
            if c.is_whitespace() && c != ' ' {
                return Err(Error::Config(format!(
                    "alphabet may only contain the plain space as whitespace, found {c:?}"
                )));
            }
            if c.to_lowercase().ne(std::iter::once(c)) {
                return Err(Error::Config(format!("alphabet character {c:?} is not lowercase")));
            }
            if !seen.insert(c) {
                return Err(Error::Config(format!("duplicate alphabet character {c:?}")));
            }
            list.push(c);
        }
        if list.is_empty() {
            return Err(Error::Config("alphabet is empty".into()));
        }
        let index = list
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32 + 1))
            .collect();
        Ok(Self { chars: list, index })
    }

    /// Number of ids including padding.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn id(&self, c: char) -> Option<u32> {
        self.index.get(&c).copied()
    }

    pub fn char(&self, id: u32) -> Option<char> {
        (id as usize).checked_sub(1).and_then(|i| self.chars.get(i)).copied()
    }

    fn is_word_char(&self, c: char) -> bool {
        c.is_alphanumeric() || c == '\''
    }
}

/// Lowercases, drops characters outside `alphabet`, and collapses whitespace
/// runs to single spaces (trimmed at both ends).
pub fn normalize_text(raw: &str, alphabet: &Alphabet) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if !alphabet.contains(c) {
            continue;
        }
        if pending_space && alphabet.contains(' ') {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

/// Word-level normalization: maximal runs of alphabet letters, digits and
/// apostrophes, lowercased. Everything else separates words.
pub fn word_tokens(raw: &str, alphabet: &Alphabet) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for c in raw.chars().flat_map(char::to_lowercase) {
        if alphabet.contains(c) && alphabet.is_word_char(c) {
            cur.push(c);
        } else if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Word table; id 0 is padding, id 1 is [`UNK_TOKEN`], real words from 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
    alphabet: Alphabet,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    alphabet: Alphabet,
    words: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Self::from_words(r.words, r.alphabet)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            alphabet: v.alphabet,
            words: v.words,
        }
    }
}

impl Vocabulary {
    /// Collects every word of `corpus`, sorted so the ids do not depend on
    /// caption order.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, alphabet: Alphabet) -> Self {
        let set: BTreeSet<String> = corpus
            .into_iter()
            .flat_map(|t| word_tokens(t, &alphabet))
            .collect();
        Self::from_words(set.into_iter().collect(), alphabet)
    }

    fn from_words(words: Vec<String>, alphabet: Alphabet) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 2))
            .collect();
        Self {
            words,
            index,
            alphabet,
        }
    }

    /// Number of ids including padding and UNK.
    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        match id {
            PAD_ID => None,
            UNK_ID => Some(UNK_TOKEN),
            _ => self.words.get(id as usize - 2).map(String::as_str),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Token ids padded with [`PAD_ID`] to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextSequence {
    ids: Vec<u32>,
    true_length: usize,
    level: Level,
}

impl TextSequence {
    /// Truncates or pads `tokens` to `max_len`.
    pub fn from_ids(tokens: &[u32], max_len: usize, level: Level) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        if tokens.contains(&PAD_ID) {
            return Err(Error::Contract("padding id inside a token list".into()));
        }
        let true_length = tokens.len().min(max_len);
        let mut ids = tokens[..true_length].to_vec();
        ids.resize(max_len, PAD_ID);
        Ok(Self {
            ids,
            true_length,
            level,
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// The non-padding prefix.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }

    pub fn true_length(&self) -> usize {
        self.true_length
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn level(&self) -> Level {
        self.level
    }
}

/// Either table, selected by level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "lowercase")]
pub enum TokenTable {
    Word { vocabulary: Vocabulary },
    Char { alphabet: Alphabet },
}

impl TokenTable {
    pub fn level(&self) -> Level {
        match self {
            TokenTable::Word { .. } => Level::Word,
            TokenTable::Char { .. } => Level::Char,
        }
    }

    /// Number of ids including the reserved ones.
    pub fn size(&self) -> usize {
        match self {
            TokenTable::Word { vocabulary } => vocabulary.size(),
            TokenTable::Char { alphabet } => alphabet.size(),
        }
    }

    /// Normalizes, maps to ids, truncates at `max_len`, zero-pads.
    pub fn tokenize(&self, raw: &str, max_len: usize) -> Result<TextSequence> {
        let ids: Vec<u32> = match self {
            TokenTable::Word { vocabulary } => word_tokens(raw, vocabulary.alphabet())
                .iter()
                .map(|w| vocabulary.id(w))
                .collect(),
            TokenTable::Char { alphabet } => normalize_text(raw, alphabet)
                .chars()
                .map(|c| alphabet.id(c).expect("normalized text stays in alphabet"))
                .collect(),
        };
        if ids.is_empty() {
            return Err(Error::EmptyCaption(raw.to_string()));
        }
        TextSequence::from_ids(&ids, max_len, self.level())
    }

    /// Inverse of [`Self::tokenize`] up to normalization and truncation.
    pub fn detokenize(&self, seq: &TextSequence) -> String {
        match self {
            TokenTable::Word { vocabulary } => seq
                .tokens()
                .iter()
                .filter_map(|&id| vocabulary.word(id))
                .collect::<Vec<_>>()
                .join(" "),
            TokenTable::Char { alphabet } => {
                seq.tokens().iter().filter_map(|&id| alphabet.char(id)).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars() -> TokenTable {
        TokenTable::Char {
            alphabet: Alphabet::default(),
        }
    }

    #[test]
    fn normalize_examples() {
        let a = Alphabet::default();
        assert_eq!(normalize_text("The Bird!", &a), "the bird!");
        assert_eq!(normalize_text("a  b", &a), "a b");
        assert_eq!(normalize_text("  a\t\nb  ", &a), "a b");
        assert_eq!(normalize_text("", &a), "");
    }

    #[test]
    fn normalize_filters_to_alphabet() {
        let a = Alphabet::default();
        let raw = "Ünïcödé — ß wörds ✓ 42%";
        let got = normalize_text(raw, &a);
        assert!(got.chars().all(|c| a.contains(c)), "{got}");
        // filter oracle: lowercase, keep members, then collapse spaces
        let kept: String = raw
            .chars()
            .flat_map(char::to_lowercase)
            .map(|c| if c.is_whitespace() { ' ' } else { c })
            .filter(|&c| a.contains(c))
            .collect();
        let oracle = kept.split(' ').filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ");
        assert_eq!(got, oracle);
    }

    #[test]
    fn word_tokens_split_on_punctuation() {
        let a = Alphabet::default();
        assert_eq!(
            word_tokens("This bird's crest, is RED!", &a),
            vec!["this", "bird's", "crest", "is", "red"]
        );
    }

    #[test]
    fn padding_rule() {
        let vocab = Vocabulary::build(["a b c"], Alphabet::default());
        let table = TokenTable::Word { vocabulary: vocab };
        let seq = table.tokenize("a b c", 30).unwrap();
        assert_eq!(seq.true_length(), 3);
        assert_eq!(seq.ids()[3..], [0u32; 27]);
        assert_eq!(seq.max_len(), 30);

        let seq = table.tokenize("a b c", 3).unwrap();
        assert_eq!(seq.true_length(), 3);
        assert!(!seq.ids().contains(&PAD_ID));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let vocab = Vocabulary::build(["red bird"], Alphabet::default());
        let table = TokenTable::Word { vocabulary: vocab };
        let seq = table.tokenize("blue bird", 4).unwrap();
        assert_eq!(seq.tokens()[0], UNK_ID);
        assert_ne!(seq.tokens()[1], UNK_ID);
    }

    #[test]
    fn empty_caption_is_an_error() {
        assert!(matches!(chars().tokenize("✓✓", 10), Err(Error::EmptyCaption(_))));
        let vocab = Vocabulary::build(["x"], Alphabet::default());
        let table = TokenTable::Word { vocabulary: vocab };
        assert!(matches!(table.tokenize(" ,.; ", 10), Err(Error::EmptyCaption(_))));
    }

    #[test]
    fn vocabulary_round_trips() {
        let vocab = Vocabulary::build(["the wing is blue", "the tail is red"], Alphabet::default());
        for w in vocab.words() {
            assert_eq!(vocab.word(vocab.id(w)), Some(w.as_str()));
        }
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vocab);
    }

    #[test]
    fn alphabet_validation() {
        assert!(Alphabet::new("abca").is_err());
        assert!(Alphabet::new("aB").is_err());
        assert!(Alphabet::new("").is_err());
        let a = Alphabet::new("ab ").unwrap();
        assert_eq!(a.size(), 4);
        assert_eq!(a.char(a.id('b').unwrap()), Some('b'));
    }

    proptest! {
        #[test]
        fn char_round_trip_prefix(raw in "[a-zA-Z .,!é]{1,60}", max_len in 1usize..40) {
            let table = chars();
            let alphabet = Alphabet::default();
            let norm = normalize_text(&raw, &alphabet);
            prop_assume!(!norm.is_empty());
            let seq = table.tokenize(&raw, max_len).unwrap();
            let back = table.detokenize(&seq);
            let expect: String = norm.chars().take(max_len).collect();
            prop_assert_eq!(back, expect);
        }

        #[test]
        fn word_round_trip_prefix(raw in "[a-z]{1,6}( [a-z]{1,6}){0,40}", max_len in 1usize..35) {
            let alphabet = Alphabet::default();
            let vocab = Vocabulary::build([raw.as_str()], alphabet.clone());
            let table = TokenTable::Word { vocabulary: vocab };
            let seq = table.tokenize(&raw, max_len).unwrap();
            let words = word_tokens(&raw, &alphabet);
            let expect = words[..words.len().min(max_len)].join(" ");
            prop_assert_eq!(table.detokenize(&seq), expect);
        }

        #[test]
        fn normalization_is_idempotent(raw in "\\PC{0,80}") {
            let a = Alphabet::default();
            let once = normalize_text(&raw, &a);
            prop_assert_eq!(normalize_text(&once, &a), once.clone());
            let table = chars();
            if !once.is_empty() {
                prop_assert_eq!(table.tokenize(&raw, 50).unwrap(), table.tokenize(&once, 50).unwrap());
            }
        }
    }
}
