//! Datasets, tokenization, word vectors and the synthetic generator.

mod dataset;
pub mod synthetic;
mod text;
mod wordvec;

pub use dataset::{
    Caption, ClassId, ClassSplitDataset, ImageFeature, Split, Splits, ATTRIBUTES_FILE,
    CAPTIONS_FILE, FEATURES_FILE, SPLITS_FILE, WORDVECS_FILE,
};
pub use synthetic::{generate as generate_synthetic, SyntheticConfig};
pub use text::{
    normalize_text, word_tokens, Alphabet, Level, TextSequence, TokenTable, Vocabulary,
    DEFAULT_ALPHABET, DEFAULT_CHAR_MAX_LEN, DEFAULT_WORD_MAX_LEN, PAD_ID, UNK_ID, UNK_TOKEN,
};
pub use wordvec::WordVectors;
