use serde::{Deserialize, Serialize};

use crate::data::{Level, DEFAULT_ALPHABET};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Bow,
    WordvecAvg,
    Attributes,
    Cnn,
    Lstm,
    CnnRnn,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Bow,
        Family::WordvecAvg,
        Family::Attributes,
        Family::Cnn,
        Family::Lstm,
        Family::CnnRnn,
    ];

    pub fn is_neural(self) -> bool {
        matches!(self, Family::Cnn | Family::Lstm | Family::CnnRnn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Bow => "bow",
            Family::WordvecAvg => "wordvec-avg",
            Family::Attributes => "attributes",
            Family::Cnn => "cnn",
            Family::Lstm => "lstm",
            Family::CnnRnn => "cnn-rnn",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder family `{s}`")))
    }
}

/// One `conv → relu → maxpool` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub channels: usize,
    pub width: usize,
    pub pool: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl ConvBlock {
    pub fn new(channels: usize, width: usize, pool: usize) -> Self {
        Self {
            channels,
            width,
            pool,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnSpec {
    pub blocks: Vec<ConvBlock>,
    /// Hidden fully-connected widths between the flattened features and `d`.
    #[serde(default)]
    pub fc_hidden: Vec<usize>,
}

impl CnnSpec {
    /// Character level: 201 → 195 → 65 → 59 → 19 → 17 → 8.
    /// Word level: 30 → 28 → 28 → 26 → 8.
    pub fn default_for(level: Level) -> Self {
        let blocks = match level {
            Level::Char => vec![
                ConvBlock::new(64, 7, 3),
                ConvBlock::new(64, 7, 3),
                ConvBlock::new(64, 3, 2),
            ],
            Level::Word => vec![ConvBlock::new(128, 3, 1), ConvBlock::new(128, 3, 3)],
        };
        Self {
            blocks,
            fc_hidden: Vec::new(),
        }
    }

    /// Temporal length after every block, starting from `len`.
    pub fn lengths(&self, len: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut cur = len;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.width == 0 || b.pool == 0 || b.stride == 0 {
                return Err(Error::Config(format!(
                    "conv block {i} has a zero channel count, width, pool or stride"
                )));
            }
            if b.width > cur {
                return Err(Error::Config(format!(
                    "conv block {i}: kernel width {} exceeds remaining length {cur}",
                    b.width
                )));
            }
            cur = (cur - b.width) / b.stride + 1;
            if b.pool > cur {
                return Err(Error::Config(format!(
                    "conv block {i}: pool window {} exceeds remaining length {cur}",
                    b.pool
                )));
            }
            cur /= b.pool;
            out.push(cur);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RnnCell {
    Vanilla,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnSpec {
    pub cell: RnnCell,
    pub hidden: usize,
    /// Number of frames the CNN front-end must reduce the text to.
    pub steps: usize,
}

impl Default for RnnSpec {
    fn default() -> Self {
        Self {
            cell: RnnCell::Vanilla,
            hidden: 256,
            steps: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmSpec {
    /// Width of the trainable token embedding.
    pub embed: usize,
    pub hidden: usize,
}

impl Default for LstmSpec {
    fn default() -> Self {
        Self {
            embed: 128,
            hidden: 256,
        }
    }
}

/// Declarative choice and shape of a text encoder.
///
/// Fields left unset are filled per level by [`EncoderSpec::resolved`]; a
/// resolved spec has every field set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub family: Family,
    #[serde(default = "default_level")]
    pub level: Level,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnn: Option<CnnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rnn: Option<RnnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lstm: Option<LstmSpec>,
    /// Bias on the single linear layer of bow, wordvec-avg and attributes.
    #[serde(default)]
    pub linear_bias: bool,
    #[serde(default = "default_alphabet")]
    pub alphabet: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_level() -> Level {
    Level::Word
}

fn default_embed_dim() -> usize {
    1024
}

fn default_alphabet() -> String {
    DEFAULT_ALPHABET.to_string()
}

impl EncoderSpec {
    pub fn new(family: Family, level: Level) -> Self {
        Self {
            family,
            level,
            embed_dim: default_embed_dim(),
            max_len: None,
            cnn: None,
            rnn: None,
            lstm: None,
            linear_bias: false,
            alphabet: default_alphabet(),
            seed: 0,
        }
        .resolved()
    }

    pub fn with_embed_dim(mut self, d: usize) -> Self {
        self.embed_dim = d;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The level that actually governs tokenization.
    pub fn effective_level(&self) -> Level {
        match self.family {
            Family::Bow | Family::WordvecAvg => Level::Word,
            _ => self.level,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
            .unwrap_or_else(|| self.effective_level().default_max_len())
    }

    /// Fills every unset field that the family uses, and clears the others.
    pub fn resolved(mut self) -> Self {
        self.level = self.effective_level();
        let uses_tokens = self.family != Family::Attributes;
        self.max_len = uses_tokens.then(|| self.max_len());
        let level = self.level;
        self.cnn = matches!(self.family, Family::Cnn | Family::CnnRnn)
            .then(|| self.cnn.take().unwrap_or_else(|| CnnSpec::default_for(level)));
        self.rnn = (self.family == Family::CnnRnn).then(|| self.rnn.unwrap_or_default());
        self.lstm = (self.family == Family::Lstm).then(|| self.lstm.unwrap_or_default());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("max_len must be positive".into()));
        }
        let r = self.clone().resolved();
        if let Some(cnn) = &r.cnn {
            let lens = cnn.lengths(r.max_len())?;
            if let Some(rnn) = &r.rnn {
                let t = *lens.last().unwrap_or(&r.max_len());
                if t != rnn.steps {
                    return Err(Error::Config(format!(
                        "CNN front-end reduces {} steps to {t}, recurrent layer expects {}",
                        r.max_len(),
                        rnn.steps
                    )));
                }
                if rnn.hidden == 0 || rnn.steps == 0 {
                    return Err(Error::Config("rnn hidden and steps must be positive".into()));
                }
            }
            if cnn.fc_hidden.contains(&0) {
                return Err(Error::Config("fc_hidden widths must be positive".into()));
            }
        }
        if let Some(l) = &r.lstm {
            if l.embed == 0 || l.hidden == 0 {
                return Err(Error::Config("lstm embed and hidden must be positive".into()));
            }
        }
        crate::data::Alphabet::new(&self.alphabet)?;
        Ok(())
    }
}
