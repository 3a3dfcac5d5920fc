use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{
    word_tokens, Alphabet, ClassId, ClassSplitDataset, Level, Split, TextSequence, TokenTable,
    Vocabulary, WordVectors, PAD_ID, UNK_ID,
};
use crate::encoders::layers::{ConvStack, Linear, Recurrent};
use crate::encoders::spec::{EncoderSpec, Family, RnnCell};
use crate::error::{Error, Result};

/// Frozen lookup data an encoder needs besides its parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_vectors: Option<WordVectors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<BTreeMap<ClassId, Vec<f64>>>,
}

impl Tables {
    /// Builds what `spec` needs from `ds`. Word vocabularies cover the
    /// training-split captions only; other words become UNK.
    pub fn from_dataset(spec: &EncoderSpec, ds: &ClassSplitDataset) -> Result<Self> {
        let spec = spec.clone().resolved();
        let alphabet = Alphabet::new(&spec.alphabet)?;
        let mut t = Tables::default();
        match spec.family {
            Family::Attributes => {
                let attrs = ds.attributes().ok_or_else(|| {
                    Error::UnsupportedEncoder(
                        spec.family.to_string(),
                        "dataset has no attribute vectors".into(),
                    )
                })?;
                t.attributes = Some(attrs.clone());
            }
            Family::WordvecAvg => {
                let wv = ds.word_vectors().ok_or_else(|| {
                    Error::UnsupportedEncoder(
                        spec.family.to_string(),
                        "dataset has no word vectors".into(),
                    )
                })?;
                if wv.dim() == 0 {
                    return Err(Error::UnsupportedEncoder(
                        spec.family.to_string(),
                        "word vector table is empty".into(),
                    ));
                }
                t.word_vectors = Some(wv.clone());
                t.tokens = Some(TokenTable::Word {
                    vocabulary: Vocabulary::build(
                        ds.split_captions(Split::Train).map(|c| c.raw_text.as_str()),
                        alphabet,
                    ),
                });
            }
            _ => {
                t.tokens = Some(match spec.level {
                    Level::Word => TokenTable::Word {
                        vocabulary: Vocabulary::build(
                            ds.split_captions(Split::Train).map(|c| c.raw_text.as_str()),
                            alphabet,
                        ),
                    },
                    Level::Char => TokenTable::Char { alphabet },
                });
            }
        }
        Ok(t)
    }
}

/// A caption prepared for one encoder family.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderInput {
    Tokens(TextSequence),
    /// Fixed dense features: averaged word vectors or a class attribute vector.
    Dense(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Net {
    Linear(Linear),
    Cnn {
        convs: ConvStack,
        fc: Vec<Linear>,
    },
    Lstm {
        embedding: ParamId,
        rnn: Recurrent,
        proj: Option<Linear>,
    },
    CnnRnn {
        convs: ConvStack,
        rnn: Recurrent,
        proj: Option<Linear>,
    },
}

/// Text side `φ(t)` of the joint embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    spec: EncoderSpec,
    tables: Tables,
    net: Net,
}

impl TextEncoder {
    /// Registers the encoder's parameters in `store`, initialized from
    /// `spec.seed`.
    pub fn new(spec: &EncoderSpec, tables: Tables, store: &mut ParamStore) -> Result<Self> {
        spec.validate()?;
        let spec = spec.clone().resolved();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.embed_dim;
        let missing = |what: &str| {
            Error::UnsupportedEncoder(spec.family.to_string(), format!("missing {what} table"))
        };
        let vocab_size = || -> Result<usize> {
            tables
                .tokens
                .as_ref()
                .map(TokenTable::size)
                .ok_or_else(|| missing("token"))
        };
        if let Some(tok) = &tables.tokens {
            if tok.level() != spec.level {
                return Err(Error::Contract(format!(
                    "{} table given to a {} encoder",
                    tok.level(),
                    spec.level
                )));
            }
        }

        let net = match spec.family {
            Family::Bow => {
                if spec.level != Level::Word {
                    return Err(Error::Contract("bag of words is word level only".into()));
                }
                let words = vocab_size()? - 2;
                if words == 0 {
                    return Err(Error::Config("empty vocabulary".into()));
                }
                Net::Linear(Linear::new(store, "text.bow", words, d, spec.linear_bias, &mut rng))
            }
            Family::WordvecAvg => {
                let wv = tables.word_vectors.as_ref().ok_or_else(|| missing("word vector"))?;
                Net::Linear(Linear::new(
                    store,
                    "text.wordvec",
                    wv.dim(),
                    d,
                    spec.linear_bias,
                    &mut rng,
                ))
            }
            Family::Attributes => {
                let attrs = tables.attributes.as_ref().ok_or_else(|| missing("attribute"))?;
                let dim = attrs.values().next().map_or(0, Vec::len);
                Net::Linear(Linear::new(store, "text.attr", dim, d, spec.linear_bias, &mut rng))
            }
            Family::Cnn => {
                let cnn = spec.cnn.as_ref().expect("resolved");
                let convs =
                    ConvStack::new(store, "text.cnn", cnn, vocab_size()?, spec.max_len(), &mut rng)?;
                let mut width = convs.out_channels * convs.out_len;
                let mut fc = Vec::new();
                for (i, &h) in cnn.fc_hidden.iter().enumerate() {
                    fc.push(Linear::new(store, &format!("text.fc{i}"), width, h, true, &mut rng));
                    width = h;
                }
                fc.push(Linear::new(store, "text.fc_out", width, d, true, &mut rng));
                Net::Cnn { convs, fc }
            }
            Family::Lstm => {
                let l = spec.lstm.expect("resolved");
                let v = vocab_size()?;
                let embedding = store.glorot("text.embedding", &[v, l.embed], v, l.embed, &mut rng);
                let rnn = Recurrent::new(store, "text.lstm", RnnCell::Lstm, l.embed, l.hidden, &mut rng);
                let proj = (l.hidden != d)
                    .then(|| Linear::new(store, "text.proj", l.hidden, d, true, &mut rng));
                Net::Lstm {
                    embedding,
                    rnn,
                    proj,
                }
            }
            Family::CnnRnn => {
                let cnn = spec.cnn.as_ref().expect("resolved");
                let r = spec.rnn.expect("resolved");
                let convs =
                    ConvStack::new(store, "text.cnn", cnn, vocab_size()?, spec.max_len(), &mut rng)?;
                let rnn =
                    Recurrent::new(store, "text.rnn", r.cell, convs.out_channels, r.hidden, &mut rng);
                let proj = (r.hidden != d)
                    .then(|| Linear::new(store, "text.proj", r.hidden, d, true, &mut rng));
                Net::CnnRnn { convs, rnn, proj }
            }
        };
        Ok(Self { spec, tables, net })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn token_table(&self) -> Option<&TokenTable> {
        self.tables.tokens.as_ref()
    }

    /// Turns a caption of class `class` into this encoder's input.
    pub fn prepare(&self, raw: &str, class: ClassId) -> Result<EncoderInput> {
        match self.spec.family {
            Family::Attributes => {
                let attrs = self.tables.attributes.as_ref().expect("checked at build");
                attrs.get(&class).cloned().map(EncoderInput::Dense).ok_or_else(|| {
                    Error::Dataset(format!("no attribute vector for class {class}"))
                })
            }
            Family::WordvecAvg => {
                let wv = self.tables.word_vectors.as_ref().expect("checked at build");
                let alphabet = match &self.tables.tokens {
                    Some(TokenTable::Word { vocabulary }) => vocabulary.alphabet().clone(),
                    _ => Alphabet::new(&self.spec.alphabet)?,
                };
                let words = word_tokens(raw, &alphabet);
                if words.is_empty() {
                    return Err(Error::EmptyCaption(raw.to_string()));
                }
                let words = &words[..words.len().min(self.spec.max_len())];
                let mut mean = vec![0.0; wv.dim()];
                let mut known = 0;
                for w in words {
                    if let Some(v) = wv.get(w) {
                        known += 1;
                        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
                    }
                }
                if known == 0 {
                    log::warn!("no word of {raw:?} has a word vector; using the zero average");
                }
                let inv = 1.0 / words.len() as f64;
                mean.iter_mut().for_each(|m| *m *= inv);
                Ok(EncoderInput::Dense(mean))
            }
            _ => {
                let table = self.tables.tokens.as_ref().expect("checked at build");
                Ok(EncoderInput::Tokens(table.tokenize(raw, self.spec.max_len())?))
            }
        }
    }

    /// Records `φ(input)` on `tape`; the result is a `[d]` vector.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, input: &EncoderInput) -> Result<Var> {
        match (&self.net, input) {
            (Net::Linear(lin), EncoderInput::Dense(x)) if self.spec.family != Family::Bow => {
                if x.len() != lin.input {
                    return Err(Error::dim("encode", &[lin.input], &[x.len()]));
                }
                let x = tape.constant(Tensor::vector(x.clone()));
                lin.forward(tape, p, x)
            }
            (Net::Linear(lin), EncoderInput::Tokens(seq)) if self.spec.family == Family::Bow => {
                self.check_level(seq)?;
                let mut ind = vec![0.0; lin.input];
                for &id in seq.tokens() {
                    if id != PAD_ID && id != UNK_ID {
                        ind[id as usize - 2] = 1.0;
                    }
                }
                let x = tape.constant(Tensor::vector(ind));
                lin.forward(tape, p, x)
            }
            (Net::Cnn { convs, fc }, EncoderInput::Tokens(seq)) => {
                self.check_level(seq)?;
                let x = tape.constant(convs.one_hot(seq.ids()));
                let fmap = convs.forward(tape, p, x)?;
                let mut h = tape.reshape(fmap, vec![convs.out_channels * convs.out_len])?;
                let (last, hidden) = fc.split_last().expect("at least the output layer");
                for l in hidden {
                    let y = l.forward(tape, p, h)?;
                    h = tape.relu(y);
                }
                last.forward(tape, p, h)
            }
            (
                Net::Lstm {
                    embedding,
                    rnn,
                    proj,
                },
                EncoderInput::Tokens(seq),
            ) => {
                self.check_level(seq)?;
                if seq.true_length() == 0 {
                    return Err(Error::EmptySequence("encode_lstm"));
                }
                let frames = seq
                    .tokens()
                    .iter()
                    .map(|&id| tape.lookup(p[*embedding], id as usize))
                    .collect::<Result<Vec<_>>>()?;
                let hs = rnn.run(tape, p, &frames)?;
                let mean = tape.mean(&hs)?;
                match proj {
                    Some(l) => l.forward(tape, p, mean),
                    None => Ok(mean),
                }
            }
            (Net::CnnRnn { convs, rnn, proj }, EncoderInput::Tokens(seq)) => {
                self.check_level(seq)?;
                let x = tape.constant(convs.one_hot(seq.ids()));
                let fmap = convs.forward(tape, p, x)?;
                let frames = (0..convs.out_len)
                    .map(|t| tape.column(fmap, t))
                    .collect::<Result<Vec<_>>>()?;
                let hs = rnn.run(tape, p, &frames)?;
                let mean = tape.mean(&hs)?;
                match proj {
                    Some(l) => l.forward(tape, p, mean),
                    None => Ok(mean),
                }
            }
            _ => Err(Error::Contract(format!(
                "input kind does not match the {} encoder",
                self.spec.family
            ))),
        }
    }

    fn check_level(&self, seq: &TextSequence) -> Result<()> {
        if seq.level() != self.spec.level {
            return Err(Error::Contract(format!(
                "{} sequence given to a {} {} encoder",
                seq.level(),
                self.spec.level,
                self.spec.family
            )));
        }
        let fixed_len = matches!(self.spec.family, Family::Cnn | Family::CnnRnn);
        if fixed_len && seq.max_len() != self.spec.max_len() {
            return Err(Error::Contract(format!(
                "sequence length {} differs from encoder input length {}",
                seq.max_len(),
                self.spec.max_len()
            )));
        }
        Ok(())
    }

    /// Convenience forward pass on a private tape.
    pub fn embed(&self, params: &ParamStore, input: &EncoderInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let v = self.encode(&mut tape, &p, input)?;
        Ok(tape.value(v).values().to_vec())
    }
}
