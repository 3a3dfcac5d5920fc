//! Brute-force reference implementations. Everything here reads parameters by
//! name and recomputes with plain loops, sharing no code with the tape.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sje_core::data::{
    generate_synthetic, ClassId, ClassSplitDataset, SyntheticConfig, TextSequence, TokenTable, PAD_ID, UNK_ID,
};
use sje_core::encoders::{ConvBlock, ConvStack, EncoderInput, EncoderSpec, ImageMode, RnnCell, TextEncoder};
use sje_core::gradcheck::randomize_params;
use sje_core::joint::CompatibilityModel;
use sje_core::{Family, Level, ParamStore, Tensor};

pub fn param<'a>(store: &'a ParamStore, name: &str) -> &'a Tensor {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter `{name}`"));
    store.get(id)
}

pub fn set_param(store: &mut ParamStore, name: &str, values: &[f64]) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter `{name}`"));
    store.set_values(id, values).unwrap();
}

/// `a [n×k] · b [k×m]`, row-major.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = (w.shape()[0], w.shape()[1]);
    assert_eq!(c, x.len(), "matvec width");
    matmul(w.values(), x, r, c, 1)
}

/// `W x + b`, with the bias only if the layer has one.
pub fn affine(store: &ParamStore, layer: &str, x: &[f64]) -> Vec<f64> {
    let mut y = matvec(param(store, &format!("{layer}.weight")), x);
    if let Some(id) = store.find(&format!("{layer}.bias")) {
        y.iter_mut().zip(store.get(id).values()).for_each(|(a, b)| *a += b);
    }
    y
}

/// Valid cross-correlation of `x [channels][len]` with `kernel [out×channels×width]`.
pub fn conv1d(x: &[Vec<f64>], kernel: &Tensor, stride: usize) -> Vec<Vec<f64>> {
    let (o, c, w) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    assert_eq!(c, x.len(), "conv1d channels");
    let len = x[0].len();
    let out_len = (len - w) / stride + 1;
    let k = kernel.values();
    (0..o)
        .map(|oi| {
            (0..out_len)
                .map(|t| {
                    let mut s = 0.0;
                    for (ci, row) in x.iter().enumerate() {
                        for j in 0..w {
                            s += k[(oi * c + ci) * w + j] * row[t * stride + j];
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Non-overlapping window maxima; a trailing partial window is dropped.
pub fn maxpool(x: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            row.chunks_exact(window)
                .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect()
        })
        .collect()
}

/// `[channels][len]` one-hot of the first `tokens.len()` positions; every
/// later column is built as an explicit zero column.
pub fn prefix_one_hot(tokens: &[u32], channels: usize, len: usize) -> Vec<Vec<f64>> {
    let mut x = vec![vec![0.0; len]; channels];
    for (t, &id) in tokens.iter().enumerate() {
        assert_ne!(id, PAD_ID);
        x[id as usize - 1][t] = 1.0;
    }
    x
}

pub fn conv_stack(store: &ParamStore, blocks: &[ConvBlock], mut x: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    for (i, b) in blocks.iter().enumerate() {
        let k = param(store, &format!("text.cnn.block{i}.kernel"));
        let bias = param(store, &format!("text.cnn.block{i}.bias")).values();
        let mut y = conv1d(&x, k, b.stride);
        for (row, bv) in y.iter_mut().zip(bias) {
            row.iter_mut().for_each(|v| *v = (*v + bv).max(0.0));
        }
        x = if b.pool > 1 { maxpool(&y, b.pool) } else { y };
    }
    x
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Hidden states of the recurrence `layer` from zero state.
pub fn recurrence(store: &ParamStore, layer: &str, cell: RnnCell, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w_in = param(store, &format!("{layer}.w_in"));
    let w_rec = param(store, &format!("{layer}.w_rec"));
    let b = param(store, &format!("{layer}.bias")).values();
    let hidden = w_rec.shape()[1];
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut out = Vec::new();
    for x in frames {
        let a = matvec(w_in, x);
        let r = matvec(w_rec, &h);
        let z: Vec<f64> = (0..a.len()).map(|i| a[i] + r[i] + b[i]).collect();
        h = match cell {
            RnnCell::Vanilla => z.iter().map(|v| v.tanh()).collect(),
            RnnCell::Lstm => (0..hidden)
                .map(|j| {
                    let i = sigmoid(z[j]);
                    let f = sigmoid(z[hidden + j]);
                    let o = sigmoid(z[2 * hidden + j]);
                    let g = z[3 * hidden + j].tanh();
                    c[j] = f * c[j] + i * g;
                    o * c[j].tanh()
                })
                .collect(),
        };
        out.push(h.clone());
    }
    out
}

pub fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    m.iter().map(|v| v / rows.len() as f64).collect()
}

fn project(store: &ParamStore, x: Vec<f64>) -> Vec<f64> {
    if store.find("text.proj.weight").is_some() {
        affine(store, "text.proj", &x)
    } else {
        x
    }
}

/// Reference text embedding. The CNN input is [`prefix_one_hot`], so padding
/// columns enter as explicit zeros rather than through the padding id.
pub fn text_embedding(enc: &TextEncoder, store: &ParamStore, input: &EncoderInput) -> Vec<f64> {
    let spec = enc.spec();
    let len = spec.max_len();
    let one_hot = |tokens: &[u32], channels: usize| prefix_one_hot(tokens, channels, len);
    let channels = enc.token_table().map_or(0, |t| t.size() - 1);
    match (spec.family, input) {
        (Family::Bow, EncoderInput::Tokens(seq)) => {
            let words = channels - 1;
            let mut ind = vec![0.0; words];
            for &id in seq.tokens() {
                if id != UNK_ID {
                    ind[id as usize - 2] = 1.0;
                }
            }
            affine(store, "text.bow", &ind)
        }
        (Family::WordvecAvg, EncoderInput::Dense(x)) => affine(store, "text.wordvec", x),
        (Family::Attributes, EncoderInput::Dense(x)) => affine(store, "text.attr", x),
        (Family::Cnn, EncoderInput::Tokens(seq)) => {
            let cnn = spec.cnn.as_ref().unwrap();
            let fmap = conv_stack(store, &cnn.blocks, one_hot(seq.tokens(), channels));
            let mut h: Vec<f64> = fmap.concat();
            for i in 0..cnn.fc_hidden.len() {
                h = affine(store, &format!("text.fc{i}"), &h).into_iter().map(|v| v.max(0.0)).collect();
            }
            affine(store, "text.fc_out", &h)
        }
        (Family::Lstm, EncoderInput::Tokens(seq)) => {
            let table = param(store, "text.embedding");
            let e = table.shape()[1];
            let frames: Vec<Vec<f64>> = seq
                .tokens()
                .iter()
                .map(|&id| table.values()[id as usize * e..(id as usize + 1) * e].to_vec())
                .collect();
            project(store, mean_of(&recurrence(store, "text.lstm", RnnCell::Lstm, &frames)))
        }
        (Family::CnnRnn, EncoderInput::Tokens(seq)) => {
            let cnn = spec.cnn.as_ref().unwrap();
            let fmap = conv_stack(store, &cnn.blocks, one_hot(seq.tokens(), channels));
            let frames: Vec<Vec<f64>> = (0..fmap[0].len()).map(|t| fmap.iter().map(|r| r[t]).collect()).collect();
            let cell = spec.rnn.unwrap().cell;
            project(store, mean_of(&recurrence(store, "text.rnn", cell, &frames)))
        }
        (f, _) => panic!("no oracle for {f} with this input"),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mean structured hinge by enumerating every (anchor, competitor) term.
/// `rows` anchors on images (rows of `s`), otherwise on texts (columns).
pub fn hinge(s: &[f64], labels: &[ClassId], rows: bool) -> f64 {
    let b = labels.len();
    let at = |n: usize, y: usize| if rows { s[n * b + y] } else { s[y * b + n] };
    let mut total = 0.0;
    for n in 0..b {
        let terms: Vec<f64> = (0..b)
            .map(|y| {
                let delta = if labels[y] == labels[n] { 0.0 } else { 1.0 };
                (delta + at(n, y) - at(n, n)).max(0.0)
            })
            .collect();
        total += terms.iter().copied().fold(0.0, f64::max);
    }
    total / b as f64
}

/// Percent of the top `min(k, n)` candidates in the query class. A
/// candidate's rank is the number of candidates that beat it: higher score,
/// or equal score and smaller id.
pub fn ap_at_k(query: ClassId, cands: &[(String, ClassId, f64)], k: usize) -> f64 {
    let k = k.min(cands.len());
    let mut hits = 0;
    for (id, class, score) in cands {
        let rank = cands
            .iter()
            .filter(|(oid, _, os)| os > score || (os == score && oid < id))
            .count();
        if rank < k && *class == query {
            hits += 1;
        }
    }
    100.0 * hits as f64 / k as f64
}

pub const D: usize = 16;

pub fn dataset() -> ClassSplitDataset {
    generate_synthetic(&SyntheticConfig {
        feature_dim: D,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

pub fn all_specs() -> Vec<EncoderSpec> {
    let mut out = Vec::new();
    for family in Family::ALL {
        let levels: &[Level] = if matches!(family, Family::Cnn | Family::Lstm | Family::CnnRnn) {
            &[Level::Word, Level::Char]
        } else {
            &[Level::Word]
        };
        for &level in levels {
            out.push(EncoderSpec::new(family, level).with_embed_dim(D));
        }
    }
    let mut lstm_cell = EncoderSpec::new(Family::CnnRnn, Level::Word).with_embed_dim(D);
    lstm_cell.rnn.as_mut().unwrap().cell = RnnCell::Lstm;
    out.push(lstm_cell);
    out
}

/// A model with every parameter, biases included, drawn at random.
pub fn random_model(spec: &EncoderSpec, ds: &ClassSplitDataset, seed: u64) -> CompatibilityModel {
    let mut model = CompatibilityModel::build(spec, ImageMode::Identity, ds).unwrap();
    randomize_params(&mut model, &mut ChaCha8Rng::seed_from_u64(seed));
    model
}

/// Random non-padding tokens of length `1..=max_len`.
pub fn random_tokens<R: Rng>(table: &TokenTable, max_len: usize, rng: &mut R) -> Vec<u32> {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| rng.random_range(1..table.size() as u32)).collect()
}

/// A random input the encoder accepts: tokens for token families, a
/// caption or attribute vector from the dataset otherwise.
pub fn random_input<R: Rng>(enc: &TextEncoder, ds: &ClassSplitDataset, rng: &mut R) -> EncoderInput {
    let spec = enc.spec();
    match enc.token_table() {
        Some(table) if spec.family != Family::WordvecAvg => {
            let ids = random_tokens(table, spec.max_len(), rng);
            EncoderInput::Tokens(TextSequence::from_ids(&ids, spec.max_len(), spec.level).unwrap())
        }
        _ => {
            let c = &ds.captions()[rng.random_range(0..ds.captions().len())];
            enc.prepare(&c.raw_text, c.class_id).unwrap()
        }
    }
}

/// Padding invariance over `n` random inputs per token-family spec: exact
/// for bag of words and LSTM under longer padding, and for the convolutional
/// families within 1e-12 of a forward pass whose padding columns are built as
/// explicit zeros. Returns the number of inputs checked.
pub fn check_padding_invariance(ds: &ClassSplitDataset, n: usize, seed: u64) -> Result<usize, String> {
    let specs: Vec<_> = all_specs()
        .into_iter()
        .filter(|s| matches!(s.family, Family::Bow | Family::Lstm | Family::Cnn | Family::CnnRnn))
        .collect();
    let counts = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| padding_suite(spec, ds, n, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(counts.iter().sum())
}

fn padding_suite(spec: &EncoderSpec, ds: &ClassSplitDataset, n: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(spec, ds, seed);
    let enc = model.text_encoder();
    let table = enc.token_table().unwrap();
    let len = spec.max_len();
    let channels = table.size() - 1;
    for _ in 0..n {
        let ids = random_tokens(table, len, &mut rng);
        let seq = TextSequence::from_ids(&ids, len, spec.level).unwrap();
        let base = enc.embed(model.params(), &EncoderInput::Tokens(seq.clone())).unwrap();
        if matches!(spec.family, Family::Bow | Family::Lstm) {
            let extra = rng.random_range(1..=50);
            let padded = TextSequence::from_ids(&ids, len + extra, spec.level).unwrap();
            let out = enc.embed(model.params(), &EncoderInput::Tokens(padded)).unwrap();
            if out != base {
                return Err(format!("{} {}: {ids:?} + {extra} padding", spec.family, spec.level));
            }
        } else {
            let zero_cols = one_hot_padding_is_zero(&seq, channels);
            let explicit = text_embedding(enc, model.params(), &EncoderInput::Tokens(seq));
            let err = max_abs_diff(&base, &explicit);
            if !zero_cols || err >= 1e-12 {
                return Err(format!("{} {}: {err:e} (zero columns {zero_cols})", spec.family, spec.level));
            }
        }
    }
    Ok(n)
}

/// Two models built from the same spec and seed agree bit for bit on `n`
/// random inputs per spec, and repeated calls do too.
pub fn check_determinism(ds: &ClassSplitDataset, n: usize, seed: u64) -> Result<usize, String> {
    let counts = all_specs()
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let spec = spec.clone().with_seed(seed);
            let a = CompatibilityModel::build(&spec, ImageMode::Identity, ds).unwrap();
            let b = CompatibilityModel::build(&spec, ImageMode::Identity, ds).unwrap();
            if a.params().flatten() != b.params().flatten() {
                return Err(format!("{} {}: parameters differ", spec.family, spec.level));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            for _ in 0..n {
                let x = random_input(a.text_encoder(), ds, &mut rng);
                let ea = a.embed_text(&x).unwrap();
                if ea != b.embed_text(&x).unwrap() || ea != a.embed_text(&x).unwrap() {
                    return Err(format!("{} {}: {x:?}", spec.family, spec.level));
                }
            }
            Ok(n)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(counts.iter().sum())
}

fn one_hot_padding_is_zero(seq: &TextSequence, channels: usize) -> bool {
    let stack = ConvStack {
        layers: vec![],
        input_channels: channels,
        out_channels: channels,
        out_len: seq.max_len(),
    };
    let m = stack.one_hot(seq.ids());
    let len = seq.max_len();
    (0..channels).all(|c| (seq.true_length()..len).all(|t| m.values()[c * len + t] == 0.0))
}

