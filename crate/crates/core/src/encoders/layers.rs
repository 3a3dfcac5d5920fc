//! Building blocks shared by the text encoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoders::spec::{CnnSpec, RnnCell};
use crate::error::Result;

/// `y = W·x (+ b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.linear_weight(format!("{name}.weight"), output, input, rng);
        let bias = bias.then(|| store.zeros(format!("{name}.bias"), &[output]));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matvec(p[self.weight], x)?;
        match self.bias {
            Some(b) => tape.add(y, p[b]),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub pool: usize,
    pub stride: usize,
}

/// Temporal conv/relu/pool stack over one-hot token columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStack {
    pub layers: Vec<ConvLayer>,
    /// One-hot rows: every id except padding.
    pub input_channels: usize,
    pub out_channels: usize,
    pub out_len: usize,
}

impl ConvStack {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        spec: &CnnSpec,
        vocab_size: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let lens = spec.lengths(max_len)?;
        let input_channels = vocab_size - 1;
        let mut c_in = input_channels;
        let mut layers = Vec::with_capacity(spec.blocks.len());
        for (i, b) in spec.blocks.iter().enumerate() {
            let kernel = store.glorot(
                format!("{name}.block{i}.kernel"),
                &[b.channels, c_in, b.width],
                c_in * b.width,
                b.channels * b.width,
                rng,
            );
            let bias = store.zeros(format!("{name}.block{i}.bias"), &[b.channels]);
            layers.push(ConvLayer {
                kernel,
                bias,
                pool: b.pool,
                stride: b.stride,
            });
            c_in = b.channels;
        }
        Ok(Self {
            layers,
            input_channels,
            out_channels: c_in,
            out_len: *lens.last().unwrap_or(&max_len),
        })
    }

    /// `[vocab−1 × max_len]` one-hot matrix; padding columns are all zero.
    pub fn one_hot(&self, ids: &[u32]) -> Tensor {
        let len = ids.len();
        let mut m = vec![0.0; self.input_channels * len];
        for (t, &id) in ids.iter().enumerate() {
            if id > 0 {
                m[(id as usize - 1) * len + t] = 1.0;
            }
        }
        Tensor::new(vec![self.input_channels, len], m).expect("one-hot shape")
    }

    /// Feature map `[out_channels × out_len]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, input: Var) -> Result<Var> {
        let mut x = input;
        for l in &self.layers {
            let y = tape.conv1d(x, p[l.kernel], l.stride)?;
            let y = tape.add_column_bias(y, p[l.bias])?;
            let y = tape.relu(y);
            x = if l.pool > 1 { tape.maxpool1d(y, l.pool)? } else { y };
        }
        Ok(x)
    }
}

/// Vanilla tanh recurrence or an LSTM, started from zero state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recurrent {
    pub cell: RnnCell,
    pub hidden: usize,
    /// Input weights, `[gates·hidden × input]`.
    pub w_in: ParamId,
    /// Recurrent weights, `[gates·hidden × hidden]`.
    pub w_rec: ParamId,
    pub bias: ParamId,
}

impl Recurrent {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cell: RnnCell,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let gates = match cell {
            RnnCell::Vanilla => 1,
            RnnCell::Lstm => 4,
        };
        let w_in = store.linear_weight(format!("{name}.w_in"), gates * hidden, input, rng);
        let w_rec = store.linear_weight(format!("{name}.w_rec"), gates * hidden, hidden, rng);
        let bias = store.zeros(format!("{name}.bias"), &[gates * hidden]);
        Self {
            cell,
            hidden,
            w_in,
            w_rec,
            bias,
        }
    }

    /// Hidden state after each input frame.
    pub fn run(&self, tape: &mut Tape, p: &Bound, frames: &[Var]) -> Result<Vec<Var>> {
        let h = self.hidden;
        let mut states = Vec::with_capacity(frames.len());
        let mut prev_h: Option<Var> = None;
        let mut prev_c: Option<Var> = None;
        for &x in frames {
            let mut z = tape.matvec(p[self.w_in], x)?;
            if let Some(hp) = prev_h {
                let r = tape.matvec(p[self.w_rec], hp)?;
                z = tape.add(z, r)?;
            }
            z = tape.add(z, p[self.bias])?;
            let h_new = match self.cell {
                RnnCell::Vanilla => tape.tanh(z),
                RnnCell::Lstm => {
                    // gate order: input, forget, output, candidate
                    let zi = tape.slice(z, 0, h)?;
                    let i = tape.sigmoid(zi);
                    let zo = tape.slice(z, 2 * h, h)?;
                    let o = tape.sigmoid(zo);
                    let zg = tape.slice(z, 3 * h, h)?;
                    let g = tape.tanh(zg);
                    let mut c = tape.mul(i, g)?;
                    if let Some(cp) = prev_c {
                        let zf = tape.slice(z, h, h)?;
                        let f = tape.sigmoid(zf);
                        let kept = tape.mul(f, cp)?;
                        c = tape.add(kept, c)?;
                    }
                    prev_c = Some(c);
                    let tc = tape.tanh(c);
                    tape.mul(o, tc)?
                }
            };
            states.push(h_new);
            prev_h = Some(h_new);
        }
        Ok(states)
    }
}
