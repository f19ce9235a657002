//! Recurrent building blocks: LSTM layers and stacks, bidirectional LSTM,
//! the VAE-LSTM generator and the LSTM critic.
//!
//! Architectures are plain descriptors; their weights live in a
//! [`ParamStore`] under dot-delimited names rooted at the descriptor prefix.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{xavier_uniform, Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Bounds applied to encoder log-variances before `exp`.
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 20.0;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn expect_shape(store: &ParamStore, name: &str, shape: &[usize]) -> Result<()> {
    let t = store.get(name)?;
    if t.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "parameter shape",
            lhs: shape.to_vec(),
            rhs: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// `x·w + b` for `x` of shape `k x in`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

/// `v·w + b` for a vector `v`; returns a vector.
pub fn linear_vec(g: &mut Graph, v: Var, w: Var, b: Var) -> Result<Var> {
    let n = g.shape(v)[0];
    let row = g.reshape(v, &[1, n])?;
    let out = linear(g, row, w, b)?;
    let m = g.shape(out)[1];
    g.reshape(out, &[m])
}

/// One LSTM layer: input weights `d_in x 4h`, recurrent `h x 4h`, bias `4h`,
/// gates ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmLayer {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Output of a layer run.
#[derive(Clone, Copy, Debug)]
pub struct LstmOutput {
    /// Hidden states in time order, `k x h`.
    pub hidden: Var,
    /// Hidden state after the last processed step, `h`.
    pub final_h: Var,
    /// Cell state after the last processed step, `h`.
    pub final_c: Var,
}

impl LstmLayer {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden,
        }
    }

    fn name(&self, n: &str) -> String {
        join(&self.prefix, n)
    }

    /// Xavier weights, zero biases except the forget gate at 1.0.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let (d, h) = (self.input_dim, self.hidden);
        store.insert(self.name("w_in"), xavier_uniform(&[d, 4 * h], rng))?;
        store.insert(self.name("w_rec"), xavier_uniform(&[h, 4 * h], rng))?;
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        store.insert(self.name("bias"), Tensor::vector(bias))?;
        Ok(())
    }

    pub fn check(&self, store: &ParamStore) -> Result<()> {
        let (d, h) = (self.input_dim, self.hidden);
        expect_shape(store, &self.name("w_in"), &[d, 4 * h])?;
        expect_shape(store, &self.name("w_rec"), &[h, 4 * h])?;
        expect_shape(store, &self.name("bias"), &[4 * h])
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        seq: Var,
        h0: Option<Var>,
        c0: Option<Var>,
        reverse: bool,
    ) -> Result<LstmOutput> {
        let shape = g.shape(seq).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::InvalidShape {
                shape,
                reason: "lstm input must be a non-empty k x d sequence".into(),
            });
        }
        if shape[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "lstm feature dim",
                lhs: vec![self.input_dim],
                rhs: vec![shape[1]],
            });
        }
        let k = shape[0];
        let node = g.lstm(
            seq,
            p.get(&self.name("w_in"))?,
            p.get(&self.name("w_rec"))?,
            p.get(&self.name("bias"))?,
            h0,
            c0,
            reverse,
        )?;
        let hidden = g.slice_rows(node, 0, k)?;
        let last = if reverse { 0 } else { k - 1 };
        let fh = g.slice_rows(node, last, last + 1)?;
        let final_h = g.reshape(fh, &[self.hidden])?;
        let fc = g.slice_rows(node, k, k + 1)?;
        let final_c = g.reshape(fc, &[self.hidden])?;
        Ok(LstmOutput {
            hidden,
            final_h,
            final_c,
        })
    }
}

/// Unidirectional stack of LSTM layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let d = if l == 0 { input_dim } else { hidden };
                LstmLayer::new(join(prefix, &format!("l{l}")), d, hidden)
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn check(&self, store: &ParamStore) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.check(store))
    }

    /// Runs every layer forward in time; returns the top layer's output.
    pub fn forward(&self, g: &mut Graph, p: &Bound, seq: Var) -> Result<LstmOutput> {
        let mut input = seq;
        let mut last = None;
        for layer in &self.layers {
            let out = layer.forward(g, p, input, None, None, false)?;
            input = out.hidden;
            last = Some(out);
        }
        last.ok_or_else(|| Error::InvalidArgument("empty lstm stack".into()))
    }
}

/// Bidirectional LSTM: each layer runs a forward and a time-reversed pass
/// and concatenates them per step (`k x 2h`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiLstm {
    pub forward: Vec<LstmLayer>,
    pub backward: Vec<LstmLayer>,
}

impl BiLstm {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, depth: usize) -> Self {
        let mk = |dir: &str| {
            (0..depth)
                .map(|l| {
                    let d = if l == 0 { input_dim } else { 2 * hidden };
                    LstmLayer::new(join(prefix, &format!("l{l}.{dir}")), d, hidden)
                })
                .collect()
        };
        Self {
            forward: mk("fw"),
            backward: mk("bw"),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.last().map_or(0, |l| l.hidden)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for (f, b) in self.forward.iter().zip(&self.backward) {
            f.init(store, rng)?;
            b.init(store, rng)?;
        }
        Ok(())
    }

    pub fn check(&self, store: &ParamStore) -> Result<()> {
        self.forward
            .iter()
            .chain(&self.backward)
            .try_for_each(|l| l.check(store))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, seq: Var) -> Result<Var> {
        if self.forward.is_empty() {
            return Err(Error::InvalidArgument("bidirectional stack needs depth >= 1".into()));
        }
        let mut input = seq;
        for (f, b) in self.forward.iter().zip(&self.backward) {
            let fo = f.forward(g, p, input, None, None, false)?;
            let bo = b.forward(g, p, input, None, None, true)?;
            input = g.concat(&[fo.hidden, bo.hidden], 1)?;
        }
        Ok(input)
    }
}

/// Draws `n` standard-normal values.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `z = mu + exp(logvar / 2) * eps` with `eps` held constant.
pub fn reparam_sample(g: &mut Graph, mu: Var, logvar: Var, eps: &[f64]) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) || g.shape(mu) != [eps.len()] {
        return Err(Error::ShapeMismatch {
            op: "reparameterization",
            lhs: g.shape(mu).to_vec(),
            rhs: g.shape(logvar).to_vec(),
        });
    }
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let e = g.constant(Tensor::vector(eps.to_vec()));
    let noise = g.mul(std, e)?;
    g.add(mu, noise)
}

/// Output of one generator call.
#[derive(Clone, Copy, Debug)]
pub struct GenOutput {
    /// Generated sequence in time order, `k x d`.
    pub seq: Var,
    pub mu: Var,
    pub logvar: Var,
}

/// VAE whose encoder and decoder are LSTM stacks.
///
/// The decoder input at every step is `[start token ; z]`. Its emissions
/// run from the last frame to the first and are flipped before return.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VaeLstm {
    pub feature_dim: usize,
    pub hidden: usize,
    pub z_dim: usize,
    pub encoder: LstmStack,
    pub decoder: LstmStack,
}

impl VaeLstm {
    pub fn new(feature_dim: usize, hidden: usize, z_dim: usize, depth: usize) -> Self {
        Self {
            feature_dim,
            hidden,
            z_dim,
            encoder: LstmStack::new("enc", feature_dim, hidden, depth),
            decoder: LstmStack::new("dec", feature_dim + z_dim, hidden, depth),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let (d, h, z) = (self.feature_dim, self.hidden, self.z_dim);
        self.encoder.init(store, rng)?;
        store.insert("mu.w", xavier_uniform(&[h, z], rng))?;
        store.insert("mu.b", Tensor::zeros(&[z]))?;
        store.insert("logvar.w", xavier_uniform(&[h, z], rng))?;
        store.insert("logvar.b", Tensor::zeros(&[z]))?;
        store.insert("dec.start", xavier_uniform(&[d], rng))?;
        self.decoder.init(store, rng)?;
        store.insert("out.w", xavier_uniform(&[h, d], rng))?;
        store.insert("out.b", Tensor::zeros(&[d]))?;
        Ok(())
    }

    pub fn check(&self, store: &ParamStore) -> Result<()> {
        let (d, h, z) = (self.feature_dim, self.hidden, self.z_dim);
        self.encoder.check(store)?;
        self.decoder.check(store)?;
        expect_shape(store, "mu.w", &[h, z])?;
        expect_shape(store, "mu.b", &[z])?;
        expect_shape(store, "logvar.w", &[h, z])?;
        expect_shape(store, "logvar.b", &[z])?;
        expect_shape(store, "dec.start", &[d])?;
        expect_shape(store, "out.w", &[h, d])?;
        expect_shape(store, "out.b", &[d])
    }

    /// Posterior mean and clamped log-variance from the final encoder state.
    pub fn encode(&self, g: &mut Graph, p: &Bound, seq: Var) -> Result<(Var, Var)> {
        let top = self.encoder.forward(g, p, seq)?;
        let mu = linear_vec(g, top.final_h, p.get("mu.w")?, p.get("mu.b")?)?;
        let lv = linear_vec(g, top.final_h, p.get("logvar.w")?, p.get("logvar.b")?)?;
        let logvar = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, logvar))
    }

    /// Decodes `k` frames from latent `z`.
    pub fn decode(&self, g: &mut Graph, p: &Bound, z: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::InvalidArgument("decode length must be >= 1".into()));
        }
        let token = g.concat(&[p.get("dec.start")?, z], 0)?;
        let inputs = g.repeat_rows(token, k)?;
        let top = self.decoder.forward(g, p, inputs)?;
        let emitted = linear(g, top.hidden, p.get("out.w")?, p.get("out.b")?)?;
        Ok(g.reverse_rows(emitted))
    }

    /// Encode, reparameterize with `eps`, decode to the input length.
    pub fn generate(&self, g: &mut Graph, p: &Bound, seq: Var, eps: &[f64]) -> Result<GenOutput> {
        let k = g.shape(seq)[0];
        let (mu, logvar) = self.encode(g, p, seq)?;
        let z = reparam_sample(g, mu, logvar, eps)?;
        let out = self.decode(g, p, z, k)?;
        Ok(GenOutput {
            seq: out,
            mu,
            logvar,
        })
    }
}

/// LSTM critic with an unsquashed linear score head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Critic {
    pub feature_dim: usize,
    pub hidden: usize,
    pub lstm: LstmStack,
}

/// Critic score and its last-hidden-layer features.
#[derive(Clone, Copy, Debug)]
pub struct CriticOutput {
    /// One-element score.
    pub score: Var,
    /// Time-mean of the top LSTM layer's hidden states, `h`.
    pub phi: Var,
}

impl Critic {
    pub fn new(feature_dim: usize, hidden: usize, depth: usize) -> Self {
        Self {
            feature_dim,
            hidden,
            lstm: LstmStack::new("lstm", feature_dim, hidden, depth),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.lstm.init(store, rng)?;
        store.insert("head.w", xavier_uniform(&[self.hidden, 1], rng))?;
        store.insert("head.b", Tensor::zeros(&[1]))?;
        Ok(())
    }

    pub fn check(&self, store: &ParamStore) -> Result<()> {
        self.lstm.check(store)?;
        expect_shape(store, "head.w", &[self.hidden, 1])?;
        expect_shape(store, "head.b", &[1])
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, seq: Var) -> Result<CriticOutput> {
        let top = self.lstm.forward(g, p, seq)?;
        let phi = g.mean_axis(top.hidden, 0)?;
        let score = linear_vec(g, phi, p.get("head.w")?, p.get("head.b")?)?;
        Ok(CriticOutput { score, phi })
    }
}
