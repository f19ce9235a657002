//! The five Cycle-SUM networks and the forward/backward cycle over one video.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, xavier_uniform, Bound, Graph, ParamStore, Precision, Tensor,
    Var,
};
use crate::error::{Error, Result};
use crate::eval::{keyshot_summary, KeyshotSelection, ShotSegmentation};
use crate::seq_models::{linear, sample_noise, BiLstm, Critic, CriticOutput, GenOutput, VaeLstm};

pub const SELECTOR: &str = "selector";
pub const GEN_F: &str = "gen_f";
pub const GEN_B: &str = "gen_b";
pub const CRITIC_F: &str = "critic_f";
pub const CRITIC_B: &str = "critic_b";

const MANIFEST: &str = "params.manifest";
const BUFFER: &str = "params.bin";
const DIMS: &str = "dims.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub feature_dim: usize,
    pub hidden: usize,
    pub z_dim: usize,
    pub selector_layers: usize,
    pub generator_layers: usize,
    pub critic_layers: usize,
}

impl Dims {
    pub fn new(feature_dim: usize, hidden: usize, z_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden,
            z_dim,
            selector_layers: 3,
            generator_layers: 2,
            critic_layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.feature_dim,
            self.hidden,
            self.z_dim,
            self.selector_layers,
            self.generator_layers,
            self.critic_layers,
        ];
        if all.contains(&0) {
            return Err(Error::InvalidArgument(format!("every dimension must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// Three-layer bidirectional LSTM with a per-frame sigmoid head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selector {
    pub bilstm: BiLstm,
    pub hidden: usize,
}

impl Selector {
    pub fn new(feature_dim: usize, hidden: usize, depth: usize) -> Self {
        Self {
            bilstm: BiLstm::new("bilstm", feature_dim, hidden, depth),
            hidden,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.bilstm.init(store, rng)?;
        store.insert("head.w", xavier_uniform(&[2 * self.hidden, 1], rng))?;
        store.insert("head.b", Tensor::zeros(&[1]))
    }

    pub fn check(&self, store: &ParamStore) -> Result<()> {
        self.bilstm.check(store)?;
        for (name, shape) in [("head.w", vec![2 * self.hidden, 1]), ("head.b", vec![1])] {
            let t = store.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "parameter shape",
                    lhs: shape,
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Importance scores in `(0, 1)`, one per frame.
    pub fn forward(&self, g: &mut Graph, p: &Bound, o: Var) -> Result<Var> {
        let k = g.shape(o)[0];
        let h = self.bilstm.forward(g, p, o)?;
        let logits = linear(g, h, p.get("head.w")?, p.get("head.b")?)?;
        let x = g.sigmoid(logits);
        g.reshape(x, &[k])
    }
}

/// Which stores are bound as trainable leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub selector: bool,
    pub generators: bool,
    pub critics: bool,
}

impl Trainable {
    pub const ALL: Self = Self {
        selector: true,
        generators: true,
        critics: true,
    };
    pub const NONE: Self = Self {
        selector: false,
        generators: false,
        critics: false,
    };
    pub const GENERATOR_PHASE: Self = Self {
        selector: true,
        generators: true,
        critics: false,
    };
}

pub struct BoundNets {
    pub selector: Bound,
    pub gen_f: Bound,
    pub gen_b: Bound,
    pub critic_f: Bound,
    pub critic_b: Bound,
}

/// Outputs that need G_b and D_b.
#[derive(Clone, Copy, Debug)]
pub struct BackwardBranch {
    /// `G_b(o)`.
    pub s_hat: GenOutput,
    /// `G_b(ô)`.
    pub s_cycle: GenOutput,
    /// `G_f(ŝ)`.
    pub o_cycle: GenOutput,
    /// `D_b(s)`.
    pub d_s: CriticOutput,
    /// `D_b(ŝ)`.
    pub d_s_hat: CriticOutput,
}

/// Every intermediate of one cycle over a video.
#[derive(Clone, Copy, Debug)]
pub struct CyclePass {
    pub k: usize,
    pub o: Var,
    pub x: Var,
    pub s: Var,
    /// `G_f(s)`.
    pub o_hat: GenOutput,
    /// `D_f(o)`.
    pub d_o: CriticOutput,
    /// `D_f(ô)`.
    pub d_o_hat: CriticOutput,
    pub backward: Option<BackwardBranch>,
}

/// Latent noise for the four generator calls of a cycle, in call order
/// `G_f(s)`, `G_b(o)`, `G_b(ô)`, `G_f(ŝ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleNoise(pub [Vec<f64>; 4]);

impl CycleNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, z_dim: usize) -> Self {
        Self(std::array::from_fn(|_| sample_noise(rng, z_dim)))
    }
}

/// Architectures plus parameters of selector, G_f, G_b, D_f and D_b.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleSumNets {
    pub dims: Dims,
    pub selector_arch: Selector,
    pub generator_arch: VaeLstm,
    pub critic_arch: Critic,
    pub selector: ParamStore,
    pub gen_f: ParamStore,
    pub gen_b: ParamStore,
    pub critic_f: ParamStore,
    pub critic_b: ParamStore,
}

impl CycleSumNets {
    fn archs(dims: &Dims) -> (Selector, VaeLstm, Critic) {
        let (d, h) = (dims.feature_dim, dims.hidden);
        (
            Selector::new(d, h, dims.selector_layers),
            VaeLstm::new(d, h, dims.z_dim, dims.generator_layers),
            Critic::new(d, h, dims.critic_layers),
        )
    }

    /// Xavier-initialized networks.
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let (selector_arch, generator_arch, critic_arch) = Self::archs(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut selector = ParamStore::new(SELECTOR);
        selector_arch.init(&mut selector, &mut rng)?;
        let mut gen_f = ParamStore::new(GEN_F);
        generator_arch.init(&mut gen_f, &mut rng)?;
        let mut gen_b = ParamStore::new(GEN_B);
        generator_arch.init(&mut gen_b, &mut rng)?;
        let mut critic_f = ParamStore::new(CRITIC_F);
        critic_arch.init(&mut critic_f, &mut rng)?;
        let mut critic_b = ParamStore::new(CRITIC_B);
        critic_arch.init(&mut critic_b, &mut rng)?;
        Ok(Self {
            dims,
            selector_arch,
            generator_arch,
            critic_arch,
            selector,
            gen_f,
            gen_b,
            critic_f,
            critic_b,
        })
    }

    pub fn stores(&self) -> [&ParamStore; 5] {
        [&self.selector, &self.gen_f, &self.gen_b, &self.critic_f, &self.critic_b]
    }

    pub fn stores_mut(&mut self) -> [&mut ParamStore; 5] {
        [
            &mut self.selector,
            &mut self.gen_f,
            &mut self.gen_b,
            &mut self.critic_f,
            &mut self.critic_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.stores().iter().map(|s| s.num_values()).sum()
    }

    pub fn check(&self) -> Result<()> {
        self.selector_arch.check(&self.selector)?;
        self.generator_arch.check(&self.gen_f)?;
        self.generator_arch.check(&self.gen_b)?;
        self.critic_arch.check(&self.critic_f)?;
        self.critic_arch.check(&self.critic_b)
    }

    pub fn bind(&self, g: &mut Graph, t: Trainable) -> BoundNets {
        BoundNets {
            selector: self.selector.bind(g, t.selector),
            gen_f: self.gen_f.bind(g, t.generators),
            gen_b: self.gen_b.bind(g, t.generators),
            critic_f: self.critic_f.bind(g, t.critics),
            critic_b: self.critic_b.bind(g, t.critics),
        }
    }

    fn check_input(&self, g: &Graph, o: Var) -> Result<usize> {
        let shape = g.shape(o);
        if shape.len() != 2 || shape[1] != self.dims.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "video features",
                lhs: vec![shape.first().copied().unwrap_or(0), self.dims.feature_dim],
                rhs: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    pub fn select(&self, g: &mut Graph, b: &BoundNets, o: Var) -> Result<Var> {
        self.check_input(g, o)?;
        self.selector_arch.forward(g, &b.selector, o)
    }

    /// Runs both cycles with fresh latent noise from `rng`.
    pub fn full_cycle<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        b: &BoundNets,
        o: Var,
        rng: &mut R,
        backward_branch: bool,
    ) -> Result<CyclePass> {
        let noise = CycleNoise::draw(rng, self.dims.z_dim);
        self.full_cycle_with_noise(g, b, o, &noise, backward_branch)
    }

    pub fn full_cycle_with_noise(
        &self,
        g: &mut Graph,
        b: &BoundNets,
        o: Var,
        noise: &CycleNoise,
        backward_branch: bool,
    ) -> Result<CyclePass> {
        let k = self.check_input(g, o)?;
        let gen = &self.generator_arch;
        let critic = &self.critic_arch;
        let x = self.selector_arch.forward(g, &b.selector, o)?;
        let s = weight_frames(g, o, x)?;
        let o_hat = gen.generate(g, &b.gen_f, s, &noise.0[0])?;
        let d_o = critic.forward(g, &b.critic_f, o)?;
        let d_o_hat = critic.forward(g, &b.critic_f, o_hat.seq)?;
        let backward = if backward_branch {
            let s_hat = gen.generate(g, &b.gen_b, o, &noise.0[1])?;
            let s_cycle = gen.generate(g, &b.gen_b, o_hat.seq, &noise.0[2])?;
            let o_cycle = gen.generate(g, &b.gen_f, s_hat.seq, &noise.0[3])?;
            let d_s = critic.forward(g, &b.critic_b, s)?;
            let d_s_hat = critic.forward(g, &b.critic_b, s_hat.seq)?;
            Some(BackwardBranch {
                s_hat,
                s_cycle,
                o_cycle,
                d_s,
                d_s_hat,
            })
        } else {
            None
        };
        Ok(CyclePass {
            k,
            o,
            x,
            s,
            o_hat,
            d_o,
            d_o_hat,
            backward,
        })
    }

    /// Frame importance scores for a `k x d` feature matrix.
    pub fn score(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, Trainable::NONE);
        let o = g.constant(features.clone());
        let x = self.select(&mut g, &b, o)?;
        Ok(g.value(x).data().to_vec())
    }

    /// Writes `dims.json`, `params.manifest` and `params.bin` into `dir`.
    pub fn save(&self, dir: &Path, dtype: Precision) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(DIMS), serde_json::to_string_pretty(&self.dims)?)?;
        save_checkpoint(&self.stores(), &dir.join(MANIFEST), &dir.join(BUFFER), dtype)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let dims: Dims = serde_json::from_str(&fs::read_to_string(dir.join(DIMS))?)?;
        dims.validate()?;
        let mut stores = load_checkpoint(&dir.join(MANIFEST), &dir.join(BUFFER))?;
        let mut take = |label: &str| {
            stores.remove(label).ok_or_else(|| Error::Malformed {
                path: dir.join(MANIFEST).display().to_string(),
                reason: format!("no parameters for `{label}`"),
            })
        };
        let (selector_arch, generator_arch, critic_arch) = Self::archs(&dims);
        let nets = Self {
            dims,
            selector_arch,
            generator_arch,
            critic_arch,
            selector: take(SELECTOR)?,
            gen_f: take(GEN_F)?,
            gen_b: take(GEN_B)?,
            critic_f: take(CRITIC_F)?,
            critic_b: take(CRITIC_B)?,
        };
        nets.check()?;
        Ok(nets)
    }
}

/// `s_t = x_t * o_t`.
pub fn weight_frames(g: &mut Graph, o: Var, x: Var) -> Result<Var> {
    g.scale_rows(o, x)
}

/// Binary keyshot selection from continuous scores at budget `sigma`.
pub fn discretize_scores(
    x: &[f64],
    segments: &ShotSegmentation,
    sigma: f64,
) -> Result<KeyshotSelection> {
    keyshot_summary(x, segments, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CycleSumNets {
        CycleSumNets::new(Dims::new(3, 4, 2), 1).unwrap()
    }

    fn video(k: usize, d: usize, seed: u64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(k, d, (0..k * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_head_scores_half() {
        let mut nets = toy();
        for (_, t) in nets.selector.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let x = nets.score(&video(5, 3, 2)).unwrap();
        assert!(x.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn scores_depend_on_context() {
        let nets = toy();
        let v = video(6, 3, 4);
        let x = nets.score(&v).unwrap();
        assert!(x.iter().all(|s| *s > 0.0 && *s < 1.0));
        let order = [3, 0, 5, 1, 4, 2];
        let mut shuffled = Vec::new();
        for &i in &order {
            shuffled.extend_from_slice(v.row(i));
        }
        let xs = nets.score(&Tensor::matrix(6, 3, shuffled).unwrap()).unwrap();
        let moved: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        assert!(moved.iter().zip(&xs).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn weight_frames_examples() {
        let mut g = Graph::new();
        let o = g.constant(Tensor::matrix(1, 2, vec![2.0, 4.0]).unwrap());
        let x = g.constant(Tensor::vector(vec![0.5]));
        let s = weight_frames(&mut g, o, x).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 2.0]);
        let o = g.constant(video(3, 2, 1));
        let ones = g.constant(Tensor::full(&[3], 1.0));
        let s = weight_frames(&mut g, o, ones).unwrap();
        assert_eq!(g.value(s).data(), g.value(o).data());
        let zeros = g.constant(Tensor::zeros(&[3]));
        let s = weight_frames(&mut g, o, zeros).unwrap();
        assert!(g.value(s).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cycle_shapes_and_determinism() {
        let nets = toy();
        let run = |seed| {
            let mut g = Graph::new();
            let b = nets.bind(&mut g, Trainable::NONE);
            let o = g.constant(video(5, 3, 9));
            let p = nets
                .full_cycle(&mut g, &b, o, &mut ChaCha8Rng::seed_from_u64(seed), true)
                .unwrap();
            let br = p.backward.unwrap();
            for v in [p.o, p.s, p.o_hat.seq, br.s_hat.seq, br.s_cycle.seq, br.o_cycle.seq] {
                assert_eq!(g.shape(v), &[5, 3]);
            }
            g.value(br.o_cycle.seq).data().to_vec()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn rejects_wrong_feature_dim() {
        let nets = toy();
        let err = nets.score(&video(4, 5, 0)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn checkpoint_round_trip() {
        let nets = toy();
        let dir = tempfile::tempdir().unwrap();
        nets.save(dir.path(), Precision::F64).unwrap();
        assert_eq!(CycleSumNets::load(dir.path()).unwrap(), nets);
    }

    #[test]
    fn discretize_examples() {
        let seg = ShotSegmentation::new(vec![(0, 3), (3, 10)], 10).unwrap();
        let sel = discretize_scores(&[0.9; 10], &seg, 0.3).unwrap();
        assert_eq!(sel.frames.iter().filter(|f| **f).count(), 3);
        let seg = ShotSegmentation::uniform(24, 4).unwrap();
        let sel = discretize_scores(&[0.5; 24], &seg, 0.5).unwrap();
        assert_eq!(sel.shots, [0, 1, 2]);
        assert!(discretize_scores(&[0.0; 24], &seg, 0.5).unwrap().shots.is_empty());
    }
}
