//! Alternating training: VAE pretraining, `n` selector/generator updates per
//! critic update, RMSProp, weight clipping and a windowed stopping rule.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Direction, Graph, ParamStore, Precision, RmsProp, RmsPropState, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{prior_kl, total_loss, wgan_losses, LossBreakdown, LossWeights};
use crate::model::{CycleSumNets, Trainable, CRITIC_B, CRITIC_F, GEN_B, GEN_F, SELECTOR};
use crate::seq_models::{reparam_sample, sample_noise, Critic};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_generator_iters: usize,
    pub clip_c: f64,
    /// Clip selector and generators as well as critics.
    pub clip_generators: bool,
    pub optimizer: RmsProp,
    pub max_epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Zero disables the stopping rule.
    pub convergence_window: usize,
    pub convergence_tol: f64,
    pub precision: Precision,
    pub train_generators: bool,
    pub train_critics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_generator_iters: 3,
            clip_c: 0.1,
            clip_generators: true,
            optimizer: RmsProp::default(),
            max_epochs: 200,
            seed: 0,
            weights: LossWeights::default(),
            pretrain_epochs: 0,
            pretrain_lr: 1e-3,
            convergence_window: 10,
            convergence_tol: 0.01,
            precision: Precision::F64,
            train_generators: true,
            train_critics: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_generator_iters == 0 {
            return Err(Error::InvalidArgument("n_generator_iters must be >= 1".into()));
        }
        if !(self.clip_c > 0.0 && self.clip_c <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "clip_c {} must lie in (0, 0.5]",
                self.clip_c
            )));
        }
        if !(self.pretrain_lr >= 0.0) || !(self.convergence_tol >= 0.0) {
            return Err(Error::InvalidArgument("pretrain_lr and convergence_tol must be >= 0".into()));
        }
        RmsProp::new(self.optimizer.lr, self.optimizer.decay, self.optimizer.eps)?;
        self.weights.validate()
    }
}

/// Mutable training bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub opt: BTreeMap<String, RmsPropState>,
    pub best_total: f64,
    pub rng: ChaCha8Rng,
    /// Mean total loss of the most recent epochs, oldest first.
    pub history: VecDeque<f64>,
}

impl TrainState {
    pub fn new(nets: &CycleSumNets, seed: u64) -> Self {
        Self {
            epoch: 0,
            step: 0,
            opt: nets
                .stores()
                .iter()
                .map(|s| (s.label().to_string(), RmsPropState::for_store(s)))
                .collect(),
            best_total: f64::INFINITY,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: VecDeque::new(),
        }
    }
}

/// Fixed inputs of the critic phase.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticInputs {
    pub o: Tensor,
    pub o_hat: Tensor,
    /// `(s, ŝ)`; absent without the backward branch.
    pub backward: Option<(Tensor, Tensor)>,
}

/// Critic objectives measured on the phase inputs before the ascent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticReport {
    pub forward: f64,
    pub backward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    pub critic_inputs: CriticInputs,
    pub critic: Option<CriticReport>,
}

fn finite_or(term: &str, step: u64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            step,
        })
    }
}

/// Zeroes, fills and applies one RMSProp update to `store`.
fn update(
    store: &mut ParamStore,
    grads: &crate::autodiff::Gradients,
    opt: &RmsProp,
    state: &mut RmsPropState,
    dir: Direction,
    clip: Option<f64>,
    precision: Precision,
) -> Result<()> {
    store.zero_grad();
    store.accumulate(grads)?;
    opt.step(store, state, dir)?;
    store.clear_grad();
    if let Some(c) = clip {
        store.clip(c);
    }
    if precision == Precision::F32 {
        store.round_to(precision);
    }
    Ok(())
}

/// `D(real) - D(fake)` for one critic on fixed sequences.
pub fn critic_objective(
    g: &mut Graph,
    critic: &Critic,
    params: &ParamStore,
    trainable: bool,
    real: &Tensor,
    fake: &Tensor,
) -> Result<Var> {
    let p = params.bind(g, trainable);
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let dr = critic.forward(g, &p, r)?;
    let df = critic.forward(g, &p, f)?;
    Ok(wgan_losses(g, dr.score, df.score)?.0)
}

/// Value of the forward (`CRITIC_F`) or backward (`CRITIC_B`) critic objective.
pub fn critic_objective_value(
    nets: &CycleSumNets,
    label: &str,
    real: &Tensor,
    fake: &Tensor,
) -> Result<f64> {
    let store = match label {
        CRITIC_F => &nets.critic_f,
        CRITIC_B => &nets.critic_b,
        other => return Err(Error::InvalidArgument(format!("`{other}` is not a critic"))),
    };
    let mut g = Graph::new();
    let v = critic_objective(&mut g, &nets.critic_arch, store, false, real, fake)?;
    Ok(g.scalar(v))
}

/// The `n` inner selector/generator iterations. Returns the last
/// iteration's breakdown and the sequences the critics should see.
pub fn generator_phase(
    nets: &mut CycleSumNets,
    state: &mut TrainState,
    video: &Tensor,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, CriticInputs)> {
    let w = &cfg.weights;
    let clip = cfg.clip_generators.then_some(cfg.clip_c);
    let mut last = None;
    for _ in 0..cfg.n_generator_iters {
        let mut g = Graph::with_precision(cfg.precision);
        let trainable = if cfg.train_generators {
            Trainable::GENERATOR_PHASE
        } else {
            Trainable::NONE
        };
        let b = nets.bind(&mut g, trainable);
        let o = g.constant(video.clone());
        let pass = nets.full_cycle(&mut g, &b, o, &mut state.rng, w.backward_branch)?;
        let (total, breakdown) = total_loss(&mut g, &pass, w)?;
        if let Some(term) = breakdown.non_finite() {
            return Err(Error::NonFinite {
                term: term.to_string(),
                step: state.step,
            });
        }
        if cfg.train_generators {
            let grads = g.backward(total)?;
            for label in [SELECTOR, GEN_F, GEN_B] {
                let store = match label {
                    SELECTOR => &mut nets.selector,
                    GEN_F => &mut nets.gen_f,
                    _ => &mut nets.gen_b,
                };
                let st = state.opt.entry(label.to_string()).or_default();
                update(store, &grads, &cfg.optimizer, st, Direction::Descend, clip, cfg.precision)?;
            }
        }
        let value = |v: Var| g.value(v).clone();
        let inputs = CriticInputs {
            o: video.clone(),
            o_hat: value(pass.o_hat.seq),
            backward: pass.backward.map(|br| (value(pass.s), value(br.s_hat.seq))),
        };
        last = Some((breakdown, inputs));
    }
    Ok(last.expect("n_generator_iters >= 1"))
}

/// One ascent step per critic on fixed inputs, followed by clipping.
pub fn critic_phase(
    nets: &mut CycleSumNets,
    state: &mut TrainState,
    inputs: &CriticInputs,
    cfg: &TrainConfig,
) -> Result<CriticReport> {
    let mut ascend = |label: &str, real: &Tensor, fake: &Tensor| -> Result<f64> {
        let store = if label == CRITIC_F {
            &mut nets.critic_f
        } else {
            &mut nets.critic_b
        };
        let mut g = Graph::with_precision(cfg.precision);
        let obj = critic_objective(&mut g, &nets.critic_arch, store, true, real, fake)?;
        let before = finite_or(label, state.step, g.scalar(obj))?;
        let grads = g.backward(obj)?;
        let st = state.opt.entry(label.to_string()).or_default();
        update(
            store,
            &grads,
            &cfg.optimizer,
            st,
            Direction::Ascend,
            Some(cfg.clip_c),
            cfg.precision,
        )?;
        Ok(before)
    };
    let forward = ascend(CRITIC_F, &inputs.o, &inputs.o_hat)?;
    let backward = match &inputs.backward {
        Some((s, s_hat)) => Some(ascend(CRITIC_B, s, s_hat)?),
        None => None,
    };
    Ok(CriticReport { forward, backward })
}

/// One video: `n` generator iterations, then one critic phase.
pub fn train_step(
    nets: &mut CycleSumNets,
    state: &mut TrainState,
    video: &Tensor,
    cfg: &TrainConfig,
) -> Result<StepOutput> {
    if video.shape().len() != 2 || video.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training videos need at least 2 frames, got shape {:?}",
            video.shape()
        )));
    }
    let (breakdown, critic_inputs) = generator_phase(nets, state, video, cfg)?;
    let critic = if cfg.train_critics {
        Some(critic_phase(nets, state, &critic_inputs, cfg)?)
    } else {
        None
    };
    state.step += 1;
    Ok(StepOutput {
        breakdown,
        critic_inputs,
        critic,
    })
}

/// Plain-VAE loss of one generator on one video:
/// `KL + ||o - decode(encode(o))||_2 / k`.
fn vae_loss(
    g: &mut Graph,
    nets: &CycleSumNets,
    store: &ParamStore,
    video: &Tensor,
    eps: &[f64],
) -> Result<Var> {
    let p = store.bind(g, true);
    let o = g.constant(video.clone());
    let arch = &nets.generator_arch;
    let (mu, logvar) = arch.encode(g, &p, o)?;
    let z = reparam_sample(g, mu, logvar, eps)?;
    let recon = arch.decode(g, &p, z, video.rows())?;
    let kl = prior_kl(g, mu, logvar)?;
    let diff = g.sub(o, recon)?;
    let sq = g.square(diff);
    let ss = g.sum(sq);
    let norm = g.sqrt(ss)?;
    let rec = g.scale(norm, 1.0 / video.rows() as f64);
    g.add(kl, rec)
}

/// Trains G_f and G_b as plain VAEs on the original features. Returns the
/// per-epoch mean loss over videos and both generators.
pub fn pretrain_vaes(
    nets: &mut CycleSumNets,
    videos: &[Tensor],
    epochs: usize,
    lr: f64,
    seed: u64,
    clip: Option<f64>,
) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Ok(Vec::new());
    }
    if videos.is_empty() {
        return Err(Error::InvalidArgument("pretraining needs at least one video".into()));
    }
    let opt = RmsProp {
        lr,
        ..RmsProp::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = [RmsPropState::for_store(&nets.gen_f), RmsPropState::for_store(&nets.gen_b)];
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut log = Vec::with_capacity(epochs);
    let mut step = 0u64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        for &i in &order {
            for (gi, st) in states.iter_mut().enumerate() {
                let eps = sample_noise(&mut rng, nets.dims.z_dim);
                let mut g = Graph::new();
                let store = if gi == 0 { &nets.gen_f } else { &nets.gen_b };
                let loss = vae_loss(&mut g, nets, store, &videos[i], &eps)?;
                let label = if gi == 0 { GEN_F } else { GEN_B };
                acc += finite_or(&format!("pretrain_{label}"), step, g.scalar(loss))?;
                let grads = g.backward(loss)?;
                let store = if gi == 0 { &mut nets.gen_f } else { &mut nets.gen_b };
                update(store, &grads, &opt, st, Direction::Descend, clip, Precision::F64)?;
            }
            step += 1;
        }
        log.push(acc / (2 * videos.len()) as f64);
    }
    Ok(log)
}

/// Mean breakdown of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    /// `(step, breakdown)` for every train step.
    pub steps: Vec<(u64, LossBreakdown)>,
    pub pretrain: Vec<f64>,
    /// Parameters at the epoch with the lowest mean total loss.
    pub best: Option<CycleSumNets>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// Loss log in the per-step CSV format.
    pub fn csv(&self) -> String {
        self.steps
            .iter()
            .map(|(s, b)| b.csv_line(*s) + "\n")
            .collect()
    }
}

fn converged(history: &VecDeque<f64>, window: usize, tol: f64) -> bool {
    if window == 0 || history.len() < 2 * window {
        return false;
    }
    let mean = |it: std::iter::Skip<std::collections::vec_deque::Iter<'_, f64>>, n: usize| {
        it.take(n).sum::<f64>() / n as f64
    };
    let start = history.len() - 2 * window;
    let prev = mean(history.iter().skip(start), window);
    let cur = mean(history.iter().skip(start + window), window);
    (prev - cur) / prev.abs().max(1e-12) < tol
}

/// Full training run over `videos`, one video per step in seeded order.
pub fn train(nets: &mut CycleSumNets, videos: &[Tensor], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut outcome = TrainOutcome {
        epochs: Vec::new(),
        steps: Vec::new(),
        pretrain: Vec::new(),
        best: None,
        stopped_early: false,
    };
    if cfg.max_epochs == 0 {
        return Ok(outcome);
    }
    if videos.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let clip = cfg.clip_generators.then_some(cfg.clip_c);
    outcome.pretrain = pretrain_vaes(nets, videos, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.seed, clip)?;
    if cfg.precision == Precision::F32 {
        nets.stores_mut().into_iter().for_each(|s| s.round_to(Precision::F32));
    }
    let mut state = TrainState::new(nets, cfg.seed);
    let mut order: Vec<usize> = (0..videos.len()).collect();
    for epoch in 0..cfg.max_epochs {
        state.epoch = epoch;
        order.shuffle(&mut state.rng);
        let mut epoch_steps = Vec::with_capacity(videos.len());
        for &i in &order {
            let step = state.step;
            let out = train_step(nets, &mut state, &videos[i], cfg)?;
            outcome.steps.push((step, out.breakdown));
            epoch_steps.push(out.breakdown);
        }
        let mean = LossBreakdown::mean(&epoch_steps).expect("non-empty epoch");
        log::info!(
            "epoch {epoch}: total {:.5} sparsity {:.4} cycle {:.4}",
            mean.total,
            mean.sparsity,
            mean.cycle_f + mean.cycle_b
        );
        if mean.total < state.best_total {
            state.best_total = mean.total;
            outcome.best = Some(nets.clone());
        }
        state.history.push_back(mean.total);
        if state.history.len() > 2 * cfg.convergence_window.max(1) {
            state.history.pop_front();
        }
        outcome.epochs.push(EpochLog { epoch, mean });
        if converged(&state.history, cfg.convergence_window, cfg.convergence_tol) {
            outcome.stopped_early = true;
            break;
        }
    }
    Ok(outcome)
}
