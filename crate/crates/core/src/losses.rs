//! Training objectives: sparsity, VAE prior, feature-wise reconstruction,
//! Wasserstein adversarial and L1 cycle terms, and their weighted sum.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{BoundNets, CycleNoise, CyclePass, CycleSumNets};

/// Term weights, sparsity target and per-term switches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// λ1, adversarial.
    pub adversarial: f64,
    /// λ2, generative (prior + reconstruction).
    pub generative: f64,
    /// λ3, cycle consistency.
    pub cycle: f64,
    pub sigma: f64,
    pub enable_gan_f: bool,
    pub enable_gan_b: bool,
    pub enable_cycle_f: bool,
    pub enable_cycle_b: bool,
    /// Runs G_b and D_b at all. Off only for the single-generator variant.
    pub backward_branch: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adversarial: 1.0,
            generative: 0.5,
            cycle: 10.0,
            sigma: 0.3,
            enable_gan_f: true,
            enable_gan_b: true,
            enable_cycle_f: true,
            enable_cycle_b: true,
            backward_branch: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("adversarial", self.adversarial),
            ("generative", self.generative),
            ("cycle", self.cycle),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight {name} = {v} must be >= 0")));
            }
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidArgument(format!("sigma {} must lie in (0, 1)", self.sigma)));
        }
        if !self.backward_branch && (self.enable_gan_b || self.enable_cycle_f || self.enable_cycle_b) {
            return Err(Error::InvalidArgument(
                "gan_b and both cycle terms need the backward branch".into(),
            ));
        }
        Ok(())
    }

    pub fn for_variant(variant: Variant) -> Self {
        let mut w = Self::default();
        variant.apply(&mut w);
        w
    }
}

/// Ablation presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    CycleSum,
    /// No adversarial terms.
    C,
    /// Forward generator only.
    OneG,
    /// No cycle terms.
    TwoG,
    /// Forward cycle only.
    Gf,
    /// Backward cycle only.
    Gb,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::CycleSum,
        Variant::C,
        Variant::OneG,
        Variant::TwoG,
        Variant::Gf,
        Variant::Gb,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variant::CycleSum => "cycle-sum",
            Variant::C => "c",
            Variant::OneG => "1g",
            Variant::TwoG => "2g",
            Variant::Gf => "gf",
            Variant::Gb => "gb",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::CycleSum => "Cycle-SUM",
            Variant::C => "Cycle-SUM-C",
            Variant::OneG => "Cycle-SUM-1G",
            Variant::TwoG => "Cycle-SUM-2G",
            Variant::Gf => "Cycle-SUM-Gf",
            Variant::Gb => "Cycle-SUM-Gb",
        }
    }

    /// Sets the toggles of `w`; weights and sigma are left alone.
    pub fn apply(self, w: &mut LossWeights) {
        w.enable_gan_f = true;
        w.enable_gan_b = true;
        w.enable_cycle_f = true;
        w.enable_cycle_b = true;
        w.backward_branch = true;
        match self {
            Variant::CycleSum => {}
            Variant::C => {
                w.enable_gan_f = false;
                w.enable_gan_b = false;
            }
            Variant::OneG => {
                w.enable_gan_b = false;
                w.enable_cycle_f = false;
                w.enable_cycle_b = false;
                w.backward_branch = false;
            }
            Variant::TwoG => {
                w.enable_cycle_f = false;
                w.enable_cycle_b = false;
            }
            Variant::Gf => w.enable_cycle_b = false,
            Variant::Gb => w.enable_cycle_f = false,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.key() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown variant `{s}` (expected cycle-sum, c, 1g, 2g, gf or gb)"
                ))
            })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// The nine individual loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Sparsity,
    PriorF,
    PriorB,
    ReconF,
    ReconB,
    GanF,
    GanB,
    CycleF,
    CycleB,
}

impl Term {
    pub const ALL: [Term; 9] = [
        Term::Sparsity,
        Term::PriorF,
        Term::PriorB,
        Term::ReconF,
        Term::ReconB,
        Term::GanF,
        Term::GanB,
        Term::CycleF,
        Term::CycleB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Sparsity => "sparsity",
            Term::PriorF => "prior_f",
            Term::PriorB => "prior_b",
            Term::ReconF => "recon_f",
            Term::ReconB => "recon_b",
            Term::GanF => "gan_f",
            Term::GanB => "gan_b",
            Term::CycleF => "cycle_f",
            Term::CycleB => "cycle_b",
        }
    }

    fn enabled(self, w: &LossWeights) -> bool {
        match self {
            Term::Sparsity | Term::PriorF | Term::ReconF => true,
            Term::PriorB | Term::ReconB => w.backward_branch,
            Term::GanF => w.enable_gan_f,
            Term::GanB => w.enable_gan_b,
            Term::CycleF => w.enable_cycle_f,
            Term::CycleB => w.enable_cycle_b,
        }
    }

    fn weight(self, w: &LossWeights) -> f64 {
        match self {
            Term::Sparsity => 1.0,
            Term::PriorF | Term::PriorB | Term::ReconF | Term::ReconB => w.generative,
            Term::GanF | Term::GanB => w.adversarial,
            Term::CycleF | Term::CycleB => w.cycle,
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss term `{s}`")))
    }
}

/// Scalar value per loss term, plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sparsity: f64,
    pub prior_f: f64,
    pub prior_b: f64,
    pub recon_f: f64,
    pub recon_b: f64,
    pub gan_f: f64,
    pub gan_b: f64,
    pub cycle_f: f64,
    pub cycle_b: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 10] = [
        "sparsity", "prior_f", "prior_b", "recon_f", "recon_b", "gan_f", "gan_b", "cycle_f",
        "cycle_b", "total",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.sparsity,
            self.prior_f,
            self.prior_b,
            self.recon_f,
            self.recon_b,
            self.gan_f,
            self.gan_b,
            self.cycle_f,
            self.cycle_b,
            self.total,
        ]
    }

    pub fn from_values(v: [f64; 10]) -> Self {
        Self {
            sparsity: v[0],
            prior_f: v[1],
            prior_b: v[2],
            recon_f: v[3],
            recon_b: v[4],
            gan_f: v[5],
            gan_b: v[6],
            cycle_f: v[7],
            cycle_b: v[8],
            total: v[9],
        }
    }

    pub fn get(&self, term: Term) -> f64 {
        self.values()[Term::ALL.iter().position(|t| *t == term).expect("term listed")]
    }

    fn set(&mut self, term: Term, value: f64) {
        let mut v = self.values();
        v[Term::ALL.iter().position(|t| *t == term).expect("term listed")] = value;
        *self = Self::from_values(v);
    }

    /// `step,sparsity,...,total`. Values use the shortest round-trip form.
    pub fn csv_line(&self, step: u64) -> String {
        let mut line = step.to_string();
        for v in self.values() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line
    }

    pub fn parse_csv_line(line: &str) -> Result<(u64, Self)> {
        let bad = || Error::InvalidArgument(format!("malformed loss line `{line}`"));
        let mut parts = line.trim().split(',');
        let step = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mut v = [0.0; 10];
        for slot in &mut v {
            *slot = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok((step, Self::from_values(v)))
    }

    /// First non-finite field, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        Self::FIELDS
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
    }

    /// Elementwise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let mut acc = [0.0; 10];
        for b in items {
            acc.iter_mut().zip(b.values()).for_each(|(a, v)| *a += v);
        }
        Some(Self::from_values(acc.map(|a| a / items.len() as f64)))
    }
}

/// `|mean(x) - sigma|`.
pub fn sparsity_loss(g: &mut Graph, x: Var, sigma: f64) -> Var {
    let m = g.mean(x);
    let centered = g.add_scalar(m, -sigma);
    g.abs(centered)
}

/// KL of `N(mu, exp(logvar))` from the standard normal.
pub fn prior_kl(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0);
    let s = g.sum(c);
    Ok(g.scale(s, 0.5))
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    Ok(())
}

/// `||phi_real - phi_fake||_2 / k`.
pub fn recon_loss(g: &mut Graph, phi_real: Var, phi_fake: Var, k: usize) -> Result<Var> {
    same_shape(g, "recon_loss", phi_real, phi_fake)?;
    let diff = g.sub(phi_real, phi_fake)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    let norm = g.sqrt(s)?;
    Ok(g.scale(norm, 1.0 / k as f64))
}

/// `(score_real - score_fake, -score_fake)`: the critic ascends the first,
/// the selector and generators descend the second.
pub fn wgan_losses(g: &mut Graph, score_real: Var, score_fake: Var) -> Result<(Var, Var)> {
    let critic = g.sub(score_real, score_fake)?;
    let gen = g.neg(score_fake);
    Ok((critic, gen))
}

/// `sum |a - b| / k` for `k x d` sequences.
pub fn cycle_loss(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "cycle_loss", a, b)?;
    let k = g.shape(a)[0];
    let diff = g.sub(a, b)?;
    let ad = g.abs(diff);
    let s = g.sum(ad);
    Ok(g.scale(s, 1.0 / k as f64))
}

/// Graph nodes of the terms a pass produced.
pub type TermVars = BTreeMap<Term, Var>;

/// Builds every term the pass supports, regardless of toggles.
pub fn loss_terms(g: &mut Graph, pass: &CyclePass, sigma: f64) -> Result<TermVars> {
    let mut t = TermVars::new();
    t.insert(Term::Sparsity, sparsity_loss(g, pass.x, sigma));
    t.insert(Term::PriorF, prior_kl(g, pass.o_hat.mu, pass.o_hat.logvar)?);
    t.insert(Term::ReconF, recon_loss(g, pass.d_o.phi, pass.d_o_hat.phi, pass.k)?);
    t.insert(Term::GanF, wgan_losses(g, pass.d_o.score, pass.d_o_hat.score)?.1);
    if let Some(b) = &pass.backward {
        t.insert(Term::PriorB, prior_kl(g, b.s_hat.mu, b.s_hat.logvar)?);
        t.insert(Term::ReconB, recon_loss(g, b.d_s.phi, b.d_s_hat.phi, pass.k)?);
        t.insert(Term::GanB, wgan_losses(g, b.d_s.score, b.d_s_hat.score)?.1);
        t.insert(Term::CycleF, cycle_loss(g, b.s_cycle.seq, pass.s)?);
        t.insert(Term::CycleB, cycle_loss(g, b.o_cycle.seq, pass.o)?);
    }
    Ok(t)
}

/// Weighted sum of the enabled terms. Disabled or absent terms contribute
/// zero and read as zero in the breakdown.
pub fn combine(g: &mut Graph, terms: &TermVars, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let mut breakdown = LossBreakdown::default();
    let mut total = g.constant(Tensor::scalar(0.0));
    for term in Term::ALL {
        if !term.enabled(w) {
            continue;
        }
        let Some(&v) = terms.get(&term) else { continue };
        breakdown.set(term, g.scalar(v));
        let weighted = g.scale(v, term.weight(w));
        total = g.add(total, weighted)?;
    }
    breakdown.total = g.scalar(total);
    Ok((total, breakdown))
}

/// Total objective of a pass.
pub fn total_loss(g: &mut Graph, pass: &CyclePass, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let terms = loss_terms(g, pass, w.sigma)?;
    combine(g, &terms, w)
}

/// Finite-difference check of one term, or of the weighted total when
/// `term` is `None`, through the full cycle of `nets` on features `o`.
/// Every parameter of all five stores is probed.
pub fn check_gradients(
    nets: &CycleSumNets,
    o: &Tensor,
    noise: &CycleNoise,
    term: Option<Term>,
    w: &LossWeights,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if let Some(t) = term {
        if !t.enabled(w) {
            return Err(Error::InvalidArgument(format!("term `{}` is disabled", t.name())));
        }
    }
    let mut stores: Vec<ParamStore> = nets.stores().into_iter().cloned().collect();
    grad_check(&mut stores, h, tol, |g, b| {
        let bn = BoundNets {
            selector: b[0].clone(),
            gen_f: b[1].clone(),
            gen_b: b[2].clone(),
            critic_f: b[3].clone(),
            critic_b: b[4].clone(),
        };
        let ov = g.constant(o.clone());
        let pass = nets.full_cycle_with_noise(g, &bn, ov, noise, w.backward_branch)?;
        match term {
            Some(t) => loss_terms(g, &pass, w.sigma)?
                .get(&t)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("term `{}` is not computed", t.name()))),
            None => Ok(total_loss(g, &pass, w)?.0),
        }
    })
}
