//! Flat `key = value` run configuration with dotted keys.
//!
//! Sources are merged as defaults < `CYCLESUM_SEED` < config file < flags.
//! A `run.variant` preset is applied before any explicit `loss.*` key.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cyclesum_core::{Aggregation, Dims, SynthSpec, TrainConfig, Variant};

use crate::CliError;

pub const SEED_ENV: &str = "CYCLESUM_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub sigma: f64,
    pub aggregation: Aggregation,
    pub random_draws: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { sigma: 0.15, aggregation: Aggregation::Mean, random_draws: 100 }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dims: Dims,
    pub synth: SynthSpec,
    pub variant: Variant,
    pub eval: EvalSettings,
    pub data: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub split: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        Self {
            train: TrainConfig::default(),
            dims: Dims::new(synth.d, 64, 16),
            synth,
            variant: Variant::CycleSum,
            eval: EvalSettings::default(),
            data: None,
            splits: None,
            split: 0,
            out: PathBuf::from("runs"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "data.path",
    "data.splits",
    "eval.aggregation",
    "eval.random_draws",
    "eval.sigma",
    "loss.adversarial",
    "loss.backward_branch",
    "loss.cycle",
    "loss.enable_cycle_b",
    "loss.enable_cycle_f",
    "loss.enable_gan_b",
    "loss.enable_gan_f",
    "loss.generative",
    "loss.sigma",
    "model.critic_layers",
    "model.generator_layers",
    "model.hidden",
    "model.selector_layers",
    "model.z_dim",
    "run.out",
    "run.split",
    "run.variant",
    "synth.dim",
    "synth.events",
    "synth.frames",
    "synth.noise",
    "synth.redundancy",
    "synth.salience",
    "synth.seed",
    "synth.videos",
    "train.clip_c",
    "train.clip_generators",
    "train.convergence_tol",
    "train.convergence_window",
    "train.decay",
    "train.eps",
    "train.lr",
    "train.max_epochs",
    "train.n_generator_iters",
    "train.precision",
    "train.pretrain_epochs",
    "train.pretrain_lr",
    "train.seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("bad value `{value}` for `{key}`: expected a boolean"))),
    }
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Merges the sources in precedence order and validates the result.
    pub fn from_sources(
        env_seed: Option<&str>,
        file: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(seed) = env_seed {
            let seed: u64 = parse(SEED_ENV, seed)?;
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }
        let entries: Vec<&(String, String)> = file.iter().chain(flags).collect();
        for (k, _) in &entries {
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::Config(format!("unknown config key `{k}`")));
            }
        }
        if let Some((_, v)) = entries.iter().rev().find(|(k, _)| k == "run.variant") {
            cfg.variant = parse("run.variant", v)?;
            cfg.variant.apply(&mut cfg.train.weights);
        }
        for (k, v) in entries.iter().filter(|(k, _)| k != "run.variant") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        let w = &mut t.weights;
        match key {
            "data.path" => self.data = Some(PathBuf::from(v)),
            "data.splits" => self.splits = Some(PathBuf::from(v)),
            "eval.aggregation" => self.eval.aggregation = parse(key, v)?,
            "eval.random_draws" => self.eval.random_draws = parse(key, v)?,
            "eval.sigma" => self.eval.sigma = parse(key, v)?,
            "loss.adversarial" => w.adversarial = parse(key, v)?,
            "loss.backward_branch" => w.backward_branch = parse_bool(key, v)?,
            "loss.cycle" => w.cycle = parse(key, v)?,
            "loss.enable_cycle_b" => w.enable_cycle_b = parse_bool(key, v)?,
            "loss.enable_cycle_f" => w.enable_cycle_f = parse_bool(key, v)?,
            "loss.enable_gan_b" => w.enable_gan_b = parse_bool(key, v)?,
            "loss.enable_gan_f" => w.enable_gan_f = parse_bool(key, v)?,
            "loss.generative" => w.generative = parse(key, v)?,
            "loss.sigma" => w.sigma = parse(key, v)?,
            "model.critic_layers" => self.dims.critic_layers = parse(key, v)?,
            "model.generator_layers" => self.dims.generator_layers = parse(key, v)?,
            "model.hidden" => self.dims.hidden = parse(key, v)?,
            "model.selector_layers" => self.dims.selector_layers = parse(key, v)?,
            "model.z_dim" => self.dims.z_dim = parse(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            "run.split" => self.split = parse(key, v)?,
            "synth.dim" => self.synth.d = parse(key, v)?,
            "synth.events" => self.synth.n_events = parse(key, v)?,
            "synth.frames" => self.synth.k = parse(key, v)?,
            "synth.noise" => self.synth.noise = parse(key, v)?,
            "synth.redundancy" => self.synth.redundancy = parse(key, v)?,
            "synth.salience" => self.synth.salience = parse(key, v)?,
            "synth.seed" => self.synth.seed = parse(key, v)?,
            "synth.videos" => self.synth.n_videos = parse(key, v)?,
            "train.clip_c" => t.clip_c = parse(key, v)?,
            "train.clip_generators" => t.clip_generators = parse_bool(key, v)?,
            "train.convergence_tol" => t.convergence_tol = parse(key, v)?,
            "train.convergence_window" => t.convergence_window = parse(key, v)?,
            "train.decay" => t.optimizer.decay = parse(key, v)?,
            "train.eps" => t.optimizer.eps = parse(key, v)?,
            "train.lr" => t.optimizer.lr = parse(key, v)?,
            "train.max_epochs" => t.max_epochs = parse(key, v)?,
            "train.n_generator_iters" => t.n_generator_iters = parse(key, v)?,
            "train.precision" => t.precision = parse(key, v)?,
            "train.pretrain_epochs" => t.pretrain_epochs = parse(key, v)?,
            "train.pretrain_lr" => t.pretrain_lr = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: cyclesum_core::Error| CliError::Config(e.to_string());
        self.train.validate().map_err(wrap)?;
        self.synth.validate().map_err(wrap)?;
        if !(self.eval.sigma > 0.0 && self.eval.sigma < 1.0) {
            return Err(CliError::Config(format!("eval.sigma {} must lie in (0, 1)", self.eval.sigma)));
        }
        if self.eval.random_draws == 0 {
            return Err(CliError::Config("eval.random_draws must be >= 1".into()));
        }
        Ok(())
    }

    /// Every key with its effective value, one `key = value` line each.
    pub fn echo(&self) -> String {
        let t = &self.train;
        let w = &t.weights;
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let agg = match self.eval.aggregation {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        };
        let values: Vec<(&str, String)> = vec![
            ("data.path", opt(&self.data)),
            ("data.splits", opt(&self.splits)),
            ("eval.aggregation", agg.to_string()),
            ("eval.random_draws", self.eval.random_draws.to_string()),
            ("eval.sigma", self.eval.sigma.to_string()),
            ("loss.adversarial", w.adversarial.to_string()),
            ("loss.backward_branch", w.backward_branch.to_string()),
            ("loss.cycle", w.cycle.to_string()),
            ("loss.enable_cycle_b", w.enable_cycle_b.to_string()),
            ("loss.enable_cycle_f", w.enable_cycle_f.to_string()),
            ("loss.enable_gan_b", w.enable_gan_b.to_string()),
            ("loss.enable_gan_f", w.enable_gan_f.to_string()),
            ("loss.generative", w.generative.to_string()),
            ("loss.sigma", w.sigma.to_string()),
            ("model.critic_layers", self.dims.critic_layers.to_string()),
            ("model.generator_layers", self.dims.generator_layers.to_string()),
            ("model.hidden", self.dims.hidden.to_string()),
            ("model.selector_layers", self.dims.selector_layers.to_string()),
            ("model.z_dim", self.dims.z_dim.to_string()),
            ("run.out", self.out.display().to_string()),
            ("run.split", self.split.to_string()),
            ("run.variant", self.variant.key().to_string()),
            ("synth.dim", self.synth.d.to_string()),
            ("synth.events", self.synth.n_events.to_string()),
            ("synth.frames", self.synth.k.to_string()),
            ("synth.noise", self.synth.noise.to_string()),
            ("synth.redundancy", self.synth.redundancy.to_string()),
            ("synth.salience", self.synth.salience.to_string()),
            ("synth.seed", self.synth.seed.to_string()),
            ("synth.videos", self.synth.n_videos.to_string()),
            ("train.clip_c", t.clip_c.to_string()),
            ("train.clip_generators", t.clip_generators.to_string()),
            ("train.convergence_tol", t.convergence_tol.to_string()),
            ("train.convergence_window", t.convergence_window.to_string()),
            ("train.decay", t.optimizer.decay.to_string()),
            ("train.eps", t.optimizer.eps.to_string()),
            ("train.lr", t.optimizer.lr.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.n_generator_iters", t.n_generator_iters.to_string()),
            ("train.precision", t.precision.name().to_string()),
            ("train.pretrain_epochs", t.pretrain_epochs.to_string()),
            ("train.pretrain_lr", t.pretrain_lr.to_string()),
            ("train.seed", t.seed.to_string()),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_sources(None, &kv(&[("train.clip_c", "0.05")]), &[]).unwrap();
        let text = cfg.echo();
        let entries: Vec<_> = parse_config_text(&text)
            .unwrap()
            .into_iter()
            .filter(|(_, v)| v != "-")
            .collect();
        let again = RunConfig::from_sources(None, &entries, &[]).unwrap();
        assert_eq!(again.echo(), text);
    }

    #[test]
    fn flags_override_file_and_env() {
        let file = kv(&[("train.seed", "5"), ("train.lr", "0.01")]);
        let cfg = RunConfig::from_sources(Some("9"), &file, &kv(&[("train.seed", "11")])).unwrap();
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.train.optimizer.lr, 0.01);
        assert_eq!(cfg.synth.seed, 9);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(
            RunConfig::from_sources(None, &kv(&[("train.speed", "1")]), &[]),
            Err(CliError::Config(_))
        ));
        assert!(RunConfig::from_sources(None, &kv(&[("train.clip_c", "0.9")]), &[]).is_err());
        assert!(RunConfig::from_sources(None, &kv(&[("loss.enable_gan_f", "maybe")]), &[]).is_err());
        assert!(parse_config_text("no equals sign").is_err());
    }

    #[test]
    fn variant_then_explicit_toggles() {
        let cfg = RunConfig::from_sources(None, &[], &kv(&[("run.variant", "c")])).unwrap();
        assert!(!cfg.train.weights.enable_gan_f && !cfg.train.weights.enable_gan_b);
        let cfg = RunConfig::from_sources(
            None,
            &kv(&[("loss.enable_gan_f", "true")]),
            &kv(&[("run.variant", "c")]),
        )
        .unwrap();
        assert!(cfg.train.weights.enable_gan_f && !cfg.train.weights.enable_gan_b);
    }

    #[test]
    fn comments_and_blank_lines() {
        let e = parse_config_text("# header\n\ntrain.lr = 0.5 # fast\n").unwrap();
        assert_eq!(e, kv(&[("train.lr", "0.5")]));
    }
}
