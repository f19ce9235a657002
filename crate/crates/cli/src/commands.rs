use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cyclesum_core::autodiff::Tensor;
use cyclesum_core::benchmark::{evaluate_model, evaluate_scores, mean_f, random_baseline, VideoEval};
use cyclesum_core::data::{generate_synthetic, load_dataset, load_splits, save_dataset, save_splits, GroundTruth};
use cyclesum_core::eval::{make_splits, Split, SplitSpec};
use cyclesum_core::info_math::{run_suite, SuiteConfig};
use cyclesum_core::losses::check_gradients;
use cyclesum_core::model::CycleNoise;
use cyclesum_core::trainer::train;
use cyclesum_core::{CycleSumNets, Dims, LossWeights, Precision, Term, VideoRecord};

use crate::args::{ConfigArgs, EvalArgs, GradcheckArgs, SplitsArgs, SynthArgs, TrainArgs, VerifyMathArgs};
use crate::config::{read_config_file, RunConfig, SEED_ENV};
use crate::CliError;

/// Full-scale reference F-scores quoted for context only.
const REFERENCE_F: [(&str, f64); 2] = [("SumMe", 41.9), ("TVSum", 57.6)];

fn load_config(args: &ConfigArgs, mut flags: Vec<(String, String)>) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    let mut all = Vec::new();
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        all.push((k.trim().to_string(), v.trim().to_string()));
    }
    all.append(&mut flags);
    // clap already folds the seed env var into the seed flags.
    let env = std::env::var(SEED_ENV).ok();
    RunConfig::from_sources(env.as_deref(), &file, &all)
}

fn flag<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

/// Creates `<parent>/<utc timestamp>-seed<seed>`, adding a suffix rather
/// than reusing an existing directory.
pub fn create_run_dir(parent: &Path, seed: u64) -> Result<PathBuf, CliError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-seed{seed}");
    fs::create_dir_all(parent).map_err(|e| CliError::Config(format!("cannot create {}: {e}", parent.display())))?;
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::Config(format!("cannot create {}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn require_data(cfg: &RunConfig) -> Result<Vec<VideoRecord>, CliError> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("no dataset given (--data or data.path)".into()))?;
    Ok(load_dataset(path)?)
}

fn resolve_splits(cfg: &RunConfig, records: &[VideoRecord]) -> Result<(Vec<Split>, bool), CliError> {
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    match &cfg.splits {
        Some(p) => Ok((load_splits(p, &ids)?, false)),
        None => {
            let spec = SplitSpec { seed: cfg.train.seed, ..SplitSpec::default() };
            Ok((make_splits(&ids, &spec)?, true))
        }
    }
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut f = Vec::new();
    flag(&mut f, "synth.videos", args.videos);
    flag(&mut f, "synth.frames", args.frames);
    flag(&mut f, "synth.dim", args.dim);
    flag(&mut f, "synth.events", args.events);
    flag(&mut f, "synth.salience", args.salience);
    flag(&mut f, "synth.noise", args.noise);
    flag(&mut f, "synth.redundancy", args.redundancy);
    flag(&mut f, "synth.seed", args.seed);
    let cfg = load_config(&args.config, f)?;
    if cfg.synth.n_videos == 0 {
        return Err(CliError::Config("--videos must be at least 1".into()));
    }
    let records = generate_synthetic(&cfg.synth)?;
    save_dataset(&args.out, &records)
        .map_err(|e| CliError::Config(format!("cannot write dataset to {}: {e}", args.out.display())))?;
    let salient: usize = records
        .iter()
        .filter_map(|r| r.gt.as_ref())
        .map(|g| match g {
            GroundTruth::Single(v) => v.iter().filter(|&&x| x > 0.5).count(),
            GroundTruth::Annotators(a) => a.first().map_or(0, |v| v.iter().filter(|&&x| x > 0.5).count()),
        })
        .sum();
    println!(
        "wrote {} videos (k={}, d={}, {} events, {} salient frames in total) to {}",
        records.len(),
        cfg.synth.k,
        cfg.synth.d,
        cfg.synth.n_events,
        salient,
        args.out.display()
    );
    Ok(())
}

pub fn splits(args: &SplitsArgs) -> Result<(), CliError> {
    let records = load_dataset(&args.data)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let splits = make_splits(&ids, &SplitSpec { seed: args.seed, ..SplitSpec::default() })?;
    save_splits(&args.out, &splits)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", args.out.display())))?;
    for (i, s) in splits.iter().enumerate() {
        println!("split {i}: {} train / {} test", s.train.len(), s.test.len());
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<PathBuf, CliError> {
    let mut f = Vec::new();
    flag(&mut f, "data.path", args.data.as_ref().map(|p| p.display()));
    flag(&mut f, "data.splits", args.splits.as_ref().map(|p| p.display()));
    flag(&mut f, "run.split", args.split);
    flag(&mut f, "run.variant", args.variant.as_ref());
    flag(&mut f, "train.max_epochs", args.max_epochs);
    flag(&mut f, "train.lr", args.lr);
    flag(&mut f, "train.seed", args.seed);
    flag(&mut f, "run.out", args.out.as_ref().map(|p| p.display()));
    let mut cfg = load_config(&args.config, f)?;

    let records = require_data(&cfg)?;
    let (splits, generated) = resolve_splits(&cfg, &records)?;
    let split = splits
        .get(cfg.split)
        .ok_or_else(|| CliError::Config(format!("split {} out of range ({} splits)", cfg.split, splits.len())))?;
    let d = records.first().map(|r| r.d()).ok_or_else(|| CliError::Config("dataset is empty".into()))?;
    cfg.dims.feature_dim = d;
    cfg.dims.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let videos: Vec<Tensor> = split
        .train
        .iter()
        .map(|id| {
            records
                .iter()
                .find(|r| &r.id == id)
                .map(|r| r.features.clone())
                .ok_or_else(|| CliError::Core(cyclesum_core::Error::UnknownId(id.clone())))
        })
        .collect::<Result<_, _>>()?;

    let run = create_run_dir(&cfg.out, cfg.train.seed)?;
    write(&run.join("config.txt"), &cfg.echo())?;
    print!("{}", cfg.echo());
    if generated {
        save_splits(&run.join("splits.json"), &splits)?;
    } else if let Some(p) = &cfg.splits {
        fs::copy(p, run.join("splits.json")).map_err(|e| CliError::Config(format!("cannot copy splits: {e}")))?;
    }

    let mut nets = CycleSumNets::new(cfg.dims, cfg.train.seed)?;
    log::info!(
        "training {} on split {} ({} videos, {} parameters)",
        cfg.variant.display_name(),
        cfg.split,
        videos.len(),
        nets.num_params()
    );
    let outcome = match train(&mut nets, &videos, &cfg.train) {
        Ok(o) => o,
        Err(e) => {
            write(&run.join("error.txt"), &format!("{e}\n"))?;
            return Err(e.into());
        }
    };
    let header = "step,sparsity,prior_f,prior_b,recon_f,recon_b,gan_f,gan_b,cycle_f,cycle_b,total\n";
    write(&run.join("loss.csv"), &format!("{header}{}", outcome.csv()))?;
    let mut epochs = String::from(header.replacen("step", "epoch", 1).as_str());
    for e in &outcome.epochs {
        epochs.push_str(&e.mean.csv_line(e.epoch as u64));
        epochs.push('\n');
    }
    write(&run.join("epochs.csv"), &epochs)?;
    if !outcome.pretrain.is_empty() {
        let text: String = outcome.pretrain.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")).collect();
        write(&run.join("pretrain.csv"), &format!("epoch,loss\n{text}"))?;
    }
    nets.save(&run.join("checkpoint"), cfg.train.precision)?;
    if let Some(best) = &outcome.best {
        best.save(&run.join("best"), cfg.train.precision)?;
    }
    match (outcome.epochs.first(), outcome.epochs.last()) {
        (Some(a), Some(b)) => println!(
            "{} epochs{}: total {:.5} -> {:.5}, cycle {:.5} -> {:.5}",
            outcome.epochs.len(),
            if outcome.stopped_early { " (converged)" } else { "" },
            a.mean.total,
            b.mean.total,
            a.mean.cycle_f + a.mean.cycle_b,
            b.mean.cycle_f + b.mean.cycle_b
        ),
        _ => println!("0 epochs: empty loss log"),
    }
    println!("run directory: {}", run.display());
    Ok(run)
}

fn find_splits_near(checkpoint: &Path) -> Option<PathBuf> {
    let p = checkpoint.parent()?.join("splits.json");
    p.exists().then_some(p)
}

struct SplitEval {
    split: Option<usize>,
    videos: Vec<VideoEval>,
    random: Vec<f64>,
}

pub fn eval(args: &EvalArgs) -> Result<String, CliError> {
    let mut f = Vec::new();
    flag(&mut f, "data.path", args.data.as_ref().map(|p| p.display()));
    flag(&mut f, "data.splits", args.splits.as_ref().map(|p| p.display()));
    flag(&mut f, "run.split", args.split);
    flag(&mut f, "train.seed", args.seed);
    flag(&mut f, "run.out", args.out.as_ref().map(|p| p.display()));
    let mut cfg = load_config(&args.config, f)?;
    if cfg.splits.is_none() {
        cfg.splits = args.checkpoint.first().and_then(|c| find_splits_near(c));
    }
    if args.checkpoint.is_empty() && !args.ground_truth {
        return Err(CliError::Config("give --checkpoint or --ground-truth".into()));
    }
    let records = require_data(&cfg)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let splits = match &cfg.splits {
        Some(p) => Some(load_splits(p, &ids)?),
        None => None,
    };
    let test_of = |i: usize| -> Result<Vec<&VideoRecord>, CliError> {
        match &splits {
            None => Ok(records.iter().collect()),
            Some(s) => {
                let split = s
                    .get(i)
                    .ok_or_else(|| CliError::Config(format!("split {i} out of range ({} splits)", s.len())))?;
                Ok(split.test.iter().filter_map(|id| records.iter().find(|r| &r.id == id)).collect())
            }
        }
    };
    let sigma = cfg.eval.sigma;
    let mode = cfg.eval.aggregation;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut results = Vec::new();
    let jobs: Vec<(Option<&PathBuf>, usize)> = if args.ground_truth {
        vec![(None, cfg.split)]
    } else if args.checkpoint.len() == 1 {
        vec![(Some(&args.checkpoint[0]), cfg.split)]
    } else {
        args.checkpoint.iter().enumerate().map(|(i, c)| (Some(c), i)).collect()
    };
    for (ckpt, i) in jobs {
        let test = test_of(i)?;
        let videos = match ckpt {
            None => test
                .iter()
                .map(|r| {
                    let gt = r.gt.as_ref().ok_or_else(|| CliError::Config(format!("`{}` has no ground truth", r.id)))?;
                    Ok(evaluate_scores(gt.annotators()[0], r, sigma, mode)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?,
            Some(c) => {
                let nets = CycleSumNets::load(c)?;
                if let Some(r) = test.iter().find(|r| r.d() != nets.dims.feature_dim) {
                    return Err(CliError::Config(format!(
                        "checkpoint {} expects feature dim {} but `{}` has dim {}",
                        c.display(),
                        nets.dims.feature_dim,
                        r.id,
                        r.d()
                    )));
                }
                evaluate_model(&nets, &test, sigma, mode)?
            }
        };
        let random = test
            .iter()
            .map(|r| random_baseline(r, sigma, mode, cfg.eval.random_draws, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        results.push(SplitEval { split: splits.as_ref().map(|_| i), videos, random });
    }

    let report = render_eval(&cfg, &results);
    let run = create_run_dir(&cfg.out, cfg.train.seed)?;
    write(&run.join("config.txt"), &cfg.echo())?;
    write(&run.join("report.txt"), &report)?;
    let records_json: Vec<serde_json::Value> = results
        .iter()
        .flat_map(|s| {
            s.videos.iter().zip(&s.random).map(move |(v, r)| {
                serde_json::json!({
                    "split": s.split, "id": v.id, "precision": v.precision, "recall": v.recall,
                    "f_score": v.f_score, "selected": v.selected, "budget": v.budget, "random_f": r,
                })
            })
        })
        .collect();
    write(
        &run.join("report.json"),
        &serde_json::to_string_pretty(&records_json).map_err(cyclesum_core::Error::from)?,
    )?;
    print!("{report}");
    println!("report written to {}", run.display());
    Ok(report)
}

fn render_eval(cfg: &RunConfig, results: &[SplitEval]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "keyshot budget {:.0}%, aggregation {:?}", cfg.eval.sigma * 100.0, cfg.eval.aggregation);
    let mut split_means = Vec::new();
    for s in results {
        match s.split {
            Some(i) => {
                let _ = writeln!(out, "\nsplit {i}");
            }
            None => {
                let _ = writeln!(out, "\nall videos");
            }
        }
        let _ = writeln!(out, "{:<16} {:>7} {:>7} {:>7} {:>9} {:>7} {:>9}", "video", "P", "R", "F", "selected", "budget", "random F");
        for (v, r) in s.videos.iter().zip(&s.random) {
            let _ = writeln!(
                out,
                "{:<16} {:>7.4} {:>7.4} {:>7.4} {:>9} {:>7} {:>9.4}",
                v.id, v.precision, v.recall, v.f_score, v.selected, v.budget, r
            );
        }
        let m = mean_f(&s.videos);
        let rnd = if s.random.is_empty() { 0.0 } else { s.random.iter().sum::<f64>() / s.random.len() as f64 };
        let _ = writeln!(out, "mean F {:.2}   random baseline F {:.2}", 100.0 * m, 100.0 * rnd);
        split_means.push((m, rnd));
    }
    if split_means.len() > 1 {
        let n = split_means.len() as f64;
        let m = split_means.iter().map(|p| p.0).sum::<f64>() / n;
        let r = split_means.iter().map(|p| p.1).sum::<f64>() / n;
        let _ = writeln!(out, "\nmean over {} splits: F {:.2}   random baseline F {:.2}", split_means.len(), 100.0 * m, 100.0 * r);
    }
    let refs: Vec<String> = REFERENCE_F.iter().map(|(n, f)| format!("{n} {f}")).collect();
    let _ = writeln!(
        out,
        "\nreference F at full scale (real datasets and features; not reproducible here): {}",
        refs.join(", ")
    );
    out
}

pub fn verify_math(args: &VerifyMathArgs) -> Result<String, CliError> {
    let cfg = SuiteConfig {
        joints: args.joints,
        max_alphabet: args.max_alphabet,
        conjugate_probes: args.probes,
        pairs: args.pairs,
        grid_points: args.grid_points,
        seed: args.seed,
    };
    let (rows, cex) = run_suite(&cfg);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "joints = {}\nmax_alphabet = {}\nprobes = {}\npairs = {}\ngrid_points = {}\nseed = {}\n",
        cfg.joints, cfg.max_alphabet, cfg.conjugate_probes, cfg.pairs, cfg.grid_points, cfg.seed
    );
    let _ = writeln!(out, "{:<28} {:>9} {:>12} {:>9}  result", "property", "instances", "max gap", "tol");
    for r in &rows {
        let verdict = if r.informational { "info" } else if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{:<28} {:>9} {:>12.3e} {:>9.1e}  {verdict}", r.name, r.instances, r.max_gap, r.tol);
    }
    let _ = writeln!(
        out,
        "\ninformational: KL upper-bound claim, {} random pairs\n  violations with D_KL(p||q): {}\n  violations with D_KL(q||p): {}\n  worst gap: {:.4e}",
        cex.trials, cex.violations_pq, cex.violations_qp, cex.worst_gap
    );
    if let Some(p) = &cex.worst_pair {
        let _ = writeln!(out, "  worst pair: p = {:?}, q = {:?}", p.p, p.q);
    }
    let _ = writeln!(out, "  (reported only; never a failure)");
    print!("{out}");
    let failed: Vec<&str> = rows.iter().filter(|r| !r.informational && !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}

/// Toy nets, a `4 x 3` feature sequence and fixed latent noise.
pub fn toy_problem(seed: u64) -> Result<(CycleSumNets, Tensor, CycleNoise), CliError> {
    use rand_distr::{Distribution, StandardNormal};
    let dims = Dims::new(3, 4, 2);
    let nets = CycleSumNets::new(dims, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let o: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise = CycleNoise::draw(&mut rng, 2);
    Ok((nets, Tensor::matrix(4, 3, o)?, noise))
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<String, CliError> {
    let precision: Precision = args.precision.parse().map_err(|e: cyclesum_core::Error| CliError::Config(e.to_string()))?;
    if precision == Precision::F32 {
        return Err(CliError::Config(
            "gradient checks need 64-bit arithmetic; rerun with --precision f64".into(),
        ));
    }
    let targets: Vec<Option<Term>> = match args.term.as_deref() {
        None => std::iter::once(None).chain(Term::ALL.into_iter().map(Some)).collect(),
        Some("total") => vec![None],
        Some(t) => vec![Some(t.parse().map_err(|e: cyclesum_core::Error| CliError::Config(e.to_string()))?)],
    };
    let (nets, o, noise) = toy_problem(args.seed)?;
    let w = LossWeights::default();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "toy network: k=4 d=3 h=4 z=2, {} parameters, h={:e}, tol={:e}",
        nets.num_params(),
        args.h,
        args.tol
    );
    let mut failed = Vec::new();
    for t in targets {
        let name = t.map_or("total", Term::name);
        let report = check_gradients(&nets, &o, &noise, t, &w, args.h, args.tol)?;
        let groups: Vec<String> = report.by_store().iter().map(|(s, e)| format!("{s} {e:.2e}")).collect();
        let ok = report.passed();
        let _ = writeln!(
            out,
            "{:<10} max rel err {:.3e}  {}  [{}]\n{:<10} {} entries below rounding noise; max rel err over the rest {:.3e}",
            name,
            report.max_rel_err(),
            if ok { "PASS" } else { "FAIL" },
            groups.join(", "),
            "",
            report.below_noise(),
            report.max_rel_err_resolved()
        );
        if !ok {
            failed.push(name);
        }
    }
    print!("{out}");
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}
