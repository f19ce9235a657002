//! Per-video keyshot evaluation, the random-score baseline and the
//! seeded train/evaluate loop used by the synthetic end-to-end benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::data::VideoRecord;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_annotators, f_measure, keyshot_summary, Aggregation, EvalResult, Split,
};
use crate::losses::Variant;
use crate::model::{CycleSumNets, Dims};
use crate::trainer::{train, TrainConfig, TrainOutcome};

/// Ground-truth keyshot frames of one annotator: the same knapsack summary
/// as predictions, run on the annotated frame scores.
pub fn gt_keyframes(scores: &[f64], record: &VideoRecord, sigma: f64) -> Result<Vec<bool>> {
    Ok(keyshot_summary(scores, &record.segmentation()?, sigma)?.frames)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoEval {
    pub id: String,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub selected: usize,
    pub budget: usize,
}

/// Scores `frame_scores` against every annotator of `record`; P, R and F
/// are each aggregated with `mode`.
pub fn evaluate_scores(
    frame_scores: &[f64],
    record: &VideoRecord,
    sigma: f64,
    mode: Aggregation,
) -> Result<VideoEval> {
    let gt = record.gt.as_ref().ok_or_else(|| Error::InvalidRecord {
        id: record.id.clone(),
        reason: "no ground truth to evaluate against".into(),
    })?;
    let pick = keyshot_summary(frame_scores, &record.segmentation()?, sigma)?;
    let mut per: Vec<EvalResult> = Vec::new();
    for ann in gt.annotators() {
        per.push(f_measure(&pick.frames, &gt_keyframes(ann, record, sigma)?)?);
    }
    let agg = |f: fn(&EvalResult) -> f64| aggregate_annotators(&per.iter().map(f).collect::<Vec<_>>(), mode);
    Ok(VideoEval {
        id: record.id.clone(),
        precision: agg(|r| r.precision)?,
        recall: agg(|r| r.recall)?,
        f_score: agg(|r| r.f_score)?,
        selected: pick.frames.iter().filter(|&&b| b).count(),
        budget: pick.budget,
    })
}

/// Mean F of `draws` uniform random frame-score vectors through the same
/// keyshot pipeline.
pub fn random_baseline<R: Rng + ?Sized>(
    record: &VideoRecord,
    sigma: f64,
    mode: Aggregation,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if draws == 0 {
        return Err(Error::InvalidArgument("random baseline needs at least one draw".into()));
    }
    let mut total = 0.0;
    for _ in 0..draws {
        let scores: Vec<f64> = (0..record.k()).map(|_| rng.gen::<f64>()).collect();
        total += evaluate_scores(&scores, record, sigma, mode)?.f_score;
    }
    Ok(total / draws as f64)
}

pub fn evaluate_model(
    nets: &CycleSumNets,
    records: &[&VideoRecord],
    sigma: f64,
    mode: Aggregation,
) -> Result<Vec<VideoEval>> {
    records
        .iter()
        .map(|r| evaluate_scores(&nets.score(&r.features)?, r, sigma, mode))
        .collect()
}

pub fn mean_f(evals: &[VideoEval]) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    evals.iter().map(|e| e.f_score).sum::<f64>() / evals.len() as f64
}

/// Settings of one benchmark run besides the seed.
#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub dims: Dims,
    pub train: TrainConfig,
    pub variant: Variant,
    /// Keyshot budget used for evaluation.
    pub eval_sigma: f64,
    pub aggregation: Aggregation,
    pub random_draws: usize,
}

impl BenchmarkConfig {
    pub fn new(dims: Dims, train: TrainConfig, variant: Variant) -> Self {
        Self { dims, train, variant, eval_sigma: 0.15, aggregation: Aggregation::Mean, random_draws: 100 }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkRun {
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub test: Vec<VideoEval>,
    pub model_f: f64,
    pub random_f: f64,
    pub nets: CycleSumNets,
}

impl BenchmarkRun {
    /// Epoch-mean `cycle_f + cycle_b` of the first and last epoch.
    pub fn cycle_first_last(&self) -> Option<(f64, f64)> {
        let c = |i: usize| {
            let m = &self.outcome.epochs[i].mean;
            m.cycle_f + m.cycle_b
        };
        let n = self.outcome.epochs.len();
        (n > 0).then(|| (c(0), c(n - 1)))
    }
}

/// Trains fresh nets with `seed` on the train side of `split` and
/// evaluates the final parameters on its test side.
pub fn run_benchmark(
    dataset: &[VideoRecord],
    split: &Split,
    cfg: &BenchmarkConfig,
    seed: u64,
) -> Result<BenchmarkRun> {
    let find = |id: &String| {
        dataset
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| Error::UnknownId(id.clone()))
    };
    let train_set: Vec<Tensor> = split
        .train
        .iter()
        .map(|id| find(id).map(|r| r.features.clone()))
        .collect::<Result<_>>()?;
    let test_set: Vec<&VideoRecord> = split.test.iter().map(find).collect::<Result<_>>()?;

    let mut tc = cfg.train.clone();
    tc.seed = seed;
    cfg.variant.apply(&mut tc.weights);
    let mut nets = CycleSumNets::new(cfg.dims, seed)?;
    let outcome = train(&mut nets, &train_set, &tc)?;

    let test = evaluate_model(&nets, &test_set, cfg.eval_sigma, cfg.aggregation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba5e);
    let mut random_f = 0.0;
    for r in &test_set {
        random_f += random_baseline(r, cfg.eval_sigma, cfg.aggregation, cfg.random_draws, &mut rng)?;
    }
    random_f /= test_set.len().max(1) as f64;
    Ok(BenchmarkRun { seed, model_f: mean_f(&test), random_f, test, outcome, nets })
}
