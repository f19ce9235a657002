//! Keyshot evaluation: frame-to-shot scores, budgeted knapsack selection,
//! precision / recall / F-measure, annotator aggregation and split handling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, disjoint, covering list of half-open frame intervals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSegmentation {
    shots: Vec<(usize, usize)>,
}

impl ShotSegmentation {
    /// Validates that `shots` tile `[0, k)` in order with no empty shot.
    pub fn new(shots: Vec<(usize, usize)>, k: usize) -> Result<Self> {
        let mut cursor = 0;
        for &(s, e) in &shots {
            if s != cursor {
                return Err(Error::InvalidArgument(format!(
                    "shot [{s}, {e}) does not start at frame {cursor}"
                )));
            }
            if e <= s {
                return Err(Error::InvalidArgument(format!("empty shot [{s}, {e})")));
            }
            cursor = e;
        }
        if cursor != k || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "shots cover [0, {cursor}) but the video has {k} frames"
            )));
        }
        Ok(Self { shots })
    }

    /// Shots of `len` frames; the last one absorbs the remainder.
    pub fn uniform(k: usize, len: usize) -> Result<Self> {
        if k == 0 || len == 0 {
            return Err(Error::InvalidArgument("uniform segmentation needs k, len >= 1".into()));
        }
        let n = (k / len).max(1);
        let mut shots: Vec<(usize, usize)> = (0..n).map(|i| (i * len, (i + 1) * len)).collect();
        shots.last_mut().expect("n >= 1").1 = k;
        Self::new(shots, k)
    }

    /// Uniform shots of `ceil(k / 20)` frames.
    pub fn default_for(k: usize) -> Result<Self> {
        Self::uniform(k, k.div_ceil(20).max(1))
    }

    pub fn shots(&self) -> &[(usize, usize)] {
        &self.shots
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.shots.last().map_or(0, |s| s.1)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.shots.iter().map(|(s, e)| e - s).collect()
    }

    pub fn min_len(&self) -> usize {
        self.lengths().into_iter().min().unwrap_or(0)
    }
}

/// Mean frame score inside each shot.
pub fn frame_to_shot_scores(x: &[f64], seg: &ShotSegmentation) -> Result<Vec<f64>> {
    if seg.frames() != x.len() {
        return Err(Error::InvalidArgument(format!(
            "segmentation covers {} frames, scores have {}",
            seg.frames(),
            x.len()
        )));
    }
    Ok(seg
        .shots()
        .iter()
        .map(|&(s, e)| x[s..e].iter().sum::<f64>() / (e - s) as f64)
        .collect())
}

/// Frame budget `floor(sigma * k)`.
pub fn budget_frames(k: usize, sigma: f64) -> usize {
    // The epsilon keeps products such as 0.3 * 10 from rounding down.
    (sigma * k as f64 + 1e-9).floor().max(0.0) as usize
}

/// Exact 0/1 knapsack over shots.
///
/// Maximizes the summed score subject to the summed length fitting in
/// `capacity`. Among optimal sets the one with fewer frames wins, then the
/// lexicographically smallest index list. Shots with score `<= 0` are never
/// chosen. Returns chosen indices in increasing order.
pub fn knapsack_select(scores: &[f64], lengths: &[usize], capacity: usize) -> Vec<usize> {
    assert_eq!(scores.len(), lengths.len(), "one length per shot");
    let n = scores.len();
    let width = capacity + 1;
    // best[i][c]: optimum over items i.. with capacity c, as (value, frames).
    let mut best = vec![(0.0f64, 0usize); (n + 1) * width];
    let better = |a: (f64, usize), b: (f64, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let take = |best: &[(f64, usize)], i: usize, c: usize| -> Option<(f64, usize)> {
        let len = lengths[i];
        (scores[i] > 0.0 && len <= c).then(|| {
            let rest = best[(i + 1) * width + c - len];
            (scores[i] + rest.0, len + rest.1)
        })
    };
    for i in (0..n).rev() {
        for c in 0..width {
            let skip = best[(i + 1) * width + c];
            best[i * width + c] = match take(&best, i, c) {
                Some(t) if better(t, skip) || t == skip => t,
                _ => skip,
            };
        }
    }
    let mut chosen = Vec::new();
    let mut c = capacity;
    for i in 0..n {
        if let Some(t) = take(&best, i, c) {
            if t == best[i * width + c] {
                chosen.push(i);
                c -= lengths[i];
            }
        }
    }
    chosen
}

/// Binary per-frame mask from chosen shots.
pub fn shots_to_frames(chosen: &[usize], seg: &ShotSegmentation) -> Vec<bool> {
    let mut mask = vec![false; seg.frames()];
    for &i in chosen {
        let (s, e) = seg.shots()[i];
        mask[s..e].iter_mut().for_each(|m| *m = true);
    }
    mask
}

/// Keyshot summary of a video.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyshotSelection {
    pub frames: Vec<bool>,
    pub shots: Vec<usize>,
    pub budget: usize,
    /// Set when the budget is smaller than the shortest shot.
    pub degenerate: bool,
}

/// Frame scores -> shot scores -> knapsack at `floor(sigma * k)` frames.
pub fn keyshot_summary(x: &[f64], seg: &ShotSegmentation, sigma: f64) -> Result<KeyshotSelection> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidArgument(format!("budget fraction {sigma} must lie in (0, 1)")));
    }
    let scores = frame_to_shot_scores(x, seg)?;
    let budget = budget_frames(x.len(), sigma);
    let degenerate = budget < seg.min_len();
    if degenerate {
        log::warn!(
            "frame budget {budget} is below the shortest shot ({} frames); selection is empty",
            seg.min_len()
        );
    }
    let shots = knapsack_select(&scores, &seg.lengths(), budget);
    Ok(KeyshotSelection {
        frames: shots_to_frames(&shots, seg),
        shots,
        budget,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub selected: usize,
    pub budget: Option<usize>,
}

/// Frame-overlap precision, recall and their harmonic mean.
pub fn f_measure(pred: &[bool], gt: &[bool]) -> Result<EvalResult> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let overlap = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count() as f64;
    let n_pred = pred.iter().filter(|p| **p).count();
    let n_gt = gt.iter().filter(|g| **g).count() as f64;
    let precision = if n_pred == 0 { 0.0 } else { overlap / n_pred as f64 };
    let recall = if n_gt == 0.0 { 0.0 } else { overlap / n_gt };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalResult {
        precision,
        recall,
        f_score,
        selected: n_pred,
        budget: None,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::InvalidArgument(format!("unknown aggregation `{other}`"))),
        }
    }
}

pub fn aggregate_annotators(per_user_f: &[f64], mode: Aggregation) -> Result<f64> {
    if per_user_f.is_empty() {
        return Err(Error::InvalidArgument("no annotator scores to aggregate".into()));
    }
    Ok(match mode {
        Aggregation::Mean => per_user_f.iter().sum::<f64>() / per_user_f.len() as f64,
        Aggregation::Max => per_user_f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Train/test partition of video ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_splits: 5,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

pub const MIN_SPLIT_VIDEOS: usize = 5;

/// Independent seeded shuffles of `ids`, each cut into train and test.
pub fn make_splits(ids: &[String], spec: &SplitSpec) -> Result<Vec<Split>> {
    if ids.len() < MIN_SPLIT_VIDEOS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SPLIT_VIDEOS} videos for splits, got {}",
            ids.len()
        )));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) || spec.n_splits == 0 {
        return Err(Error::InvalidArgument("bad split specification".into()));
    }
    let n_train = ((ids.len() as f64 * spec.train_fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_splits)
        .map(|_| {
            let mut shuffled = ids.to_vec();
            shuffled.shuffle(&mut rng);
            let test = shuffled.split_off(n_train);
            Split {
                train: shuffled,
                test,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitReport {
    pub per_split: Vec<f64>,
    pub mean: f64,
}

/// Trains and evaluates once per split.
pub fn run_splits<M, T, E>(splits: &[Split], mut train_fn: T, mut eval_fn: E) -> Result<SplitReport>
where
    T: FnMut(usize, &Split) -> Result<M>,
    E: FnMut(usize, &M, &Split) -> Result<f64>,
{
    if splits.is_empty() {
        return Err(Error::InvalidArgument("no splits to run".into()));
    }
    let mut per_split = Vec::with_capacity(splits.len());
    for (i, split) in splits.iter().enumerate() {
        let model = train_fn(i, split)?;
        per_split.push(eval_fn(i, &model, split)?);
    }
    let mean = per_split.iter().sum::<f64>() / per_split.len() as f64;
    Ok(SplitReport { per_split, mean })
}
