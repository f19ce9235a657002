//! Dataset manifests, raw feature files, the planted synthetic benchmark
//! and split files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::{ShotSegmentation, Split};

pub const MANIFEST: &str = "dataset.json";

/// Ground-truth frame scores from one or several annotators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Single(Vec<f64>),
    Annotators(Vec<Vec<f64>>),
}

impl GroundTruth {
    pub fn annotators(&self) -> Vec<&[f64]> {
        match self {
            GroundTruth::Single(v) => vec![v.as_slice()],
            GroundTruth::Annotators(vs) => vs.iter().map(Vec::as_slice).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// `k x d`.
    pub features: Tensor,
    pub gt: Option<GroundTruth>,
    pub segments: Option<ShotSegmentation>,
    pub fps: Option<f64>,
}

impl VideoRecord {
    pub fn k(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.features.shape()[1]
    }

    /// Stored segments, or uniform shots of `ceil(k / 20)` frames.
    pub fn segmentation(&self) -> Result<ShotSegmentation> {
        match &self.segments {
            Some(s) => Ok(s.clone()),
            None => ShotSegmentation::default_for(self.k()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if self.features.shape().len() != 2 {
            return Err(bad(format!("features have shape {:?}", self.features.shape())));
        }
        if !self.features.all_finite() {
            return Err(bad("features contain non-finite values".into()));
        }
        let k = self.k();
        if let Some(gt) = &self.gt {
            for (i, a) in gt.annotators().into_iter().enumerate() {
                if a.len() != k {
                    return Err(bad(format!(
                        "{k} feature rows but {} gt scores (annotator {i})",
                        a.len()
                    )));
                }
                if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(bad(format!("gt scores of annotator {i} leave [0, 1]")));
                }
            }
        }
        if let Some(seg) = &self.segments {
            if seg.frames() != k {
                return Err(bad(format!("segments cover {} frames, video has {k}", seg.frames())));
            }
        }
        if let Some(fps) = self.fps {
            if !(fps > 0.0 && fps.is_finite()) {
                return Err(bad(format!("fps {fps} is not positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    k: usize,
    d: usize,
    features_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    }
}

fn read_features(path: &Path, id: &str, k: usize, d: usize) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * k * d {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            reason: format!("{} bytes, expected {} for {k}x{d} f32 values", bytes.len(), 4 * k * d),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(vec![k, d], data).map_err(|e| Error::InvalidRecord {
        id: id.to_string(),
        reason: e.to_string(),
    })
}

/// Loads and validates every record of a dataset directory (or manifest).
pub fn load_dataset(path: &Path) -> Result<Vec<VideoRecord>> {
    let manifest = manifest_path(path);
    let base = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest)?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: manifest.display().to_string(),
        reason: e.to_string(),
    })?;
    if entries.is_empty() {
        log::warn!("dataset {} lists no videos", manifest.display());
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if !seen.insert(e.id.clone()) {
            return Err(Error::InvalidRecord {
                id: e.id,
                reason: "duplicate id".into(),
            });
        }
        if e.k == 0 || e.d == 0 {
            return Err(Error::InvalidRecord {
                id: e.id,
                reason: format!("k = {}, d = {} must be positive", e.k, e.d),
            });
        }
        let features = read_features(&base.join(&e.features_file), &e.id, e.k, e.d)?;
        let segments = match e.segments {
            Some(s) => Some(ShotSegmentation::new(s, e.k).map_err(|err| Error::InvalidRecord {
                id: e.id.clone(),
                reason: format!("segments: {err}"),
            })?),
            None => None,
        };
        let rec = VideoRecord {
            id: e.id,
            features,
            gt: e.gt,
            segments,
            fps: e.fps,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes `dataset.json` and one `<id>.f32` feature file per record.
/// Features are stored as 32-bit floats.
pub fn save_dataset(dir: &Path, records: &[VideoRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        let file = format!("{}.f32", r.id);
        let bytes: Vec<u8> = r
            .features
            .data()
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect();
        fs::write(dir.join(&file), bytes)?;
        entries.push(ManifestEntry {
            id: r.id.clone(),
            k: r.k(),
            d: r.d(),
            features_file: file,
            gt: r.gt.clone(),
            segments: r.segments.as_ref().map(|s| s.shots().to_vec()),
            fps: r.fps,
        });
    }
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&entries)? + "\n")?;
    Ok(())
}

/// Parameters of the planted benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub k: usize,
    pub d: usize,
    pub n_events: usize,
    /// Fraction of salient events.
    pub salience: f64,
    /// Per-coordinate standard deviation of frame noise.
    pub noise: f64,
    /// Pull of non-salient event centers toward a shared per-video
    /// direction; 0 draws every center independently.
    pub redundancy: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 20,
            k: 96,
            d: 32,
            n_events: 6,
            salience: 0.3,
            noise: 0.05,
            redundancy: 0.5,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_videos == 0 {
            return bad("n_videos must be >= 1".into());
        }
        if self.n_events < 2 {
            return bad("n_events must be >= 2".into());
        }
        if self.k < self.n_events {
            return bad(format!("{} frames cannot hold {} events", self.k, self.n_events));
        }
        if self.d == 0 {
            return bad("d must be >= 1".into());
        }
        if !(self.salience > 0.0 && self.salience < 1.0) {
            return bad(format!("salience {} must lie in (0, 1)", self.salience));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be >= 0", self.noise));
        }
        if !(0.0..1.0).contains(&self.redundancy) {
            return bad(format!("redundancy {} must lie in [0, 1)", self.redundancy));
        }
        Ok(())
    }

    /// `max(1, floor(salience * n_events))`.
    pub fn salient_events(&self) -> usize {
        ((self.salience * self.n_events as f64 + 1e-9).floor() as usize).max(1)
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Planted structure of one synthetic video.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub record: VideoRecord,
    pub centers: Vec<Vec<f64>>,
    pub salient: Vec<bool>,
}

/// Event lengths: each at least `k / (2 n)` frames, the rest spread by
/// uniform random cut points.
fn event_lengths<R: Rng + ?Sized>(rng: &mut R, k: usize, n: usize) -> Vec<usize> {
    let min = (k / (2 * n)).max(1);
    let spare = k - min * n;
    let mut cuts: Vec<usize> = (0..n - 1).map(|_| rng.gen_range(0..=spare)).collect();
    cuts.sort_unstable();
    let mut prev = 0;
    let mut lengths = Vec::with_capacity(n);
    for c in cuts.into_iter().chain(std::iter::once(spare)) {
        lengths.push(min + c - prev);
        prev = c;
    }
    lengths
}

/// Videos made of contiguous events around unit-norm centers, with a
/// planted fraction of salient events as ground truth.
pub fn generate_synthetic_detailed(spec: &SynthSpec) -> Result<Vec<SynthVideo>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k, d, n) = (spec.k, spec.d, spec.n_events);
    let width = spec.n_videos.to_string().len().max(2);
    let mut out = Vec::with_capacity(spec.n_videos);
    for vi in 0..spec.n_videos {
        let lengths = event_lengths(&mut rng, k, n);
        let chosen: BTreeSet<usize> = sample(&mut rng, n, spec.salient_events()).into_iter().collect();
        let salient: Vec<bool> = (0..n).map(|e| chosen.contains(&e)).collect();
        let background = unit_vector(&mut rng, d);
        let centers: Vec<Vec<f64>> = salient
            .iter()
            .map(|&is_salient| {
                let u = unit_vector(&mut rng, d);
                if is_salient || spec.redundancy == 0.0 {
                    return u;
                }
                let r = spec.redundancy;
                let mix: Vec<f64> = background.iter().zip(&u).map(|(b, x)| r * b + (1.0 - r) * x).collect();
                let norm = mix.iter().map(|x| x * x).sum::<f64>().sqrt();
                mix.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let mut data = Vec::with_capacity(k * d);
        let mut gt = Vec::with_capacity(k);
        let mut shots = Vec::with_capacity(n);
        let mut start = 0;
        for (e, &len) in lengths.iter().enumerate() {
            for _ in 0..len {
                for c in &centers[e] {
                    let eps: f64 = rng.sample(StandardNormal);
                    // Rounded so that a save/load round trip is exact.
                    data.push((c + spec.noise * eps) as f32 as f64);
                }
                gt.push(if salient[e] { 1.0 } else { 0.0 });
            }
            shots.push((start, start + len));
            start += len;
        }
        let record = VideoRecord {
            id: format!("video_{vi:0width$}"),
            features: Tensor::matrix(k, d, data)?,
            gt: Some(GroundTruth::Single(gt)),
            segments: Some(ShotSegmentation::new(shots, k)?),
            fps: None,
        };
        out.push(SynthVideo {
            record,
            centers,
            salient,
        });
    }
    Ok(out)
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<VideoRecord>> {
    Ok(generate_synthetic_detailed(spec)?
        .into_iter()
        .map(|v| v.record)
        .collect())
}

/// Writes a JSON array of `{"train": [...], "test": [...]}` objects.
pub fn save_splits(path: &Path, splits: &[Split]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(splits)? + "\n")?;
    Ok(())
}

/// Reads a split file, rejecting ids not in `known` and train/test overlap.
pub fn load_splits(path: &Path, known: &[String]) -> Result<Vec<Split>> {
    let splits: Vec<Split> = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| {
        Error::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    })?;
    let known: BTreeSet<&str> = known.iter().map(String::as_str).collect();
    for (i, s) in splits.iter().enumerate() {
        let train: BTreeSet<&str> = s.train.iter().map(String::as_str).collect();
        for id in s.train.iter().chain(&s.test) {
            if !known.contains(id.as_str()) {
                return Err(Error::UnknownId(id.clone()));
            }
        }
        if let Some(id) = s.test.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                reason: format!("split {i}: `{id}` is in both train and test"),
            });
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{make_splits, SplitSpec};

    fn small() -> SynthSpec {
        SynthSpec {
            n_videos: 4,
            k: 30,
            d: 5,
            n_events: 4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn synthetic_structure() {
        let videos = generate_synthetic_detailed(&small()).unwrap();
        assert_eq!(videos.len(), 4);
        for v in &videos {
            assert_eq!(v.record.features.shape(), &[30, 5]);
            assert_eq!(v.salient.iter().filter(|s| **s).count(), 1);
            let seg = v.record.segments.as_ref().unwrap();
            assert_eq!(seg.len(), 4);
            assert!(seg.min_len() >= 30 / 8);
            for c in &v.centers {
                let n: f64 = c.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(generate_synthetic(&small()).unwrap(), generate_synthetic(&small()).unwrap());
    }

    #[test]
    fn salient_count_rule() {
        let mut s = small();
        s.salience = 0.1;
        assert_eq!(s.salient_events(), 1);
        s.n_events = 10;
        s.salience = 0.3;
        assert_eq!(s.salient_events(), 3);
        s.salience = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_noise_frames_repeat_within_event() {
        let spec = SynthSpec {
            noise: 0.0,
            ..small()
        };
        for v in generate_synthetic_detailed(&spec).unwrap() {
            let f = &v.record.features;
            for &(s, e) in v.record.segments.as_ref().unwrap().shots() {
                for t in s + 1..e {
                    assert_eq!(f.row(t), f.row(s));
                }
            }
        }
    }

    #[test]
    fn dataset_round_trip() {
        let records = generate_synthetic(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &records).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), records);
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), "[]").unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn short_gt_names_the_video() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.f32"), vec![0u8; 4 * 4 * 2]).unwrap();
        let manifest = r#"[{"id": "clip7", "k": 4, "d": 2, "features_file": "a.f32", "gt": [0, 1, 0]}]"#;
        fs::write(dir.path().join(MANIFEST), manifest).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::InvalidRecord { id, .. } if id == "clip7"), "{err}");
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.f32"), vec![0u8; 12]).unwrap();
        let m = r#"[{"id": "x", "k": 4, "d": 2, "features_file": "a.f32"}]"#;
        fs::write(dir.path().join(MANIFEST), m).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Malformed { .. })));

        fs::write(dir.path().join("a.f32"), vec![0u8; 32]).unwrap();
        let m = r#"[{"id": "x", "k": 4, "d": 2, "features_file": "a.f32", "segments": [[0, 2], [3, 4]]}]"#;
        fs::write(dir.path().join(MANIFEST), m).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::InvalidRecord { .. })));

        let m = r#"[{"id": "x", "k": 4, "d": 2, "features_file": "a.f32", "gt": [[0, 1, 0, 1], [1, 1, 0, 0]]}]"#;
        fs::write(dir.path().join(MANIFEST), m).unwrap();
        let recs = load_dataset(dir.path()).unwrap();
        assert_eq!(recs[0].gt.as_ref().unwrap().annotators().len(), 2);
        assert_eq!(recs[0].segmentation().unwrap().len(), 4);
    }

    #[test]
    fn splits_round_trip_and_validation() {
        let ids: Vec<String> = (0..25).map(|i| format!("v{i}")).collect();
        let splits = make_splits(&ids, &SplitSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splits.json");
        save_splits(&path, &splits).unwrap();
        let back = load_splits(&path, &ids).unwrap();
        assert_eq!(back, splits);
        assert!(back.iter().all(|s| s.train.len() == 20 && s.test.len() == 5));
        assert!(matches!(load_splits(&path, &ids[..20]), Err(Error::UnknownId(_))));

        let overlap = vec![Split {
            train: vec!["v0".into(), "v1".into()],
            test: vec!["v1".into()],
        }];
        save_splits(&path, &overlap).unwrap();
        assert!(load_splits(&path, &ids).is_err());
    }
}
