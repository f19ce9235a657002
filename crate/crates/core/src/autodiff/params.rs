use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::graph::{Gradients, Graph, Precision, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named tensors of one network, iterated in lexicographic name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    label: String,
    params: BTreeMap<String, Tensor>,
    clip: Option<f64>,
}

/// Graph handles for every entry of a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }
}

impl ParamStore {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            params: BTreeMap::new(),
            clip: None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{name}` in `{}`",
                self.label
            )));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn clip_bound(&self) -> Option<f64> {
        self.clip
    }

    /// Adds every entry to `g` as a parameter leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let t = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
                (name.clone(), g.param(&self.label, name, t, trainable))
            })
            .collect();
        Bound { vars }
    }

    /// Adds the gradients addressed to this store into each entry's buffer.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (key, g) in grads.params() {
            if key.store != self.label {
                continue;
            }
            self.get_mut(&key.name)?.accumulate_grad(&g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Clamps every entry into `[-c, c]` and records `c` as the store bound.
    pub fn clip(&mut self, c: f64) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
        self.clip = Some(c);
    }

    pub fn within(&self, c: f64) -> bool {
        self.params
            .values()
            .all(|t| t.data().iter().all(|v| (-c..=c).contains(v)))
    }

    pub fn max_abs(&self) -> f64 {
        self.params.values().map(Tensor::max_abs).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Rounds stored values to the given precision.
    pub fn round_to(&mut self, precision: Precision) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = precision.round(*v));
        }
    }
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

/// Writes stores as a tab-separated manifest (`name shape dtype offset`) and
/// a flat little-endian buffer in manifest order. Names are prefixed with
/// the store label.
pub fn save_checkpoint(
    stores: &[&ParamStore],
    manifest: &Path,
    buffer: &Path,
    dtype: Precision,
) -> Result<()> {
    let mut text = String::new();
    let mut bytes = Vec::new();
    for store in stores {
        for (name, t) in store.iter() {
            let shape = t
                .shape()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",");
            text.push_str(&format!(
                "{}.{}\t{}\t{}\t{}\n",
                store.label(),
                name,
                shape,
                dtype.name(),
                bytes.len()
            ));
            for &v in t.data() {
                match dtype {
                    Precision::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
    }
    fs::write(manifest, text)?;
    let mut f = fs::File::create(buffer)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`], keyed by store label.
pub fn load_checkpoint(manifest: &Path, buffer: &Path) -> Result<BTreeMap<String, ParamStore>> {
    let malformed = |reason: String| Error::Malformed {
        path: manifest.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(manifest)?;
    let bytes = fs::read(buffer)?;
    let mut out: BTreeMap<String, ParamStore> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(malformed(format!("line {}: expected 4 columns", lineno + 1)));
        }
        let (label, name) = cols[0]
            .split_once('.')
            .ok_or_else(|| malformed(format!("line {}: name without store label", lineno + 1)))?;
        let shape = parse_shape(cols[1])
            .ok_or_else(|| malformed(format!("line {}: bad shape `{}`", lineno + 1, cols[1])))?;
        let width = match cols[2] {
            "f64" => 8,
            "f32" => 4,
            other => return Err(malformed(format!("line {}: unknown dtype `{other}`", lineno + 1))),
        };
        let offset: usize = cols[3]
            .parse()
            .map_err(|_| malformed(format!("line {}: bad offset", lineno + 1)))?;
        let numel: usize = shape.iter().product();
        let end = offset + numel * width;
        if end > bytes.len() {
            return Err(malformed(format!(
                "line {}: entry overruns buffer ({end} > {})",
                lineno + 1,
                bytes.len()
            )));
        }
        let data = bytes[offset..end]
            .chunks_exact(width)
            .map(|c| {
                if width == 8 {
                    f64::from_le_bytes(c.try_into().expect("8 bytes"))
                } else {
                    f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
                }
            })
            .collect();
        out.entry(label.to_string())
            .or_insert_with(|| ParamStore::new(label))
            .insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(out)
}
