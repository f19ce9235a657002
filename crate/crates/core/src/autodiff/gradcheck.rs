//! Central finite-difference check of analytic gradients.

use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};

/// Outcome for one named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub store: String,
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    /// Probes where `f` failed or returned a non-finite value.
    pub failed_probes: usize,
    /// Entries whose gradient is below the rounding noise of the central
    /// difference, `4 eps |f| / (h tol)`.
    pub below_noise: usize,
    /// Worst relative error over the remaining entries.
    pub max_rel_err_resolved: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_rel_err_resolved(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err_resolved).fold(0.0, f64::max)
    }

    pub fn below_noise(&self) -> usize {
        self.params.iter().map(|p| p.below_noise).sum()
    }

    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.failed_probes == 0 && p.max_rel_err <= self.tol)
    }

    /// Worst relative error per store label.
    pub fn by_store(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for p in &self.params {
            let e = out.entry(p.store.clone()).or_insert(0.0);
            *e = e.max(p.max_rel_err);
        }
        out
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(stores: &[ParamStore], f: &mut F) -> Option<f64>
where
    F: FnMut(&mut Graph, &[Bound]) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound: Vec<Bound> = stores.iter().map(|s| s.bind(&mut g, false)).collect();
    let root = f(&mut g, &bound).ok()?;
    let v = g.value(root);
    (v.numel() == 1 && v.item().is_finite()).then(|| v.item())
}

/// Compares the analytic gradient of `f` with `(f(θ+h) - f(θ-h)) / 2h` for
/// every scalar entry of every store. `f` builds the scalar to check from
/// bound parameters, one [`Bound`] per store in order; it must be a pure
/// function of the parameter values (re-seed any sampling inside it).
pub fn grad_check<F>(stores: &mut [ParamStore], h: f64, tol: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Bound]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be positive")));
    }
    let analytic = {
        let mut g = Graph::new();
        let bound: Vec<Bound> = stores.iter().map(|s| s.bind(&mut g, true)).collect();
        let root = f(&mut g, &bound)?;
        g.backward(root)?.params()
    };

    let mut params = Vec::new();
    for si in 0..stores.len() {
        let label = stores[si].label().to_string();
        let names: Vec<String> = stores[si].iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let key = super::graph::ParamKey {
                store: label.clone(),
                name: name.clone(),
            };
            let n = stores[si].get(&name)?.numel();
            let grad = analytic.get(&key).cloned().unwrap_or_else(|| vec![0.0; n]);
            let mut check = ParamCheck {
                store: label.clone(),
                name: name.clone(),
                entries: n,
                max_rel_err: 0.0,
                failed_probes: 0,
                below_noise: 0,
                max_rel_err_resolved: 0.0,
            };
            for j in 0..n {
                let orig = stores[si].get(&name)?.data()[j];
                stores[si].get_mut(&name)?.data_mut()[j] = orig + h;
                let plus = eval(stores, &mut f);
                stores[si].get_mut(&name)?.data_mut()[j] = orig - h;
                let minus = eval(stores, &mut f);
                stores[si].get_mut(&name)?.data_mut()[j] = orig;
                match (plus, minus) {
                    (Some(p), Some(m)) => {
                        let numeric = (p - m) / (2.0 * h);
                        let err = rel_err(grad[j], numeric);
                        check.max_rel_err = check.max_rel_err.max(err);
                        let noise = 4.0 * f64::EPSILON * p.abs().max(m.abs()) / h;
                        if grad[j].abs().max(numeric.abs()) * tol < noise {
                            check.below_noise += 1;
                        } else {
                            check.max_rel_err_resolved = check.max_rel_err_resolved.max(err);
                        }
                    }
                    _ => check.failed_probes += 1,
                }
            }
            params.push(check);
        }
    }
    Ok(GradCheckReport { h, tol, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(v: f64) -> ParamStore {
        let mut s = ParamStore::new("p");
        s.insert("theta", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn square_passes() {
        let mut stores = [single(3.0)];
        let report = grad_check(&mut stores, 1e-5, 1e-6, |g, b| {
            let t = b[0].get("theta")?;
            Ok(g.square(t))
        })
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_err() < 1e-8);
    }

    #[test]
    fn constant_passes() {
        let mut stores = [single(1.5)];
        let report = grad_check(&mut stores, 1e-5, 1e-6, |g, _| {
            Ok(g.constant(Tensor::scalar(4.0)))
        })
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_err(), 0.0);
    }

    #[test]
    fn non_finite_probe_is_reported_not_fatal() {
        let mut stores = [single(1e-6)];
        // log is undefined at theta - h < 0.
        let report = grad_check(&mut stores, 1e-5, 1e-4, |g, b| {
            let t = b[0].get("theta")?;
            g.log(t)
        })
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.params[0].failed_probes, 1);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // theta sits just right of the kink of abs, so the central difference straddles it.
        let mut stores = [single(1e-7)];
        let report = grad_check(&mut stores, 1e-5, 1e-4, |g, b| {
            let t = b[0].get("theta")?;
            Ok(g.abs(t))
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn tiny_gradients_are_flagged_as_below_noise() {
        let mut stores = [single(0.3)];
        let report = grad_check(&mut stores, 1e-5, 1e-4, |g, b| {
            let t = b[0].get("theta")?;
            let small = g.scale(t, 1e-10);
            let one = g.constant(Tensor::scalar(1.0));
            g.add(small, one)
        })
        .unwrap();
        assert_eq!(report.below_noise(), 1);
        assert_eq!(report.max_rel_err_resolved(), 0.0);
    }

    #[test]
    fn restores_parameters() {
        let mut stores = [single(0.7)];
        let before = stores.clone();
        grad_check(&mut stores, 1e-3, 1e-4, |g, b| {
            let t = b[0].get("theta")?;
            Ok(g.tanh(t))
        })
        .unwrap();
        assert_eq!(stores, before);
    }
}
