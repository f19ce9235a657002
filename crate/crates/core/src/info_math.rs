//! Exact identities behind the mutual-information objective, checked on
//! small discrete distributions. All quantities are in nats and
//! `0 * log 0 = 0` throughout.

use std::f64::consts::LN_2;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} is empty")));
    }
    if let Some(x) = v.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("{what} has entry {x}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// `p * ln(p / q)` with `0 ln 0 = 0`.
fn plogpq(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

/// `D_KL(p || q)`; infinite when `p` puts mass where `q` has none.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| plogpq(a, b)).sum()
}

/// Jensen-Shannon divergence.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

/// Joint distribution `p(o, s)` over an `n x m` alphabet, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    n: usize,
    m: usize,
    p: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(n: usize, m: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != n * m {
            return Err(Error::InvalidArgument(format!(
                "{} entries for a {n}x{m} joint",
                p.len()
            )));
        }
        check_distribution(&p, "joint")?;
        Ok(Self { n, m, p })
    }

    /// Uniform-Dirichlet-like random joint; roughly a fifth of entries are
    /// zeroed to exercise the `0 log 0` convention.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Self {
        let mut p: Vec<f64> = (0..n * m)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    -rng.gen_range(f64::MIN_POSITIVE..1.0).ln()
                }
            })
            .collect();
        if p.iter().all(|v| *v == 0.0) {
            p[0] = 1.0;
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        Self { n, m, p }
    }

    /// `p(o) p(s)` from two marginals.
    pub fn product(po: &[f64], ps: &[f64]) -> Result<Self> {
        check_distribution(po, "p(o)")?;
        check_distribution(ps, "p(s)")?;
        let p = po.iter().flat_map(|a| ps.iter().map(move |b| a * b)).collect();
        Ok(Self {
            n: po.len(),
            m: ps.len(),
            p,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn at(&self, o: usize, s: usize) -> f64 {
        self.p[o * self.m + s]
    }

    pub fn p_o(&self) -> Vec<f64> {
        (0..self.n).map(|o| (0..self.m).map(|s| self.at(o, s)).sum()).collect()
    }

    pub fn p_s(&self) -> Vec<f64> {
        (0..self.m).map(|s| (0..self.n).map(|o| self.at(o, s)).sum()).collect()
    }

    /// `p(s | o)`, or `None` when `p(o) = 0`.
    pub fn s_given_o(&self, o: usize) -> Option<Vec<f64>> {
        let po: f64 = (0..self.m).map(|s| self.at(o, s)).sum();
        (po > 0.0).then(|| (0..self.m).map(|s| self.at(o, s) / po).collect())
    }

    /// `p(o | s)`, or `None` when `p(s) = 0`.
    pub fn o_given_s(&self, s: usize) -> Option<Vec<f64>> {
        let ps: f64 = (0..self.n).map(|o| self.at(o, s)).sum();
        (ps > 0.0).then(|| (0..self.n).map(|o| self.at(o, s) / ps).collect())
    }
}

/// `sum p(o,s) ln(p(o,s) / (p(o) p(s)))`.
pub fn mutual_information(j: &DiscreteJoint) -> f64 {
    let (po, ps) = (j.p_o(), j.p_s());
    let mut acc = 0.0;
    for o in 0..j.n {
        for s in 0..j.m {
            acc += plogpq(j.at(o, s), po[o] * ps[s]);
        }
    }
    acc
}

/// `sum_o p(o) D_KL(p(s|o) || p(s))`.
pub fn mi_anchored_at_o(j: &DiscreteJoint) -> f64 {
    let (po, ps) = (j.p_o(), j.p_s());
    (0..j.n)
        .filter_map(|o| j.s_given_o(o).map(|c| po[o] * kl(&c, &ps)))
        .sum()
}

/// `sum_s p(s) D_KL(p(o|s) || p(o))`.
pub fn mi_anchored_at_s(j: &DiscreteJoint) -> f64 {
    let (po, ps) = (j.p_o(), j.p_s());
    (0..j.m)
        .filter_map(|s| j.o_given_s(s).map(|c| ps[s] * kl(&c, &po)))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Direct MI against the average of both conditional-KL forms.
pub fn verify_symmetric_decomposition(j: &DiscreteJoint) -> Decomposition {
    let lhs = mutual_information(j);
    let rhs = 0.5 * (mi_anchored_at_o(j) + mi_anchored_at_s(j));
    Decomposition {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    }
}

/// Convex conjugate of `-ln`: `sup_u {u t + ln u} = -1 - ln(-t)`, attained
/// at `u = -1/t`, for `t < 0`.
pub fn fenchel_log_conjugate(t: f64) -> Result<f64> {
    if !(t < 0.0) || !t.is_finite() {
        return Err(Error::Domain {
            op: "fenchel_log_conjugate",
            value: t,
        });
    }
    Ok(-1.0 - (-t).ln())
}

/// Two distributions on a shared alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePair {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl DiscretePair {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::InvalidArgument(format!(
                "alphabet sizes differ: {} vs {}",
                p.len(),
                q.len()
            )));
        }
        check_distribution(&p, "p")?;
        check_distribution(&q, "q")?;
        Ok(Self { p, q })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        let mut draw = || {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            if v.iter().all(|x| *x == 0.0) {
                v[0] = 1.0;
            }
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let p = draw();
        let q = draw();
        Self { p, q }
    }
}

/// `sum p ln T + sum q ln(1 - T)` for `T` strictly inside `(0, 1)`.
pub fn gan_bound_value(pair: &DiscretePair, t: &[f64]) -> Result<f64> {
    if t.len() != pair.p.len() {
        return Err(Error::InvalidArgument("T must have one entry per symbol".into()));
    }
    if let Some(&bad) = t.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain {
            op: "gan_bound_value",
            value: bad,
        });
    }
    Ok(pair
        .p
        .iter()
        .zip(&pair.q)
        .zip(t)
        .map(|((p, q), t)| p * t.ln() + q * (1.0 - t).ln())
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanSup {
    /// Value at the optimal discriminator.
    pub sup_value: f64,
    /// `-2 ln 2 + 2 JSD(p || q)`.
    pub via_jsd: f64,
    pub jsd: f64,
    pub t_star: Vec<f64>,
}

/// Supremum of [`gan_bound_value`] over all `T`, attained at `p / (p + q)`.
pub fn gan_bound_sup(pair: &DiscretePair) -> GanSup {
    let t_star: Vec<f64> = pair
        .p
        .iter()
        .zip(&pair.q)
        .map(|(p, q)| if p + q > 0.0 { p / (p + q) } else { 0.5 })
        .collect();
    let sup_value = pair
        .p
        .iter()
        .zip(&pair.q)
        .zip(&t_star)
        .map(|((&p, &q), &t)| {
            let a = if p > 0.0 { p * t.ln() } else { 0.0 };
            let b = if q > 0.0 { q * (1.0 - t).ln() } else { 0.0 };
            a + b
        })
        .sum();
    let jsd = jsd(&pair.p, &pair.q);
    GanSup {
        sup_value,
        via_jsd: -2.0 * LN_2 + 2.0 * jsd,
        jsd,
        t_star,
    }
}

/// Pairs where `KL > -sup`, the bound's upper-bound claim failing.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCounterexamples {
    pub trials: usize,
    /// Violations using `D_KL(p || q)`.
    pub violations_pq: usize,
    /// Violations using `D_KL(q || p)`, the literal `-sum q ln(p/q)`.
    pub violations_qp: usize,
    pub worst_gap: f64,
    pub worst_pair: Option<DiscretePair>,
}

/// Searches random pairs for violations of `KL <= -sup`. Informational.
pub fn search_bound_counterexamples(trials: usize, max_alphabet: usize, seed: u64) -> BoundCounterexamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BoundCounterexamples {
        trials,
        violations_pq: 0,
        violations_qp: 0,
        worst_gap: 0.0,
        worst_pair: None,
    };
    for _ in 0..trials {
        let n = rng.gen_range(2..=max_alphabet.max(2));
        let pair = DiscretePair::random(&mut rng, n);
        let bound = -gan_bound_sup(&pair).sup_value;
        let pq = kl(&pair.p, &pair.q);
        let qp = kl(&pair.q, &pair.p);
        if pq > bound {
            out.violations_pq += 1;
        }
        if qp > bound {
            out.violations_qp += 1;
        }
        let gap = pq.max(qp) - bound;
        if gap > out.worst_gap {
            out.worst_gap = gap;
            out.worst_pair = Some(pair);
        }
    }
    out
}

/// `max_u {u t + ln u}` over a log-spaced grid, as an independent check of
/// the conjugate's closed form.
pub fn conjugate_grid_search(t: f64, points: usize) -> f64 {
    // The maximizer -1/t sits well inside [1e-6 * u*, 1e6 * u*].
    let center = (-1.0 / t).ln();
    let (lo, hi) = (center - 6.0 * 10f64.ln(), center + 6.0 * 10f64.ln());
    let mut best = f64::NEG_INFINITY;
    let mut best_i = 0;
    let at = |i: usize| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
    for i in 0..points {
        let u = at(i);
        let v = u * t + u.ln();
        if v > best {
            best = v;
            best_i = i;
        }
    }
    // Golden-section refinement inside the bracketing grid cell.
    let f = |lu: f64| lu.exp() * t + lu;
    let step = (hi - lo) / (points - 1) as f64;
    let (mut a, mut b) = (at(best_i).ln() - step, at(best_i).ln() + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b)))
}

/// Per-symbol grid maximization of `p ln T + q ln(1 - T)` over `points`
/// interior values of `T`, refined by golden section.
pub fn gan_sup_grid_search(pair: &DiscretePair, points: usize) -> f64 {
    pair.p
        .iter()
        .zip(&pair.q)
        .map(|(&p, &q)| {
            if p == 0.0 || q == 0.0 {
                // The supremum is the limit T -> 1 or T -> 0, both zero.
                return 0.0;
            }
            let f = |t: f64| p * t.ln() + q * (1.0 - t).ln();
            let at = |i: usize| (i as f64 + 0.5) / points as f64;
            let (best_i, _) = (0..points)
                .map(|i| (i, f(at(i))))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            let step = 1.0 / points as f64;
            let (mut a, mut b) = ((at(best_i) - step).max(1e-15), (at(best_i) + step).min(1.0 - 1e-15));
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if f(c) > f(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            f(0.5 * (a + b))
        })
        .sum()
}

/// Instance counts for [`run_suite`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteConfig {
    pub joints: usize,
    pub max_alphabet: usize,
    pub conjugate_probes: usize,
    pub pairs: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            joints: 100,
            max_alphabet: 16,
            conjugate_probes: 100,
            pairs: 100,
            grid_points: 10_000,
            seed: 0,
        }
    }
}

/// One row of the verification table.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyRow {
    pub name: &'static str,
    pub instances: usize,
    pub max_gap: f64,
    pub tol: f64,
    pub passed: bool,
    /// Reported only, never a failure.
    pub informational: bool,
}

impl PropertyRow {
    fn gated(name: &'static str, instances: usize, max_gap: f64, tol: f64) -> Self {
        Self {
            name,
            instances,
            max_gap,
            tol,
            passed: max_gap <= tol,
            informational: false,
        }
    }
}

/// Every identity check at the configured instance counts.
pub fn run_suite(cfg: &SuiteConfig) -> (Vec<PropertyRow>, BoundCounterexamples) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let max_a = cfg.max_alphabet.max(2);

    let mut gap_direct = 0.0f64;
    let mut gap_sym = 0.0f64;
    let mut min_mi = 0.0f64;
    for _ in 0..cfg.joints {
        let (n, m) = (rng.gen_range(2..=max_a), rng.gen_range(2..=max_a));
        let j = DiscreteJoint::random(&mut rng, n, m);
        gap_direct = gap_direct.max((mutual_information(&j) - mi_anchored_at_o(&j)).abs());
        gap_sym = gap_sym.max(verify_symmetric_decomposition(&j).gap);
        min_mi = min_mi.min(mutual_information(&j));
    }
    rows.push(PropertyRow::gated("mi_direct_vs_conditional", cfg.joints, gap_direct, 1e-10));
    rows.push(PropertyRow::gated("mi_symmetric_decomposition", cfg.joints, gap_sym, 1e-10));
    rows.push(PropertyRow::gated("mi_nonnegative", cfg.joints, (-min_mi).max(0.0), 1e-12));

    let mut indep = 0.0f64;
    for _ in 0..cfg.joints.min(50) {
        let n = rng.gen_range(2..=max_a);
        let po = DiscretePair::random(&mut rng, n).p;
        let m = rng.gen_range(2..=max_a);
        let ps = DiscretePair::random(&mut rng, m).p;
        let j = DiscreteJoint::product(&po, &ps).expect("normalized marginals");
        indep = indep.max(mutual_information(&j).abs());
    }
    rows.push(PropertyRow::gated("mi_zero_for_product", cfg.joints.min(50), indep, 1e-12));

    let mut conj = 0.0f64;
    for _ in 0..cfg.conjugate_probes {
        let t = -(rng.gen_range(-4.0..4.0f64)).exp();
        let closed = fenchel_log_conjugate(t).expect("t < 0");
        conj = conj.max((closed - conjugate_grid_search(t, cfg.grid_points)).abs());
    }
    rows.push(PropertyRow::gated("fenchel_conjugate_grid", cfg.conjugate_probes, conj, 1e-6));

    let mut jsd_gap = 0.0f64;
    let mut dominance = 0.0f64;
    let mut range = 0.0f64;
    let mut grid_gap = 0.0f64;
    for _ in 0..cfg.pairs {
        let n = rng.gen_range(2..=max_a);
        let pair = DiscretePair::random(&mut rng, n);
        let sup = gan_bound_sup(&pair);
        jsd_gap = jsd_gap.max((sup.sup_value - sup.via_jsd).abs());
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-6..1.0 - 1e-6)).collect();
        let v = gan_bound_value(&pair, &t).expect("interior T");
        dominance = dominance.max(v - sup.sup_value);
        range = range
            .max(-2.0 * LN_2 - sup.sup_value)
            .max(sup.sup_value);
        grid_gap = grid_gap.max((gan_sup_grid_search(&pair, cfg.grid_points) - sup.sup_value).abs());
    }
    rows.push(PropertyRow::gated("gan_sup_equals_jsd_form", cfg.pairs, jsd_gap, 1e-10));
    rows.push(PropertyRow::gated("gan_sup_dominates_value", cfg.pairs, dominance.max(0.0), 0.0));
    rows.push(PropertyRow::gated("gan_sup_in_range", cfg.pairs, range.max(0.0), 1e-12));
    rows.push(PropertyRow::gated("gan_sup_grid", cfg.pairs, grid_gap, 1e-6));

    let ce = search_bound_counterexamples(cfg.pairs.max(100), max_a, cfg.seed ^ 0x5eed);
    rows.push(PropertyRow {
        name: "kl_upper_bound_claim",
        instances: ce.trials,
        max_gap: ce.worst_gap,
        tol: 0.0,
        passed: ce.violations_pq == 0 && ce.violations_qp == 0,
        informational: true,
    });
    (rows, ce)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mi_examples() {
        let diag = DiscreteJoint::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((mutual_information(&diag) - LN_2).abs() < 1e-15);
        let d = verify_symmetric_decomposition(&diag);
        assert!((d.lhs - LN_2).abs() < 1e-15 && (d.rhs - LN_2).abs() < 1e-15);
        let prod = DiscreteJoint::product(&[0.3, 0.7], &[0.1, 0.2, 0.7]).unwrap();
        assert!(mutual_information(&prod).abs() < 1e-15);
        assert!(verify_symmetric_decomposition(&prod).rhs.abs() < 1e-15);
    }

    #[test]
    fn joint_validation() {
        assert!(DiscreteJoint::new(2, 2, vec![0.5, 0.5, 0.5, -0.5]).is_err());
        assert!(DiscreteJoint::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).is_err());
        assert!(DiscreteJoint::new(2, 1, vec![1.0]).is_err());
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(fenchel_log_conjugate(-1.0).unwrap(), -1.0);
        assert!((fenchel_log_conjugate(-std::f64::consts::E).unwrap() + 2.0).abs() < 1e-15);
        assert!(fenchel_log_conjugate(0.0).is_err());
        assert!(fenchel_log_conjugate(2.0).is_err());
        let t = -0.37;
        assert!((conjugate_grid_search(t, 1000) - fenchel_log_conjugate(t).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn gan_bound_examples() {
        let pair = DiscretePair::new(vec![0.2, 0.8], vec![0.6, 0.4]).unwrap();
        let half = gan_bound_value(&pair, &[0.5, 0.5]).unwrap();
        assert!((half + 2.0 * LN_2).abs() < 1e-15);
        assert!(gan_bound_value(&pair, &[0.0, 0.5]).is_err());
        assert!(gan_bound_value(&pair, &[0.5, 1.0]).is_err());

        let same = DiscretePair::new(vec![0.3, 0.7], vec![0.3, 0.7]).unwrap();
        let s = gan_bound_sup(&same);
        assert!((s.sup_value + 2.0 * LN_2).abs() < 1e-15 && s.jsd.abs() < 1e-15);

        let disjoint = DiscretePair::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let s = gan_bound_sup(&disjoint);
        assert_eq!(s.sup_value, 0.0);
        assert!((s.jsd - LN_2).abs() < 1e-15);
    }

    #[test]
    fn suite_passes_by_default() {
        let cfg = SuiteConfig {
            joints: 20,
            pairs: 20,
            conjugate_probes: 20,
            grid_points: 2000,
            ..SuiteConfig::default()
        };
        let (rows, _) = run_suite(&cfg);
        for r in rows.iter().filter(|r| !r.informational) {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn bound_claim_has_counterexamples() {
        let ce = search_bound_counterexamples(200, 6, 1);
        assert!(ce.violations_pq > 0);
        assert!(ce.worst_pair.is_some());
    }
}
