//! Freedman-type inequalities for discrete random variables and their fuzzers.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::walk::rng::{run_blocks, Merge, SeedSpec};

/// `𝔣(λ) = e^{−λ} − 1 + λ`, with a series near 0 to avoid cancellation.
pub fn freedman_f(lambda: f64) -> f64 {
    if lambda.abs() < 1e-2 {
        let l2 = lambda * lambda;
        l2 * (0.5 - lambda / 6.0 + l2 / 24.0 - l2 * lambda / 120.0 + l2 * l2 / 720.0)
    } else {
        (-lambda).exp_m1() + lambda
    }
}

/// A finitely supported law on ℝ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("empty distribution".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if atoms.iter().any(|&(v, p)| !(p > 0.0) || !v.is_finite()) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!(
                "need positive probabilities summing to 1 (sum {total})"
            )));
        }
        let (values, probs) = atoms.into_iter().unzip();
        Ok(DiscreteDistribution { values, probs })
    }

    pub fn point(v: f64) -> Self {
        DiscreteDistribution {
            values: vec![v],
            probs: vec![1.0],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(v, p)| v * p).sum()
    }

    pub fn var(&self) -> f64 {
        let m = self.mean();
        self.iter().map(|(v, p)| (v - m).powi(2) * p).sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn scale(&self) -> f64 {
        1.0 + self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Margin {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// `E[exp(λX + (𝔣(λa)/a)|X|1_{|X|≥a})] − exp((𝔣(λa)/a²) E[X²1_{|X|≤a}])` for `E[X] ≥ 0`.
pub fn scalar_inequality_check(dist: &DiscreteDistribution, lambda: f64, a: f64) -> Result<Margin> {
    if !(lambda > 0.0) || !(a > 0.0) {
        return Err(Error::Precondition(format!("need λ > 0 and a > 0 (λ = {lambda}, a = {a})")));
    }
    if dist.mean() < -1e-12 * dist.scale() {
        return Err(Error::Precondition(format!("E[X] = {} < 0", dist.mean())));
    }
    let fa = freedman_f(lambda * a);
    let lhs: f64 = dist
        .iter()
        .map(|(x, p)| {
            let pen = if x.abs() >= a { fa / a * x.abs() } else { 0.0 };
            p * (lambda * x + pen).exp()
        })
        .sum();
    let trunc: f64 = dist
        .iter()
        .filter(|(x, _)| x.abs() <= a)
        .map(|(x, p)| p * x * x)
        .sum();
    let rhs = (fa / (a * a) * trunc).exp();
    Ok(Margin {
        lhs,
        rhs,
        margin: lhs - rhs,
    })
}

/// `E[e^{λX}] − e^{𝔣(λ)Var X}` for `E[X] = 0`, `X ≥ −1`, `λ ≥ 0`.
pub fn freedman_base_check(dist: &DiscreteDistribution, lambda: f64) -> Result<Margin> {
    if !(lambda >= 0.0) {
        return Err(Error::Precondition(format!("λ = {lambda} must be ≥ 0")));
    }
    if dist.mean().abs() > 1e-12 * dist.scale() {
        return Err(Error::Precondition(format!("E[X] = {} is not 0", dist.mean())));
    }
    if dist.min() < -1.0 - 1e-12 {
        return Err(Error::Precondition(format!("X takes the value {} < −1", dist.min())));
    }
    let lhs: f64 = dist.iter().map(|(x, p)| p * (lambda * x).exp()).sum();
    let rhs = (freedman_f(lambda) * dist.var()).exp();
    Ok(Margin {
        lhs,
        rhs,
        margin: lhs - rhs,
    })
}

/// Which branch of the two-point reduction a distribution exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProofCase {
    /// Centred, two points, both within `a`.
    CenteredInside,
    /// Centred, two points, not both within `a`.
    CenteredOutside,
    /// Two points `−c < 0 < d` with positive mean.
    TwoPointPositiveMean,
    /// Anything else (mixtures of two-point laws).
    General,
}

pub fn classify(dist: &DiscreteDistribution, a: f64) -> ProofCase {
    if dist.len() == 2 {
        let (lo, hi) = if dist.values[0] < dist.values[1] {
            (dist.values[0], dist.values[1])
        } else {
            (dist.values[1], dist.values[0])
        };
        if lo < 0.0 && hi > 0.0 {
            if dist.mean().abs() <= 1e-12 * dist.scale() {
                return if -lo <= a && hi <= a {
                    ProofCase::CenteredInside
                } else {
                    ProofCase::CenteredOutside
                };
            }
            return ProofCase::TwoPointPositiveMean;
        }
    }
    ProofCase::General
}

#[derive(Debug, Clone, Serialize)]
pub struct FuzzReport {
    pub cases: usize,
    pub violations: usize,
    /// Smallest `margin / (1 + |LHS|)` seen.
    pub min_relative_margin: f64,
    pub worst: Option<String>,
    /// Counts per proof case, in [`ProofCase`] order.
    pub case_counts: [usize; 4],
}

impl Merge for FuzzReport {
    fn merge(&mut self, other: Self) {
        self.cases += other.cases;
        self.violations += other.violations;
        if other.min_relative_margin < self.min_relative_margin {
            self.min_relative_margin = other.min_relative_margin;
            self.worst = other.worst;
        }
        for (a, b) in self.case_counts.iter_mut().zip(other.case_counts) {
            *a += b;
        }
    }
}

impl FuzzReport {
    fn empty() -> Self {
        FuzzReport {
            cases: 0,
            violations: 0,
            min_relative_margin: f64::INFINITY,
            worst: None,
            case_counts: [0; 4],
        }
    }

    fn record(&mut self, m: &Margin, tol: f64, case: ProofCase, describe: impl FnOnce() -> String) {
        self.cases += 1;
        self.case_counts[case as usize] += 1;
        let rel = m.margin / (1.0 + m.lhs.abs());
        if rel < -tol {
            self.violations += 1;
        }
        if rel < self.min_relative_margin {
            self.min_relative_margin = rel;
            self.worst = Some(describe());
        }
    }
}

/// Flat Dirichlet weights from normalized exponentials.
fn dirichlet<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// A fuzz case for the scalar inequality: centred two-point laws, two-point
/// laws with positive mean, and 2–5 atom laws on `[−10, 10]` with `E[X] ≥ 0`.
pub fn random_scalar_case<R: Rng>(rng: &mut R) -> (DiscreteDistribution, f64, f64) {
    let a = 10f64.powf(rng.random_range(-1.0..1.0));
    let lambda = rng.random_range(0.0..3.0) / a;
    let lambda = if lambda > 0.0 { lambda } else { 1e-3 / a };
    let dist = match rng.random_range(0..4) {
        0 => {
            // c, d on either side of a so both centred cases appear.
            let c = rng.random_range(0.01..2.0) * a;
            let d = rng.random_range(0.01..2.0) * a;
            DiscreteDistribution::new(vec![(-c, d / (c + d)), (d, c / (c + d))])
        }
        1 => loop {
            let c = rng.random_range(0.01..10.0);
            let d = rng.random_range(0.01..10.0);
            // Mean ≥ 0 needs P(−c) ≤ d/(c+d).
            let p = rng.random_range(0.0..1.0) * d / (c + d);
            if p > 0.0 {
                break DiscreteDistribution::new(vec![(-c, p), (d, 1.0 - p)]);
            }
        },
        _ => loop {
            let k = rng.random_range(2..=5);
            let w = dirichlet(rng, k);
            let atoms: Vec<(f64, f64)> = w
                .into_iter()
                .map(|p| (rng.random_range(-10.0..10.0), p))
                .collect();
            let mean: f64 = atoms.iter().map(|(v, p)| v * p).sum();
            if mean >= 0.0 {
                break DiscreteDistribution::new(atoms);
            }
        },
    };
    (dist.expect("fuzz distributions are valid"), lambda, a)
}

/// A centred law with support in `[−1, ∞)`: half the cases two-point, the rest 3–5 atoms.
pub fn random_base_case<R: Rng>(rng: &mut R) -> (DiscreteDistribution, f64) {
    let lambda = rng.random_range(0.0..3.0);
    let lambda = if lambda > 0.0 { lambda } else { 1e-3 };
    if rng.random::<bool>() {
        let c = rng.random_range(0.01..=1.0);
        let d = rng.random_range(0.01..10.0);
        let dist = DiscreteDistribution::new(vec![(-c, d / (c + d)), (d, c / (c + d))]);
        return (dist.expect("valid two-point law"), lambda);
    }
    let k = rng.random_range(3..=5);
    let neg = rng.random_range(1..k);
    let mut atoms: Vec<(f64, f64)> = dirichlet(rng, k)
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let v = if i < neg {
                -rng.random_range(0.01..=1.0)
            } else {
                rng.random_range(0.01..10.0)
            };
            (v, p)
        })
        .collect();
    // Rescale the positive weights so the mean is exactly balanced.
    let n: f64 = atoms[..neg].iter().map(|(v, p)| v * p).sum();
    let pos: f64 = atoms[neg..].iter().map(|(v, p)| v * p).sum();
    let t = -n / pos;
    for at in &mut atoms[neg..] {
        at.1 *= t;
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for at in &mut atoms {
        at.1 /= total;
    }
    (DiscreteDistribution::new(atoms).expect("valid centred law"), lambda)
}

/// Runs `cases` scalar-inequality cases with per-case streams; violation when
/// `margin < −tol·(1 + |LHS|)`.
pub fn fuzz_scalar_inequality(cases: usize, seed: u64, workers: usize, tol: f64) -> FuzzReport {
    let master = SeedSpec::derive(seed, "fuzz-scalar-inequality");
    run_blocks(cases, workers, |range| {
        let mut rep = FuzzReport::empty();
        for i in range {
            let mut rng = SeedSpec::new(master, i).rng();
            let (dist, lambda, a) = random_scalar_case(&mut rng);
            let m = scalar_inequality_check(&dist, lambda, a).expect("fuzz cases meet preconditions");
            let case = classify(&dist, a);
            rep.record(&m, tol, case, || format!("{dist:?} λ={lambda} a={a} -> {m:?}"));
        }
        rep
    })
}

pub fn fuzz_freedman_base(cases: usize, seed: u64, workers: usize, tol: f64) -> FuzzReport {
    let master = SeedSpec::derive(seed, "fuzz-freedman-base");
    run_blocks(cases, workers, |range| {
        let mut rep = FuzzReport::empty();
        for i in range {
            let mut rng = SeedSpec::new(master, i).rng();
            let (dist, lambda) = random_base_case(&mut rng);
            let m = freedman_base_check(&dist, lambda).expect("fuzz cases meet preconditions");
            rep.record(&m, tol, ProofCase::General, || {
                format!("{dist:?} λ={lambda} -> {m:?}")
            });
        }
        rep
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freedman_f_values() {
        assert_eq!(freedman_f(0.0), 0.0);
        assert!((freedman_f(1.0) - (-1f64).exp()).abs() < 1e-15);
        let v = freedman_f(0.01);
        assert!((v - 4.983_374_916_805_357e-5).abs() < 1e-18);
        assert!((v / 5e-5 - 1.0).abs() < 0.01);
        // Series and closed form agree across the switch.
        let x: f64 = 0.0099999;
        let closed = (-x).exp_m1() + x;
        assert!((freedman_f(x) - closed).abs() < 1e-16);
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let l = i as f64 * 0.05;
            let r = freedman_f(l) / (l * l);
            assert!(freedman_f(l) >= 0.0 && r < prev);
            prev = r;
        }
    }

    #[test]
    fn scalar_inequality_examples() {
        let zero = DiscreteDistribution::point(0.0);
        assert_eq!(scalar_inequality_check(&zero, 1.0, 1.0).unwrap().margin, 0.0);
        let pm = DiscreteDistribution::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let m = scalar_inequality_check(&pm, 1.0, 1.0).unwrap();
        let e1 = (-1f64).exp().exp();
        assert!((m.lhs - e1 * 1f64.cosh()).abs() < 1e-12);
        assert!((m.rhs - e1).abs() < 1e-12);
        // e^{1/e}(cosh 1 − 1) = 0.78460, which rounds to the commonly quoted 0.784.
        assert!((m.margin - e1 * (1f64.cosh() - 1.0)).abs() < 1e-12);
        assert!((m.margin - 0.784).abs() < 1e-3);
        let neg = DiscreteDistribution::new(vec![(-1.0, 0.6), (1.0, 0.4)]).unwrap();
        assert!(matches!(
            scalar_inequality_check(&neg, 1.0, 1.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn freedman_base_examples() {
        assert_eq!(freedman_base_check(&DiscreteDistribution::point(0.0), 1.0).unwrap().margin, 0.0);
        let pm = DiscreteDistribution::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let m = freedman_base_check(&pm, 1.0).unwrap();
        assert!((m.margin - (1f64.cosh() - (-1f64).exp().exp())).abs() < 1e-15);
        assert!((m.margin - 0.0984).abs() < 1e-4);
        let low = DiscreteDistribution::new(vec![(-2.0, 0.5), (2.0, 0.5)]).unwrap();
        assert!(freedman_base_check(&low, 1.0).is_err());
    }

    #[test]
    fn classification() {
        let inside = DiscreteDistribution::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(classify(&inside, 2.0), ProofCase::CenteredInside);
        assert_eq!(classify(&inside, 0.5), ProofCase::CenteredOutside);
        let pos = DiscreteDistribution::new(vec![(-1.0, 0.4), (1.0, 0.6)]).unwrap();
        assert_eq!(classify(&pos, 1.0), ProofCase::TwoPointPositiveMean);
        let three = DiscreteDistribution::new(vec![(-1.0, 0.2), (0.0, 0.5), (1.0, 0.3)]).unwrap();
        assert_eq!(classify(&three, 1.0), ProofCase::General);
    }

    #[test]
    fn small_fuzz_runs_clean() {
        let r = fuzz_scalar_inequality(4000, 3, 1, 1e-9);
        assert_eq!(r.violations, 0, "{:?}", r.worst);
        assert!(r.case_counts.iter().all(|&c| c > 0), "{:?}", r.case_counts);
        let b = fuzz_freedman_base(4000, 3, 1, 1e-9);
        assert_eq!(b.violations, 0, "{:?}", b.worst);
    }
}
