//! Drift, CLT variance and Laplace-transform estimates, exact or Monte Carlo.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::BoundaryTarget;
use crate::stats::{EstimateWithCI, LogMeanExp, Method};
use crate::walk::measure::StepMeasure;
use crate::walk::oracle::build_length_chain;
use crate::walk::path::Walker;
use crate::walk::rng::{run_blocks, Merge, SeedSpec};

/// Effective sample size below which a Monte Carlo cell is flagged.
pub const MIN_ESS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McBudget {
    pub paths: usize,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// The birth–death length chain; generator-uniform free measures only.
    ExactDp,
    MonteCarlo(McBudget),
}

/// `κ_n` (or `σ(L_n, x)` for a target) at each requested `n`, one row per path.
#[derive(Default)]
struct Samples(Vec<Vec<f64>>);

impl Merge for Samples {
    fn merge(&mut self, o: Self) {
        self.0.extend(o.0);
    }
}

fn sample_values(
    measure: &StepMeasure,
    ns: &[usize],
    target: Option<&BoundaryTarget>,
    mc: McBudget,
    purpose: &str,
) -> Result<Vec<Vec<f64>>> {
    let targets: Vec<BoundaryTarget> = target.into_iter().cloned().collect();
    Walker::new(measure, &targets)?;
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let master = SeedSpec::derive(mc.seed, purpose);
    let out: Samples = run_blocks(mc.paths, mc.workers, |range| {
        let mut walker = Walker::new(measure, &targets).expect("checked above");
        let mut rows = Vec::with_capacity(range.end.saturating_sub(range.start) as usize);
        for i in range {
            let mut rng = SeedSpec::new(master, i).rng();
            walker.reset();
            let mut row = vec![f64::NAN; ns.len()];
            let record = |walker: &Walker, step: usize, row: &mut Vec<f64>| {
                for (slot, &n) in ns.iter().enumerate() {
                    if n == step {
                        row[slot] = if targets.is_empty() {
                            walker.kappa()
                        } else {
                            walker.sigma(0).unwrap_or(f64::NAN)
                        };
                    }
                }
            };
            record(&walker, 0, &mut row);
            for step in 1..=n_max {
                walker.step(&mut rng);
                record(&walker, step, &mut row);
            }
            rows.push(row);
        }
        Samples(rows)
    });
    Ok(out.0)
}

fn mean_var(xs: impl Iterator<Item = f64>) -> (f64, f64, f64, usize) {
    let v: Vec<f64> = xs.filter(|x| x.is_finite()).collect();
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
    (mean, m2 * n as f64 / (n as f64 - 1.0).max(1.0), m4, n)
}

/// `E[κ_n]/n`.
pub fn estimate_drift(measure: &StepMeasure, n: usize, backend: Backend) -> Result<EstimateWithCI> {
    if n == 0 {
        return Err(Error::Precondition("n must be ≥ 1".into()));
    }
    match backend {
        Backend::ExactDp => {
            let chain = build_length_chain(measure, n)?;
            let (mean, _) = chain.moments_ladder(&[n])?[0];
            Ok(EstimateWithCI::exact(mean / n as f64))
        }
        Backend::MonteCarlo(mc) => {
            let rows = sample_values(measure, &[n], None, mc, "drift-estimate")?;
            let (mean, var, _, count) = mean_var(rows.iter().map(|r| r[0] / n as f64));
            Ok(EstimateWithCI::monte_carlo(mean, (var / count as f64).sqrt(), count as u64))
        }
    }
}

/// `Var(κ_n)/n`; the Monte Carlo standard error uses the fourth central moment.
pub fn estimate_clt_variance(measure: &StepMeasure, n: usize, backend: Backend) -> Result<EstimateWithCI> {
    if n == 0 {
        return Err(Error::Precondition("n must be ≥ 1".into()));
    }
    match backend {
        Backend::ExactDp => {
            let chain = build_length_chain(measure, n)?;
            let (_, var) = chain.moments_ladder(&[n])?[0];
            Ok(EstimateWithCI::exact(var / n as f64))
        }
        Backend::MonteCarlo(mc) => {
            let rows = sample_values(measure, &[n], None, mc, "clt-variance")?;
            let (_, var, m4, count) = mean_var(rows.iter().map(|r| r[0]));
            let se_var = ((m4 - var * var).max(0.0) / count as f64).sqrt();
            Ok(EstimateWithCI::monte_carlo(var / n as f64, se_var / n as f64, count as u64))
        }
    }
}

/// One `(λ, n)` cell of a Laplace curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceCell {
    pub lambda: f64,
    pub n: usize,
    /// `(1/n) log E[e^{λ·value_n}]`.
    pub value: f64,
    pub se: f64,
    pub ess: f64,
    pub low_confidence: bool,
    /// For `λ ≥ 0` on the displacement, the same value read as an upper bound for `Λ(λ)`.
    pub fekete_upper: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceCurve {
    pub lambdas: Vec<f64>,
    pub ns: Vec<usize>,
    /// Row-major over `lambdas`, then `ns`.
    pub cells: Vec<LaplaceCell>,
    pub method: Method,
    /// `"basepoint"` or the target's text form.
    pub target: String,
    /// Drift used for centring in downstream fits.
    pub drift: f64,
    /// `E[value_n]/n` per horizon.
    pub means: Vec<f64>,
    /// `(λ, n)` pairs whose discrete second difference is negative beyond the CI slack.
    pub convexity_violations: Vec<(f64, usize)>,
    /// `(λ, n)` cells with `Λ̂_n(λ) < λ·means[n]` beyond the CI slack.
    pub jensen_violations: Vec<(f64, usize)>,
}

impl LaplaceCurve {
    pub fn cell(&self, li: usize, ni: usize) -> &LaplaceCell {
        &self.cells[li * self.ns.len() + ni]
    }

    /// `Λ̂_n` over the λ grid for the `ni`-th horizon.
    pub fn row(&self, ni: usize) -> Vec<f64> {
        (0..self.lambdas.len()).map(|li| self.cell(li, ni).value).collect()
    }

    pub fn row_se(&self, ni: usize) -> Vec<f64> {
        (0..self.lambdas.len()).map(|li| self.cell(li, ni).se).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "n", "value", "se", "ess", "low_confidence", "fekete_upper"])
            .map_err(crate::martingale::trace::csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.lambda.to_string(),
                c.n.to_string(),
                c.value.to_string(),
                c.se.to_string(),
                c.ess.to_string(),
                c.low_confidence.to_string(),
                c.fekete_upper.map(|f| f.to_string()).unwrap_or_default(),
            ])
            .map_err(crate::martingale::trace::csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

fn check_grid(lambdas: &[f64], ns: &[usize], lambda_max: f64) -> Result<()> {
    if lambdas.is_empty() || ns.is_empty() {
        return Err(Error::Precondition("λ grid and n ladder must be nonempty".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.abs() <= lambda_max)) {
        return Err(Error::Precondition(format!("|λ| = {} exceeds the configured max {lambda_max}", l.abs())));
    }
    if ns.contains(&0) {
        return Err(Error::Precondition("n ladder entries must be ≥ 1".into()));
    }
    Ok(())
}

/// `Λ̂_n(λ) = (1/n) log E[e^{λκ_n}]` (or with `σ(L_n, x)` for a target) over a grid.
pub fn estimate_laplace(
    measure: &StepMeasure,
    lambdas: &[f64],
    ns: &[usize],
    lambda_max: f64,
    backend: Backend,
    target: Option<&BoundaryTarget>,
) -> Result<LaplaceCurve> {
    check_grid(lambdas, ns, lambda_max)?;
    let mut cells = Vec::with_capacity(lambdas.len() * ns.len());
    let (method, drift, means) = match backend {
        Backend::ExactDp => {
            if target.is_some() {
                return Err(Error::UnsupportedMeasure(
                    "exact Laplace curves are available for the displacement only".into(),
                ));
            }
            let n_max = *ns.iter().max().unwrap();
            let chain = build_length_chain(measure, n_max)?;
            for &l in lambdas {
                let logs = if l == 0.0 { vec![0.0; ns.len()] } else { chain.log_mgf_ladder(ns, l)? };
                for (&n, lg) in ns.iter().zip(logs) {
                    let value = lg / n as f64;
                    cells.push(LaplaceCell {
                        lambda: l,
                        n,
                        value,
                        se: 0.0,
                        ess: f64::INFINITY,
                        low_confidence: false,
                        fekete_upper: (l >= 0.0).then_some(value),
                    });
                }
            }
            let means: Vec<f64> = chain
                .moments_ladder(ns)?
                .iter()
                .zip(ns)
                .map(|(m, &n)| m.0 / n as f64)
                .collect();
            (Method::ExactDp, *means.last().unwrap(), means)
        }
        Backend::MonteCarlo(mc) => {
            let rows = sample_values(measure, ns, target, mc, "laplace")?;
            for &l in lambdas {
                for (ni, &n) in ns.iter().enumerate() {
                    if l == 0.0 {
                        cells.push(LaplaceCell {
                            lambda: l,
                            n,
                            value: 0.0,
                            se: 0.0,
                            ess: rows.len() as f64,
                            low_confidence: false,
                            fekete_upper: target.is_none().then_some(0.0),
                        });
                        continue;
                    }
                    let mut acc = LogMeanExp::default();
                    for r in &rows {
                        if r[ni].is_finite() {
                            acc.push(l * r[ni]);
                        }
                    }
                    let value = acc.log_mean() / n as f64;
                    let ess = acc.ess();
                    cells.push(LaplaceCell {
                        lambda: l,
                        n,
                        value,
                        se: acc.se() / n as f64,
                        ess,
                        low_confidence: ess < MIN_ESS,
                        fekete_upper: (l >= 0.0 && target.is_none()).then_some(value),
                    });
                }
            }
            let means: Vec<f64> = ns
                .iter()
                .enumerate()
                .map(|(ni, &n)| mean_var(rows.iter().map(|r| r[ni] / n as f64)).0)
                .collect();
            (Method::MonteCarlo, *means.last().unwrap(), means)
        }
    };
    let mut curve = LaplaceCurve {
        lambdas: lambdas.to_vec(),
        ns: ns.to_vec(),
        cells,
        method,
        target: target.map_or("basepoint".to_string(), |t| t.to_string()),
        drift,
        means,
        convexity_violations: Vec::new(),
        jensen_violations: Vec::new(),
    };
    curve.convexity_violations = convexity_violations(&curve);
    curve.jensen_violations = jensen_violations(&curve);
    Ok(curve)
}

fn convexity_violations(curve: &LaplaceCurve) -> Vec<(f64, usize)> {
    let mut order: Vec<usize> = (0..curve.lambdas.len()).collect();
    order.sort_by(|&a, &b| curve.lambdas[a].total_cmp(&curve.lambdas[b]));
    let mut out = Vec::new();
    for (ni, &n) in curve.ns.iter().enumerate() {
        for w in order.windows(3) {
            let (a, b, c) = (curve.cell(w[0], ni), curve.cell(w[1], ni), curve.cell(w[2], ni));
            let (h1, h2) = (b.lambda - a.lambda, c.lambda - b.lambda);
            let d2 = (c.value - b.value) / h2 - (b.value - a.value) / h1;
            let slack = 3.0 * (a.se / h1 + b.se * (1.0 / h1 + 1.0 / h2) + c.se / h2) + 1e-12;
            if d2 < -slack {
                out.push((b.lambda, n));
            }
        }
    }
    out
}

fn jensen_violations(curve: &LaplaceCurve) -> Vec<(f64, usize)> {
    let mut out = Vec::new();
    for (li, &l) in curve.lambdas.iter().enumerate() {
        for (ni, &n) in curve.ns.iter().enumerate() {
            let c = curve.cell(li, ni);
            if c.value < l * curve.means[ni] - 3.0 * c.se - 1e-12 * (1.0 + c.value.abs()) {
                out.push((l, n));
            }
        }
    }
    out
}

/// `(1/n) log E[e^{λκ_n}]` read as an upper bound for `Λ(λ)`, `λ ≥ 0`.
pub fn fekete_upper_bound(measure: &StepMeasure, lambda: f64, n: usize, backend: Backend) -> Result<EstimateWithCI> {
    if lambda < 0.0 {
        return Err(Error::Precondition(
            "subadditivity bounds Λ(λ) from above only for λ ≥ 0".into(),
        ));
    }
    let curve = estimate_laplace(measure, &[lambda], &[n], f64::INFINITY, backend, None)?;
    let c = curve.cell(0, 0);
    Ok(match backend {
        Backend::ExactDp => EstimateWithCI::exact(c.value),
        Backend::MonteCarlo(mc) => EstimateWithCI::monte_carlo(c.value, c.se, mc.paths as u64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GroupElement, Model};

    fn uniform() -> StepMeasure {
        StepMeasure::uniform_free(Model::free(2)).unwrap()
    }

    #[test]
    fn exact_drift_and_variance() {
        let d = estimate_drift(&uniform(), 2000, Backend::ExactDp).unwrap();
        assert!((d.estimate - 0.5).abs() < 1e-3 && d.se == 0.0);
        let v = estimate_clt_variance(&uniform(), 2000, Backend::ExactDp).unwrap();
        assert!((v.estimate - 0.75).abs() < 0.01);
        let model = Model::free(2);
        let dirac = StepMeasure::dirac(model, GroupElement::identity(&model)).unwrap();
        let mc = Backend::MonteCarlo(McBudget { paths: 100, seed: 1, workers: 1 });
        assert_eq!(estimate_drift(&dirac, 10, mc).unwrap().estimate, 0.0);
        assert_eq!(estimate_clt_variance(&dirac, 10, mc).unwrap().estimate, 0.0);
    }

    #[test]
    fn exact_laplace_matches_increment_law() {
        let c = estimate_laplace(&uniform(), &[0.0, 0.1], &[4000], 0.25, Backend::ExactDp, None).unwrap();
        assert_eq!(c.cell(0, 0).value, 0.0);
        let closed = (0.75 * 0.1f64.exp() + 0.25 * (-0.1f64).exp()).ln();
        assert!((c.cell(1, 0).value - closed).abs() < 1e-3);
        assert!(estimate_laplace(&uniform(), &[0.3], &[10], 0.25, Backend::ExactDp, None).is_err());
    }

    #[test]
    fn fekete_ladder_is_monotone() {
        let ns = [125, 250, 500, 1000, 2000];
        let c = estimate_laplace(&uniform(), &[0.05, 0.2], &ns, 0.25, Backend::ExactDp, None).unwrap();
        for li in 0..2 {
            for w in ns.windows(2).enumerate() {
                let (a, b) = (c.cell(li, w.0).value, c.cell(li, w.0 + 1).value);
                assert!(a - b >= -1e-12);
            }
        }
        assert!(fekete_upper_bound(&uniform(), -0.1, 10, Backend::ExactDp).is_err());
    }

    #[test]
    fn monte_carlo_matches_exact_small() {
        let mc = Backend::MonteCarlo(McBudget { paths: 4000, seed: 11, workers: 1 });
        let ex = estimate_laplace(&uniform(), &[-0.1, 0.1], &[20], 0.25, Backend::ExactDp, None).unwrap();
        let m = estimate_laplace(&uniform(), &[-0.1, 0.1], &[20], 0.25, mc, None).unwrap();
        for li in 0..2 {
            let (e, c) = (ex.cell(li, 0), m.cell(li, 0));
            assert!((e.value - c.value).abs() <= 4.0 * c.se, "{e:?} {c:?}");
        }
        assert!(m.convexity_violations.is_empty());
        assert!(ex.jensen_violations.is_empty() && m.jensen_violations.is_empty());
    }
}
