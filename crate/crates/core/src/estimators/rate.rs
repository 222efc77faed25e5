//! Discrete Legendre transform and second-order fits at the drift.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::laplace::LaplaceCurve;

/// Slack added to the CI allowance when judging convexity repairs.
pub const REPAIR_ABS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct RateCurve {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    /// `true` where the supremum sits at a grid endpoint, so the value is only a lower bound.
    pub at_edge: Vec<bool>,
    /// Per λ point: whether convexity repair moved `Λ̂` there.
    pub repaired: Vec<bool>,
    pub lambdas: Vec<f64>,
    /// The repaired `Λ̂` used for the conjugate.
    pub laplace: Vec<f64>,
    pub max_repair: f64,
}

impl RateCurve {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = crate::martingale::trace::csv_err;
        w.write_record(["x", "rate", "at_edge"]).map_err(err)?;
        for i in 0..self.xs.len() {
            w.write_record([self.xs[i].to_string(), self.values[i].to_string(), self.at_edge[i].to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

/// Pool-adjacent-violators: the weighted nondecreasing fit to `ys`.
pub fn isotonic(ys: &[f64], ws: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&y, &w) in ys.iter().zip(ws) {
        blocks.push((y, w, 1));
        while blocks.len() > 1 {
            let (y2, w2, c2) = blocks[blocks.len() - 1];
            let (y1, w1, c1) = blocks[blocks.len() - 2];
            if y1 <= y2 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((y1 * w1 + y2 * w2) / (w1 + w2), w1 + w2, c1 + c2);
        }
    }
    blocks.into_iter().flat_map(|(y, _, c)| std::iter::repeat_n(y, c)).collect()
}

/// `I(x) = sup_λ (λx − Λ̂(λ))` over the grid, after isotonic repair of the slopes of `Λ̂`.
///
/// `ses` are per-point standard errors; a repair larger than three of them
/// (plus [`REPAIR_ABS_TOL`]) is rejected.
pub fn legendre_transform_values(lambdas: &[f64], values: &[f64], ses: &[f64], xs: &[f64]) -> Result<RateCurve> {
    if lambdas.len() < 5 || lambdas.len() != values.len() || ses.len() != values.len() {
        return Err(Error::Precondition("Legendre transform needs ≥ 5 matched grid points".into()));
    }
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]));
    let lam: Vec<f64> = order.iter().map(|&i| lambdas[i]).collect();
    let val: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let se: Vec<f64> = order.iter().map(|&i| ses[i]).collect();
    if lam.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("λ grid has repeated points".into()));
    }
    let zero = lam
        .iter()
        .position(|&l| l == 0.0)
        .ok_or_else(|| Error::Precondition("λ grid must contain 0".into()))?;
    if zero == 0 || zero == lam.len() - 1 {
        return Err(Error::Precondition("λ grid must span 0".into()));
    }
    let h: Vec<f64> = lam.windows(2).map(|w| w[1] - w[0]).collect();
    let slopes: Vec<f64> = (0..h.len()).map(|i| (val[i + 1] - val[i]) / h[i]).collect();
    let fixed = isotonic(&slopes, &h);
    // Rebuild from Λ̂(0) = 0 outwards.
    let mut rep = vec![0.0; lam.len()];
    for i in zero + 1..lam.len() {
        rep[i] = rep[i - 1] + fixed[i - 1] * h[i - 1];
    }
    for i in (0..zero).rev() {
        rep[i] = rep[i + 1] - fixed[i] * h[i];
    }
    let mut max_repair: f64 = 0.0;
    let mut repaired = vec![false; lam.len()];
    for i in 0..lam.len() {
        let d = (rep[i] - val[i]).abs();
        let allowed = 3.0 * se.iter().cloned().fold(0.0, f64::max) + REPAIR_ABS_TOL * (1.0 + val[i].abs());
        if d > allowed {
            return Err(Error::InvariantViolation(format!(
                "Λ̂ is non-convex beyond CI slack at λ = {} (repair {d:.3e} > {allowed:.3e})",
                lam[i]
            )));
        }
        repaired[i] = d > 1e-15 * (1.0 + val[i].abs());
        max_repair = max_repair.max(d);
    }
    let mut values_out = Vec::with_capacity(xs.len());
    let mut at_edge = Vec::with_capacity(xs.len());
    for &x in xs {
        let (best, arg) = lam
            .iter()
            .zip(&rep)
            .enumerate()
            .map(|(i, (&l, &v))| (l * x - v, i))
            .fold((f64::NEG_INFINITY, 0), |acc, (v, i)| if v > acc.0 { (v, i) } else { acc });
        values_out.push(best.max(0.0));
        at_edge.push(arg == 0 || arg == lam.len() - 1);
    }
    Ok(RateCurve {
        xs: xs.to_vec(),
        values: values_out,
        at_edge,
        repaired,
        lambdas: lam,
        laplace: rep,
        max_repair,
    })
}

/// Legendre transform of the `ni`-th horizon of a Laplace curve.
pub fn legendre_transform(curve: &LaplaceCurve, ni: usize, xs: &[f64]) -> Result<RateCurve> {
    legendre_transform_values(&curve.lambdas, &curve.row(ni), &curve.row_se(ni), xs)
}

/// `ℓ + k·step` for `k = −m..=m`.
pub fn x_grid(center: f64, half_width: f64, step: f64) -> Vec<f64> {
    let m = (half_width / step).round() as i64;
    (-m..=m).map(|k| center + k as f64 * step).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureFit {
    pub c: f64,
    pub se: f64,
    /// Weighted RMS of the quadratic-fit residuals.
    pub residual: f64,
    pub window: f64,
    pub ns: Vec<usize>,
    /// The fit repeated on half the window.
    pub c_half_window: Option<f64>,
    /// The fit on the largest `n` alone, without extrapolation.
    pub c_largest_n: Option<f64>,
    /// Largest `|b|` in the per-λ `a + b/n` fits.
    pub max_richardson_slope: f64,
    pub points: usize,
    pub inconclusive: bool,
    pub reason: Option<String>,
}

/// Weighted least squares `y ≈ a + b·t`; returns `(a, b)`.
fn linear_fit(t: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let tm = t.iter().zip(w).map(|(t, w)| t * w).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let stt: f64 = t.iter().zip(w).map(|(t, w)| w * (t - tm).powi(2)).sum();
    if stt == 0.0 {
        return (ym, 0.0);
    }
    let sty: f64 = t.iter().zip(y).zip(w).map(|((t, y), w)| w * (t - tm) * (y - ym)).sum();
    let b = sty / stt;
    (ym - b * tm, b)
}

/// Through-origin fit `y ≈ c·u²` on points with `0 < |u| ≤ window`.
fn quadratic_fit(us: &[f64], ys: &[f64], ses: &[f64], window: f64) -> Option<(f64, f64, f64, usize, usize, usize)> {
    let mut num = 0.0;
    let mut den = 0.0;
    let (mut neg, mut pos) = (0, 0);
    let pts: Vec<usize> = (0..us.len()).filter(|&i| us[i] != 0.0 && us[i].abs() <= window + 1e-12).collect();
    let exact = pts.iter().all(|&i| ses[i] == 0.0);
    let w = |i: usize| if exact { 1.0 } else { 1.0 / ses[i].max(1e-300).powi(2) };
    for &i in &pts {
        let u2 = us[i] * us[i];
        num += w(i) * u2 * ys[i];
        den += w(i) * u2 * u2;
        if us[i] < 0.0 {
            neg += 1;
        } else {
            pos += 1;
        }
    }
    if den == 0.0 {
        return None;
    }
    let c = num / den;
    let sw: f64 = pts.iter().map(|&i| w(i)).sum();
    let rss: f64 = pts.iter().map(|&i| w(i) * (ys[i] - c * us[i].powi(2)).powi(2)).sum();
    let se = if exact {
        let dof = pts.len().saturating_sub(1).max(1) as f64;
        (rss / dof / den).sqrt()
    } else {
        (1.0 / den).sqrt()
    };
    Some((c, se, (rss / sw).sqrt(), pts.len(), neg, pos))
}

fn finish_fit(
    us: &[f64],
    ys: &[f64],
    ses: &[f64],
    window: f64,
    ns: Vec<usize>,
    c_largest_n: Option<f64>,
    max_richardson_slope: f64,
) -> CurvatureFit {
    let full = quadratic_fit(us, ys, ses, window);
    let half = quadratic_fit(us, ys, ses, window / 2.0);
    let mut fit = CurvatureFit {
        c: f64::NAN,
        se: f64::NAN,
        residual: f64::NAN,
        window,
        ns,
        c_half_window: half.map(|h| h.0),
        c_largest_n,
        max_richardson_slope,
        points: 0,
        inconclusive: true,
        reason: None,
    };
    let Some((c, se, residual, points, neg, pos)) = full else {
        fit.reason = Some("no grid points inside the window".into());
        return fit;
    };
    fit.c = c;
    fit.se = se;
    fit.residual = residual;
    fit.points = points;
    fit.reason = if neg < 3 || pos < 3 {
        Some(format!("window holds {neg} negative and {pos} positive points; need ≥ 3 each"))
    } else if !(c.is_finite() && c > 1e-9) {
        Some("degenerate curvature (σ² ≈ 0)".into())
    } else if se > 0.25 * c {
        Some(format!("standard error {se:.3e} exceeds a quarter of c"))
    } else {
        None
    };
    fit.inconclusive = fit.reason.is_some();
    fit
}

/// `c` in `Λ(λ) − λℓ ≈ cλ²`, after extrapolating `Λ̂_n = a + b/n` per λ across the ladder.
pub fn curvature_at_drift(curve: &LaplaceCurve, ell: f64, window: f64) -> CurvatureFit {
    let nn = curve.ns.len();
    let mut ys = Vec::with_capacity(curve.lambdas.len());
    let mut ses = Vec::with_capacity(curve.lambdas.len());
    let mut ys_last = Vec::with_capacity(curve.lambdas.len());
    let mut max_slope: f64 = 0.0;
    for (li, &l) in curve.lambdas.iter().enumerate() {
        let cells: Vec<_> = (0..nn).map(|ni| curve.cell(li, ni)).collect();
        let t: Vec<f64> = cells.iter().map(|c| 1.0 / c.n as f64).collect();
        let y: Vec<f64> = cells.iter().map(|c| c.value).collect();
        let exact = cells.iter().all(|c| c.se == 0.0);
        let w: Vec<f64> = cells.iter().map(|c| if exact { 1.0 } else { 1.0 / c.se.max(1e-300).powi(2) }).collect();
        let (a, b) = if nn >= 2 { linear_fit(&t, &y, &w) } else { (y[0], 0.0) };
        max_slope = max_slope.max(b.abs());
        // Extrapolation to 1/n = 0 inflates the largest-n SE by the lever arm.
        let lever = if nn >= 2 {
            let tmin = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let tmax = t.iter().cloned().fold(0.0, f64::max);
            tmax / (tmax - tmin).max(1e-300)
        } else {
            1.0
        };
        let se_last = cells.iter().max_by_key(|c| c.n).unwrap().se;
        ys.push(a - l * ell);
        ses.push(se_last * lever);
        ys_last.push(cells.iter().max_by_key(|c| c.n).unwrap().value - l * ell);
    }
    let last = quadratic_fit(&curve.lambdas, &ys_last, &ses, window).map(|f| f.0);
    finish_fit(&curve.lambdas, &ys, &ses, window, curve.ns.clone(), last, max_slope)
}

/// `I(ℓ + u) ≈ c·u²`, skipping grid points where the supremum hit the λ-grid edge.
pub fn rate_curvature(rate: &RateCurve, ell: f64, window: f64) -> CurvatureFit {
    let mut us = Vec::new();
    let mut ys = Vec::new();
    for i in 0..rate.xs.len() {
        if !rate.at_edge[i] {
            us.push(rate.xs[i] - ell);
            ys.push(rate.values[i]);
        }
    }
    let ses = vec![0.0; us.len()];
    let mut fit = finish_fit(&us, &ys, &ses, window, Vec::new(), None, 0.0);
    if fit.points == 0 {
        fit.reason = Some("every rate value sits at the λ-grid edge (σ² ≈ 0)".into());
    }
    fit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::laplace::{estimate_laplace, Backend};
    use crate::geometry::Model;
    use crate::martingale::checks::symmetric_grid;
    use crate::walk::measure::StepMeasure;

    #[test]
    fn isotonic_pools_violators() {
        assert_eq!(isotonic(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic(&[3.0, 2.0, 1.0], &[1.0, 1.0, 2.0]), vec![1.75; 3]);
    }

    #[test]
    fn quadratic_is_self_dual() {
        let lam = symmetric_grid(3.0, 0.01);
        let v: Vec<f64> = lam.iter().map(|l| l * l / 2.0).collect();
        let xs = x_grid(0.0, 2.0, 0.1);
        let r = legendre_transform_values(&lam, &v, &vec![0.0; lam.len()], &xs).unwrap();
        for (x, i) in xs.iter().zip(&r.values) {
            assert!((i - x * x / 2.0).abs() <= 0.01 * 0.01, "{x} {i}");
        }
        assert!(r.repaired.iter().all(|r| !r));
        let fit = rate_curvature(&r, 0.0, 1.0);
        assert!((fit.c - 0.5).abs() < 1e-3 && !fit.inconclusive);
    }

    #[test]
    fn linear_laplace_gives_edge_values() {
        let lam = symmetric_grid(0.5, 0.1);
        let v: Vec<f64> = lam.iter().map(|l| 0.5 * l).collect();
        let r = legendre_transform_values(&lam, &v, &vec![0.0; lam.len()], &[0.4, 0.5, 0.6]).unwrap();
        assert!(r.values[1].abs() < 1e-15);
        assert!(r.at_edge[0] && r.at_edge[2]);
        assert!((r.values[2] - 0.05).abs() < 1e-12);
        assert!(rate_curvature(&r, 0.5, 0.2).inconclusive);
    }

    #[test]
    fn nonconvex_input_is_rejected_or_repaired() {
        let lam = symmetric_grid(0.3, 0.1);
        let mut v: Vec<f64> = lam.iter().map(|l| l * l).collect();
        v[1] += 0.05;
        let zeros = vec![0.0; lam.len()];
        assert!(legendre_transform_values(&lam, &v, &zeros, &[0.0]).is_err());
        let ses = vec![0.05; lam.len()];
        let r = legendre_transform_values(&lam, &v, &ses, &[0.0]).unwrap();
        assert!(r.repaired.iter().any(|&r| r));
        let s: Vec<f64> = r.laplace.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(s.windows(2).all(|w| w[1] >= w[0] - 1e-15));
    }

    #[test]
    fn exact_quadratic_curvature() {
        let lam = symmetric_grid(0.2, 0.02);
        let lap = crate::estimators::laplace::LaplaceCurve {
            lambdas: lam.clone(),
            ns: vec![100],
            cells: lam
                .iter()
                .map(|&l| crate::estimators::laplace::LaplaceCell {
                    lambda: l,
                    n: 100,
                    value: 0.3 * l + 0.7 * l * l,
                    se: 0.0,
                    ess: f64::INFINITY,
                    low_confidence: false,
                    fekete_upper: None,
                })
                .collect(),
            method: crate::stats::Method::ExactDp,
            target: "basepoint".into(),
            drift: 0.3,
            means: vec![0.3],
            convexity_violations: vec![],
            jensen_violations: vec![],
        };
        let fit = curvature_at_drift(&lap, 0.3, 0.1);
        assert!((fit.c - 0.7).abs() < 1e-12);
        assert!(fit.residual < 1e-12 && !fit.inconclusive);
    }

    #[test]
    fn uniform_free_group_curvatures() {
        let mu = StepMeasure::uniform_free(Model::free(2)).unwrap();
        let lam = symmetric_grid(0.25, 0.0125);
        let curve = estimate_laplace(&mu, &lam, &[1000, 2000, 4000], 0.25, Backend::ExactDp, None).unwrap();
        let fit = curvature_at_drift(&curve, 0.5, 0.1);
        assert!((fit.c - 0.375).abs() < 0.01, "{fit:?}");
        let rate = legendre_transform(&curve, 2, &x_grid(0.5, 0.1, 0.005)).unwrap();
        let i0 = rate.values[rate.xs.iter().position(|x| (x - 0.5).abs() < 1e-12).unwrap()];
        assert!(i0 <= 1e-3);
        let i55 = rate.values[rate.xs.iter().position(|x| (x - 0.55).abs() < 1e-9).unwrap()];
        assert!((i55 / 0.0025 - 2.0 / 3.0).abs() < 0.15 * 2.0 / 3.0, "{i55}");
        let rc = rate_curvature(&rate, 0.5, 0.1);
        assert!((rc.c - 2.0 / 3.0).abs() < 0.15 * 2.0 / 3.0, "{rc:?}");
    }
}
