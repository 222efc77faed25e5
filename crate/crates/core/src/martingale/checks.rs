//! Exact and Monte Carlo checks of the exponential martingale transforms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::BoundaryTarget;
use crate::martingale::centering::DriftCocycle;
use crate::martingale::inequality::freedman_f;
use crate::martingale::trace::{phi_a_table, run_chain_paths};
use crate::stats::MeanVar;
use crate::walk::rng::Merge;

/// Checkpoint spacing for the Monte Carlo monotonicity check.
pub const CHECKPOINT_STRIDE: usize = 10;

/// `Σ_g μ(g) exp(λΔM + (𝔣(λa)/a)|ΔM|1{|ΔM|≥a}) · exp(−(𝔣(λa)/a²) φ_a(node))` at one node.
pub fn one_step_factor(cocycle: &DriftCocycle, node: usize, lambda: f64, a: f64, phi_a: f64) -> f64 {
    let fa = freedman_f(lambda * a);
    let s: f64 = cocycle
        .increments(node)
        .map(|(v, w)| {
            let pen = if v.abs() >= a { fa / a * v.abs() } else { 0.0 };
            w * (lambda * v + pen).exp()
        })
        .sum();
    s * (-fa / (a * a) * phi_a).exp()
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmartingaleReport {
    pub lambda: f64,
    pub a: f64,
    /// Smallest one-step factor over grid nodes.
    pub one_step_min: f64,
    pub one_step_argmin: usize,
    pub one_step_pass: bool,
    pub paths: u64,
    pub escaped: u64,
    pub checkpoints: Vec<usize>,
    /// `E[exp(λM_n − (𝔣(λa)/a²)G_nᵃ)]` at each checkpoint.
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    /// Smallest `(mean_{k+1} − mean_k) / SE` over consecutive checkpoints, SE of the paired difference.
    pub min_paired_z: f64,
    /// The same with the SE of the two levels combined.
    pub min_level_z: f64,
    pub mc_pass: bool,
}

#[derive(Default)]
struct SubAcc {
    levels: Vec<MeanVar>,
    diffs: Vec<MeanVar>,
    escaped: u64,
}

impl Merge for SubAcc {
    fn merge(&mut self, o: Self) {
        if self.levels.is_empty() {
            self.levels = o.levels;
            self.diffs = o.diffs;
        } else {
            for (a, b) in self.levels.iter_mut().zip(o.levels) {
                a.merge(b);
            }
            for (a, b) in self.diffs.iter_mut().zip(o.diffs) {
                a.merge(b);
            }
        }
        self.escaped += o.escaped;
    }
}

/// One-step exact check on every node plus the Monte Carlo monotonicity of
/// `E[exp(λM_n − (𝔣(λa)/a²)G_nᵃ)]` over `n ≤ n_max`.
#[allow(clippy::too_many_arguments)]
pub fn submartingale_transform_check(
    cocycle: &DriftCocycle,
    x: &BoundaryTarget,
    lambda: f64,
    a: f64,
    lambda_max: f64,
    n_max: usize,
    paths: usize,
    seed: u64,
    workers: usize,
) -> Result<SubmartingaleReport> {
    if !(lambda > 0.0 && lambda <= lambda_max) {
        return Err(Error::Precondition(format!(
            "λ = {lambda} is outside the validated range (0, {lambda_max}]"
        )));
    }
    if !(a > 0.0) {
        return Err(Error::Precondition("a must be positive".into()));
    }
    let table = phi_a_table(cocycle, a);
    let (mut one_step_min, mut one_step_argmin) = (f64::INFINITY, 0);
    for (node, &pa) in table.iter().enumerate() {
        let f = one_step_factor(cocycle, node, lambda, a, pa);
        if f < one_step_min {
            one_step_min = f;
            one_step_argmin = node;
        }
    }
    let checkpoints: Vec<usize> = (0..=n_max).step_by(CHECKPOINT_STRIDE).collect();
    let coef = freedman_f(lambda * a) / (a * a);
    let k = checkpoints.len();
    let acc: SubAcc = run_chain_paths(cocycle, x, paths, seed, "submartingale", workers, |st, rng, acc: &mut SubAcc| {
        if acc.levels.is_empty() {
            acc.levels = vec![MeanVar::default(); k];
            acc.diffs = vec![MeanVar::default(); k.saturating_sub(1)];
        }
        let mut values = Vec::with_capacity(k);
        values.push(1.0);
        let (mut m, mut g) = (0.0, 0.0);
        for j in 1..=n_max {
            let prev = st.chain.node();
            let atom = cocycle.measure.sample_index(rng);
            let Ok(rec) = st.step(atom) else {
                acc.escaped += 1;
                return;
            };
            m += rec.dm;
            g += table[prev] - if rec.dm.abs() >= a { a * rec.dm.abs() } else { 0.0 };
            if j % CHECKPOINT_STRIDE == 0 {
                values.push((lambda * m - coef * g).exp());
            }
        }
        for (lv, &v) in acc.levels.iter_mut().zip(&values) {
            lv.push(v);
        }
        for (d, w) in acc.diffs.iter_mut().zip(values.windows(2)) {
            d.push(w[1] - w[0]);
        }
    })?;
    let means: Vec<f64> = acc.levels.iter().map(|l| l.mean).collect();
    let ses: Vec<f64> = acc.levels.iter().map(|l| l.se()).collect();
    let z = |d: f64, se: f64| if se > 0.0 { d / se } else if d >= -1e-12 { f64::INFINITY } else { f64::NEG_INFINITY };
    let min_paired_z = acc
        .diffs
        .iter()
        .map(|d| z(d.mean, d.se()))
        .fold(f64::INFINITY, f64::min);
    let min_level_z = (1..means.len())
        .map(|i| z(means[i] - means[i - 1], ses[i].hypot(ses[i - 1])))
        .fold(f64::INFINITY, f64::min);
    let paths_done = acc.levels.first().map_or(0, |l| l.count);
    Ok(SubmartingaleReport {
        lambda,
        a,
        one_step_min,
        one_step_argmin,
        one_step_pass: one_step_min >= 1.0 - 1e-12,
        paths: paths_done,
        escaped: acc.escaped,
        checkpoints,
        means,
        ses,
        min_paired_z,
        min_level_z,
        mc_pass: min_paired_z >= -3.0 && paths_done > 0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionalMgfReport {
    pub epsilon: f64,
    pub v_mu: f64,
    pub lambdas: Vec<f64>,
    /// `max_node log E[e^{λΔM}] − λ²(v + ε)/2` per λ.
    pub worst_log_gap: Vec<f64>,
    pub holds: Vec<bool>,
    /// Largest `b` with the bound holding at every grid λ with `|λ| ≤ b`.
    pub b_hat: f64,
    /// True when every grid λ holds, so `b̂` is limited by the grid rather than the bound.
    pub limited_by_grid: bool,
}

/// `log E[exp(λΔM) | Z = node]`.
pub fn conditional_log_mgf(cocycle: &DriftCocycle, node: usize, lambda: f64) -> f64 {
    let mx = cocycle
        .increments(node)
        .map(|(v, _)| lambda * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = cocycle
        .increments(node)
        .map(|(v, w)| w * (lambda * v - mx).exp())
        .sum();
    mx + s.ln()
}

pub fn conditional_mgf_bound_check(cocycle: &DriftCocycle, epsilon: f64, lambdas: &[f64]) -> ConditionalMgfReport {
    let v = cocycle.v_mu();
    let worst: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let bound = l * l * (v + epsilon) / 2.0;
            (0..cocycle.len())
                .map(|node| conditional_log_mgf(cocycle, node, l) - bound)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let holds: Vec<bool> = worst.iter().map(|&g| g <= 1e-12).collect();
    let fail = lambdas
        .iter()
        .zip(&holds)
        .filter(|(_, h)| !**h)
        .map(|(l, _)| l.abs())
        .fold(f64::INFINITY, f64::min);
    let b_hat = lambdas
        .iter()
        .map(|l| l.abs())
        .filter(|&l| l < fail)
        .fold(0.0, f64::max);
    let all = fail.is_infinite();
    ConditionalMgfReport {
        epsilon,
        v_mu: v,
        lambdas: lambdas.to_vec(),
        worst_log_gap: worst,
        holds,
        b_hat,
        limited_by_grid: all,
    }
}

/// Symmetric grid `{±step, ±2·step, …, ±max}` with 0.
pub fn symmetric_grid(max: f64, step: f64) -> Vec<f64> {
    let k = (max / step + 1e-9).floor() as i64;
    (-k..=k).map(|i| i as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryWord, GroupElement, Model};
    use crate::martingale::centering::{solve_centering, BoundaryGrid, Extension};
    use crate::walk::measure::StepMeasure;

    fn uniform_cocycle() -> DriftCocycle {
        let m = StepMeasure::uniform_free(Model::Free { rank: 2, depth: 6 }).unwrap();
        DriftCocycle::solve(&m, 1, 1).unwrap()
    }

    #[test]
    fn uniform_one_step_factor_matches_hand_sum() {
        let c = uniform_cocycle();
        let (l, a) = (0.1, 2.0);
        let f = one_step_factor(&c, 0, l, a, c.phi_a_node(0, a));
        let hand = (0.75 * (0.5 * l).exp() + 0.25 * (-1.5 * l).exp())
            * (-freedman_f(l * a) / (a * a) * 0.75).exp();
        assert!((f - hand).abs() < 1e-15);
        assert!(f >= 1.0);
    }

    #[test]
    fn lambda_outside_range_is_rejected() {
        let c = uniform_cocycle();
        let x = BoundaryTarget::Free(BoundaryWord::ray(1));
        assert!(submartingale_transform_check(&c, &x, 0.3, 1.0, 0.25, 10, 10, 1, 1).is_err());
        assert!(submartingale_transform_check(&c, &x, 0.0, 1.0, 0.25, 10, 10, 1, 1).is_err());
    }

    #[test]
    fn small_submartingale_run() {
        let c = uniform_cocycle();
        let x = BoundaryTarget::Free(BoundaryWord::ray(1));
        let r = submartingale_transform_check(&c, &x, 0.05, 1.0, 0.25, 50, 2000, 3, 1).unwrap();
        assert!(r.one_step_pass);
        assert_eq!(r.means[0], 1.0);
        assert_eq!(r.checkpoints, vec![0, 10, 20, 30, 40, 50]);
        assert!(r.mc_pass, "{r:?}");
    }

    #[test]
    fn conditional_mgf_uniform() {
        let c = uniform_cocycle();
        let grid = symmetric_grid(0.5, 0.05);
        assert_eq!(grid.len(), 21);
        let r = conditional_mgf_bound_check(&c, 0.1, &grid);
        assert!(r.holds[10]);
        // Independent bisection on the two-atom law ΔM ∈ {½ (¾), −3/2 (¼)}.
        let gap = |l: f64| (0.75 * (0.5 * l).exp() + 0.25 * (-1.5 * l).exp()).ln() - l * l * 0.85 / 2.0;
        let (mut lo, mut hi) = (-1.0, -0.1);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) > 0.0 { lo = mid } else { hi = mid }
        }
        let crossing = -hi;
        assert!(crossing > 0.4 && crossing < 0.45, "{crossing}");
        assert!((r.b_hat - 0.4).abs() < 1e-12);
        assert!(!r.limited_by_grid);
        // Positive λ alone holds up to 0.5.
        assert!(r.lambdas.iter().zip(&r.holds).filter(|(l, _)| **l >= 0.0).all(|(_, h)| *h));
    }

    #[test]
    fn dirac_identity_bound_holds_everywhere() {
        let model = Model::Free { rank: 2, depth: 3 };
        let m = StepMeasure::dirac(model, GroupElement::identity(&model)).unwrap();
        let grid = BoundaryGrid::tree_with(&model, 3, Extension::uniform(2)).unwrap();
        let sol = solve_centering(&m, &grid, 0.0, 1e-12, 10).unwrap();
        let c = DriftCocycle::new(m, sol).unwrap();
        let r = conditional_mgf_bound_check(&c, 0.1, &symmetric_grid(2.0, 0.5));
        assert!(r.limited_by_grid && r.b_hat == 2.0);
    }
}
