//! The boundary chain `Z_n = L_n·x`, martingale traces and pathwise sweeps.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    BoundaryTarget, CylinderIndex, Ideal, Letter, Mobius, Model, ScaledMobius, TailMode,
};
use crate::martingale::centering::{
    solve_centering, BoundaryGrid, DriftCocycle, Extension, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::stats::{EstimateWithCI, MeanVar};
use crate::walk::measure::{StepMeasure, DEFAULT_SUPPORT_CAP};
use crate::walk::path::{Trajectory, Walker};
use crate::walk::rng::{run_blocks, Merge, SeedSpec};

#[derive(Debug, Clone)]
enum ChainState {
    /// The word `rev` (stored reversed, first letter last) followed by `tail^∞`,
    /// or by unknown letters when `tail` is `None`.
    Tree {
        rev: Vec<Letter>,
        tail: Option<Letter>,
    },
    Circle(Ideal),
}

/// The boundary Markov chain started at a grid point, tracked exactly and
/// projected to grid nodes.
#[derive(Debug, Clone)]
pub struct BoundaryChain<'a> {
    cocycle: &'a DriftCocycle,
    start: ChainState,
    state: ChainState,
    node: usize,
    start_node: usize,
    head: Vec<Letter>,
}

impl<'a> BoundaryChain<'a> {
    pub fn new(cocycle: &'a DriftCocycle, x: &BoundaryTarget) -> Result<Self> {
        let start_node = cocycle.lookup(x)?;
        let start = match x {
            BoundaryTarget::Free(xi) => {
                let mut rev = xi.prefix().letters().to_vec();
                let tail = match xi.mode() {
                    TailMode::RepeatLast => rev.last().copied(),
                    TailMode::PrefixOnly => None,
                };
                rev.reverse();
                ChainState::Tree { rev, tail }
            }
            BoundaryTarget::Plane(xi) => ChainState::Circle(*xi),
            BoundaryTarget::Interior(_) => unreachable!("lookup rejects interior points"),
        };
        Ok(BoundaryChain {
            cocycle,
            state: start.clone(),
            start,
            node: start_node,
            start_node,
            head: Vec::new(),
        })
    }

    pub fn reset(&mut self) {
        self.state = self.start.clone();
        self.node = self.start_node;
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// Applies atom `i` of the cocycle's measure: returns `σ(X, Z_prev)`, or a
    /// truncation error when the chain needs a letter the start point does not fix.
    pub fn apply(&mut self, i: usize) -> Result<f64> {
        let g = &self.cocycle.measure.atoms()[i];
        match &mut self.state {
            ChainState::Tree { rev, tail } => {
                let letters = g.as_word().expect("free-group atom").letters();
                let mut cancelled = 0usize;
                for &s in letters.iter().rev() {
                    let first = rev.last().copied().or(*tail);
                    match first {
                        Some(f) if f == -s => {
                            cancelled += 1;
                            // `t^∞` absorbs `t⁻¹`.
                            rev.pop();
                        }
                        Some(_) => rev.push(s),
                        None => {
                            return Err(Error::Truncation {
                                needed: cancelled + 1,
                                depth: 0,
                            })
                        }
                    }
                }
                let sigma = letters.len() as f64 - 2.0 * cancelled as f64;
                let BoundaryGrid::Tree { rank, depth, .. } = self.cocycle.grid() else {
                    unreachable!()
                };
                self.head.clear();
                for j in 0..*depth {
                    let l = if j < rev.len() { Some(rev[rev.len() - 1 - j]) } else { *tail };
                    match l {
                        Some(l) => self.head.push(l),
                        None => {
                            return Err(Error::Truncation {
                                needed: j + 1,
                                depth: rev.len(),
                            })
                        }
                    }
                }
                self.node = CylinderIndex::new(*rank, *depth).index(&self.head);
                Ok(sigma)
            }
            ChainState::Circle(xi) => {
                let m: &Mobius = g.as_matrix().expect("plane atom");
                let sigma = ScaledMobius::from(*m).cocycle_ideal(xi);
                *xi = m.apply_ideal(xi);
                self.node = self.cocycle.grid().lookup(&BoundaryTarget::Plane(*xi))?.0;
                Ok(sigma)
            }
        }
    }
}

/// One step of a martingale trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub atom: usize,
    pub sigma: f64,
    pub dm: f64,
    /// `φ(Z_{j−1})`.
    pub bracket: f64,
    pub node: usize,
}

/// Drives a [`BoundaryChain`] and produces martingale increments.
pub struct MartingaleStepper<'a> {
    pub chain: BoundaryChain<'a>,
    cocycle: &'a DriftCocycle,
}

impl<'a> MartingaleStepper<'a> {
    pub fn new(cocycle: &'a DriftCocycle, x: &BoundaryTarget) -> Result<Self> {
        Ok(MartingaleStepper {
            chain: BoundaryChain::new(cocycle, x)?,
            cocycle,
        })
    }

    pub fn reset(&mut self) {
        self.chain.reset();
    }

    pub fn step(&mut self, atom: usize) -> Result<StepRecord> {
        let prev = self.chain.node();
        let sigma = self.chain.apply(atom)?;
        let node = self.chain.node();
        let c = self.cocycle;
        Ok(StepRecord {
            atom,
            sigma,
            dm: sigma + c.psi(node) - c.psi(prev) - c.ell(),
            bracket: c.phi_node(prev),
            node,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleTrace {
    pub start: String,
    pub ell: f64,
    /// `Z_0, …, Z_n` as grid nodes.
    pub nodes: Vec<usize>,
    pub atoms: Vec<usize>,
    /// `M_0, …, M_n`.
    pub m: Vec<f64>,
    /// `ΔM_1, …, ΔM_n`.
    pub dm: Vec<f64>,
    /// `σ(L_j, x)` accumulated through the cocycle identity.
    pub sigma: Vec<f64>,
    /// `⟨M⟩_0, …, ⟨M⟩_n`.
    pub bracket: Vec<f64>,
    /// `[M]_0, …, [M]_n`.
    pub realized: Vec<f64>,
    pub a_values: Vec<f64>,
    /// `G^a_0, …, G^a_n` for each `a`.
    pub g: Vec<Vec<f64>>,
    /// First step at which the chain left the grid, if any; the trace stops before it.
    pub truncated_at: Option<usize>,
}

impl MartingaleTrace {
    pub fn steps(&self) -> usize {
        self.dm.len()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "step".to_string(),
            "node".into(),
            "M".into(),
            "dM".into(),
            "sigma".into(),
            "bracket".into(),
            "realized".into(),
        ];
        header.extend(self.a_values.iter().map(|a| format!("G[a={a}]")));
        w.write_record(&header).map_err(csv_err)?;
        for j in 0..=self.steps() {
            let mut row = vec![
                j.to_string(),
                self.nodes[j].to_string(),
                self.m[j].to_string(),
                if j == 0 { String::new() } else { self.dm[j - 1].to_string() },
                self.sigma[j].to_string(),
                self.bracket[j].to_string(),
                self.realized[j].to_string(),
            ];
            row.extend(self.g.iter().map(|g| g[j].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// `φ_a` for every node.
pub fn phi_a_table(cocycle: &DriftCocycle, a: f64) -> Vec<f64> {
    (0..cocycle.len()).map(|i| cocycle.phi_a_node(i, a)).collect()
}

/// Martingale trace along the given increments, started at a grid point.
pub fn martingale_trace(
    cocycle: &DriftCocycle,
    increments: &[usize],
    x: &BoundaryTarget,
    a_values: &[f64],
) -> Result<MartingaleTrace> {
    if a_values.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Precondition("every a must be positive".into()));
    }
    let mut stepper = MartingaleStepper::new(cocycle, x)?;
    let tables: Vec<Vec<f64>> = a_values.iter().map(|&a| phi_a_table(cocycle, a)).collect();
    let mut t = MartingaleTrace {
        start: x.to_string(),
        ell: cocycle.ell(),
        nodes: vec![stepper.chain.node()],
        atoms: Vec::with_capacity(increments.len()),
        m: vec![0.0],
        dm: Vec::with_capacity(increments.len()),
        sigma: vec![0.0],
        bracket: vec![0.0],
        realized: vec![0.0],
        a_values: a_values.to_vec(),
        g: vec![vec![0.0]; a_values.len()],
        truncated_at: None,
    };
    for (j, &atom) in increments.iter().enumerate() {
        let prev = stepper.chain.node();
        let rec = match stepper.step(atom) {
            Ok(r) => r,
            Err(Error::Truncation { .. }) => {
                t.truncated_at = Some(j + 1);
                break;
            }
            Err(e) => return Err(e),
        };
        let dm = rec.dm;
        t.atoms.push(atom);
        t.nodes.push(rec.node);
        t.dm.push(dm);
        t.m.push(t.m[j] + dm);
        t.sigma.push(t.sigma[j] + rec.sigma);
        t.bracket.push(t.bracket[j] + rec.bracket);
        t.realized.push(t.realized[j] + dm * dm);
        for ((g, table), &a) in t.g.iter_mut().zip(&tables).zip(a_values) {
            let big = if dm.abs() >= a { a * dm.abs() } else { 0.0 };
            g.push(g[j] + table[prev] - big);
        }
    }
    Ok(t)
}

/// As [`martingale_trace`] for a sampled trajectory that kept its increments.
pub fn trajectory_trace(
    cocycle: &DriftCocycle,
    trajectory: &Trajectory,
    x: &BoundaryTarget,
    a_values: &[f64],
) -> Result<MartingaleTrace> {
    let inc = trajectory.increments.as_ref().ok_or_else(|| {
        Error::Precondition("trajectory was sampled without increments".into())
    })?;
    martingale_trace(cocycle, inc, x, a_values)
}

/// Pathwise check of `|ΔM_i| ≤ ζ_i` on one trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct DifferenceBound {
    pub steps: u64,
    /// Violations of `|ΔM| ≤ κ(X) + |ℓ| + osc ψ`.
    pub violations: u64,
    /// Violations of the weaker-looking `|ΔM| ≤ κ(X) + ℓ + ‖ψ‖∞` with the grid's centred `ψ`.
    pub sup_norm_form_violations: u64,
    /// `min(ζ − |ΔM|)`.
    pub min_slack: f64,
    pub max_ratio: f64,
}

impl Merge for DifferenceBound {
    fn merge(&mut self, o: Self) {
        if o.steps == 0 {
            return;
        }
        if self.steps == 0 {
            *self = o;
            return;
        }
        self.steps += o.steps;
        self.violations += o.violations;
        self.sup_norm_form_violations += o.sup_norm_form_violations;
        self.min_slack = self.min_slack.min(o.min_slack);
        self.max_ratio = self.max_ratio.max(o.max_ratio);
    }
}

impl DifferenceBound {
    fn record(&mut self, cocycle: &DriftCocycle, kappa: f64, dm: f64) {
        let sol = &cocycle.solution;
        let zeta = kappa + cocycle.ell().abs() + sol.oscillation;
        let zeta_sup = kappa + sol.ell + sol.sup_norm;
        let slack = zeta - dm.abs();
        if self.steps == 0 {
            self.min_slack = slack;
        }
        self.steps += 1;
        if slack < -1e-9 {
            self.violations += 1;
        }
        if dm.abs() > zeta_sup + 1e-9 {
            self.sup_norm_form_violations += 1;
        }
        self.min_slack = self.min_slack.min(slack);
        if zeta > 0.0 {
            self.max_ratio = self.max_ratio.max(dm.abs() / zeta);
        }
    }
}

pub fn difference_bound_check(cocycle: &DriftCocycle, trace: &MartingaleTrace) -> Result<DifferenceBound> {
    let kappas = cocycle.measure.displacements();
    let mut rep = DifferenceBound::default();
    for (&atom, &dm) in trace.atoms.iter().zip(&trace.dm) {
        rep.record(cocycle, kappas[atom], dm);
    }
    if rep.violations > 0 {
        return Err(Error::InvariantViolation(format!(
            "{} martingale differences exceed κ + |ℓ| + osc ψ (min slack {:.3e})",
            rep.violations, rep.min_slack
        )));
    }
    Ok(rep)
}

/// Runs `paths` boundary chains of length `n` with per-path streams.
pub fn run_chain_paths<A, F>(
    cocycle: &DriftCocycle,
    x: &BoundaryTarget,
    paths: usize,
    seed: u64,
    purpose: &str,
    workers: usize,
    per_path: F,
) -> Result<A>
where
    A: Merge + Default,
    F: Fn(&mut MartingaleStepper<'_>, &mut ChaCha8Rng, &mut A) + Sync,
{
    MartingaleStepper::new(cocycle, x)?;
    let master = SeedSpec::derive(seed, purpose);
    Ok(run_blocks(paths, workers, |range| {
        let mut acc = A::default();
        let mut stepper = MartingaleStepper::new(cocycle, x).expect("checked above");
        for i in range {
            let mut rng = SeedSpec::new(master, i).rng();
            stepper.reset();
            per_path(&mut stepper, &mut rng, &mut acc);
        }
        acc
    }))
}

/// Pathwise invariants over Monte Carlo paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct PathwiseSweep {
    pub paths: u64,
    pub escaped: u64,
    /// `max |M_n − (σ(L_n, x) − nℓ)|` with `σ` from an independent walker.
    pub max_centering_gap: f64,
    /// `2‖ψ‖∞`.
    pub centering_bound: f64,
    pub centering_violations: u64,
    /// Violations of `⟨M⟩`, `[M]` monotonicity or `G^a ≤ ⟨M⟩`.
    pub monotonicity_violations: u64,
    pub difference: DifferenceBound,
}

impl Merge for PathwiseSweep {
    fn merge(&mut self, o: Self) {
        self.paths += o.paths;
        self.escaped += o.escaped;
        self.max_centering_gap = self.max_centering_gap.max(o.max_centering_gap);
        self.centering_bound = self.centering_bound.max(o.centering_bound);
        self.centering_violations += o.centering_violations;
        self.monotonicity_violations += o.monotonicity_violations;
        self.difference.merge(o.difference);
    }
}

/// Checks the pathwise martingale invariants on `paths` walks of `n` steps.
#[allow(clippy::too_many_arguments)]
pub fn pathwise_sweep(
    cocycle: &DriftCocycle,
    x: &BoundaryTarget,
    n: usize,
    paths: usize,
    a: f64,
    seed: u64,
    workers: usize,
) -> Result<PathwiseSweep> {
    let sol = &cocycle.solution;
    let bound = 2.0 * sol.sup_norm;
    let kappas = cocycle.measure.displacements();
    let table = phi_a_table(cocycle, a);
    let targets = [x.clone()];
    Walker::new(&cocycle.measure, &targets)?;
    let ell = cocycle.ell();
    run_chain_paths(cocycle, x, paths, seed, "pathwise-sweep", workers, |st, rng, acc: &mut PathwiseSweep| {
        acc.paths += 1;
        acc.centering_bound = bound;
        let mut walker = Walker::new(&cocycle.measure, &targets).expect("checked above");
        let (mut m, mut br, mut qv, mut g) = (0.0, 0.0, 0.0, 0.0);
        for j in 1..=n {
            let atom = walker.step(rng);
            let prev = st.chain.node();
            let rec = match st.step(atom) {
                Ok(r) => r,
                Err(_) => {
                    acc.escaped += 1;
                    return;
                }
            };
            m += rec.dm;
            let (br2, qv2) = (br + rec.bracket, qv + rec.dm * rec.dm);
            let g2 = g + table[prev] - if rec.dm.abs() >= a { a * rec.dm.abs() } else { 0.0 };
            if br2 < br || qv2 < qv || g2 > br2 + 1e-9 * (1.0 + br2) {
                acc.monotonicity_violations += 1;
            }
            (br, qv, g) = (br2, qv2, g2);
            acc.difference.record(cocycle, kappas[atom], rec.dm);
            if let Some(sigma) = walker.sigma(0) {
                let gap = (m - (sigma - j as f64 * ell)).abs();
                acc.max_centering_gap = acc.max_centering_gap.max(gap);
                if gap > bound + 1e-9 * (1.0 + j as f64) {
                    acc.centering_violations += 1;
                }
            }
        }
    })
}

/// Occupation-measure estimate of `σ²`.
#[derive(Debug, Clone, Serialize)]
pub struct OccupationEstimate {
    pub start: String,
    pub estimate: EstimateWithCI,
    pub escape_fraction: f64,
    pub low_confidence: bool,
}

#[derive(Default)]
struct OccAcc {
    mv: MeanVar,
    escaped: u64,
}

impl Merge for OccAcc {
    fn merge(&mut self, o: Self) {
        self.mv.merge(o.mv);
        self.escaped += o.escaped;
    }
}

/// Average of `φ(Z_j)` over `j ∈ (burn_in, n]`, one value per path.
pub fn sigma_sq_occupation(
    cocycle: &DriftCocycle,
    x: &BoundaryTarget,
    n: usize,
    burn_in: usize,
    paths: usize,
    seed: u64,
    workers: usize,
) -> Result<OccupationEstimate> {
    if n <= burn_in {
        return Err(Error::Precondition(format!("n = {n} must exceed burn-in {burn_in}")));
    }
    let acc: OccAcc = run_chain_paths(cocycle, x, paths, seed, "occupation", workers, |st, rng, acc: &mut OccAcc| {
        let mut sum = 0.0;
        for j in 1..=n {
            let atom = cocycle.measure.sample_index(rng);
            if st.step(atom).is_err() {
                acc.escaped += 1;
                return;
            }
            if j > burn_in {
                sum += cocycle.phi_node(st.chain.node());
            }
        }
        acc.mv.push(sum / (n - burn_in) as f64);
    })?;
    let escape_fraction = acc.escaped as f64 / paths.max(1) as f64;
    Ok(OccupationEstimate {
        start: x.to_string(),
        estimate: acc.mv.estimate(),
        escape_fraction,
        low_confidence: escape_fraction > 0.1,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceleratedVariance {
    pub k: usize,
    pub support: usize,
    /// `v(μ^{*k})`.
    pub v_k: f64,
    /// `v(μ^{*k}) / k`.
    pub value: f64,
    pub residual: f64,
}

/// `v(μ^{*k})/k`, re-solving the centering equation for the convolution power on a
/// grid of the given depth with the extension chain of `μ` (its exit law is also that of `μ^{*k}`).
pub fn accelerated_variance(
    measure: &StepMeasure,
    k: usize,
    depth: usize,
    ell: f64,
) -> Result<AcceleratedVariance> {
    let power = measure.convolution_power(k, DEFAULT_SUPPORT_CAP)?;
    let grid = match measure.model() {
        Model::Free { .. } => {
            BoundaryGrid::tree_with(measure.model(), depth, Extension::for_measure(measure)?)?
        }
        Model::Plane => BoundaryGrid::for_measure(measure)?,
    };
    let sol = solve_centering(&power, &grid, k as f64 * ell, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let residual = sol.residual;
    let support = power.len();
    let c = DriftCocycle::new(power, sol)?;
    let v_k = c.v_mu();
    Ok(AcceleratedVariance {
        k,
        support,
        v_k,
        value: v_k / k as f64,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryWord, Word};
    use crate::walk::path::sample_path;

    fn uniform_cocycle() -> DriftCocycle {
        let m = StepMeasure::uniform_free(Model::Free { rank: 2, depth: 8 }).unwrap();
        DriftCocycle::solve(&m, 1, 1).unwrap()
    }

    fn ray() -> BoundaryTarget {
        BoundaryTarget::Free(BoundaryWord::ray(1))
    }

    #[test]
    fn uniform_bracket_is_linear() {
        let c = uniform_cocycle();
        let traj = sample_path(&c.measure, 300, SeedSpec::new(4, 0), &[], true).unwrap();
        let t = trajectory_trace(&c, &traj, &ray(), &[1.0, 2.0]).unwrap();
        assert_eq!(t.truncated_at, None);
        assert_eq!(t.m[0], 0.0);
        for j in 0..=300 {
            assert!((t.bracket[j] - 0.75 * j as f64).abs() < 1e-9);
            // All |ΔM| ≤ 3/2 < 2, so G² = ⟨M⟩.
            assert!((t.g[1][j] - t.bracket[j]).abs() < 1e-9);
            assert!(t.g[0][j] <= t.bracket[j] + 1e-12);
        }
        for w in t.realized.windows(2) {
            assert!(w[1] >= w[0]);
        }
        // ψ ≡ 0, so M_n = σ(L_n, ξ) − n/2.
        for j in 0..=300 {
            assert!((t.m[j] - (t.sigma[j] - 0.5 * j as f64)).abs() < 1e-9);
        }
        let d = difference_bound_check(&c, &t).unwrap();
        assert!(d.min_slack >= -1e-12 && d.max_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn chain_sigma_matches_walker() {
        let m = StepMeasure::biased_f2(8);
        let c = DriftCocycle::solve(&m, 1, 1).unwrap();
        let target = BoundaryTarget::Free(
            BoundaryWord::new(Word::parse("abAB").unwrap(), TailMode::RepeatLast).unwrap(),
        );
        let traj = sample_path(&m, 200, SeedSpec::new(7, 3), std::slice::from_ref(&target), true).unwrap();
        let t = trajectory_trace(&c, &traj, &target, &[1.0]).unwrap();
        for j in 0..=200 {
            let s = traj.sigma[0][j].unwrap();
            assert!((t.sigma[j] - s).abs() < 1e-9, "step {j}");
        }
    }

    #[test]
    fn prefix_only_start_escapes_with_flag() {
        let c = uniform_cocycle();
        let x = c.grid().node(0);
        let inc = vec![1usize; 20];
        // Atom 1 is a⁻¹ which cancels the leading a of node 0 repeatedly.
        let t = martingale_trace(&c, &inc, &x, &[1.0]).unwrap();
        assert!(t.truncated_at.is_some());
        assert_eq!(t.m.len(), t.truncated_at.unwrap());
    }

    #[test]
    fn biased_sweep_is_clean() {
        let m = StepMeasure::biased_f2(8);
        let c = DriftCocycle::solve(&m, 1, 1).unwrap();
        let s = pathwise_sweep(&c, &ray(), 100, 300, 1.0, 5, 1).unwrap();
        assert_eq!(s.escaped, 0);
        assert_eq!(s.centering_violations, 0);
        assert_eq!(s.monotonicity_violations, 0);
        assert_eq!(s.difference.violations, 0);
        assert!(s.max_centering_gap <= s.centering_bound + 1e-9);
    }

    #[test]
    fn occupation_and_acceleration_uniform() {
        let c = uniform_cocycle();
        let occ = sigma_sq_occupation(&c, &ray(), 50, 10, 200, 1, 1).unwrap();
        assert!((occ.estimate.estimate - 0.75).abs() < 1e-12);
        let m = StepMeasure::uniform_free(Model::Free { rank: 2, depth: 6 }).unwrap();
        for k in [1, 2] {
            let acc = accelerated_variance(&m, k, 6, 0.5).unwrap();
            assert!((acc.value - 0.75).abs() < 1e-9, "k={k}: {}", acc.value);
        }
    }
}
