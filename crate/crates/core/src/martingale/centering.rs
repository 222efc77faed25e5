//! Boundary grids, the averaging operator `P_μ` on them, and the centering function `ψ`.

use std::collections::HashMap;
use std::f64::consts::TAU;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    BoundaryTarget, BoundaryWord, CylinderIndex, GroupElement, Ideal, Letter, Model, ScaledMobius,
    TailMode, Word,
};
use crate::stats::{EstimateWithCI, MeanVar};
use crate::walk::measure::StepMeasure;
use crate::walk::oracle::{build_length_chain, HarmonicLetterChain};
use crate::walk::path::Walker;
use crate::walk::rng::{run_blocks, SeedSpec};

/// Default Neumann-series stopping tolerance.
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Largest tree grid the solver will build.
const MAX_NODES: usize = 2_000_000;

/// How a depth-`D` cylinder is extended when the action needs letters past `D`:
/// a Markov chain on letter slots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extension {
    pub trans: Vec<Vec<f64>>,
    /// First-letter law, when the chain is the exit law of the walk.
    pub nu1: Option<Vec<f64>>,
}

impl Extension {
    pub fn harmonic(chain: &HarmonicLetterChain) -> Self {
        Extension {
            trans: chain.trans.clone(),
            nu1: Some(chain.nu1.clone()),
        }
    }

    /// Non-backtracking uniform extension.
    pub fn uniform(rank: u32) -> Self {
        let k2 = 2 * rank as usize;
        let trans = (0..k2)
            .map(|x| {
                (0..k2)
                    .map(|y| if y == x ^ 1 { 0.0 } else { 1.0 / (k2 - 1) as f64 })
                    .collect()
            })
            .collect();
        Extension { trans, nu1: None }
    }

    /// Harmonic extension for nearest-neighbour measures of rank ≥ 2, uniform otherwise.
    pub fn for_measure(measure: &StepMeasure) -> Result<Self> {
        let Model::Free { rank, .. } = *measure.model() else {
            return Err(Error::ModelMismatch {
                expected: "free-group model",
                found: "plane model",
            });
        };
        if rank >= 2 && measure.is_nearest_neighbor() {
            let (w, id) = measure.nearest_neighbor_weights()?;
            if w.iter().sum::<f64>() > 0.0 {
                return Ok(Self::harmonic(&HarmonicLetterChain::from_weights(w, id)?));
            }
        }
        Ok(Self::uniform(rank))
    }

    /// Probability of a cylinder under the first-letter law and the chain.
    fn cylinder(&self, letters: &[Letter]) -> Option<f64> {
        let nu1 = self.nu1.as_ref()?;
        let mut p = nu1[CylinderIndex::slot(letters[0])];
        for w in letters.windows(2) {
            p *= self.trans[CylinderIndex::slot(w[0])][CylinderIndex::slot(w[1])];
        }
        Some(p)
    }
}

/// A finite surrogate for the boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundaryGrid {
    /// Depth-`depth` cylinders of the free group boundary.
    Tree {
        rank: u32,
        depth: usize,
        extension: Extension,
    },
    /// `nodes` equally spaced points of the circle at infinity.
    Circle { nodes: usize },
}

impl BoundaryGrid {
    pub fn tree(measure: &StepMeasure, depth: usize) -> Result<Self> {
        let extension = Extension::for_measure(measure)?;
        Self::tree_with(measure.model(), depth, extension)
    }

    pub fn tree_with(model: &Model, depth: usize, extension: Extension) -> Result<Self> {
        let Model::Free { rank, .. } = *model else {
            return Err(Error::ModelMismatch {
                expected: "free-group model",
                found: "plane model",
            });
        };
        if depth == 0 {
            return Err(Error::Precondition("grid depth must be ≥ 1".into()));
        }
        let k = 2.0 * rank as f64;
        if k * (k - 1.0).powi(depth as i32 - 1) > MAX_NODES as f64 {
            return Err(Error::Precondition(format!(
                "depth {depth} gives more than {MAX_NODES} cylinders"
            )));
        }
        Ok(BoundaryGrid::Tree {
            rank,
            depth,
            extension,
        })
    }

    pub fn circle(nodes: usize) -> Result<Self> {
        if nodes < 3 {
            return Err(Error::Precondition("circle grid needs at least 3 nodes".into()));
        }
        Ok(BoundaryGrid::Circle { nodes })
    }

    /// Tree grid of the measure's model depth, or a 720-node circle.
    pub fn for_measure(measure: &StepMeasure) -> Result<Self> {
        match *measure.model() {
            Model::Free { depth, .. } => Self::tree(measure, depth),
            Model::Plane => Self::circle(720),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BoundaryGrid::Tree { rank, depth, .. } => CylinderIndex::new(*rank, *depth).count(),
            BoundaryGrid::Circle { nodes } => *nodes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, i: usize) -> BoundaryTarget {
        match self {
            BoundaryGrid::Tree { rank, depth, .. } => {
                let letters = CylinderIndex::new(*rank, *depth).word(i);
                BoundaryTarget::Free(
                    BoundaryWord::new(Word::from_letters(letters), TailMode::PrefixOnly)
                        .expect("nonempty cylinder"),
                )
            }
            BoundaryGrid::Circle { nodes } => {
                BoundaryTarget::Plane(Ideal::from_angle(TAU * i as f64 / *nodes as f64))
            }
        }
    }

    pub fn nodes(&self) -> Vec<BoundaryTarget> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Node of a boundary point and the lookup distance (zero on trees, angular on the circle).
    pub fn lookup(&self, x: &BoundaryTarget) -> Result<(usize, f64)> {
        match (self, x) {
            (BoundaryGrid::Tree { rank, depth, .. }, BoundaryTarget::Free(xi)) => {
                let head = xi.head(*depth).map_err(|_| {
                    Error::OffGrid(format!("{xi} has fewer than {depth} known letters"))
                })?;
                if head.iter().any(|l| l.unsigned_abs() > *rank) {
                    return Err(Error::OffGrid(format!("{xi} uses generators beyond rank {rank}")));
                }
                Ok((CylinderIndex::new(*rank, *depth).index(&head), 0.0))
            }
            (BoundaryGrid::Circle { nodes }, BoundaryTarget::Plane(xi)) => {
                Ok(self.nearest_angle(xi.angle(), *nodes))
            }
            _ => Err(Error::OffGrid(format!("{x} is not a boundary point of this grid"))),
        }
    }

    fn nearest_angle(&self, theta: f64, nodes: usize) -> (usize, f64) {
        let step = TAU / nodes as f64;
        let i = (theta / step).round() as usize % nodes;
        let gap = (theta - i as f64 * step).abs();
        (i, gap.min(TAU - gap))
    }

    pub fn label(&self, i: usize) -> String {
        self.node(i).to_string()
    }
}

/// One transition of the grid operator: `(target node, σ(g, node), probability)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelEntry {
    pub target: u32,
    pub sigma: f64,
    pub weight: f64,
}

/// `P_μ` on a grid in compressed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GridKernel {
    offsets: Vec<usize>,
    entries: Vec<KernelEntry>,
    /// Largest circle lookup distance seen while building.
    pub max_lookup_distance: f64,
}

impl GridKernel {
    pub fn build(measure: &StepMeasure, grid: &BoundaryGrid) -> Result<Self> {
        match grid {
            BoundaryGrid::Tree {
                rank,
                depth,
                extension,
            } => {
                check_model_match(measure.model(), grid)?;
                Self::build_tree(measure, *rank, *depth, extension)
            }
            BoundaryGrid::Circle { nodes } => {
                check_model_match(measure.model(), grid)?;
                Self::build_circle(measure, grid, *nodes)
            }
        }
    }

    fn build_tree(measure: &StepMeasure, rank: u32, depth: usize, ext: &Extension) -> Result<Self> {
        let index = CylinderIndex::new(rank, depth);
        let atoms: Vec<(&[Letter], f64)> = measure
            .iter()
            .map(|(g, p)| (g.as_word().expect("free-group atom").letters(), p))
            .collect();
        let longest = atoms.iter().map(|a| a.0.len()).max().unwrap_or(0);
        if longest >= depth {
            return Err(Error::Truncation {
                needed: longest + 1,
                depth,
            });
        }
        let mut offsets = vec![0];
        let mut entries = Vec::new();
        let mut row: HashMap<(u32, u64), f64> = HashMap::new();
        let mut head = Vec::with_capacity(2 * depth);
        for node in 0..index.count() {
            let w = index.word(node);
            row.clear();
            for &(g, p) in &atoms {
                let mut j = 0;
                while j < g.len() && g[g.len() - 1 - j] == -w[j] {
                    j += 1;
                }
                let sigma = g.len() as f64 - 2.0 * j as f64;
                head.clear();
                head.extend_from_slice(&g[..g.len() - j]);
                head.extend_from_slice(&w[j..]);
                if head.len() >= depth {
                    head.truncate(depth);
                    let t = index.index(&head) as u32;
                    *row.entry((t, sigma.to_bits())).or_default() += p;
                } else {
                    extend(&mut head, depth, p, &ext.trans, &mut |letters, q| {
                        let t = index.index(letters) as u32;
                        *row.entry((t, sigma.to_bits())).or_default() += q;
                    });
                }
            }
            push_row(&mut entries, &row);
            offsets.push(entries.len());
        }
        Ok(GridKernel {
            offsets,
            entries,
            max_lookup_distance: 0.0,
        })
    }

    fn build_circle(measure: &StepMeasure, grid: &BoundaryGrid, nodes: usize) -> Result<Self> {
        let mats: Vec<(crate::geometry::Mobius, f64)> = measure
            .iter()
            .map(|(g, p)| (*g.as_matrix().expect("plane atom"), p))
            .collect();
        let mut offsets = vec![0];
        let mut entries = Vec::new();
        let mut row: HashMap<(u32, u64), f64> = HashMap::new();
        let mut max_gap = 0.0f64;
        for node in 0..nodes {
            let BoundaryTarget::Plane(xi) = grid.node(node) else {
                unreachable!()
            };
            row.clear();
            for &(m, p) in &mats {
                let sigma = ScaledMobius::from(m).cocycle_ideal(&xi);
                let (t, gap) = grid.nearest_angle(m.apply_ideal(&xi).angle(), nodes);
                max_gap = max_gap.max(gap);
                *row.entry((t as u32, sigma.to_bits())).or_default() += p;
            }
            push_row(&mut entries, &row);
            offsets.push(entries.len());
        }
        Ok(GridKernel {
            offsets,
            entries,
            max_lookup_distance: max_gap,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, node: usize) -> &[KernelEntry] {
        &self.entries[self.offsets[node]..self.offsets[node + 1]]
    }

    /// `(Pf)(x) = Σ w f(target)`.
    pub fn apply(&self, f: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.len()).map(|i| self.row(i).iter().map(|e| e.weight * f[e.target as usize]).sum::<f64>()));
    }

    /// `(πP)(y) = Σ_x π(x) P(x, y)`.
    pub fn apply_left(&self, pi: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.len(), 0.0);
        for (i, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for e in self.row(i) {
                out[e.target as usize] += p * e.weight;
            }
        }
    }

    /// `q(x) = Σ w σ`.
    pub fn mean_sigma(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.row(i).iter().map(|e| e.weight * e.sigma).sum())
            .collect()
    }
}

fn check_model_match(model: &Model, grid: &BoundaryGrid) -> Result<()> {
    match (model, grid) {
        (Model::Free { rank, .. }, BoundaryGrid::Tree { rank: r, .. }) if rank == r => Ok(()),
        (Model::Plane, BoundaryGrid::Circle { .. }) => Ok(()),
        _ => Err(Error::ModelMismatch {
            expected: match grid {
                BoundaryGrid::Tree { .. } => "free-group measure of the grid's rank",
                BoundaryGrid::Circle { .. } => "plane measure",
            },
            found: match model {
                Model::Free { .. } => "free-group measure",
                Model::Plane => "plane measure",
            },
        }),
    }
}

fn push_row(entries: &mut Vec<KernelEntry>, row: &HashMap<(u32, u64), f64>) {
    let mut items: Vec<KernelEntry> = row
        .iter()
        .map(|(&(t, s), &w)| KernelEntry {
            target: t,
            sigma: f64::from_bits(s),
            weight: w,
        })
        .collect();
    items.sort_by(|a, b| a.target.cmp(&b.target).then(a.sigma.total_cmp(&b.sigma)));
    entries.extend(items);
}

/// Enumerates the extensions of `head` to length `depth` with their chain weights.
fn extend(
    head: &mut Vec<Letter>,
    depth: usize,
    p: f64,
    trans: &[Vec<f64>],
    emit: &mut dyn FnMut(&[Letter], f64),
) {
    if head.len() == depth {
        emit(head, p);
        return;
    }
    let last = CylinderIndex::slot(*head.last().expect("nonempty head"));
    for (slot, &q) in trans[last].iter().enumerate() {
        if q > 0.0 {
            head.push(CylinderIndex::letter_of_slot(slot));
            extend(head, depth, p * q, trans, emit);
            head.pop();
        }
    }
}

/// The drift handed to the solver.
pub fn drift_of(measure: &StepMeasure, seed: u64, workers: usize) -> EstimateWithCI {
    if measure.atoms().iter().all(|g| g.is_identity(0.0)) {
        return EstimateWithCI::exact(0.0);
    }
    if let Ok(chain) = build_length_chain(measure, 0) {
        return EstimateWithCI::exact(chain.drift());
    }
    if let Ok(h) = HarmonicLetterChain::from_measure(measure) {
        return EstimateWithCI::exact(h.drift());
    }
    drift_monte_carlo(measure, 1000, 4000, seed, workers)
}

/// Mean of `κ_n / n` over independent paths.
pub fn drift_monte_carlo(
    measure: &StepMeasure,
    n: usize,
    paths: usize,
    seed: u64,
    workers: usize,
) -> EstimateWithCI {
    let master = SeedSpec::derive(seed, "drift");
    let acc = run_blocks(paths, workers, |range| {
        let mut acc = MeanVar::default();
        let mut walker = Walker::new(measure, &[]).expect("measure without targets");
        for i in range {
            let mut rng = SeedSpec::new(master, i).rng();
            walker.reset();
            for _ in 0..n {
                walker.step(&mut rng);
            }
            acc.push(walker.kappa() / n as f64);
        }
        acc
    });
    acc.estimate()
}

/// Solution of `ψ − Pψ = q − ℓ_eff` on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct PsiSolution {
    pub grid: BoundaryGrid,
    pub psi: Vec<f64>,
    /// Drift supplied by the caller.
    pub ell: f64,
    /// `π·q − ℓ` for the grid's stationary law `π`; the solver centres with `ℓ + c`.
    pub drift_mismatch: f64,
    pub sup_norm: f64,
    /// `max ψ − min ψ`.
    pub oscillation: f64,
    /// `sup |ψ − Pψ − (q − ℓ − c)|`.
    pub residual: f64,
    /// `sup |q + Pψ − ψ − ℓ|`, the failure of constant drift against the supplied `ℓ`.
    pub constant_drift_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tol: f64,
    #[serde(skip)]
    pub stationary: Vec<f64>,
    #[serde(skip)]
    pub q: Vec<f64>,
    #[serde(skip)]
    pub kernel: GridKernel,
}

impl PsiSolution {
    pub fn ell_eff(&self) -> f64 {
        self.ell + self.drift_mismatch
    }

    /// Node table for export: `(id, label, ψ)`.
    pub fn export(&self) -> PsiExport {
        PsiExport {
            schema_version: crate::SCHEMA_VERSION,
            ell: self.ell,
            drift_mismatch: self.drift_mismatch,
            residual: self.residual,
            constant_drift_residual: self.constant_drift_residual,
            sup_norm: self.sup_norm,
            iterations: self.iterations,
            converged: self.converged,
            nodes: self
                .psi
                .iter()
                .enumerate()
                .map(|(i, &v)| PsiNode {
                    id: i,
                    label: self.grid.label(i),
                    psi: v,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiExport {
    pub schema_version: u32,
    pub ell: f64,
    pub drift_mismatch: f64,
    pub residual: f64,
    pub constant_drift_residual: f64,
    pub sup_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub nodes: Vec<PsiNode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiNode {
    pub id: usize,
    pub label: String,
    pub psi: f64,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Stationary law of the grid operator by power iteration, started from the
/// cylinder law of the extension chain when it has one.
fn stationary_law(kernel: &GridKernel, grid: &BoundaryGrid, max_iter: usize) -> Vec<f64> {
    let n = kernel.len();
    let mut pi: Vec<f64> = match grid {
        BoundaryGrid::Tree {
            rank,
            depth,
            extension,
        } if extension.nu1.is_some() => {
            let index = CylinderIndex::new(*rank, *depth);
            (0..n)
                .map(|i| extension.cylinder(&index.word(i)).expect("has first-letter law"))
                .collect()
        }
        _ => vec![1.0 / n as f64; n],
    };
    let mut next = Vec::with_capacity(n);
    for _ in 0..max_iter {
        kernel.apply_left(&pi, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if change < 1e-13 {
            break;
        }
    }
    pi
}

/// Solves the centering equation by the Neumann series `Σ Pⁿ(q − ℓ − c)`.
///
/// Returns the solution whether or not the series converged; see [`solve_centering`].
pub fn solve_centering_report(
    measure: &StepMeasure,
    grid: &BoundaryGrid,
    ell: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PsiSolution> {
    if !(tol > 0.0) {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    let kernel = GridKernel::build(measure, grid)?;
    let n = kernel.len();
    let q = kernel.mean_sigma();
    let stationary = stationary_law(&kernel, grid, max_iter);
    let drift_mismatch = stationary.iter().zip(&q).map(|(p, x)| p * x).sum::<f64>() - ell;
    let ell_eff = ell + drift_mismatch;
    let f: Vec<f64> = q.iter().map(|x| x - ell_eff).collect();
    let mut psi = vec![0.0; n];
    let mut v = f.clone();
    let mut next = Vec::with_capacity(n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        for (a, b) in psi.iter_mut().zip(&v) {
            *a += b;
        }
        iterations += 1;
        if sup(&v) <= tol {
            converged = true;
            break;
        }
        kernel.apply(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
    }
    kernel.apply(&psi, &mut next);
    let residual = (0..n)
        .map(|i| (psi[i] - next[i] - f[i]).abs())
        .fold(0.0, f64::max);
    let constant_drift_residual = (0..n)
        .map(|i| (q[i] + next[i] - psi[i] - ell).abs())
        .fold(0.0, f64::max);
    let hi = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = psi.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PsiSolution {
        grid: grid.clone(),
        sup_norm: sup(&psi),
        oscillation: hi - lo,
        psi,
        ell,
        drift_mismatch,
        residual,
        constant_drift_residual,
        iterations,
        converged,
        tol,
        stationary,
        q,
        kernel,
    })
}

/// As [`solve_centering_report`], failing with [`Error::Diverged`] when the series
/// did not converge.
pub fn solve_centering(
    measure: &StepMeasure,
    grid: &BoundaryGrid,
    ell: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PsiSolution> {
    let sol = solve_centering_report(measure, grid, ell, tol, max_iter)?;
    if !sol.converged {
        return Err(Error::Diverged {
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }
    Ok(sol)
}

/// `σ₀(g, x) = σ(g, x) + ψ(g·x) − ψ(x)` on a solved grid, with the step measure.
#[derive(Debug, Clone)]
pub struct DriftCocycle {
    pub measure: StepMeasure,
    pub solution: PsiSolution,
    phi: Vec<f64>,
}

impl DriftCocycle {
    pub fn new(measure: StepMeasure, solution: PsiSolution) -> Result<Self> {
        check_model_match(measure.model(), &solution.grid)?;
        let kernel = GridKernel::build(&measure, &solution.grid)?;
        if kernel != solution.kernel {
            return Err(Error::Precondition(
                "solution was computed for a different measure".into(),
            ));
        }
        let mut c = DriftCocycle {
            measure,
            solution,
            phi: Vec::new(),
        };
        c.phi = (0..c.len()).map(|i| c.phi_a_node(i, f64::INFINITY)).collect();
        Ok(c)
    }

    /// Solves on the measure's default grid with `ℓ` from [`drift_of`].
    pub fn solve(measure: &StepMeasure, seed: u64, workers: usize) -> Result<Self> {
        let grid = BoundaryGrid::for_measure(measure)?;
        let ell = drift_of(measure, seed, workers).estimate;
        let sol = solve_centering(measure, &grid, ell, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        Self::new(measure.clone(), sol)
    }

    pub fn len(&self) -> usize {
        self.solution.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn model(&self) -> &Model {
        self.measure.model()
    }

    pub fn grid(&self) -> &BoundaryGrid {
        &self.solution.grid
    }

    pub fn kernel(&self) -> &GridKernel {
        &self.solution.kernel
    }

    /// The centring constant `ℓ + c` used for martingale differences.
    pub fn ell(&self) -> f64 {
        self.solution.ell_eff()
    }

    pub fn psi(&self, node: usize) -> f64 {
        self.solution.psi[node]
    }

    /// Grid node of a boundary point; trees require an exact cylinder.
    pub fn lookup(&self, x: &BoundaryTarget) -> Result<usize> {
        Ok(self.grid().lookup(x)?.0)
    }

    pub fn sigma0(&self, g: &GroupElement, x: &BoundaryTarget) -> Result<f64> {
        let model = self.model();
        let node = self.lookup(x)?;
        let sigma = model.cocycle(g, x)?;
        let gx = model
            .boundary_action(g, x)
            .map_err(|e| Error::OffGrid(format!("g·x leaves the grid: {e}")))?;
        let target = self.lookup(&gx)?;
        Ok(sigma + self.psi(target) - self.psi(node))
    }

    /// Conditional martingale differences at a node: `(σ + ψ(target) − ψ(node) − ℓ, weight)`.
    pub fn increments(&self, node: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let base = self.psi(node);
        let ell = self.ell();
        self.kernel()
            .row(node)
            .iter()
            .map(move |e| (e.sigma + self.psi(e.target as usize) - base - ell, e.weight))
    }

    /// `φ(x) = ∫(σ₀(g, x) − ℓ)² dμ(g)`.
    pub fn phi_node(&self, node: usize) -> f64 {
        self.phi[node]
    }

    pub fn phi(&self, x: &BoundaryTarget) -> Result<f64> {
        Ok(self.phi_node(self.lookup(x)?))
    }

    pub fn phi_values(&self) -> &[f64] {
        &self.phi
    }

    /// `∫(σ₀ − ℓ)² 1{|σ₀ − ℓ| ≤ a} dμ`.
    pub fn phi_a_node(&self, node: usize, a: f64) -> f64 {
        self.increments(node)
            .filter(|(v, _)| v.abs() <= a)
            .map(|(v, w)| w * v * v)
            .sum()
    }

    /// `∫(σ₀ − ℓ) dμ` at a node; zero up to the solver residual.
    pub fn conditional_mean(&self, node: usize) -> f64 {
        self.increments(node).map(|(v, w)| w * v).sum()
    }

    /// `v(μ) = sup_x φ(x)` over the grid.
    pub fn v_mu(&self) -> f64 {
        self.phi.iter().copied().fold(0.0, f64::max)
    }
}
