//! Deviation probes and the explicit concentration bounds as evaluable functions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryTarget, TailMode};
use crate::martingale::centering::DriftCocycle;
use crate::martingale::trace::run_chain_paths;
use crate::stats::{wilson, LogMeanExp, Method};
use crate::walk::measure::StepMeasure;
use crate::walk::oracle::PrefixChainOracle;
use crate::walk::path::Walker;
use crate::walk::rng::{run_blocks, Merge, SeedSpec};

/// Hit counts per cell, merged by addition.
#[derive(Debug, Clone, Default, PartialEq)]
struct Hits {
    paths: u64,
    escaped: u64,
    hits: Vec<u64>,
}

impl Hits {
    fn sized(&mut self, cells: usize) {
        if self.hits.len() < cells {
            self.hits.resize(cells, 0);
        }
    }
}

impl Merge for Hits {
    fn merge(&mut self, o: Self) {
        self.sized(o.hits.len());
        self.paths += o.paths;
        self.escaped += o.escaped;
        for (a, b) in self.hits.iter_mut().zip(o.hits) {
            *a += b;
        }
    }
}

/// An empirical tail probability with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCell {
    pub hits: u64,
    pub paths: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `1/paths` when no path hit, so the probability is only known to be below it.
    pub below_resolution: Option<f64>,
}

impl TailCell {
    pub fn new(hits: u64, paths: u64) -> Self {
        let (lo, hi) = wilson(hits, paths);
        TailCell {
            hits,
            paths,
            p_hat: if paths == 0 { f64::NAN } else { hits as f64 / paths as f64 },
            ci_low: lo,
            ci_high: hi,
            below_resolution: (hits == 0).then(|| 1.0 / paths.max(1) as f64),
        }
    }

    /// Whether the interval is consistent with `p ≤ bound`.
    pub fn dominated_by(&self, bound: f64) -> bool {
        self.ci_low <= bound
    }
}

/// `2·exp(−nε²/(8‖ξ‖∞²))`.
pub fn azuma_bound(n: usize, eps: f64, sup_norm: f64) -> f64 {
    2.0 * (-(n as f64) * eps * eps / (8.0 * sup_norm * sup_norm)).exp()
}

/// `2m²·exp(−nε²/(8‖φ‖∞²))`, bounding `P(|Σ_j [φ(Z_j) − (1/m)Σ_l P^lφ(Z_j)]| ≥ mnε + 2m‖φ‖∞)`.
pub fn cesaro_block_bound(n: usize, m: usize, eps: f64, sup_norm: f64) -> f64 {
    (m * m) as f64 * azuma_bound(n, eps, sup_norm)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCell {
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub bound: f64,
    pub tail: TailCell,
    pub dominated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub source: String,
    pub sup_norm: f64,
    pub cells: Vec<BoundCell>,
    pub all_dominated: bool,
}

impl BoundCheck {
    fn new(source: String, sup_norm: f64, cells: Vec<BoundCell>) -> Self {
        let all_dominated = cells.iter().all(|c| c.dominated);
        BoundCheck {
            source,
            sup_norm,
            cells,
            all_dominated,
        }
    }
}

fn cell_grid(ns: &[usize], epss: &[f64]) -> Vec<(usize, f64)> {
    ns.iter().flat_map(|&n| epss.iter().map(move |&e| (n, e))).collect()
}

/// Azuma check on i.i.d. `±1` steps: `P(|S_n| ≥ nε)` against [`azuma_bound`].
pub fn azuma_check_rademacher(ns: &[usize], epss: &[f64], paths: usize, seed: u64, workers: usize) -> BoundCheck {
    use rand::Rng;
    let cells = cell_grid(ns, epss);
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let master = SeedSpec::derive(seed, "azuma-rademacher");
    let acc: Hits = run_blocks(paths, workers, |range| {
        let mut acc = Hits::default();
        acc.sized(cells.len());
        for i in range {
            let mut rng = SeedSpec::new(master, i).rng();
            let mut s = 0i64;
            acc.paths += 1;
            for j in 1..=n_max {
                s += if rng.random::<bool>() { 1 } else { -1 };
                for (c, &(n, e)) in cells.iter().enumerate() {
                    if n == j && s.abs() as f64 >= n as f64 * e {
                        acc.hits[c] += 1;
                    }
                }
            }
        }
        acc
    });
    let out = cells
        .iter()
        .enumerate()
        .map(|(c, &(n, eps))| {
            let bound = azuma_bound(n, eps, 1.0);
            let tail = TailCell::new(acc.hits[c], acc.paths);
            BoundCell { n, m: 1, eps, bound, tail, dominated: tail.dominated_by(bound) }
        })
        .collect();
    BoundCheck::new("rademacher".into(), 1.0, out)
}

/// `P^l φ` on grid nodes for `l = 0..=m`.
fn iterate_phi(cocycle: &DriftCocycle, m: usize) -> Vec<Vec<f64>> {
    let mut out = vec![cocycle.phi_values().to_vec()];
    let mut buf = Vec::new();
    for _ in 0..m {
        cocycle.kernel().apply(out.last().unwrap(), &mut buf);
        out.push(buf.clone());
    }
    out
}

fn phi_sup(cocycle: &DriftCocycle) -> f64 {
    cocycle.phi_values().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Azuma check on `ξ_j = φ(Z_j)` along the boundary chain: `P(|Σ (φ(Z_j) − Pφ(Z_{j−1}))| ≥ nε)`.
pub fn azuma_check_cocycle(
    cocycle: &DriftCocycle,
    x: &BoundaryTarget,
    ns: &[usize],
    epss: &[f64],
    paths: usize,
    seed: u64,
    workers: usize,
) -> Result<BoundCheck> {
    let cells = cell_grid(ns, epss);
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let pphi = iterate_phi(cocycle, 1);
    let sup = phi_sup(cocycle);
    let acc: Hits = run_chain_paths(cocycle, x, paths, seed, "azuma-cocycle", workers, |st, rng, acc: &mut Hits| {
        acc.sized(cells.len());
        let mut s = 0.0;
        let mut local = vec![0u64; cells.len()];
        for j in 1..=n_max {
            let prev = st.chain.node();
            if st.step(cocycle.measure.sample_index(rng)).is_err() {
                acc.escaped += 1;
                return;
            }
            s += pphi[0][st.chain.node()] - pphi[1][prev];
            for (c, &(n, e)) in cells.iter().enumerate() {
                if n == j && s.abs() >= n as f64 * e {
                    local[c] += 1;
                }
            }
        }
        acc.paths += 1;
        acc.hits.iter_mut().zip(local).for_each(|(h, l)| *h += l);
    })?;
    let out = cells
        .iter()
        .enumerate()
        .map(|(c, &(n, eps))| {
            let bound = azuma_bound(n, eps, sup);
            let tail = TailCell::new(acc.hits.get(c).copied().unwrap_or(0), acc.paths);
            BoundCell { n, m: 1, eps, bound, tail, dominated: tail.dominated_by(bound) }
        })
        .collect();
    Ok(BoundCheck::new(format!("cocycle:{x}"), sup, out))
}

/// Empirical left side of [`cesaro_block_bound`] on the boundary chain, for each `(n, m, ε)`.
#[allow(clippy::too_many_arguments)]
pub fn cesaro_block_check(
    cocycle: &DriftCocycle,
    x: &BoundaryTarget,
    ns: &[usize],
    ms: &[usize],
    epss: &[f64],
    paths: usize,
    seed: u64,
    workers: usize,
) -> Result<BoundCheck> {
    if ms.contains(&0) || ms.iter().any(|&m| ns.iter().any(|&n| m > n)) {
        return Err(Error::Precondition("block sizes must satisfy 1 ≤ m ≤ n".into()));
    }
    let m_max = ms.iter().copied().max().unwrap_or(1);
    let pphi = iterate_phi(cocycle, m_max);
    let sup = phi_sup(cocycle);
    // `A_m(z) = (1/m) Σ_{l=1}^m P^lφ(z)` per block size.
    let averages: Vec<Vec<f64>> = ms
        .iter()
        .map(|&m| {
            (0..cocycle.len())
                .map(|z| (1..=m).map(|l| pphi[l][z]).sum::<f64>() / m as f64)
                .collect()
        })
        .collect();
    let cells: Vec<(usize, usize, f64)> = ns
        .iter()
        .flat_map(|&n| ms.iter().enumerate().flat_map(move |(mi, _)| epss.iter().map(move |&e| (n, mi, e))))
        .collect();
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let acc: Hits = run_chain_paths(cocycle, x, paths, seed, "cesaro-block", workers, |st, rng, acc: &mut Hits| {
        acc.sized(cells.len());
        let mut s = vec![0.0; ms.len()];
        let mut local = vec![0u64; cells.len()];
        for j in 1..=n_max {
            if st.step(cocycle.measure.sample_index(rng)).is_err() {
                acc.escaped += 1;
                return;
            }
            let z = st.chain.node();
            for (mi, a) in averages.iter().enumerate() {
                s[mi] += pphi[0][z] - a[z];
            }
            for (c, &(n, mi, e)) in cells.iter().enumerate() {
                let m = ms[mi] as f64;
                if n == j && s[mi].abs() >= m * n as f64 * e + 2.0 * m * sup {
                    local[c] += 1;
                }
            }
        }
        acc.paths += 1;
        acc.hits.iter_mut().zip(local).for_each(|(h, l)| *h += l);
    })?;
    let out = cells
        .iter()
        .enumerate()
        .map(|(c, &(n, mi, eps))| {
            let bound = cesaro_block_bound(n, ms[mi], eps, sup);
            let tail = TailCell::new(acc.hits.get(c).copied().unwrap_or(0), acc.paths);
            BoundCell { n, m: ms[mi], eps, bound, tail, dominated: tail.dominated_by(bound) }
        })
        .collect();
    Ok(BoundCheck::new(format!("cesaro:{x}"), sup, out))
}

#[derive(Debug, Clone, Serialize)]
pub struct QvCell {
    pub n: usize,
    pub tail: TailCell,
    /// `(1/n) log P̂`, absent when no path hit.
    pub log_rate: Option<f64>,
    /// `(1/n) log(1/paths)` when no path hit.
    pub log_rate_below: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QvLdpReport {
    pub start: String,
    pub eps: f64,
    pub sigma_sq: f64,
    pub escaped: u64,
    pub cells: Vec<QvCell>,
    /// Least-squares slope of `(1/n) log P̂` against `n` over cells with hits.
    pub trend_slope: Option<f64>,
    /// Every consecutive pair of resolved cells decreases.
    pub strictly_decreasing: bool,
}

/// `P̂(|⟨M⟩_n − nσ²| ≥ nε)` along the boundary chain started at `x`.
#[allow(clippy::too_many_arguments)]
pub fn qv_ldp_probe(
    cocycle: &DriftCocycle,
    x: &BoundaryTarget,
    sigma_sq: f64,
    eps: f64,
    ns: &[usize],
    paths: usize,
    seed: u64,
    workers: usize,
) -> Result<QvLdpReport> {
    if !(eps > 0.0) || ns.is_empty() {
        return Err(Error::Precondition("need ε > 0 and a nonempty n list".into()));
    }
    let n_max = ns.iter().copied().max().unwrap();
    let acc: Hits = run_chain_paths(cocycle, x, paths, seed, "qv-ldp", workers, |st, rng, acc: &mut Hits| {
        acc.sized(ns.len());
        let mut br = 0.0;
        let mut local = vec![0u64; ns.len()];
        for j in 1..=n_max {
            match st.step(cocycle.measure.sample_index(rng)) {
                Ok(rec) => br += rec.bracket,
                Err(_) => {
                    acc.escaped += 1;
                    return;
                }
            }
            for (c, &n) in ns.iter().enumerate() {
                // Relative guard so a deterministic bracket never registers through rounding.
                if n == j && (br - n as f64 * sigma_sq).abs() >= n as f64 * eps * (1.0 + 1e-12) {
                    local[c] += 1;
                }
            }
        }
        acc.paths += 1;
        acc.hits.iter_mut().zip(local).for_each(|(h, l)| *h += l);
    })?;
    let cells: Vec<QvCell> = ns
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let tail = TailCell::new(acc.hits.get(c).copied().unwrap_or(0), acc.paths);
            QvCell {
                n,
                tail,
                log_rate: (tail.hits > 0).then(|| tail.p_hat.ln() / n as f64),
                log_rate_below: tail.below_resolution.map(|r| r.ln() / n as f64),
            }
        })
        .collect();
    let resolved: Vec<(f64, f64)> = cells.iter().filter_map(|c| c.log_rate.map(|r| (c.n as f64, r))).collect();
    let trend_slope = (resolved.len() >= 2).then(|| {
        let k = resolved.len() as f64;
        let xm = resolved.iter().map(|p| p.0).sum::<f64>() / k;
        let ym = resolved.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = resolved.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
        let sxx: f64 = resolved.iter().map(|p| (p.0 - xm).powi(2)).sum();
        sxy / sxx
    });
    let strictly_decreasing = resolved.len() >= 2 && resolved.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(QvLdpReport {
        start: x.to_string(),
        eps,
        sigma_sq,
        escaped: acc.escaped,
        cells,
        trend_slope,
        strictly_decreasing,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PunctualCell {
    pub k: usize,
    pub r: f64,
    pub tail: TailCell,
    /// Exact tail from the prefix chain when available.
    pub exact: Option<f64>,
    pub agrees: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PunctualReport {
    pub target: String,
    pub escaped: u64,
    pub cells: Vec<PunctualCell>,
    /// Pooled decay rate `β̂` in `P ≈ C e^{−βR}` with its standard error.
    pub beta_hat: Option<(f64, f64)>,
    /// Per-`k` decay rates.
    pub beta_by_k: Vec<(usize, Option<f64>)>,
    /// `max_R (max_k P̂ − min_k P̂)`.
    pub max_spread_across_k: f64,
}

/// Weighted least squares slope of `y` on `x`, with its standard error.
fn wls_slope(pts: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let xm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum::<f64>() / sxx;
    Some((b, (1.0 / sxx).sqrt()))
}

/// `P̂(κ(L_k) − σ(L_k, x) > R)` per `(k, R)`, with an exact tail for generator-uniform
/// free measures and infinite-word targets.
#[allow(clippy::too_many_arguments)]
pub fn punctual_deviation_probe(
    measure: &StepMeasure,
    x: &BoundaryTarget,
    rs: &[f64],
    ks: &[usize],
    paths: usize,
    seed: u64,
    workers: usize,
) -> Result<PunctualReport> {
    let targets = [x.clone()];
    Walker::new(measure, &targets)?;
    let cells: Vec<(usize, f64)> = ks.iter().flat_map(|&k| rs.iter().map(move |&r| (k, r))).collect();
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let master = SeedSpec::derive(seed, "punctual");
    let acc: Hits = run_blocks(paths, workers, |range| {
        let mut acc = Hits::default();
        acc.sized(cells.len());
        let mut walker = Walker::new(measure, &targets).expect("checked above");
        'path: for i in range {
            let mut rng = SeedSpec::new(master, i).rng();
            walker.reset();
            let mut local = vec![0u64; cells.len()];
            for j in 1..=k_max {
                walker.step(&mut rng);
                if !ks.contains(&j) {
                    continue;
                }
                let Some(s) = walker.sigma(0) else {
                    acc.escaped += 1;
                    continue 'path;
                };
                let dev = walker.kappa() - s;
                for (c, &(k, r)) in cells.iter().enumerate() {
                    if k == j && dev > r {
                        local[c] += 1;
                    }
                }
            }
            acc.paths += 1;
            acc.hits.iter_mut().zip(local).for_each(|(h, l)| *h += l);
        }
        acc
    });
    let infinite_word = matches!(x, BoundaryTarget::Free(b) if b.mode() == TailMode::RepeatLast);
    let oracle = if infinite_word { PrefixChainOracle::new(measure, k_max).ok() } else { None };
    let mut dists = std::collections::HashMap::new();
    if let Some(o) = &oracle {
        for &k in ks {
            dists.insert(k, o.distribution(k)?);
        }
    }
    let out: Vec<PunctualCell> = cells
        .iter()
        .enumerate()
        .map(|(c, &(k, r))| {
            let tail = TailCell::new(acc.hits.get(c).copied().unwrap_or(0), acc.paths);
            let exact = dists.get(&k).map(|d| {
                d.iter()
                    .flat_map(|row| row.iter().enumerate())
                    .filter(|(cp, _)| 2.0 * *cp as f64 > r)
                    .map(|(_, p)| p)
                    .sum::<f64>()
            });
            // Wilson at 95% widened to about four standard errors.
            let agrees = exact.map(|e| {
                let se = (e * (1.0 - e) / tail.paths.max(1) as f64).sqrt();
                (tail.p_hat - e).abs() <= 4.0 * se + 1.0 / tail.paths.max(1) as f64
            });
            PunctualCell { k, r, tail, exact, agrees }
        })
        .collect();
    let point = |c: &PunctualCell| {
        (c.tail.hits > 0 && c.tail.hits < c.tail.paths).then(|| (c.r, -c.tail.p_hat.ln(), c.tail.hits as f64))
    };
    let pooled: Vec<_> = out.iter().filter_map(point).collect();
    let beta_hat = wls_slope(&pooled);
    let beta_by_k = ks
        .iter()
        .map(|&k| {
            let pts: Vec<_> = out.iter().filter(|c| c.k == k).filter_map(point).collect();
            (k, wls_slope(&pts).map(|p| p.0))
        })
        .collect();
    let mut max_spread: f64 = 0.0;
    for &r in rs {
        let ps: Vec<f64> = out.iter().filter(|c| c.r == r).map(|c| c.tail.p_hat).collect();
        let hi = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = ps.iter().cloned().fold(f64::INFINITY, f64::min);
        max_spread = max_spread.max(hi - lo);
    }
    Ok(PunctualReport {
        target: x.to_string(),
        escaped: acc.escaped,
        cells: out,
        beta_hat,
        beta_by_k,
        max_spread_across_k: max_spread,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlCell {
    pub lambda: f64,
    pub n: usize,
    /// `log E[e^{λ(σ(L_n,x) − nℓ)}]`.
    pub log_lhs: f64,
    pub se: f64,
    /// `λ²(v + ε)n/2 + C|λ|`.
    pub log_rhs: f64,
    /// `false` when `|λ|` exceeds the certified range; the cell is then not evaluated.
    pub evaluated: bool,
    pub dominated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceControlReport {
    pub target: String,
    pub eps: f64,
    pub v_mu: f64,
    pub constant: f64,
    pub lambda_range: f64,
    pub method: Method,
    pub cells: Vec<ControlCell>,
    pub violations: usize,
}

/// `log` of the right side of the Laplace control bound.
pub fn laplace_control_rhs(lambda: f64, n: usize, v_mu: f64, eps: f64, constant: f64) -> f64 {
    lambda * lambda * (v_mu + eps) * n as f64 / 2.0 + constant * lambda.abs()
}

/// Compares `E[e^{λ(σ(L_n,x) − nℓ)}]` with `exp(λ²(v+ε)n/2 + C|λ|)`, `C = 2‖ψ‖∞`, for `|λ| ≤ b̂`.
///
/// `paths = None` requests the exact prefix chain (generator-uniform free measures,
/// infinite-word targets only).
#[allow(clippy::too_many_arguments)]
pub fn laplace_control_check(
    cocycle: &DriftCocycle,
    x: &BoundaryTarget,
    eps: f64,
    lambdas: &[f64],
    ns: &[usize],
    b_hat: f64,
    paths: Option<(usize, u64, usize)>,
) -> Result<LaplaceControlReport> {
    let v = cocycle.v_mu();
    let constant = 2.0 * cocycle.solution.sup_norm;
    let ell = cocycle.ell();
    let measure = &cocycle.measure;
    let in_range = |l: f64| l.abs() <= b_hat + 1e-12;
    // Per n: the law of σ(L_n, x) as (value, weight) pairs, or samples.
    let (method, laws): (Method, Vec<Vec<(f64, f64)>>) = match paths {
        None => {
            if !matches!(x, BoundaryTarget::Free(b) if b.mode() == TailMode::RepeatLast) {
                return Err(Error::UnsupportedMeasure("the exact route needs an infinite-word target".into()));
            }
            let n_max = ns.iter().copied().max().unwrap_or(0);
            let oracle = PrefixChainOracle::new(measure, n_max)?;
            let mut laws = Vec::new();
            for &n in ns {
                let d = oracle.distribution(n)?;
                let mut law = Vec::new();
                for (len, row) in d.iter().enumerate() {
                    for (cp, &p) in row.iter().enumerate() {
                        if p > 0.0 {
                            law.push((len as f64 - 2.0 * cp as f64, p));
                        }
                    }
                }
                laws.push(law);
            }
            (Method::ExactDp, laws)
        }
        Some((paths, seed, workers)) => {
            let targets = [x.clone()];
            Walker::new(measure, &targets)?;
            let n_max = ns.iter().copied().max().unwrap_or(0);
            let master = SeedSpec::derive(seed, "laplace-control");
            #[derive(Default)]
            struct Rows(Vec<Vec<f64>>);
            impl Merge for Rows {
                fn merge(&mut self, o: Self) {
                    self.0.extend(o.0);
                }
            }
            let rows: Rows = run_blocks(paths, workers, |range| {
                let mut walker = Walker::new(measure, &targets).expect("checked above");
                let mut rows = Vec::new();
                'path: for i in range {
                    let mut rng = SeedSpec::new(master, i).rng();
                    walker.reset();
                    let mut row = vec![0.0; ns.len()];
                    for j in 1..=n_max {
                        walker.step(&mut rng);
                        for (c, &n) in ns.iter().enumerate() {
                            if n == j {
                                match walker.sigma(0) {
                                    Some(s) => row[c] = s,
                                    None => continue 'path,
                                }
                            }
                        }
                    }
                    rows.push(row);
                }
                Rows(rows)
            });
            let w = 1.0 / rows.0.len().max(1) as f64;
            let laws = (0..ns.len()).map(|c| rows.0.iter().map(|r| (r[c], w)).collect()).collect();
            (Method::MonteCarlo, laws)
        }
    };
    let mut cells = Vec::new();
    for &l in lambdas {
        for (c, &n) in ns.iter().enumerate() {
            let log_rhs = laplace_control_rhs(l, n, v, eps, constant);
            if !in_range(l) {
                cells.push(ControlCell { lambda: l, n, log_lhs: f64::NAN, se: f64::NAN, log_rhs, evaluated: false, dominated: true });
                continue;
            }
            let (log_lhs, se) = match method {
                _ if l == 0.0 => (0.0, 0.0),
                Method::ExactDp => {
                    let m = laws[c].iter().map(|&(s, _)| l * (s - n as f64 * ell)).fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = laws[c].iter().map(|&(s, p)| p * (l * (s - n as f64 * ell) - m).exp()).sum();
                    (m + sum.ln(), 0.0)
                }
                Method::MonteCarlo => {
                    let mut acc = LogMeanExp::default();
                    laws[c].iter().for_each(|&(s, _)| acc.push(l * (s - n as f64 * ell)));
                    (acc.log_mean(), acc.se())
                }
            };
            let dominated = log_lhs - 3.0 * se <= log_rhs + 1e-12;
            cells.push(ControlCell { lambda: l, n, log_lhs, se, log_rhs, evaluated: true, dominated });
        }
    }
    let violations = cells.iter().filter(|c| !c.dominated).count();
    Ok(LaplaceControlReport {
        target: x.to_string(),
        eps,
        v_mu: v,
        constant,
        lambda_range: b_hat,
        method,
        cells,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryWord, Model, Point, Word};
    use crate::martingale::centering::DriftCocycle;

    fn uniform() -> StepMeasure {
        StepMeasure::uniform_free(Model::Free { rank: 2, depth: 6 }).unwrap()
    }

    #[test]
    fn bound_arithmetic() {
        assert!((azuma_bound(100, 0.5, 1.0) - 0.087_870).abs() < 1e-5);
        assert_eq!(azuma_bound(10, 0.0, 1.0), 2.0);
        assert!((cesaro_block_bound(400, 5, 0.1, 2.25) - 45.3).abs() < 0.05);
        assert_eq!(cesaro_block_bound(50, 1, 0.2, 1.0), azuma_bound(50, 0.2, 1.0));
    }

    #[test]
    fn rademacher_tails_dominated() {
        let rep = azuma_check_rademacher(&[50, 100], &[0.2, 0.5], 5000, 3, 2);
        assert!(rep.all_dominated);
        let again = azuma_check_rademacher(&[50, 100], &[0.2, 0.5], 5000, 3, 1);
        assert_eq!(rep.cells[0].tail.hits, again.cells[0].tail.hits);
    }

    #[test]
    fn uniform_probes() {
        let mu = uniform();
        let cocycle = DriftCocycle::solve(&mu, 1, 1).unwrap();
        let xi = BoundaryTarget::Free(BoundaryWord::ray(1));
        let qv = qv_ldp_probe(&cocycle, &xi, 0.75, 0.01, &[2, 10, 50], 500, 1, 1).unwrap();
        assert!(qv.cells.iter().all(|c| c.tail.hits == 0 && c.log_rate_below.is_some()));
        let az = azuma_check_cocycle(&cocycle, &xi, &[50], &[0.1], 500, 1, 1).unwrap();
        assert!(az.all_dominated && az.cells[0].tail.hits == 0);
        let ces = cesaro_block_check(&cocycle, &xi, &[50], &[1, 5], &[0.1], 500, 1, 1).unwrap();
        assert!(ces.all_dominated);
    }

    #[test]
    fn punctual_interior_and_exact() {
        let mu = uniform();
        let o = BoundaryTarget::Interior(Point::Vertex(Word::identity()));
        let rep = punctual_deviation_probe(&mu, &o, &[0.5, 2.0], &[5, 10], 300, 1, 1).unwrap();
        assert!(rep.cells.iter().all(|c| c.tail.hits == 0));
        let xi = BoundaryTarget::Free(BoundaryWord::ray(1));
        let rep = punctual_deviation_probe(&mu, &xi, &[1.0, 3.0, 5.0, 25.0], &[5, 10], 20000, 2, 2).unwrap();
        for c in &rep.cells {
            assert!(c.agrees.unwrap(), "{c:?}");
        }
        assert!(rep.cells.iter().filter(|c| c.r == 25.0).all(|c| c.tail.hits == 0));
        let (beta, _) = rep.beta_hat.unwrap();
        assert!((beta - 3f64.ln() / 2.0).abs() < 0.15, "{beta}");
    }

    #[test]
    fn laplace_control_exact_uniform() {
        let mu = uniform();
        let cocycle = DriftCocycle::solve(&mu, 1, 1).unwrap();
        let xi = BoundaryTarget::Free(BoundaryWord::ray(1));
        let rep = laplace_control_check(&cocycle, &xi, 0.1, &[0.0, 0.05, 0.6], &[1000], 0.4, None).unwrap();
        assert_eq!(rep.cells[0].log_lhs, 0.0);
        let c = &rep.cells[1];
        assert!(c.evaluated && c.dominated);
        assert!((c.log_rhs - 0.0025 * 0.85 * 1000.0 / 2.0).abs() < 1e-9);
        // Increments of σ − nℓ are i.i.d. here: +1/2 w.p. 3/4 and −3/2 w.p. 1/4.
        let closed = 1000.0 * (0.75 * (0.025f64).exp() + 0.25 * (-0.075f64).exp()).ln();
        assert!((c.log_lhs - closed).abs() < 1e-9, "{} {closed}", c.log_lhs);
        assert!(!rep.cells[2].evaluated);
        assert!(laplace_control_rhs(0.1, 10, 0.75, 0.2, 0.0) > laplace_control_rhs(0.1, 10, 0.75, 0.1, 0.0));
    }
}
