//! Stage orchestration: each stage adds a report section, assertions and data files.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Error;
use crate::estimators::{
    azuma_check_cocycle, azuma_check_rademacher, cesaro_block_check, curvature_at_drift, estimate_clt_variance,
    estimate_drift, estimate_laplace, laplace_control_check, legendre_transform, punctual_deviation_probe,
    qv_ldp_probe, rate_curvature, x_grid, Backend, LaplaceCurve, McBudget,
};
use crate::geometry::{BoundaryTarget, TailMode};
use crate::harness::config::{ConfigError, Resolved};
use crate::harness::report::{Assertion, Outcome, RunOutput, RunReport};
use crate::martingale::checks::symmetric_grid;
use crate::martingale::{
    accelerated_variance, conditional_mgf_bound_check, drift_of, pathwise_sweep, sigma_sq_occupation,
    submartingale_transform_check, DriftCocycle,
};
use crate::martingale::inequality::{fuzz_freedman_base, fuzz_scalar_inequality};
use crate::martingale::trace::trajectory_trace;
use crate::stats::EstimateWithCI;
use crate::walk::measure::{non_arithmetic_check, validate_measure, Verdict, DEFAULT_SUPPORT_CAP};
use crate::walk::oracle::{build_length_chain, PrefixChainOracle};
use crate::walk::path::sample_path;
use crate::walk::rng::SeedSpec;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Validate,
    Simulate,
    SolvePsi,
    Laplace,
    Rate,
    Transforms,
    Qv,
    Bounds,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Validate,
        Stage::Simulate,
        Stage::SolvePsi,
        Stage::Laplace,
        Stage::Rate,
        Stage::Transforms,
        Stage::Qv,
        Stage::Bounds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Simulate => "simulate",
            Stage::SolvePsi => "solve-psi",
            Stage::Laplace => "laplace",
            Stage::Rate => "rate",
            Stage::Transforms => "verify-transforms",
            Stage::Qv => "verify-qv",
            Stage::Bounds => "verify-bounds",
        }
    }
}

/// Why a run stopped before producing a report.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Divergence(String),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Divergence(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e}"),
            Failure::Divergence(e) => write!(f, "solver divergence: {e}"),
            Failure::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => Failure::Divergence(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> Res<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

struct Ctx<'a> {
    r: &'a Resolved,
    seed: u64,
    workers: usize,
    cocycle: Option<DriftCocycle>,
    curve: Option<LaplaceCurve>,
    drift: Option<EstimateWithCI>,
    b_hat: Option<f64>,
    sections: BTreeMap<String, Value>,
    assertions: Vec<Assertion>,
    paths: BTreeMap<String, u64>,
    files: Vec<(String, String)>,
}

impl<'a> Ctx<'a> {
    fn mc(&self, paths: usize) -> Backend {
        Backend::MonteCarlo(McBudget {
            paths,
            seed: self.seed,
            workers: self.workers,
        })
    }

    fn target(&self) -> &BoundaryTarget {
        &self.r.targets[0]
    }

    fn exact(&self) -> bool {
        build_length_chain(&self.r.measure, 0).is_ok()
    }

    fn assert(&mut self, name: &str, outcome: Outcome, reason: impl Into<String>) {
        self.assertions.push(Assertion {
            name: name.into(),
            outcome,
            reason: reason.into(),
        });
    }

    fn check(&mut self, name: &str, ok: bool, reason: impl Into<String>) {
        self.assert(name, if ok { Outcome::Pass } else { Outcome::Fail }, reason);
    }

    fn count(&mut self, what: &str, paths: usize) {
        *self.paths.entry(what.into()).or_default() += paths as u64;
    }

    fn drift(&mut self) -> EstimateWithCI {
        if self.drift.is_none() {
            self.drift = Some(drift_of(&self.r.measure, self.seed, self.workers));
        }
        self.drift.unwrap()
    }

    fn cocycle(&mut self) -> Res<&DriftCocycle> {
        if self.cocycle.is_none() {
            self.cocycle = Some(DriftCocycle::solve(&self.r.measure, self.seed, self.workers)?);
        }
        Ok(self.cocycle.as_ref().unwrap())
    }

    fn b_hat(&mut self) -> Res<f64> {
        if self.b_hat.is_none() {
            let step = self.r.config.transforms.mgf_step;
            let eps = self.r.config.transforms.mgf_epsilon;
            let rep = conditional_mgf_bound_check(self.cocycle()?, eps, &symmetric_grid(1.0, step));
            self.b_hat = Some(rep.b_hat);
        }
        Ok(self.b_hat.unwrap())
    }

    /// `Σ π̃ φ` on the centering grid.
    fn grid_sigma_sq(&mut self) -> Res<f64> {
        let c = self.cocycle()?;
        Ok(c.solution.stationary.iter().zip(c.phi_values()).map(|(p, f)| p * f).sum())
    }
}

fn validate(ctx: &mut Ctx) -> Res<()> {
    let m = &ctx.r.measure;
    let v = validate_measure(m, 2);
    let na = non_arithmetic_check(m, 2, DEFAULT_SUPPORT_CAP);
    ctx.sections.insert(
        "validate".into(),
        json!({ "report": to_value(&v), "non_arithmetic": to_value(&na), "atoms": m.len() }),
    );
    let defect = v.probability_sum_defect;
    ctx.check("measure-normalized", defect <= 1e-12, format!("probability-sum defect {defect:.2e}"));
    let (outcome, reason) = match v.non_elementary {
        Verdict::Verified => (Outcome::Pass, format!("independent loxodromics {:?}", v.witness)),
        Verdict::Unknown => (Outcome::Inconclusive, "no independent loxodromic pair found at depth 2".into()),
    };
    ctx.assert("non-elementary", outcome, reason);
    Ok(())
}

fn simulate(ctx: &mut Ctx) -> Res<()> {
    let c = &ctx.r.config.simulate;
    let m = &ctx.r.measure;
    let reference = ctx.drift();
    let mc = ctx.mc(c.paths);
    let drift_mc = estimate_drift(m, c.n, mc)?;
    let var_mc = estimate_clt_variance(m, c.n, mc)?;
    ctx.count("simulate", 2 * c.paths);
    let mut section = json!({
        "reference_drift": to_value(&reference),
        "mc_n": c.n,
        "drift_mc": to_value(&drift_mc),
        "clt_variance_mc": to_value(&var_mc),
    });
    let z = ctx.r.config.tolerances.z;
    if ctx.exact() {
        let drift_exact = estimate_drift(m, c.exact_n, Backend::ExactDp)?;
        let var_exact = estimate_clt_variance(m, c.exact_n, Backend::ExactDp)?;
        let same_n = estimate_drift(m, c.n, Backend::ExactDp)?;
        let var_same_n = estimate_clt_variance(m, c.n, Backend::ExactDp)?;
        section["exact_n"] = json!(c.exact_n);
        section["drift_exact"] = to_value(&drift_exact);
        section["clt_variance_exact"] = to_value(&var_exact);
        let zd = drift_mc.z_score(&same_n);
        let zv = var_mc.z_score(&var_same_n);
        ctx.check("drift-mc-vs-exact", zd <= z, format!("z = {zd:.2} at n = {}", c.n));
        ctx.check("variance-mc-vs-exact", zv <= z, format!("z = {zv:.2} at n = {}", c.n));
    } else {
        let zd = drift_mc.z_score(&reference);
        let outcome = if zd <= z { Outcome::Pass } else { Outcome::Inconclusive };
        ctx.assert(
            "drift-mc-vs-reference",
            outcome,
            format!("z = {zd:.2} against the limit drift; finite-n bias is not modelled"),
        );
    }
    ctx.sections.insert("simulate".into(), section);
    let traj = sample_path(m, c.trace_n, SeedSpec::new(ctx.seed, 0), &ctx.r.targets, true)?;
    let text = csv_string(|b| traj.write_csv(b))?;
    ctx.files.push(("trajectory.csv".into(), text));
    Ok(())
}

fn solve_psi(ctx: &mut Ctx) -> Res<()> {
    let spec = ctx.r.config.psi.clone();
    let x = ctx.target().clone();
    let (seed, workers) = (ctx.seed, ctx.workers);
    let trace_n = ctx.r.config.simulate.trace_n;
    let a_values = ctx.r.config.transforms.a_values.clone();
    let c = ctx.cocycle()?;
    let sol = &c.solution;
    let section = json!({
        "grid": sol.grid.label(0).len(),
        "nodes": sol.psi.len(),
        "ell": sol.ell,
        "drift_mismatch": sol.drift_mismatch,
        "residual": sol.residual,
        "constant_drift_residual": sol.constant_drift_residual,
        "sup_norm": sol.sup_norm,
        "oscillation": sol.oscillation,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "v_mu": c.v_mu(),
    });
    let residual = sol.residual;
    let export = sol.export();
    let mut psi_csv = String::from("id,label,psi,phi\n");
    for (node, phi) in export.nodes.iter().zip(c.phi_values()) {
        psi_csv.push_str(&format!("{},{},{},{}\n", node.id, node.label, node.psi, phi));
    }
    let sweep = pathwise_sweep(c, &x, spec.pathwise_n, spec.pathwise_paths, spec.a, seed, workers)?;
    let traj = sample_path(&c.measure, trace_n, SeedSpec::new(seed, 0), &[], true)?;
    let trace = trajectory_trace(c, &traj, &x, &a_values)?;
    let trace_csv = csv_string(|b| trace.write_csv(b))?;
    let mut section = section;
    section["pathwise"] = to_value(&sweep);
    ctx.sections.insert("solve-psi".into(), section);
    ctx.files.push(("psi.csv".into(), psi_csv));
    ctx.files.push(("trace.csv".into(), trace_csv));
    ctx.count("solve-psi", spec.pathwise_paths);
    ctx.check("centering-residual", residual <= 1e-8, format!("sup residual {residual:.2e}"));
    ctx.check(
        "centering-pathwise",
        sweep.centering_violations == 0,
        format!(
            "{} violations of |M − (σ − nℓ)| ≤ 2‖ψ‖∞ over {} paths, {} escaped",
            sweep.centering_violations, sweep.paths, sweep.escaped
        ),
    );
    ctx.check(
        "difference-bound",
        sweep.difference.violations == 0 && sweep.monotonicity_violations == 0,
        format!(
            "{} difference-bound and {} monotonicity violations; {} exceed κ + ℓ + ‖ψ‖∞",
            sweep.difference.violations, sweep.monotonicity_violations, sweep.difference.sup_norm_form_violations
        ),
    );
    Ok(())
}

fn laplace(ctx: &mut Ctx) -> Res<()> {
    let spec = ctx.r.config.laplace.clone();
    let m = &ctx.r.measure;
    let lmax = ctx.r.lambda_max;
    let z = ctx.r.config.tolerances.z;
    let mc = ctx.mc(spec.paths);
    let curve_mc = estimate_laplace(m, &spec.mc_lambdas, &spec.mc_ns, lmax, mc, None)?;
    let curve_x = estimate_laplace(m, &spec.mc_lambdas, &spec.mc_ns, lmax, mc, Some(ctx.target()))?;
    ctx.count("laplace", 2 * spec.paths);
    let mut section = json!({ "lambda_max": lmax });
    let primary = if ctx.exact() {
        let grid = symmetric_grid(lmax, spec.exact_step);
        let curve = estimate_laplace(m, &grid, &spec.exact_ns, lmax, Backend::ExactDp, None)?;
        let oracle = estimate_laplace(m, &spec.mc_lambdas, &spec.mc_ns, lmax, Backend::ExactDp, None)?;
        let mut worst: f64 = 0.0;
        for (a, b) in curve_mc.cells.iter().zip(&oracle.cells) {
            let zc = if a.se > 0.0 { (a.value - b.value).abs() / a.se } else if a.value == b.value { 0.0 } else { f64::INFINITY };
            worst = worst.max(zc);
        }
        section["oracle_max_z"] = json!(worst);
        ctx.check(
            "laplace-oracle-equivalence",
            worst <= z,
            format!("max |MC − exact|/SE = {worst:.2} over {} cells", oracle.cells.len()),
        );
        let mut fekete_gap: f64 = f64::INFINITY;
        for (li, &l) in curve.lambdas.iter().enumerate() {
            if l < 0.0 {
                continue;
            }
            for (i, &n) in curve.ns.iter().enumerate() {
                for (j, &n2) in curve.ns.iter().enumerate() {
                    if n2 > n && n2 % n == 0 {
                        fekete_gap = fekete_gap.min(curve.cell(li, i).value - curve.cell(li, j).value);
                    }
                }
            }
        }
        let ok = !(fekete_gap < -1e-12);
        section["fekete_min_gap"] = json!(fekete_gap.is_finite().then_some(fekete_gap));
        ctx.check("fekete-monotone", ok, format!("min Λ̂_n − Λ̂_kn over λ ≥ 0: {fekete_gap:.3e}"));
        ctx.files.push(("laplace.csv".into(), csv_string(|b| curve.write_csv(b))?));
        curve
    } else {
        curve_mc.clone()
    };
    let conv = primary.convexity_violations.len() + curve_mc.convexity_violations.len();
    let jensen = primary.jensen_violations.len() + curve_mc.jensen_violations.len();
    ctx.check(
        "laplace-convexity",
        conv == 0 && jensen == 0,
        format!("{conv} convexity and {jensen} Jensen violations beyond CI slack"),
    );
    let low = curve_mc.cells.iter().filter(|c| c.low_confidence).count();
    section["low_confidence_cells"] = json!(low);
    let ell = ctx.drift().estimate;
    let fit = curvature_at_drift(&primary, ell, spec.fit_window);
    let fit_x = curvature_at_drift(&curve_x, ell, spec.fit_window);
    section["method"] = to_value(&primary.method);
    section["drift"] = json!(ell);
    section["curvature"] = to_value(&fit);
    section["curvature_target"] = to_value(&fit_x);
    section["target"] = json!(curve_x.target);
    section["mc_cells"] = to_value(&curve_mc.cells);
    section["target_cells"] = to_value(&curve_x.cells);
    if fit.inconclusive {
        let reason = fit.reason.clone().unwrap_or_default();
        ctx.assert("curvature-fit", Outcome::Inconclusive, reason);
    } else {
        ctx.check(
            "curvature-fit",
            fit.residual.is_finite(),
            format!("c = {:.5} ± {:.1e}, residual {:.1e}, half-window {:?}", fit.c, fit.se, fit.residual, fit.c_half_window),
        );
    }
    ctx.sections.insert("laplace".into(), section);
    if !ctx.exact() {
        ctx.files.push(("laplace.csv".into(), csv_string(|b| primary.write_csv(b))?));
    }
    ctx.files.push(("laplace_mc.csv".into(), csv_string(|b| curve_mc.write_csv(b))?));
    ctx.files.push(("laplace_target.csv".into(), csv_string(|b| curve_x.write_csv(b))?));
    ctx.curve = Some(primary);
    Ok(())
}

fn rate(ctx: &mut Ctx) -> Res<()> {
    if ctx.curve.is_none() {
        laplace(ctx)?;
    }
    let spec = ctx.r.config.rate.clone();
    let tol = ctx.r.config.tolerances.rate_at_drift;
    let ell = ctx.drift().estimate;
    let curve = ctx.curve.as_ref().unwrap();
    let ni = curve.ns.len() - 1;
    let xs = x_grid(ell, spec.x_half_width, spec.x_step);
    let rate = match legendre_transform(curve, ni, &xs) {
        Ok(r) => r,
        Err(e) => {
            ctx.check("rate-transform", false, e.to_string());
            return Ok(());
        }
    };
    let at = |x: f64| {
        rate.xs
            .iter()
            .position(|&v| (v - x).abs() < 1e-9)
            .map(|i| rate.values[i])
    };
    let u = spec.probe_offset;
    let i0 = at(ell).unwrap_or(f64::NAN);
    let ip = at(ell + u).map(|v| v / (u * u));
    let im = at(ell - u).map(|v| v / (u * u));
    let fit = rate_curvature(&rate, ell, spec.fit_window);
    ctx.sections.insert(
        "rate".into(),
        json!({
            "n": curve.ns[ni],
            "rate_at_drift": i0,
            "ratio_plus": ip,
            "ratio_minus": im,
            "offset": u,
            "max_repair": rate.max_repair,
            "curvature": to_value(&fit),
            "edge_points": rate.at_edge.iter().filter(|&&e| e).count(),
        }),
    );
    let text = csv_string(|b| rate.write_csv(b))?;
    ctx.files.push(("rate.csv".into(), text));
    ctx.check("rate-minimum", i0 <= tol, format!("I(ℓ̂) = {i0:.3e}"));
    ctx.check(
        "rate-nonnegative",
        rate.values.iter().all(|&v| v >= 0.0),
        "I ≥ 0 on the grid",
    );
    if fit.inconclusive {
        ctx.assert("rate-curvature", Outcome::Inconclusive, fit.reason.clone().unwrap_or_default());
    } else {
        ctx.check("rate-curvature", fit.c.is_finite(), format!("c = {:.4}", fit.c));
    }
    Ok(())
}

fn transforms(ctx: &mut Ctx) -> Res<()> {
    let spec = ctx.r.config.transforms.clone();
    let (seed, workers) = (ctx.seed, ctx.workers);
    let lmax = ctx.r.lambda_max;
    let x = ctx.target().clone();
    let scalar = fuzz_scalar_inequality(spec.fuzz_cases, seed, workers, spec.fuzz_tol);
    let base = fuzz_freedman_base(spec.fuzz_cases, seed, workers, spec.fuzz_tol);
    ctx.check(
        "scalar-inequality-fuzz",
        scalar.violations == 0,
        format!("{} cases, {} violations, min relative margin {:.3e}", scalar.cases, scalar.violations, scalar.min_relative_margin),
    );
    ctx.check(
        "freedman-base-fuzz",
        base.violations == 0,
        format!("{} cases, {} violations, min relative margin {:.3e}", base.cases, base.violations, base.min_relative_margin),
    );
    let c = ctx.cocycle()?;
    let mgf = conditional_mgf_bound_check(c, spec.mgf_epsilon, &symmetric_grid(1.0, spec.mgf_step));
    let mut reports = Vec::new();
    for &l in &spec.lambdas {
        for &a in &spec.a_values {
            reports.push(submartingale_transform_check(c, &x, l, a, lmax, spec.n_max, spec.paths, seed, workers)?);
        }
    }
    ctx.b_hat = Some(mgf.b_hat);
    for r in &reports {
        let tag = format!("λ={} a={}", r.lambda, r.a);
        ctx.check(
            &format!("submartingale-one-step {tag}"),
            r.one_step_pass,
            format!("min one-step factor {:.15}", r.one_step_min),
        );
        ctx.check(
            &format!("submartingale-mc {tag}"),
            r.mc_pass,
            format!("min paired z {:.2} over {} paths ({} escaped)", r.min_paired_z, r.paths, r.escaped),
        );
    }
    ctx.count("verify-transforms", reports.len() * spec.paths);
    ctx.sections.insert(
        "verify-transforms".into(),
        json!({
            "scalar_fuzz": to_value(&scalar),
            "base_fuzz": to_value(&base),
            "conditional_mgf": to_value(&mgf),
            "submartingale": to_value(&reports),
        }),
    );
    Ok(())
}

fn qv(ctx: &mut Ctx) -> Res<()> {
    let spec = ctx.r.config.qv.clone();
    let (seed, workers) = (ctx.seed, ctx.workers);
    let z = ctx.r.config.tolerances.z;
    let x = ctx.target().clone();
    let sigma_sq = ctx.grid_sigma_sq()?;
    let trace_n = ctx.r.config.simulate.trace_n;
    let var_n = ctx.r.config.simulate.exact_n;
    let var_paths = ctx.r.config.simulate.paths;
    let depth = match ctx.r.model {
        crate::geometry::Model::Free { depth, .. } => depth,
        crate::geometry::Model::Plane => 0,
    };
    let exact = ctx.exact();
    let half = (var_n / 2).max(1);
    let (v1, v2) = if exact {
        (
            estimate_clt_variance(&ctx.r.measure, half, Backend::ExactDp)?,
            estimate_clt_variance(&ctx.r.measure, var_n, Backend::ExactDp)?,
        )
    } else {
        let mc = ctx.mc(var_paths);
        ctx.count("verify-qv", 2 * var_paths);
        (
            estimate_clt_variance(&ctx.r.measure, half, mc)?,
            estimate_clt_variance(&ctx.r.measure, var_n, mc)?,
        )
    };
    let clt = richardson(&v1, &v2);
    let ell = ctx.drift().estimate;
    let c = ctx.cocycle()?;
    let phi = c.phi_values();
    let phi_osc = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - phi.iter().cloned().fold(f64::INFINITY, f64::min);
    let traj = sample_path(&c.measure, trace_n, SeedSpec::new(seed, 1), &[], true)?;
    let trace = trajectory_trace(c, &traj, &x, &[1.0])?;
    let bracket_gap = trace
        .bracket
        .iter()
        .enumerate()
        .map(|(n, &b)| (b - n as f64 * sigma_sq).abs())
        .fold(0.0, f64::max);
    let occ = sigma_sq_occupation(c, &x, spec.occupation_n, spec.burn_in, spec.occupation_paths, seed, workers)?;
    let accel = if spec.accelerate_k > 0 && depth > 0 {
        Some(accelerated_variance(&c.measure, spec.accelerate_k, depth, ell)?)
    } else {
        None
    };
    let probe = qv_ldp_probe(c, &x, sigma_sq, spec.eps, &spec.ns, spec.paths, seed, workers)?;
    ctx.count("verify-qv", spec.occupation_paths + spec.paths);
    if phi_osc < 1e-12 {
        ctx.check(
            "bracket-linear",
            bracket_gap <= 1e-9 * trace_n as f64,
            format!("max |⟨M⟩_n − nσ²| = {bracket_gap:.2e} with φ constant"),
        );
    }
    let tol = ctx.r.config.tolerances.exact;
    let zo = joint_z(&occ.estimate, &clt, tol);
    ctx.check(
        "variance-occupation-vs-clt",
        zo <= z,
        format!("occupation {:.4} vs CLT {:.4}: z = {zo:.2}", occ.estimate.estimate, clt.estimate),
    );
    if let Some(a) = &accel {
        let ex = EstimateWithCI::exact(a.value);
        let (za, zc) = (joint_z(&ex, &occ.estimate, tol), joint_z(&ex, &clt, tol));
        ctx.check(
            "variance-accelerated",
            za <= z && zc <= z,
            format!(
                "v(μ^{{*{}}})/{} = {:.4} vs occupation z = {za:.2}, CLT z = {zc:.2}",
                a.k, a.k, a.value
            ),
        );
    }
    let all_below = probe.cells.iter().all(|c| c.tail.hits == 0);
    ctx.check(
        "qv-ldp-decay",
        all_below || probe.strictly_decreasing,
        if all_below {
            "every cell below resolution".to_string()
        } else {
            format!(
                "(1/n) log P̂ = {:?}; P̂ = {:?}",
                probe.cells.iter().map(|c| c.log_rate.map(|r| (r * 1e4).round() / 1e4)).collect::<Vec<_>>(),
                probe.cells.iter().map(|c| c.tail.p_hat).collect::<Vec<_>>()
            )
        },
    );
    ctx.sections.insert(
        "verify-qv".into(),
        json!({
            "grid_sigma_sq": sigma_sq,
            "phi_oscillation": phi_osc,
            "bracket_gap": bracket_gap,
            "clt_variance": to_value(&clt),
            "clt_variance_half": to_value(&v1),
            "clt_variance_full": to_value(&v2),
            "clt_n": var_n,
            "occupation": to_value(&occ),
            "accelerated": to_value(&accel),
            "qv_ldp": to_value(&probe),
        }),
    );
    Ok(())
}

/// `2V(n) − V(n/2)`: removes the `1/n` term of the finite-n variance.
fn richardson(half: &EstimateWithCI, full: &EstimateWithCI) -> EstimateWithCI {
    let value = 2.0 * full.estimate - half.estimate;
    if full.se == 0.0 && half.se == 0.0 {
        return EstimateWithCI::exact(value);
    }
    let se = (4.0 * full.se * full.se + half.se * half.se).sqrt();
    EstimateWithCI::monte_carlo(value, se, full.samples)
}

/// Distance in joint standard errors after an absolute tolerance.
fn joint_z(a: &EstimateWithCI, b: &EstimateWithCI, abs_tol: f64) -> f64 {
    let gap = ((a.estimate - b.estimate).abs() - abs_tol).max(0.0);
    if gap == 0.0 {
        return 0.0;
    }
    let se = a.se.hypot(b.se);
    if se > 0.0 {
        gap / se
    } else {
        f64::INFINITY
    }
}

fn bounds(ctx: &mut Ctx) -> Res<()> {
    let spec = ctx.r.config.bounds.clone();
    let (seed, workers) = (ctx.seed, ctx.workers);
    let x = ctx.target().clone();
    let b_hat = ctx.b_hat()?;
    let rad = azuma_check_rademacher(&spec.azuma_ns, &spec.azuma_eps, spec.paths, seed, workers);
    let c = ctx.cocycle()?;
    let az = azuma_check_cocycle(c, &x, &spec.azuma_ns, &spec.azuma_eps, spec.paths, seed, workers)?;
    let ces = cesaro_block_check(c, &x, &spec.cesaro_ns, &spec.cesaro_ms, &spec.cesaro_eps, spec.paths, seed, workers)?;
    let exact_ok = matches!(&x, BoundaryTarget::Free(b) if b.mode() == TailMode::RepeatLast)
        && PrefixChainOracle::new(&c.measure, 0).is_ok();
    let budget = (!exact_ok).then_some((spec.paths, seed, workers));
    let control = laplace_control_check(c, &x, spec.control_eps, &spec.control_lambdas, &spec.control_ns, b_hat, budget)?;
    let punct = punctual_deviation_probe(&c.measure, &x, &spec.punctual_rs, &spec.punctual_ks, spec.paths, seed, workers)?;
    ctx.count("verify-bounds", spec.paths * (4 + usize::from(budget.is_some())));
    ctx.check("azuma-rademacher", rad.all_dominated, format!("{} cells", rad.cells.len()));
    ctx.check("azuma-cocycle", az.all_dominated, format!("{} cells, ‖φ‖∞ = {:.4}", az.cells.len(), az.sup_norm));
    ctx.check("cesaro-block", ces.all_dominated, format!("{} cells", ces.cells.len()));
    let evaluated = control.cells.iter().filter(|c| c.evaluated).count();
    ctx.check(
        "laplace-control",
        control.violations == 0,
        format!("{} violations over {evaluated} evaluated cells, |λ| ≤ {b_hat}", control.violations),
    );
    let disagree = punct.cells.iter().filter(|c| c.agrees == Some(false)).count();
    if punct.cells.iter().any(|c| c.agrees.is_some()) {
        ctx.check("punctual-exact", disagree == 0, format!("{disagree} cells disagree with the exact tail"));
    }
    ctx.sections.insert(
        "verify-bounds".into(),
        json!({
            "azuma_rademacher": to_value(&rad),
            "azuma_cocycle": to_value(&az),
            "cesaro": to_value(&ces),
            "laplace_control": to_value(&control),
            "punctual": to_value(&punct),
        }),
    );
    Ok(())
}

/// Runs the given stages in order and collects the report.
pub fn run_stages(r: &Resolved, stages: &[Stage]) -> Res<RunOutput> {
    let mut ctx = Ctx {
        r,
        seed: r.config.seed,
        workers: r.config.workers.max(1),
        cocycle: None,
        curve: None,
        drift: None,
        b_hat: None,
        sections: BTreeMap::new(),
        assertions: Vec::new(),
        paths: BTreeMap::new(),
        files: Vec::new(),
    };
    let mut timing = Vec::new();
    let mut order = stages.to_vec();
    order.sort();
    order.dedup();
    for s in &order {
        let t0 = Instant::now();
        match s {
            Stage::Validate => validate(&mut ctx)?,
            Stage::Simulate => simulate(&mut ctx)?,
            Stage::SolvePsi => solve_psi(&mut ctx)?,
            Stage::Laplace => laplace(&mut ctx)?,
            Stage::Rate => rate(&mut ctx)?,
            Stage::Transforms => transforms(&mut ctx)?,
            Stage::Qv => qv(&mut ctx)?,
            Stage::Bounds => bounds(&mut ctx)?,
        }
        timing.push((s.name().to_string(), t0.elapsed().as_secs_f64()));
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        config_hash: r.hash.clone(),
        seed: r.config.seed,
        stages: order.iter().map(|s| s.name().to_string()).collect(),
        sections: ctx.sections,
        assertions: ctx.assertions,
        paths: ctx.paths,
    };
    Ok(RunOutput {
        report,
        timing,
        files: ctx.files,
        config: r.config.to_toml(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentConfig;

    #[test]
    fn exit_codes_follow_failure_kind() {
        let div = Failure::from(Error::Diverged {
            iterations: 10,
            residual: 1.0,
        });
        assert_eq!(div.exit_code(), 3);
        let cfg = ExperimentConfig::preset("nope").unwrap_err();
        assert_eq!(Failure::Config(cfg).exit_code(), 2);
        assert_eq!(Failure::from(Error::InvariantViolation("x".into())).exit_code(), 1);
    }

    #[test]
    fn richardson_removes_inverse_n_term() {
        let half = EstimateWithCI::exact(0.75 - 0.3 / 100.0);
        let full = EstimateWithCI::exact(0.75 - 0.3 / 200.0);
        assert!((richardson(&half, &full).estimate - 0.75).abs() < 1e-15);
    }

    #[test]
    fn joint_z_uses_absolute_floor() {
        let a = EstimateWithCI::exact(1.0);
        let b = EstimateWithCI::exact(1.0 + 1e-12);
        assert_eq!(joint_z(&a, &b, 1e-9), 0.0);
        assert!(joint_z(&a, &EstimateWithCI::exact(1.1), 1e-9).is_infinite());
        let c = EstimateWithCI::monte_carlo(1.2, 0.1, 100);
        assert!((joint_z(&a, &c, 0.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stages_run_in_canonical_order() {
        let r = ExperimentConfig::default().resolve().unwrap();
        let out = run_stages(&r, &[Stage::Simulate, Stage::Validate, Stage::Validate]).unwrap();
        assert_eq!(out.report.stages, vec!["validate", "simulate"]);
        assert!(out.report.sections.contains_key("simulate"));
    }
}
