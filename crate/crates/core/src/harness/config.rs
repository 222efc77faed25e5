//! Experiment configuration: a TOML file with defaults for every field.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{BoundaryTarget, GroupElement, Model};
use crate::walk::measure::StepMeasure;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Not part of the config hash: results do not depend on it.
    pub workers: usize,
    /// Not part of the config hash.
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    pub measure: MeasureSpec,
    /// Boundary targets in text form; the first one starts the boundary chain.
    pub targets: Vec<String>,
    pub simulate: SimulateSpec,
    pub psi: PsiSpec,
    pub laplace: LaplaceSpec,
    pub rate: RateSpec,
    pub transforms: TransformSpec,
    pub qv: QvSpec,
    pub bounds: BoundsSpec,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Free,
    Plane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub rank: u32,
    /// Boundary prefix depth, also the centering-grid depth.
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Uniform on the generators and their inverses.
    Uniform,
    /// `μ(a) = bias`, the remaining mass split evenly over the other generators.
    Biased,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    /// A reduced word such as `"ab"` or a matrix `"[[2,0],[0,0.5]]"`.
    pub element: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSpec {
    pub preset: Preset,
    pub bias: f64,
    pub atoms: Vec<AtomSpec>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    /// Horizon for the exact drift and variance.
    pub exact_n: usize,
    /// Horizon and path count for the Monte Carlo drift and variance.
    pub n: usize,
    pub paths: usize,
    /// Length of the sample trajectory written to `trajectory.csv`.
    pub trace_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsiSpec {
    pub pathwise_n: usize,
    pub pathwise_paths: usize,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplaceSpec {
    /// `|λ|` cap; defaults to a quarter of the measure's α.
    pub lambda_max: Option<f64>,
    pub exact_step: f64,
    pub exact_ns: Vec<usize>,
    pub mc_lambdas: Vec<f64>,
    pub mc_ns: Vec<usize>,
    pub paths: usize,
    pub fit_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSpec {
    pub x_half_width: f64,
    pub x_step: f64,
    pub fit_window: f64,
    /// Offset `u` at which `I(ℓ ± u)/u²` is reported.
    pub probe_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformSpec {
    pub fuzz_cases: usize,
    pub fuzz_tol: f64,
    pub lambdas: Vec<f64>,
    pub a_values: Vec<f64>,
    pub n_max: usize,
    pub paths: usize,
    pub mgf_epsilon: f64,
    pub mgf_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QvSpec {
    pub eps: f64,
    pub ns: Vec<usize>,
    pub paths: usize,
    pub occupation_n: usize,
    pub burn_in: usize,
    pub occupation_paths: usize,
    /// Convolution power for the accelerated variance; 0 skips it.
    pub accelerate_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSpec {
    pub azuma_ns: Vec<usize>,
    pub azuma_eps: Vec<f64>,
    pub paths: usize,
    pub cesaro_ns: Vec<usize>,
    pub cesaro_ms: Vec<usize>,
    pub cesaro_eps: Vec<f64>,
    pub control_eps: f64,
    pub control_lambdas: Vec<f64>,
    pub control_ns: Vec<usize>,
    pub punctual_rs: Vec<f64>,
    pub punctual_ks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Standard errors allowed between a Monte Carlo estimate and its reference.
    pub z: f64,
    /// Absolute slack for exact comparisons.
    pub exact: f64,
    /// Allowed `I(ℓ̂)`.
    pub rate_at_drift: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 20_240_601,
            workers: 1,
            out: None,
            model: ModelSpec::default(),
            measure: MeasureSpec::default(),
            targets: vec!["a^inf".into()],
            simulate: SimulateSpec::default(),
            psi: PsiSpec::default(),
            laplace: LaplaceSpec::default(),
            rate: RateSpec::default(),
            transforms: TransformSpec::default(),
            qv: QvSpec::default(),
            bounds: BoundsSpec::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Free,
            rank: 2,
            depth: 8,
        }
    }
}

impl Default for MeasureSpec {
    fn default() -> Self {
        MeasureSpec {
            preset: Preset::Uniform,
            bias: 0.4,
            atoms: Vec::new(),
            alpha: 1.0,
        }
    }
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            exact_n: 2000,
            n: 200,
            paths: 20_000,
            trace_n: 200,
        }
    }
}

impl Default for PsiSpec {
    fn default() -> Self {
        PsiSpec {
            pathwise_n: 200,
            pathwise_paths: 2000,
            a: 1.0,
        }
    }
}

impl Default for LaplaceSpec {
    fn default() -> Self {
        LaplaceSpec {
            lambda_max: None,
            exact_step: 0.0125,
            exact_ns: vec![1000, 2000, 4000],
            mc_lambdas: vec![-0.1, -0.05, 0.0, 0.05, 0.1],
            mc_ns: vec![10, 50, 100, 200],
            paths: 20_000,
            fit_window: 0.1,
        }
    }
}

impl Default for RateSpec {
    fn default() -> Self {
        RateSpec {
            x_half_width: 0.1,
            x_step: 0.005,
            fit_window: 0.1,
            probe_offset: 0.05,
        }
    }
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec {
            fuzz_cases: 20_000,
            fuzz_tol: 1e-9,
            lambdas: vec![0.05, 0.1],
            a_values: vec![1.0, 2.0],
            n_max: 200,
            paths: 5000,
            mgf_epsilon: 0.1,
            mgf_step: 0.05,
        }
    }
}

impl Default for QvSpec {
    fn default() -> Self {
        QvSpec {
            eps: 0.05,
            ns: vec![100, 200, 400],
            paths: 5000,
            occupation_n: 400,
            burn_in: 50,
            occupation_paths: 2000,
            accelerate_k: 2,
        }
    }
}

impl Default for BoundsSpec {
    fn default() -> Self {
        BoundsSpec {
            azuma_ns: vec![50, 100, 200],
            azuma_eps: vec![0.1, 0.2, 0.5],
            paths: 5000,
            cesaro_ns: vec![100, 400],
            cesaro_ms: vec![1, 5],
            cesaro_eps: vec![0.1],
            control_eps: 0.1,
            control_lambdas: vec![-0.1, -0.05, 0.0, 0.05, 0.1],
            control_ns: vec![100, 400],
            punctual_rs: vec![1.0, 3.0, 5.0, 7.0],
            punctual_ks: vec![5, 20, 50],
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            z: 3.0,
            exact: 1e-9,
            rate_at_drift: 1e-3,
        }
    }
}

/// A configuration problem, named by its field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

/// The validated config with its model, measure and targets built.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub hash: String,
    pub model: Model,
    pub measure: StepMeasure,
    pub targets: Vec<BoundaryTarget>,
    pub lambda_max: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_string(), |s| format!("config[{}..{}]", s.start, s.end));
            bad(&field, e.message().to_string())
        })
    }

    pub fn preset(name: &str) -> std::result::Result<Self, ConfigError> {
        let mut c = ExperimentConfig::default();
        match name {
            "uniform" => {}
            "biased" => {
                c.measure.preset = Preset::Biased;
                c.laplace.mc_lambdas = crate::martingale::checks::symmetric_grid(0.1, 0.025);
            }
            _ => return Err(bad("preset", format!("unknown preset {name:?}; expected uniform or biased"))),
        }
        Ok(c)
    }

    /// SHA-256 of the canonical TOML with `workers` and `out` cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.out = None;
        let text = toml::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self) -> std::result::Result<Resolved, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let model = match self.model.kind {
            ModelKind::Free => {
                if self.model.rank == 0 {
                    return Err(bad("model.rank", "must be ≥ 1"));
                }
                if self.model.depth == 0 {
                    return Err(bad("model.depth", "must be ≥ 1"));
                }
                Model::Free {
                    rank: self.model.rank,
                    depth: self.model.depth,
                }
            }
            ModelKind::Plane => Model::Plane,
        };
        let ms = &self.measure;
        if !(ms.alpha > 0.0) {
            return Err(bad("measure.alpha", "must be positive"));
        }
        if ms.preset != Preset::Custom && !ms.atoms.is_empty() {
            return Err(bad("measure.atoms", "atoms need preset = \"custom\""));
        }
        let measure = match ms.preset {
            Preset::Uniform => {
                if model == Model::Plane {
                    return Err(bad("measure.preset", "the uniform preset needs a free-group model"));
                }
                StepMeasure::uniform_free(model).map_err(|e| bad("measure.preset", e.to_string()))?
            }
            Preset::Biased => {
                let Model::Free { rank, .. } = model else {
                    return Err(bad("measure.preset", "the biased preset needs a free-group model"));
                };
                if !(ms.bias > 0.0 && ms.bias < 1.0) || rank < 1 {
                    return Err(bad("measure.bias", "must lie in (0, 1)"));
                }
                let rest = (1.0 - ms.bias) / (2 * rank - 1) as f64;
                let atoms = (1..=rank as i32)
                    .flat_map(|i| [i, -i])
                    .map(|l| {
                        let g = GroupElement::Word(crate::geometry::Word::generator(l));
                        (g, if l == 1 { ms.bias } else { rest })
                    })
                    .collect();
                StepMeasure::new(model, atoms, ms.alpha).map_err(|e| bad("measure.bias", e.to_string()))?
            }
            Preset::Custom => {
                if ms.atoms.is_empty() {
                    return Err(bad("measure.atoms", "a custom measure needs at least one atom"));
                }
                let mut atoms = Vec::with_capacity(ms.atoms.len());
                for (i, a) in ms.atoms.iter().enumerate() {
                    let g = GroupElement::parse(&a.element)
                        .map_err(|e| bad(&format!("measure.atoms[{i}].element"), e.to_string()))?;
                    model
                        .check_element(&g)
                        .map_err(|e| bad(&format!("measure.atoms[{i}].element"), e.to_string()))?;
                    atoms.push((g, a.p));
                }
                StepMeasure::new(model, atoms, ms.alpha).map_err(|e| bad("measure.atoms", e.to_string()))?
            }
        };
        let mut targets = Vec::with_capacity(self.targets.len());
        for (i, t) in self.targets.iter().enumerate() {
            targets.push(model.parse_target(t).map_err(|e| bad(&format!("targets[{i}]"), e.to_string()))?);
        }
        if !matches!(targets.first(), Some(BoundaryTarget::Free(_) | BoundaryTarget::Plane(_))) {
            return Err(bad("targets", "the first target must be a boundary point"));
        }
        let lambda_max = self.laplace.lambda_max.unwrap_or(0.25 * ms.alpha);
        self.check_grids(lambda_max)?;
        Ok(Resolved {
            config: self.clone(),
            hash: self.hash(),
            model,
            measure,
            targets,
            lambda_max,
        })
    }

    fn check_grids(&self, lambda_max: f64) -> std::result::Result<(), ConfigError> {
        let nonempty = |name: &str, len: usize| if len == 0 { Err(bad(name, "must be nonempty")) } else { Ok(()) };
        let positive = |name: &str, v: f64| if v > 0.0 { Ok(()) } else { Err(bad(name, "must be positive")) };
        let counts = |name: &str, v: &[usize]| {
            nonempty(name, v.len())?;
            if v.contains(&0) {
                Err(bad(name, "entries must be ≥ 1"))
            } else {
                Ok(())
            }
        };
        if !(lambda_max > 0.0) {
            return Err(bad("laplace.lambda_max", "must be positive"));
        }
        let l = &self.laplace;
        positive("laplace.exact_step", l.exact_step)?;
        counts("laplace.exact_ns", &l.exact_ns)?;
        nonempty("laplace.mc_lambdas", l.mc_lambdas.len())?;
        if l.mc_lambdas.iter().any(|x| x.abs() > lambda_max) {
            return Err(bad("laplace.mc_lambdas", format!("entries must satisfy |λ| ≤ {lambda_max}")));
        }
        counts("laplace.mc_ns", &l.mc_ns)?;
        positive("laplace.fit_window", l.fit_window)?;
        positive("rate.x_half_width", self.rate.x_half_width)?;
        positive("rate.x_step", self.rate.x_step)?;
        positive("rate.fit_window", self.rate.fit_window)?;
        positive("rate.probe_offset", self.rate.probe_offset)?;
        let t = &self.transforms;
        positive("transforms.fuzz_tol", t.fuzz_tol)?;
        nonempty("transforms.lambdas", t.lambdas.len())?;
        if t.lambdas.iter().any(|&x| !(x > 0.0 && x <= lambda_max)) {
            return Err(bad("transforms.lambdas", format!("entries must lie in (0, {lambda_max}]")));
        }
        nonempty("transforms.a_values", t.a_values.len())?;
        if t.a_values.iter().any(|&a| !(a > 0.0)) {
            return Err(bad("transforms.a_values", "entries must be positive"));
        }
        positive("transforms.mgf_epsilon", t.mgf_epsilon)?;
        positive("transforms.mgf_step", t.mgf_step)?;
        positive("qv.eps", self.qv.eps)?;
        counts("qv.ns", &self.qv.ns)?;
        if self.qv.occupation_n <= self.qv.burn_in {
            return Err(bad("qv.occupation_n", "must exceed qv.burn_in"));
        }
        let b = &self.bounds;
        counts("bounds.azuma_ns", &b.azuma_ns)?;
        nonempty("bounds.azuma_eps", b.azuma_eps.len())?;
        counts("bounds.cesaro_ns", &b.cesaro_ns)?;
        counts("bounds.cesaro_ms", &b.cesaro_ms)?;
        if b.cesaro_ms.iter().any(|m| b.cesaro_ns.iter().any(|n| m > n)) {
            return Err(bad("bounds.cesaro_ms", "block sizes must not exceed any of bounds.cesaro_ns"));
        }
        nonempty("bounds.cesaro_eps", b.cesaro_eps.len())?;
        positive("bounds.control_eps", b.control_eps)?;
        nonempty("bounds.control_lambdas", b.control_lambdas.len())?;
        counts("bounds.control_ns", &b.control_ns)?;
        nonempty("bounds.punctual_rs", b.punctual_rs.len())?;
        counts("bounds.punctual_ks", &b.punctual_ks)?;
        let tol = &self.tolerances;
        positive("tolerances.z", tol.z)?;
        positive("tolerances.exact", tol.exact)?;
        positive("tolerances.rate_at_drift", tol.rate_at_drift)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_ignores_workers() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        let mut d = c.clone();
        d.workers = 8;
        d.out = Some("elsewhere".into());
        assert_eq!(c.hash(), d.hash());
        d.seed += 1;
        assert_ne!(c.hash(), d.hash());
        assert!(c.resolve().is_ok());
        assert!(ExperimentConfig::preset("biased").unwrap().resolve().is_ok());
    }

    #[test]
    fn errors_name_the_field() {
        let text = r#"
[measure]
preset = "custom"
atoms = [{ element = "a", p = 0.5 }, { element = "A", p = 0.6 }]
"#;
        let e = ExperimentConfig::from_toml(text).unwrap().resolve().unwrap_err();
        assert_eq!(e.field, "measure.atoms");
        let e = ExperimentConfig::from_toml("[laplace]\nexact_ns = []\n").unwrap().resolve().unwrap_err();
        assert_eq!(e.field, "laplace.exact_ns");
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
        let e = ExperimentConfig::from_toml("[tolerances]\nz = -1.0\n").unwrap().resolve().unwrap_err();
        assert_eq!(e.field, "tolerances.z");
        let e = ExperimentConfig::from_toml("[measure]\natoms = [{ element = \"a\", p = 1.0 }]\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert_eq!(e.field, "measure.atoms");
    }
}
