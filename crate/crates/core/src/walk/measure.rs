//! Finitely supported probability measures on the isometry group.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{GroupElement, Letter, Model, Mobius, Word};

/// Tolerance on `Σp = 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Default cap on enumerated convolution supports.
pub const DEFAULT_SUPPORT_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Verified,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMeasure {
    model: Model,
    atoms: Vec<GroupElement>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    alpha: f64,
}

impl StepMeasure {
    pub fn new(model: Model, atoms: Vec<(GroupElement, f64)>, alpha: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("empty support".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidMeasure(format!("moment parameter α = {alpha} must be > 0")));
        }
        let mut total = 0.0;
        for (i, (g, p)) in atoms.iter().enumerate() {
            model.check_element(g)?;
            if !(*p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidMeasure(format!("atom {i} ({g}) has probability {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidMeasure(format!("probabilities sum to {total}, not 1")));
        }
        let (atoms, probs): (Vec<_>, Vec<_>) = atoms.into_iter().unzip();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(StepMeasure {
            model,
            atoms,
            probs,
            cumulative,
            alpha,
        })
    }

    /// Uniform measure on the `2k` generators of `F_k`.
    pub fn uniform_free(model: Model) -> Result<Self> {
        let Model::Free { rank, .. } = model else {
            return Err(Error::ModelMismatch {
                expected: "free-group model",
                found: "plane model",
            });
        };
        let p = 1.0 / (2 * rank) as f64;
        let atoms = (1..=rank as Letter)
            .flat_map(|i| [i, -i])
            .map(|l| (GroupElement::Word(Word::generator(l)), p))
            .collect();
        StepMeasure::new(model, atoms, 1.0)
    }

    /// `μ(a) = 0.4`, `μ(a⁻¹) = μ(b) = μ(b⁻¹) = 0.2` on `F_2`.
    pub fn biased_f2(depth: usize) -> Self {
        let atoms = [(1, 0.4), (-1, 0.2), (2, 0.2), (-2, 0.2)]
            .into_iter()
            .map(|(l, p)| (GroupElement::Word(Word::generator(l)), p))
            .collect();
        StepMeasure::new(Model::Free { rank: 2, depth }, atoms, 1.0).expect("valid preset")
    }

    pub fn dirac(model: Model, g: GroupElement) -> Result<Self> {
        StepMeasure::new(model, vec![(g, 1.0)], 1.0)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_model(mut self, model: Model) -> Self {
        self.model = model;
        self
    }

    pub fn atoms(&self) -> &[GroupElement] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GroupElement, f64)> {
        self.atoms.iter().zip(self.probs.iter().copied())
    }

    /// Index of an atom drawn by inversion of the cumulative weights.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.atoms.len() - 1)
    }

    pub fn displacements(&self) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|g| self.model.displacement(g).expect("atoms checked against model"))
            .collect()
    }

    pub fn max_displacement(&self) -> f64 {
        self.displacements().into_iter().fold(0.0, f64::max)
    }

    /// `∫ e^{ακ} dμ`.
    pub fn exp_moment(&self, alpha: f64) -> f64 {
        self.displacements()
            .iter()
            .zip(&self.probs)
            .map(|(k, p)| p * (alpha * k).exp())
            .sum()
    }

    /// True when every atom is a single generator or the identity.
    pub fn is_nearest_neighbor(&self) -> bool {
        matches!(self.model, Model::Free { .. })
            && self
                .atoms
                .iter()
                .all(|g| g.as_word().is_some_and(|w| w.len() <= 1))
    }

    /// Generator probabilities by slot (`a_i ↦ 2(i−1)`, `a_i⁻¹ ↦ 2(i−1)+1`) and the identity mass.
    pub fn nearest_neighbor_weights(&self) -> Result<(Vec<f64>, f64)> {
        let Model::Free { rank, .. } = self.model else {
            return Err(Error::UnsupportedMeasure("not a free-group measure".into()));
        };
        if !self.is_nearest_neighbor() {
            return Err(Error::UnsupportedMeasure(
                "atoms must be single generators or the identity".into(),
            ));
        }
        let mut w = vec![0.0; 2 * rank as usize];
        let mut id = 0.0;
        for (g, p) in self.iter() {
            match g.as_word().unwrap().letters() {
                [] => id += p,
                [l] => w[crate::geometry::CylinderIndex::slot(*l)] += p,
                _ => unreachable!(),
            }
        }
        Ok((w, id))
    }

    /// The law of `X_k⋯X_1`, atoms merged by equality.
    pub fn convolution_power(&self, k: usize, cap: usize) -> Result<StepMeasure> {
        if k == 0 {
            return Err(Error::Precondition("convolution power must be ≥ 1".into()));
        }
        let mut cur: Vec<(GroupElement, f64)> =
            self.atoms.iter().cloned().zip(self.probs.iter().copied()).collect();
        cur = merge_atoms(cur, cap)?;
        for _ in 1..k {
            let mut next = Vec::with_capacity(cur.len() * self.atoms.len());
            for (g, p) in &cur {
                for (x, q) in self.iter() {
                    next.push((x.mul(g)?, p * q));
                }
            }
            cur = merge_atoms(next, cap)?;
        }
        // Renormalize away rounding in the merged sums.
        let total: f64 = cur.iter().map(|(_, p)| p).sum();
        for (_, p) in &mut cur {
            *p /= total;
        }
        StepMeasure::new(self.model, cur, self.alpha)
    }
}

/// Deduplicates atoms in first-seen order; plane matrices are equal within 1e-9.
fn merge_atoms(atoms: Vec<(GroupElement, f64)>, cap: usize) -> Result<Vec<(GroupElement, f64)>> {
    let mut out: Vec<(GroupElement, f64)> = Vec::new();
    let mut words: HashMap<Word, usize> = HashMap::new();
    let mut mats: HashMap<[i64; 4], Vec<usize>> = HashMap::new();
    for (g, p) in atoms {
        let slot = match &g {
            GroupElement::Word(w) => words.get(w).copied(),
            GroupElement::Matrix(m) => find_matrix(&out, &mats, m),
        };
        match slot {
            Some(i) => out[i].1 += p,
            None => {
                if out.len() == cap {
                    return Err(Error::SupportOverflow { cap });
                }
                match &g {
                    GroupElement::Word(w) => {
                        words.insert(w.clone(), out.len());
                    }
                    GroupElement::Matrix(m) => mats.entry(matrix_key(m)).or_default().push(out.len()),
                }
                out.push((g, p));
            }
        }
    }
    Ok(out)
}

/// Sign-normalized, coarsely rounded key; neighbours are probed to catch rounding edges.
fn matrix_key(m: &Mobius) -> [i64; 4] {
    let e = m.entries();
    let sign = if e.iter().find(|v| v.abs() > 1e-7).copied().unwrap_or(1.0) < 0.0 {
        -1.0
    } else {
        1.0
    };
    e.map(|v| (sign * v * 1e6).round() as i64)
}

fn find_matrix(
    out: &[(GroupElement, f64)],
    mats: &HashMap<[i64; 4], Vec<usize>>,
    m: &Mobius,
) -> Option<usize> {
    let key = matrix_key(m);
    for d0 in -1..=1 {
        for d1 in -1..=1 {
            for d2 in -1..=1 {
                for d3 in -1..=1 {
                    let k = [key[0] + d0, key[1] + d1, key[2] + d2, key[3] + d3];
                    if let Some(list) = mats.get(&k) {
                        for &i in list {
                            if out[i].0.as_matrix().is_some_and(|o| o.approx_eq(m, 1e-9)) {
                                return Some(i);
                            }
                        }
                    }
                }
            }
        }
    }
    None
}

/// Distinct elements of `supp μ^{*k}` (first `cap`), with an overflow flag.
/// Intermediate levels are capped too, so an overflowing result is a subset.
pub fn convolution_support(measure: &StepMeasure, k: usize, cap: usize) -> (Vec<GroupElement>, bool) {
    let merge = |v| merge_atoms(v, usize::MAX).expect("uncapped merge");
    let mut level = merge(measure.atoms().iter().map(|g| (g.clone(), 1.0)).collect());
    let mut overflow = false;
    for _ in 1..k.max(1) {
        if level.len() > cap {
            level.truncate(cap);
            overflow = true;
        }
        let mut next = Vec::with_capacity(level.len() * measure.len());
        for (g, _) in &level {
            for x in measure.atoms() {
                next.push((x.mul(g).expect("same model"), 1.0));
            }
        }
        level = merge(next);
    }
    if level.len() > cap {
        level.truncate(cap);
        overflow = true;
    }
    (level.into_iter().map(|(g, _)| g).collect(), overflow)
}

#[derive(Debug, Clone, Serialize)]
pub struct NonElementary {
    pub verdict: Verdict,
    pub witness: Option<(String, String)>,
    pub overflow: bool,
}

/// Searches `∪_{n≤depth} supp μ^{*n}` for two independent loxodromics.
pub fn check_non_elementary(measure: &StepMeasure, depth: usize, cap: usize) -> NonElementary {
    let model = *measure.model();
    let mut loxodromics: Vec<GroupElement> = Vec::new();
    let mut overflow = false;
    for n in 1..=depth {
        let (support, over) = convolution_support(measure, n, cap);
        overflow |= over;
        for g in support {
            if model.is_loxodromic(&g).unwrap_or(false) && loxodromics.len() < 400 {
                for h in &loxodromics {
                    if model.independent(h, &g).unwrap_or(false) {
                        return NonElementary {
                            verdict: Verdict::Verified,
                            witness: Some((h.to_string(), g.to_string())),
                            overflow,
                        };
                    }
                }
                loxodromics.push(g);
            }
        }
        if over {
            break;
        }
    }
    NonElementary {
        verdict: Verdict::Unknown,
        witness: None,
        overflow,
    }
}

/// Two elements of one `supp μ^{*n}` with different translation distances.
/// Reported only for measures already verified non-elementary.
pub fn non_arithmetic_check(measure: &StepMeasure, depth: usize, cap: usize) -> Verdict {
    if check_non_elementary(measure, depth, cap).verdict != Verdict::Verified {
        return Verdict::Unknown;
    }
    let model = *measure.model();
    for n in 1..=depth {
        let (support, _) = convolution_support(measure, n, cap);
        let taus: Vec<f64> = support
            .iter()
            .map(|g| match g {
                GroupElement::Word(w) => w.translation_length() as f64,
                GroupElement::Matrix(m) => m.translation_length_closed_form(),
            })
            .collect();
        let tol = match model {
            Model::Free { .. } => 0.5,
            Model::Plane => crate::geometry::plane::LOXODROMIC_THRESHOLD,
        };
        if let (Some(lo), Some(hi)) = (
            taus.iter().copied().reduce(f64::min),
            taus.iter().copied().reduce(f64::max),
        ) {
            if hi - lo > tol {
                return Verdict::Verified;
            }
        }
    }
    Verdict::Unknown
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub probability_sum_defect: f64,
    pub max_displacement: f64,
    pub alpha: f64,
    pub exp_moment: f64,
    pub non_elementary: Verdict,
    pub witness: Option<(String, String)>,
}

pub fn validate_measure(measure: &StepMeasure, depth: usize) -> ValidationReport {
    let total: f64 = measure.probs().iter().sum();
    let ne = check_non_elementary(measure, depth, DEFAULT_SUPPORT_CAP);
    ValidationReport {
        probability_sum_defect: (total - 1.0).abs(),
        max_displacement: measure.max_displacement(),
        alpha: measure.alpha(),
        exp_moment: measure.exp_moment(measure.alpha()),
        non_elementary: ne.verdict,
        witness: ne.witness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(s: &str) -> GroupElement {
        GroupElement::parse(s).unwrap()
    }

    #[test]
    fn rejects_bad_measures() {
        let f2 = Model::free(2);
        assert!(StepMeasure::new(f2, vec![], 1.0).is_err());
        assert!(StepMeasure::new(f2, vec![(g("a"), 0.5), (g("b"), 0.6)], 1.0).is_err());
        assert!(StepMeasure::new(f2, vec![(g("a"), 1.5), (g("b"), -0.5)], 1.0).is_err());
        assert!(StepMeasure::new(f2, vec![(g("c"), 1.0)], 1.0).is_err());
    }

    #[test]
    fn validation_examples() {
        let f2 = Model::free(2);
        let u = StepMeasure::uniform_free(f2).unwrap();
        let r = validate_measure(&u, 2);
        assert!(r.probability_sum_defect < 1e-15);
        assert!((r.exp_moment - std::f64::consts::E).abs() < 1e-12);
        assert_eq!(r.non_elementary, Verdict::Verified);
        let d = StepMeasure::dirac(f2, g("1")).unwrap();
        assert_eq!(validate_measure(&d, 4).non_elementary, Verdict::Unknown);
    }

    #[test]
    fn convolution_support_examples() {
        let u = StepMeasure::uniform_free(Model::free(2)).unwrap();
        assert_eq!(convolution_support(&u, 1, 100).0.len(), 4);
        let (s2, over) = convolution_support(&u, 2, 100);
        assert_eq!((s2.len(), over), (13, false));
        let (s, over) = convolution_support(&u, 2, 5);
        assert_eq!((s.len(), over), (5, true));
    }

    #[test]
    fn convolution_power_probabilities() {
        let u = StepMeasure::uniform_free(Model::free(2)).unwrap();
        let u2 = u.convolution_power(2, 1000).unwrap();
        let id = u2
            .iter()
            .find(|(x, _)| x.is_identity(0.0))
            .map(|(_, p)| p)
            .unwrap();
        assert!((id - 0.25).abs() < 1e-15);
        assert_eq!(u2.len(), 13);
        let plane = StepMeasure::new(
            Model::Plane,
            vec![(g("[[2,0],[0,0.5]]"), 0.5), (g("[[0.5,0],[0,2]]"), 0.5)],
            1.0,
        )
        .unwrap();
        // g·g⁻¹ and g⁻¹·g merge into one identity atom.
        assert_eq!(plane.convolution_power(2, 100).unwrap().len(), 3);
    }

    #[test]
    fn elementary_and_arithmetic_cases() {
        let f2 = Model::free(2);
        let u = StepMeasure::uniform_free(f2).unwrap();
        assert_eq!(non_arithmetic_check(&u, 2, 1000), Verdict::Verified);
        let line = StepMeasure::new(f2, vec![(g("a"), 0.5), (g("A"), 0.5)], 1.0).unwrap();
        assert_eq!(check_non_elementary(&line, 4, 1000).verdict, Verdict::Unknown);
        assert_eq!(non_arithmetic_check(&line, 4, 1000), Verdict::Unknown);
        let one = StepMeasure::dirac(f2, g("ab")).unwrap();
        assert_eq!(non_arithmetic_check(&one, 5, 1000), Verdict::Unknown);
        let h = StepMeasure::dirac(Model::Plane, g("[[2,1],[1,1]]")).unwrap();
        assert_eq!(check_non_elementary(&h, 4, 1000).verdict, Verdict::Unknown);
    }

    #[test]
    fn sampling_frequencies() {
        use rand::SeedableRng;
        let m = StepMeasure::biased_f2(16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[m.sample_index(&mut rng)] += 1;
        }
        let freq = counts[0] as f64 / 1e5;
        assert!((freq - 0.4).abs() < 0.006, "{freq}");
    }
}
