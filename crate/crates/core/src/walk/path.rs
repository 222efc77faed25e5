//! The left random walk `L_n = X_n⋯X_1` and its observables.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::free::push_reduced;
use crate::geometry::{
    BoundaryTarget, BoundaryWord, GroupElement, HalfPlanePoint, Ideal, Letter, Mobius, Point,
    ScaledMobius, TailMode, Word,
};
use crate::walk::measure::StepMeasure;
use crate::walk::rng::SeedSpec;

/// What a tree target says about letter `i` of its defining word.
enum Lookup {
    Letter(Letter),
    /// A finite vertex has no letter here; nothing further can match.
    End,
    /// A truncated prefix does not know this letter.
    Unknown,
}

#[derive(Debug, Clone)]
enum TreeTarget {
    Boundary(BoundaryWord),
    Vertex(Vec<Letter>),
}

impl TreeTarget {
    fn lookup(&self, i: usize) -> Lookup {
        match self {
            TreeTarget::Boundary(b) => match b.letter(i) {
                Some(l) => Lookup::Letter(l),
                None => Lookup::Unknown,
            },
            TreeTarget::Vertex(v) => v.get(i).map_or(Lookup::End, |&l| Lookup::Letter(l)),
        }
    }

    fn known_depth(&self) -> Option<usize> {
        match self {
            TreeTarget::Boundary(b) => b.known_depth(),
            TreeTarget::Vertex(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
enum PlaneTarget {
    Ideal(Ideal),
    Point(HalfPlanePoint),
}

#[derive(Debug, Clone)]
enum State {
    Tree {
        /// `W = L_n⁻¹`; the walk appends `X⁻¹` on the right.
        inv: Vec<Letter>,
        atom_inv: Vec<Vec<Letter>>,
        targets: Vec<TreeTarget>,
        /// Common prefix of `W` with each target word.
        cp: Vec<usize>,
    },
    Plane {
        l: ScaledMobius,
        mats: Vec<Mobius>,
        targets: Vec<PlaneTarget>,
    },
}

/// Incremental walker: one step costs O(|atom|) on trees and one 2×2 product on the plane.
#[derive(Debug, Clone)]
pub struct Walker<'a> {
    measure: &'a StepMeasure,
    state: State,
}

impl<'a> Walker<'a> {
    pub fn new(measure: &'a StepMeasure, targets: &[BoundaryTarget]) -> Result<Self> {
        let model = measure.model();
        for t in targets {
            model.check_target(t)?;
        }
        let state = match measure.atoms()[0] {
            GroupElement::Word(_) => State::Tree {
                inv: Vec::new(),
                atom_inv: measure
                    .atoms()
                    .iter()
                    .map(|g| g.as_word().unwrap().inverse().letters().to_vec())
                    .collect(),
                targets: targets
                    .iter()
                    .map(|t| match t {
                        BoundaryTarget::Free(b) => TreeTarget::Boundary(b.clone()),
                        BoundaryTarget::Interior(Point::Vertex(v)) => {
                            TreeTarget::Vertex(v.letters().to_vec())
                        }
                        _ => unreachable!("checked against model"),
                    })
                    .collect(),
                cp: vec![0; targets.len()],
            },
            GroupElement::Matrix(_) => State::Plane {
                l: ScaledMobius::identity(),
                mats: measure
                    .atoms()
                    .iter()
                    .map(|g| *g.as_matrix().unwrap())
                    .collect(),
                targets: targets
                    .iter()
                    .map(|t| match t {
                        BoundaryTarget::Plane(xi) => PlaneTarget::Ideal(*xi),
                        BoundaryTarget::Interior(Point::Plane(z)) => PlaneTarget::Point(*z),
                        _ => unreachable!("checked against model"),
                    })
                    .collect(),
            },
        };
        Ok(Walker { measure, state })
    }

    pub fn measure(&self) -> &StepMeasure {
        self.measure
    }

    pub fn reset(&mut self) {
        match &mut self.state {
            State::Tree { inv, cp, .. } => {
                inv.clear();
                cp.iter_mut().for_each(|c| *c = 0);
            }
            State::Plane { l, .. } => *l = ScaledMobius::identity(),
        }
    }

    /// Draws `X_{n+1}` and returns its atom index.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let i = self.measure.sample_index(rng);
        self.apply_atom(i);
        i
    }

    /// `L ← g_i · L`.
    pub fn apply_atom(&mut self, i: usize) {
        match &mut self.state {
            State::Tree {
                inv,
                atom_inv,
                targets,
                cp,
            } => {
                for &l in &atom_inv[i] {
                    if inv.last() == Some(&-l) {
                        inv.pop();
                        let len = inv.len();
                        cp.iter_mut().for_each(|c| *c = (*c).min(len));
                    } else {
                        let pos = inv.len();
                        push_reduced(inv, l);
                        for (t, c) in targets.iter().zip(cp.iter_mut()) {
                            if *c == pos {
                                if let Lookup::Letter(x) = t.lookup(pos) {
                                    if x == l {
                                        *c += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            State::Plane { l, mats, .. } => l.left_mul(&mats[i]),
        }
    }

    /// `κ(L_n) = d(L_n·o, o)`.
    pub fn kappa(&self) -> f64 {
        match &self.state {
            State::Tree { inv, .. } => inv.len() as f64,
            State::Plane { l, .. } => l.displacement(),
        }
    }

    /// `σ(L_n, x_t)`, or `None` when a truncated target cannot resolve it.
    pub fn sigma(&self, t: usize) -> Option<f64> {
        match &self.state {
            State::Tree {
                inv, targets, cp, ..
            } => {
                let c = cp[t];
                if let Some(d) = targets[t].known_depth() {
                    if c == d && inv.len() > d {
                        return None;
                    }
                }
                Some(inv.len() as f64 - 2.0 * c as f64)
            }
            State::Plane { l, targets, .. } => Some(match &targets[t] {
                PlaneTarget::Ideal(xi) => l.cocycle_ideal(xi),
                PlaneTarget::Point(z) => l.cocycle_point(z),
            }),
        }
    }

    /// `L_n` when representable (plane products may be too large).
    pub fn product(&self) -> Option<GroupElement> {
        match &self.state {
            State::Tree { inv, .. } => {
                Some(GroupElement::Word(Word::from_letters(inv.iter().copied()).inverse()))
            }
            State::Plane { l, .. } => l.to_mobius().map(GroupElement::Matrix),
        }
    }

    /// `L_n⁻¹` as a reduced word (trees only).
    pub fn inverse_letters(&self) -> Option<&[Letter]> {
        match &self.state {
            State::Tree { inv, .. } => Some(inv),
            State::Plane { .. } => None,
        }
    }
}

/// One realization of the walk.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub seed: SeedSpec,
    pub n: usize,
    /// Atom indices of `X_1, …, X_n` when retained.
    pub increments: Option<Vec<usize>>,
    /// `κ(L_0), …, κ(L_n)`.
    pub kappa: Vec<f64>,
    /// Per target: `σ(L_0,x), …, σ(L_n,x)`; `None` marks a truncated value.
    pub sigma: Vec<Vec<Option<f64>>>,
    pub targets: Vec<String>,
    /// `L_n` when representable.
    #[serde(skip)]
    pub product: Option<GroupElement>,
}

pub fn sample_path(
    measure: &StepMeasure,
    n: usize,
    seed: SeedSpec,
    targets: &[BoundaryTarget],
    keep_increments: bool,
) -> Result<Trajectory> {
    let mut walker = Walker::new(measure, targets)?;
    let mut rng = seed.rng();
    let mut increments = keep_increments.then(|| Vec::with_capacity(n));
    let mut kappa = Vec::with_capacity(n + 1);
    let mut sigma: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n + 1); targets.len()];
    let record = |w: &Walker, kappa: &mut Vec<f64>, sigma: &mut Vec<Vec<Option<f64>>>| {
        kappa.push(w.kappa());
        for (t, s) in sigma.iter_mut().enumerate() {
            s.push(w.sigma(t));
        }
    };
    record(&walker, &mut kappa, &mut sigma);
    for _ in 0..n {
        let i = walker.step(&mut rng);
        if let Some(v) = increments.as_mut() {
            v.push(i);
        }
        record(&walker, &mut kappa, &mut sigma);
    }
    Ok(Trajectory {
        seed,
        n,
        increments,
        kappa,
        sigma,
        targets: targets.iter().map(|t| t.to_string()).collect(),
        product: walker.product(),
    })
}

impl Trajectory {
    /// CSV with columns `step, kappa, sigma_0, …`; missing values are empty cells.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Parse(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "kappa".to_string()];
        header.extend(self.targets.iter().map(|t| format!("sigma[{t}]")));
        w.write_record(&header).map_err(io)?;
        for i in 0..=self.n {
            let mut row = vec![i.to_string(), format!("{}", self.kappa[i])];
            row.extend(
                self.sigma
                    .iter()
                    .map(|s| s[i].map(|v| format!("{v}")).unwrap_or_default()),
            );
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Parse(format!("csv: {e}")))?;
        Ok(())
    }
}

/// Convenience for boundary words `x^∞` and truncated prefixes.
pub fn ray_target(letter: Letter) -> BoundaryTarget {
    BoundaryTarget::Free(BoundaryWord::ray(letter))
}

pub fn prefix_target(word: &Word) -> Result<BoundaryTarget> {
    Ok(BoundaryTarget::Free(BoundaryWord::new(
        word.clone(),
        TailMode::PrefixOnly,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Model;

    #[test]
    fn empty_and_deterministic() {
        let m = StepMeasure::uniform_free(Model::free(2)).unwrap();
        let t0 = sample_path(&m, 0, SeedSpec::new(1, 0), &[], false).unwrap();
        assert_eq!(t0.kappa, vec![0.0]);
        assert_eq!(t0.product, Some(GroupElement::Word(Word::identity())));
        let a = sample_path(&m, 300, SeedSpec::new(1, 3), &[ray_target(1)], true).unwrap();
        let b = sample_path(&m, 300, SeedSpec::new(1, 3), &[ray_target(1)], true).unwrap();
        assert_eq!(a.kappa, b.kappa);
        assert_eq!(a.sigma, b.sigma);
    }

    #[test]
    fn incremental_observables_match_direct_evaluation() {
        let model = Model::Free { rank: 2, depth: 6 };
        let m = StepMeasure::biased_f2(6);
        let targets = vec![
            ray_target(1),
            model.parse_target("bA^inf").unwrap(),
            model.parse_target("point:abA").unwrap(),
            prefix_target(&Word::parse("AAbab").unwrap()).unwrap(),
        ];
        for idx in 0..50 {
            let t = sample_path(&m, 60, SeedSpec::new(11, idx), &targets, true).unwrap();
            let mut l = GroupElement::Word(Word::identity());
            for (step, &i) in t.increments.as_ref().unwrap().iter().enumerate() {
                l = m.atoms()[i].mul(&l).unwrap();
                assert_eq!(t.kappa[step + 1], model.displacement(&l).unwrap());
                for (k, x) in targets.iter().enumerate() {
                    let direct = model.cocycle(&l, x).ok();
                    assert_eq!(t.sigma[k][step + 1], direct, "target {k} step {step}");
                }
            }
            assert_eq!(t.product, Some(l));
        }
    }

    #[test]
    fn plane_walk_matches_plain_products() {
        let g = GroupElement::parse("[[2,1],[1,1]]").unwrap();
        let h = GroupElement::parse("[[1,0.5],[0.3,1.15]]").unwrap();
        let m = StepMeasure::new(
            Model::Plane,
            vec![(g.clone(), 0.3), (g.inverse(), 0.2), (h.clone(), 0.25), (h.inverse(), 0.25)],
            1.0,
        )
        .unwrap();
        let targets = vec![
            BoundaryTarget::Plane(Ideal::Infinity),
            BoundaryTarget::Plane(Ideal::Finite(0.4)),
            BoundaryTarget::Interior(Point::Plane(HalfPlanePoint::new(0.2, 1.5).unwrap())),
        ];
        let t = sample_path(&m, 12, SeedSpec::new(2, 0), &targets, true).unwrap();
        let mut l = GroupElement::identity(&Model::Plane);
        for (step, &i) in t.increments.as_ref().unwrap().iter().enumerate() {
            l = m.atoms()[i].mul(&l).unwrap();
            assert!((t.kappa[step + 1] - Model::Plane.displacement(&l).unwrap()).abs() < 1e-9);
            for (k, x) in targets.iter().enumerate() {
                let direct = Model::Plane.cocycle(&l, x).unwrap();
                assert!((t.sigma[k][step + 1].unwrap() - direct).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn csv_export() {
        let m = StepMeasure::uniform_free(Model::free(2)).unwrap();
        let t = sample_path(&m, 3, SeedSpec::new(5, 1), &[ray_target(1)], false).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("step,kappa,sigma[boundary:a^inf]"));
    }
}
