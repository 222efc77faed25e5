//! Geodesic hyperbolic spaces: the Cayley tree of `F_k` and the hyperbolic plane.

pub mod free;
pub mod plane;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use free::{BoundaryWord, CylinderIndex, Letter, TailMode, Word};
pub use plane::{HalfPlanePoint, Ideal, Mobius, ScaledMobius};

/// Default number of explicitly known letters for truncated tree boundary points.
pub const DEFAULT_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    /// Cayley tree of the free group of rank `rank`.
    Free { rank: u32, depth: usize },
    /// Upper half-plane.
    Plane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupElement {
    Word(Word),
    Matrix(Mobius),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Vertex(Word),
    Plane(HalfPlanePoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryTarget {
    Interior(Point),
    Free(BoundaryWord),
    Plane(Ideal),
}

/// Output of [`Model::translation_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Translation {
    pub tau: f64,
    /// `|κ(g^m)/m − κ(g^{2m})/(2m)|`; zero for exact models.
    pub gap: f64,
}

impl GroupElement {
    fn kind(&self) -> &'static str {
        match self {
            GroupElement::Word(_) => "free-group word",
            GroupElement::Matrix(_) => "plane matrix",
        }
    }

    pub fn identity(model: &Model) -> Self {
        match model {
            Model::Free { .. } => GroupElement::Word(Word::identity()),
            Model::Plane => GroupElement::Matrix(Mobius::identity()),
        }
    }

    pub fn mul(&self, rhs: &GroupElement) -> Result<GroupElement> {
        match (self, rhs) {
            (GroupElement::Word(a), GroupElement::Word(b)) => Ok(GroupElement::Word(a.mul(b))),
            (GroupElement::Matrix(a), GroupElement::Matrix(b)) => {
                Ok(GroupElement::Matrix(a.compose(b)))
            }
            _ => Err(Error::ModelMismatch {
                expected: self.kind(),
                found: rhs.kind(),
            }),
        }
    }

    pub fn inverse(&self) -> GroupElement {
        match self {
            GroupElement::Word(w) => GroupElement::Word(w.inverse()),
            GroupElement::Matrix(m) => GroupElement::Matrix(m.inverse()),
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        match self {
            GroupElement::Word(w) => w.is_empty(),
            GroupElement::Matrix(m) => m.approx_eq(&Mobius::identity(), tol),
        }
    }

    pub fn as_word(&self) -> Option<&Word> {
        match self {
            GroupElement::Word(w) => Some(w),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&Mobius> {
        match self {
            GroupElement::Matrix(m) => Some(m),
            _ => None,
        }
    }

    /// Parses a word (`"aB"`) or a matrix literal (`"[[2,0],[0,0.5]]"`).
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.starts_with('[') {
            let m: [[f64; 2]; 2] = serde_json::from_str(t)
                .map_err(|e| Error::Parse(format!("bad matrix {t:?}: {e}")))?;
            Ok(GroupElement::Matrix(Mobius::try_from(m)?))
        } else {
            Ok(GroupElement::Word(Word::parse(t)?))
        }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupElement::Word(w) => w.fmt(f),
            GroupElement::Matrix(m) => m.fmt(f),
        }
    }
}

impl Point {
    fn kind(&self) -> &'static str {
        match self {
            Point::Vertex(_) => "tree vertex",
            Point::Plane(_) => "plane point",
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Vertex(w) => w.fmt(f),
            Point::Plane(z) => z.fmt(f),
        }
    }
}

impl fmt::Display for BoundaryTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryTarget::Interior(p) => write!(f, "point:{p}"),
            BoundaryTarget::Free(b) => write!(f, "boundary:{b}"),
            BoundaryTarget::Plane(xi) => write!(f, "ideal:{xi}"),
        }
    }
}

impl Model {
    pub fn free(rank: u32) -> Self {
        Model::Free {
            rank,
            depth: DEFAULT_DEPTH,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Model::Free { .. } => "free-group model",
            Model::Plane => "plane model",
        }
    }

    /// Hyperbolicity constant declared for the model.
    pub fn delta(&self) -> f64 {
        match self {
            Model::Free { .. } => 0.0,
            Model::Plane => plane::PLANE_DELTA,
        }
    }

    pub fn base_point(&self) -> Point {
        match self {
            Model::Free { .. } => Point::Vertex(Word::identity()),
            Model::Plane => Point::Plane(HalfPlanePoint::base()),
        }
    }

    fn mismatch<T>(&self, found: &'static str) -> Result<T> {
        Err(Error::ModelMismatch {
            expected: self.kind(),
            found,
        })
    }

    pub fn check_element(&self, g: &GroupElement) -> Result<()> {
        match (self, g) {
            (Model::Free { rank, .. }, GroupElement::Word(w)) => {
                if w.max_generator() > *rank {
                    return Err(Error::Precondition(format!(
                        "word {w} uses generators beyond rank {rank}"
                    )));
                }
                Ok(())
            }
            (Model::Plane, GroupElement::Matrix(_)) => Ok(()),
            _ => self.mismatch(g.kind()),
        }
    }

    pub fn distance(&self, p: &Point, q: &Point) -> Result<f64> {
        match (self, p, q) {
            (Model::Free { .. }, Point::Vertex(a), Point::Vertex(b)) => {
                Ok(a.inverse().mul(b).len() as f64)
            }
            (Model::Plane, Point::Plane(a), Point::Plane(b)) => Ok(plane::distance(a, b)),
            (_, Point::Vertex(_), Point::Plane(_)) | (_, Point::Plane(_), Point::Vertex(_)) => {
                Err(Error::ModelMismatch {
                    expected: p.kind(),
                    found: q.kind(),
                })
            }
            _ => self.mismatch(p.kind()),
        }
    }

    pub fn apply(&self, g: &GroupElement, p: &Point) -> Result<Point> {
        match (self, g, p) {
            (Model::Free { .. }, GroupElement::Word(w), Point::Vertex(v)) => {
                Ok(Point::Vertex(w.mul(v)))
            }
            (Model::Plane, GroupElement::Matrix(m), Point::Plane(z)) => Ok(Point::Plane(m.apply(z)?)),
            _ => {
                self.check_element(g)?;
                self.mismatch(p.kind())
            }
        }
    }

    /// `κ(g) = d(g·o, o)`.
    pub fn displacement(&self, g: &GroupElement) -> Result<f64> {
        match (self, g) {
            (Model::Free { .. }, GroupElement::Word(w)) => Ok(w.len() as f64),
            (Model::Plane, GroupElement::Matrix(m)) => Ok(m.displacement()),
            _ => self.mismatch(g.kind()),
        }
    }

    /// `(x|y)_base = ½(d(x,base) + d(y,base) − d(x,y))`.
    pub fn gromov_product(&self, x: &Point, y: &Point, base: &Point) -> Result<f64> {
        if let (Model::Free { .. }, Point::Vertex(a), Point::Vertex(b), Point::Vertex(o)) =
            (self, x, y, base)
        {
            // Common prefix of o⁻¹x and o⁻¹y.
            let oi = o.inverse();
            let (ra, rb) = (oi.mul(a), oi.mul(b));
            return Ok(free::common_prefix_len(ra.letters(), rb.letters()) as f64);
        }
        let dx = self.distance(x, base)?;
        let dy = self.distance(y, base)?;
        let dxy = self.distance(x, y)?;
        Ok(0.5 * (dx + dy - dxy))
    }

    /// Largest `(x|z)∧(z|y) − (x|y)` over the sample, all based at the fourth point.
    pub fn hyperbolicity_defect(&self, sample: &[[Point; 4]]) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::Precondition("empty four-point sample".into()));
        }
        let mut worst = f64::NEG_INFINITY;
        for [x, y, z, w] in sample {
            let xy = self.gromov_product(x, y, w)?;
            let xz = self.gromov_product(x, z, w)?;
            let zy = self.gromov_product(z, y, w)?;
            worst = worst.max(xz.min(zy) - xy);
        }
        Ok(worst)
    }

    pub fn check_target(&self, x: &BoundaryTarget) -> Result<()> {
        match (self, x) {
            (Model::Free { .. }, BoundaryTarget::Interior(Point::Vertex(_)))
            | (Model::Free { .. }, BoundaryTarget::Free(_))
            | (Model::Plane, BoundaryTarget::Interior(Point::Plane(_)))
            | (Model::Plane, BoundaryTarget::Plane(_)) => Ok(()),
            _ => self.mismatch(match x {
                BoundaryTarget::Interior(p) => p.kind(),
                BoundaryTarget::Free(_) => "tree boundary target",
                BoundaryTarget::Plane(_) => "ideal plane target",
            }),
        }
    }

    /// `h_x(m)`, normalized so that `h_x(o) = 0`.
    pub fn horofunction(&self, x: &BoundaryTarget, m: &Point) -> Result<f64> {
        self.check_target(x)?;
        match (x, m) {
            (BoundaryTarget::Interior(p), _) => {
                let o = self.base_point();
                Ok(self.distance(p, m)? - self.distance(p, &o)?)
            }
            (BoundaryTarget::Free(xi), Point::Vertex(w)) => xi.horofunction(w),
            (BoundaryTarget::Plane(xi), Point::Plane(z)) => Ok(plane::busemann(xi, z)),
            _ => self.mismatch(m.kind()),
        }
    }

    /// Busemann cocycle `σ(g, x) = h_x(g⁻¹·o)`.
    pub fn cocycle(&self, g: &GroupElement, x: &BoundaryTarget) -> Result<f64> {
        self.check_element(g)?;
        match (g, x) {
            (GroupElement::Matrix(m), BoundaryTarget::Plane(xi)) => {
                Ok(ScaledMobius::from(*m).cocycle_ideal(xi))
            }
            (GroupElement::Matrix(m), BoundaryTarget::Interior(Point::Plane(p))) => {
                Ok(ScaledMobius::from(*m).cocycle_point(p))
            }
            _ => {
                let gio = self.apply(&g.inverse(), &self.base_point())?;
                self.horofunction(x, &gio)
            }
        }
    }

    /// The extended action `g·x`.
    pub fn boundary_action(&self, g: &GroupElement, x: &BoundaryTarget) -> Result<BoundaryTarget> {
        self.check_element(g)?;
        self.check_target(x)?;
        match (g, x) {
            (_, BoundaryTarget::Interior(p)) => Ok(BoundaryTarget::Interior(self.apply(g, p)?)),
            (GroupElement::Word(w), BoundaryTarget::Free(xi)) => Ok(BoundaryTarget::Free(xi.act(w)?)),
            (GroupElement::Matrix(m), BoundaryTarget::Plane(xi)) => {
                Ok(BoundaryTarget::Plane(m.apply_ideal(xi)))
            }
            _ => self.mismatch(g.kind()),
        }
    }

    /// `(x|y)_o = ½(d(y,o) − h_x(y))`. Only the model base point is supported as `base`.
    pub fn extended_gromov(&self, x: &BoundaryTarget, y: &Point, base: &Point) -> Result<f64> {
        let o = self.base_point();
        if self.distance(base, &o)? != 0.0 {
            return Err(Error::Precondition(
                "extended Gromov product is implemented at the model base point".into(),
            ));
        }
        Ok(0.5 * (self.distance(y, &o)? - self.horofunction(x, y)?))
    }

    /// `τ(g) = lim κ(gⁿ)/n`: exact on trees, power-doubling on the plane.
    pub fn translation_distance(&self, g: &GroupElement, iterations: u64) -> Result<Translation> {
        if iterations == 0 {
            return Err(Error::Precondition("iterations must be at least 1".into()));
        }
        self.check_element(g)?;
        match g {
            GroupElement::Word(w) => Ok(Translation {
                tau: w.translation_length() as f64,
                gap: 0.0,
            }),
            GroupElement::Matrix(m) => {
                let (tau, gap) = plane::translation_estimate(m, iterations);
                Ok(Translation { tau, gap })
            }
        }
    }

    /// Loxodromic test: exact on trees, `τ > 1e-6` on the plane.
    pub fn is_loxodromic(&self, g: &GroupElement) -> Result<bool> {
        self.check_element(g)?;
        Ok(match g {
            GroupElement::Word(w) => w.translation_length() > 0,
            GroupElement::Matrix(m) => {
                m.translation_length_closed_form() > plane::LOXODROMIC_THRESHOLD
                    && m.fixed_points().is_some()
            }
        })
    }

    /// Two loxodromics are independent when their fixed-point pairs are disjoint.
    /// On trees this is non-commutation; on the plane fixed points are compared to 1e-9.
    pub fn independent(&self, g: &GroupElement, h: &GroupElement) -> Result<bool> {
        if !self.is_loxodromic(g)? || !self.is_loxodromic(h)? {
            return Ok(false);
        }
        Ok(match (g, h) {
            (GroupElement::Word(a), GroupElement::Word(b)) => !a.commutes_with(b),
            (GroupElement::Matrix(a), GroupElement::Matrix(b)) => {
                let (Some((a1, a2)), Some((b1, b2))) = (a.fixed_points(), b.fixed_points()) else {
                    return Ok(false);
                };
                [a1, a2]
                    .iter()
                    .all(|p| [b1, b2].iter().all(|q| p.angular_gap(q) > 1e-9))
            }
            _ => return self.mismatch(h.kind()),
        })
    }

    /// Boundary target from its textual form: `"a^inf"`, `"ab..."`, `"inf"`, `"0.5"`,
    /// or an interior point `"point:ab"` / `"point:0.3,1.2"`.
    pub fn parse_target(&self, text: &str) -> Result<BoundaryTarget> {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix("point:") {
            let p = match self {
                Model::Free { .. } => Point::Vertex(Word::parse(rest)?),
                Model::Plane => {
                    let (x, y) = rest
                        .split_once(',')
                        .ok_or_else(|| Error::Parse(format!("expected x,y in {t:?}")))?;
                    let parse = |s: &str| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
                    };
                    Point::Plane(HalfPlanePoint::new(parse(x)?, parse(y)?)?)
                }
            };
            return Ok(BoundaryTarget::Interior(p));
        }
        match self {
            Model::Free { depth, .. } => {
                if let Some(p) = t.strip_suffix("^inf") {
                    Ok(BoundaryTarget::Free(BoundaryWord::new(
                        Word::parse(p)?,
                        TailMode::RepeatLast,
                    )?))
                } else {
                    let p = t.strip_suffix("...").unwrap_or(t);
                    let mut w = Word::parse(p)?;
                    if w.len() > *depth {
                        w = Word::from_letters(w.letters()[..*depth].iter().copied());
                    }
                    Ok(BoundaryTarget::Free(BoundaryWord::new(w, TailMode::PrefixOnly)?))
                }
            }
            Model::Plane => {
                if t == "inf" || t == "infinity" {
                    Ok(BoundaryTarget::Plane(Ideal::Infinity))
                } else {
                    let v = t
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("ideal point {t:?}: {e}")))?;
                    Ok(BoundaryTarget::Plane(Ideal::Finite(v)))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> GroupElement {
        GroupElement::parse(s).unwrap()
    }
    fn v(s: &str) -> Point {
        Point::Vertex(Word::parse(s).unwrap())
    }

    #[test]
    fn free_examples() {
        let f2 = Model::free(2);
        assert_eq!(f2.distance(&v("ab"), &v("ab")).unwrap(), 0.0);
        assert_eq!(f2.distance(&v("ab"), &v("aBa")).unwrap(), 3.0);
        assert_eq!(f2.apply(&w("a"), &v("A")).unwrap(), v("1"));
        assert_eq!(f2.apply(&w("ab"), &v("B")).unwrap(), v("a"));
        assert_eq!(f2.displacement(&w("aBa")).unwrap(), 3.0);
        assert_eq!(f2.gromov_product(&v("ab"), &v("aBa"), &v("1")).unwrap(), 1.0);
        assert_eq!(f2.translation_distance(&w("ab"), 1).unwrap().tau, 2.0);
        assert_eq!(f2.translation_distance(&w("abA"), 1).unwrap().tau, 1.0);
    }

    #[test]
    fn free_boundary_examples() {
        let f2 = Model::free(2);
        let xi = f2.parse_target("a^inf").unwrap();
        assert_eq!(f2.horofunction(&xi, &v("a")).unwrap(), -1.0);
        assert_eq!(f2.horofunction(&xi, &v("A")).unwrap(), 1.0);
        assert_eq!(f2.cocycle(&w("a"), &xi).unwrap(), 1.0);
        assert_eq!(f2.cocycle(&w("1"), &xi).unwrap(), 0.0);
        assert_eq!(f2.extended_gromov(&xi, &v("ab"), &v("1")).unwrap(), 1.0);
        assert_eq!(
            f2.boundary_action(&w("b"), &xi).unwrap(),
            f2.parse_target("ba^inf").unwrap()
        );
        assert_eq!(f2.boundary_action(&w("A"), &xi).unwrap(), xi);
        let o = BoundaryTarget::Interior(f2.base_point());
        assert_eq!(f2.cocycle(&w("aBa"), &o).unwrap(), 3.0);
    }

    #[test]
    fn plane_examples() {
        let h2 = Model::Plane;
        let i = h2.base_point();
        let two_i = Point::Plane(HalfPlanePoint::new(0.0, 2.0).unwrap());
        assert!((h2.distance(&i, &two_i).unwrap() - 2f64.ln()).abs() < 1e-15);
        let g = w("[[2,0],[0,0.5]]");
        assert!((h2.displacement(&g).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((h2.gromov_product(&two_i, &two_i, &i).unwrap() - 2f64.ln()).abs() < 1e-15);
        let inf = BoundaryTarget::Plane(Ideal::Infinity);
        assert!((h2.horofunction(&inf, &two_i).unwrap() + 2f64.ln()).abs() < 1e-15);
        let t = h2.translation_distance(&g, 64).unwrap();
        assert!((t.tau - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn mismatched_models_error() {
        let f2 = Model::free(2);
        let z = Point::Plane(HalfPlanePoint::base());
        assert!(matches!(f2.distance(&v("a"), &z), Err(Error::ModelMismatch { .. })));
        assert!(matches!(
            Model::Plane.displacement(&w("a")),
            Err(Error::ModelMismatch { .. })
        ));
        assert!(f2.check_element(&w("c")).is_err());
    }

    #[test]
    fn independence() {
        let f2 = Model::free(2);
        assert!(f2.independent(&w("ab"), &w("ba")).unwrap());
        assert!(!f2.independent(&w("ab"), &w("abab")).unwrap());
        assert!(!f2.independent(&w("abA"), &w("1")).unwrap());
        let h2 = Model::Plane;
        let g = w("[[2,0],[0,0.5]]");
        let h = w("[[2,1],[1,1]]");
        assert!(h2.independent(&g, &h).unwrap());
        assert!(!h2.independent(&g, &g.mul(&g).unwrap()).unwrap());
    }
}
