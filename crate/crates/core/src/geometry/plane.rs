//! The hyperbolic plane as the upper half-plane with base point `i`,
//! acted on by `SL(2,ℝ)` through Möbius maps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln(1+√2)`: the four-point constant of the hyperbolic plane.
pub const PLANE_DELTA: f64 = 0.881_373_587_019_543;

/// Below this translation length an isometry is not counted as loxodromic.
pub const LOXODROMIC_THRESHOLD: f64 = 1e-6;

/// A point `x + iy` with `y > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlanePoint {
    pub x: f64,
    pub y: f64,
}

impl HalfPlanePoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(y > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::NumericDegeneracy(format!(
                "point {x} + {y}i is not in the upper half-plane"
            )));
        }
        Ok(HalfPlanePoint { x, y })
    }

    pub fn base() -> Self {
        HalfPlanePoint { x: 0.0, y: 1.0 }
    }
}

impl fmt::Display for HalfPlanePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:+}i", self.x, self.y)
    }
}

/// Hyperbolic distance, `2·asinh(|z−w| / (2√(Im z·Im w)))`.
pub fn distance(p: &HalfPlanePoint, q: &HalfPlanePoint) -> f64 {
    let r = (p.x - q.x).hypot(p.y - q.y) / (2.0 * (p.y * q.y).sqrt());
    2.0 * r.asinh()
}

/// Distance from `p` to a point given by `x` and `ln y`; stays finite when `y` underflows.
pub fn distance_log(p: &HalfPlanePoint, x: f64, ln_y: f64) -> f64 {
    let y = ln_y.exp();
    let num = (p.x - x).hypot(p.y - y);
    let ln_r = num.ln() - std::f64::consts::LN_2 - 0.5 * (p.y.ln() + ln_y);
    if ln_r > 20.0 {
        // asinh(r) = ln(2r) + O(r⁻²)
        2.0 * (ln_r + std::f64::consts::LN_2)
    } else {
        2.0 * ln_r.exp().asinh()
    }
}

/// A point of `∂H² = ℝ ∪ {∞}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ideal {
    Finite(f64),
    Infinity,
}

impl Ideal {
    /// Angle of the point on the unit circle under the Cayley map `z ↦ (z−i)/(z+i)`,
    /// in `[0, 2π)`; `∞` sits at angle 0.
    pub fn angle(&self) -> f64 {
        match *self {
            Ideal::Infinity => 0.0,
            Ideal::Finite(xi) => {
                let t = (-2.0 * xi).atan2(xi * xi - 1.0);
                if t < 0.0 {
                    t + std::f64::consts::TAU
                } else {
                    t
                }
            }
        }
    }

    pub fn from_angle(theta: f64) -> Ideal {
        let half = 0.5 * theta.rem_euclid(std::f64::consts::TAU);
        let s = half.sin();
        if s.abs() < 1e-300 {
            Ideal::Infinity
        } else {
            Ideal::Finite(-half.cos() / s)
        }
    }

    /// Distance between two ideal points measured as angle on the circle.
    pub fn angular_gap(&self, other: &Ideal) -> f64 {
        let d = (self.angle() - other.angle()).rem_euclid(std::f64::consts::TAU);
        d.min(std::f64::consts::TAU - d)
    }
}

impl fmt::Display for Ideal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ideal::Finite(x) => write!(f, "{x}"),
            Ideal::Infinity => f.write_str("inf"),
        }
    }
}

/// Busemann function at `ξ`, normalized so that `h_ξ(i) = 0`.
pub fn busemann(xi: &Ideal, z: &HalfPlanePoint) -> f64 {
    busemann_log(xi, z.x, z.y.ln())
}

/// [`busemann`] for a point given by `x` and `ln y`.
pub fn busemann_log(xi: &Ideal, x: f64, ln_y: f64) -> f64 {
    match *xi {
        Ideal::Infinity => -ln_y,
        Ideal::Finite(s) => {
            let y = ln_y.exp();
            let dx = x - s;
            (dx * dx + y * y).ln() - ln_y - (s * s).ln_1p()
        }
    }
}

/// An orientation-preserving isometry `z ↦ (az+b)/(cz+d)` with `ad − bc = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Mobius {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl Mobius {
    /// Scales the matrix to unit determinant; a non-positive determinant is rejected.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let det = a * d - b * c;
        if !(det > 0.0) || ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(Error::NumericDegeneracy(format!(
                "matrix [[{a},{b}],[{c},{d}]] has determinant {det}; need > 0"
            )));
        }
        let s = det.sqrt().recip();
        Ok(Mobius {
            a: a * s,
            b: b * s,
            c: c * s,
            d: d * s,
        })
    }

    pub fn identity() -> Self {
        Mobius {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    pub fn diagonal(t: f64) -> Self {
        Mobius {
            a: t,
            b: 0.0,
            c: 0.0,
            d: t.recip(),
        }
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = (0.5 * theta).sin_cos();
        Mobius {
            a: c,
            b: s,
            c: -s,
            d: c,
        }
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    /// `self ∘ other`, renormalized to unit determinant.
    pub fn compose(&self, other: &Mobius) -> Mobius {
        let a = self.a * other.a + self.b * other.c;
        let b = self.a * other.b + self.b * other.d;
        let c = self.c * other.a + self.d * other.c;
        let d = self.c * other.b + self.d * other.d;
        let s = (a * d - b * c).sqrt().recip();
        Mobius {
            a: a * s,
            b: b * s,
            c: c * s,
            d: d * s,
        }
    }

    pub fn inverse(&self) -> Mobius {
        Mobius {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    pub fn apply(&self, z: &HalfPlanePoint) -> Result<HalfPlanePoint> {
        // (az+b)/(cz+d) = [(ax+b)(cx+d) + acy² + i·y] / |cz+d|²  (det = 1)
        let (x, y) = (z.x, z.y);
        let re_den = self.c * x + self.d;
        let im_den = self.c * y;
        let den = re_den * re_den + im_den * im_den;
        let re = (self.a * x + self.b) * re_den + self.a * self.c * y * y;
        HalfPlanePoint::new(re / den, y * self.det() / den)
    }

    pub fn apply_ideal(&self, xi: &Ideal) -> Ideal {
        match *xi {
            Ideal::Infinity => {
                if self.c == 0.0 {
                    Ideal::Infinity
                } else {
                    Ideal::Finite(self.a / self.c)
                }
            }
            Ideal::Finite(s) => {
                let den = self.c * s + self.d;
                if den == 0.0 {
                    Ideal::Infinity
                } else {
                    Ideal::Finite((self.a * s + self.b) / den)
                }
            }
        }
    }

    /// `κ(g) = d(g·i, i)`.
    pub fn displacement(&self) -> f64 {
        ScaledMobius::from(*self).displacement()
    }

    /// Closed-form translation length `2·acosh(|tr|/2)`, zero for elliptic/parabolic maps.
    pub fn translation_length_closed_form(&self) -> f64 {
        let t = 0.5 * self.trace().abs();
        if t <= 1.0 {
            0.0
        } else {
            2.0 * t.acosh()
        }
    }

    /// The two fixed points on `∂H²` of a hyperbolic map, repelling first.
    pub fn fixed_points(&self) -> Option<(Ideal, Ideal)> {
        let tr = self.trace();
        let disc = tr * tr - 4.0;
        if disc <= 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let pts = if self.c == 0.0 {
            (Ideal::Infinity, Ideal::Finite(self.b / (self.d - self.a)))
        } else {
            (
                Ideal::Finite((self.a - self.d - root) / (2.0 * self.c)),
                Ideal::Finite((self.a - self.d + root) / (2.0 * self.c)),
            )
        };
        // The attracting point ξ has |cξ+d| < 1.
        let derivative = |p: &Ideal| match *p {
            Ideal::Infinity => self.d * self.d,
            Ideal::Finite(s) => (self.c * s + self.d).powi(2).recip(),
        };
        if derivative(&pts.0) > 1.0 {
            Some(pts)
        } else {
            Some((pts.1, pts.0))
        }
    }

    /// Equality as isometries: the matrices agree up to sign within `tol`.
    pub fn approx_eq(&self, other: &Mobius, tol: f64) -> bool {
        let e = self.entries();
        let o = other.entries();
        let plus = e.iter().zip(&o).all(|(x, y)| (x - y).abs() <= tol);
        let minus = e.iter().zip(&o).all(|(x, y)| (x + y).abs() <= tol);
        plus || minus
    }
}

impl TryFrom<[[f64; 2]; 2]> for Mobius {
    type Error = Error;
    fn try_from(m: [[f64; 2]; 2]) -> Result<Self> {
        Mobius::new(m[0][0], m[0][1], m[1][0], m[1][1])
    }
}

impl From<Mobius> for [[f64; 2]; 2] {
    fn from(m: Mobius) -> Self {
        [[m.a, m.b], [m.c, m.d]]
    }
}

impl fmt::Display for Mobius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{},{}],[{},{}]]", self.a, self.b, self.c, self.d)
    }
}

/// A unit-determinant matrix stored as `e^s · m` with `max |m_ij| = 1`.
///
/// Long walk products grow like `e^{nℓ/2}` and would overflow as plain
/// matrices; all observables are evaluated in the log domain instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledMobius {
    m: [f64; 4],
    log_scale: f64,
}

impl From<Mobius> for ScaledMobius {
    fn from(g: Mobius) -> Self {
        let mut s = ScaledMobius {
            m: g.entries(),
            log_scale: 0.0,
        };
        s.normalize();
        s
    }
}

impl ScaledMobius {
    pub fn identity() -> Self {
        Mobius::identity().into()
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    fn normalize(&mut self) {
        let [a, b, c, d] = self.m;
        let det = a * d - b * c;
        // Re-impose det = 1 while the normalized matrix is far from rank one.
        if det > 1e-6 {
            self.log_scale = -0.5 * det.ln();
        }
        let big = self.m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for v in &mut self.m {
            *v /= big;
        }
        self.log_scale += big.ln();
    }

    fn product(l: &[f64; 4], r: &[f64; 4]) -> [f64; 4] {
        [
            l[0] * r[0] + l[1] * r[2],
            l[0] * r[1] + l[1] * r[3],
            l[2] * r[0] + l[3] * r[2],
            l[2] * r[1] + l[3] * r[3],
        ]
    }

    /// `self ← x · self`.
    pub fn left_mul(&mut self, x: &Mobius) {
        self.m = Self::product(&x.entries(), &self.m);
        self.normalize();
    }

    /// `self · rhs`.
    pub fn mul(&self, rhs: &ScaledMobius) -> ScaledMobius {
        let mut out = ScaledMobius {
            m: Self::product(&self.m, &rhs.m),
            log_scale: self.log_scale + rhs.log_scale,
        };
        out.normalize();
        out
    }

    pub fn pow(&self, mut n: u64) -> ScaledMobius {
        let mut base = *self;
        let mut acc = ScaledMobius::identity();
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            n >>= 1;
        }
        acc
    }

    /// The matrix itself when its entries are representable.
    pub fn to_mobius(&self) -> Option<Mobius> {
        if self.log_scale > 300.0 {
            return None;
        }
        let e = self.log_scale.exp();
        let [a, b, c, d] = self.m;
        Mobius::new(a * e, b * e, c * e, d * e).ok()
    }

    /// `κ = d(L·i, i) = acosh(‖L‖_F²/2)`.
    pub fn displacement(&self) -> f64 {
        if self.log_scale < 20.0 {
            let e = self.log_scale.exp();
            let [a, b, c, d] = self.m.map(|v| v * e);
            let det = a * d - b * c;
            // L·i = ((ac+bd) + i·det) / (c²+d²)
            let den = c * c + d * d;
            let z = HalfPlanePoint {
                x: (a * c + b * d) / den,
                y: det / den,
            };
            return distance(&z, &HalfPlanePoint::base());
        }
        let sq: f64 = self.m.iter().map(|v| v * v).sum();
        let ln_t = 2.0 * self.log_scale + sq.ln() - std::f64::consts::LN_2;
        // acosh(T) = ln(2T) + ln((1 + √(1 − T⁻²))/2)
        let inv2 = (-2.0 * ln_t).exp();
        ln_t + std::f64::consts::LN_2 + (0.5 * (1.0 + (1.0 - inv2).sqrt())).ln()
    }

    /// `L⁻¹·i` as `(x, ln y)`.
    pub fn inverse_orbit(&self) -> (f64, f64) {
        let [a, b, c, d] = self.m;
        // L⁻¹·i = (−(ab+cd) + i) / (a²+c²) for det L = 1
        let col = a * a + c * c;
        let x = -(a * b + c * d) / col;
        let ln_y = -2.0 * self.log_scale - col.ln();
        (x, ln_y)
    }

    /// `σ(L, ξ) = h_ξ(L⁻¹·i)`.
    pub fn cocycle_ideal(&self, xi: &Ideal) -> f64 {
        let (x, ln_y) = self.inverse_orbit();
        busemann_log(xi, x, ln_y)
    }

    /// `σ(L, p) = d(p, L⁻¹·i) − d(p, i)` for an interior target `p`.
    pub fn cocycle_point(&self, p: &HalfPlanePoint) -> f64 {
        let (x, ln_y) = self.inverse_orbit();
        distance_log(p, x, ln_y) - distance(p, &HalfPlanePoint::base())
    }
}

/// `τ(g)` estimated as `κ(g^m)/m`, plus the gap to `κ(g^{2m})/(2m)`.
pub fn translation_estimate(g: &Mobius, iterations: u64) -> (f64, f64) {
    let s = ScaledMobius::from(*g);
    let m = iterations.max(1);
    let gm = s.pow(m);
    let tau_m = gm.displacement() / m as f64;
    let tau_2m = gm.mul(&gm).displacement() / (2 * m) as f64;
    (tau_m, (tau_m - tau_2m).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> HalfPlanePoint {
        HalfPlanePoint::new(x, y).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert!((distance(&pt(0.0, 1.0), &pt(0.0, 2.0)) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(distance(&pt(0.3, 1.7), &pt(0.3, 1.7)), 0.0);
        let p = pt(-0.4, 0.2);
        let q = pt(1.1, 3.0);
        let cosh = 1.0 + ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)) / (2.0 * p.y * q.y);
        assert!((distance(&p, &q) - cosh.acosh()).abs() < 1e-12);
        assert!((distance_log(&p, q.x, q.y.ln()) - distance(&p, &q)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_action() {
        let g = Mobius::new(2.0, 0.0, 0.0, 0.5).unwrap();
        let z = g.apply(&HalfPlanePoint::base()).unwrap();
        assert!((z.x).abs() < 1e-15 && (z.y - 4.0).abs() < 1e-14);
        assert!((g.displacement() - 4f64.ln()).abs() < 1e-12);
        assert!((g.translation_length_closed_form() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constructor_normalizes_and_rejects() {
        let g = Mobius::new(2.0, 1.0, 1.0, 3.0).unwrap();
        assert!((g.det() - 1.0).abs() < 1e-15);
        assert!(Mobius::new(1.0, 2.0, 2.0, 1.0).is_err());
        assert!(Mobius::new(f64::NAN, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn busemann_at_infinity_matches_limit() {
        let z = pt(0.0, 2.0);
        assert!((busemann(&Ideal::Infinity, &z) + 2f64.ln()).abs() < 1e-15);
        let far = pt(0.0, 30f64.exp());
        let lim = distance(&z, &far) - distance(&HalfPlanePoint::base(), &far);
        assert!((lim - busemann(&Ideal::Infinity, &z)).abs() < 1e-6);
    }

    #[test]
    fn ideal_angle_roundtrip() {
        for xi in [-3.0, -1.0, 0.0, 0.25, 1.0, 7.5] {
            let back = Ideal::from_angle(Ideal::Finite(xi).angle());
            match back {
                Ideal::Finite(v) => assert!((v - xi).abs() < 1e-12 * (1.0 + xi.abs())),
                Ideal::Infinity => panic!("lost finite point {xi}"),
            }
        }
        assert_eq!(Ideal::from_angle(0.0), Ideal::Infinity);
    }

    #[test]
    fn fixed_points_are_fixed() {
        let g = Mobius::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let (rep, att) = g.fixed_points().unwrap();
        for p in [rep, att] {
            let Ideal::Finite(v) = p else { panic!() };
            let Ideal::Finite(w) = g.apply_ideal(&p) else { panic!() };
            assert!((v - w).abs() < 1e-12);
        }
        // iterating pulls points towards the attracting fixed point
        let mut xi = Ideal::Finite(0.3);
        for _ in 0..60 {
            xi = g.apply_ideal(&xi);
        }
        assert!(xi.angular_gap(&att) < 1e-9);
        assert!(Mobius::rotation(0.4).fixed_points().is_none());
    }

    #[test]
    fn scaled_products_track_plain_products() {
        let g = Mobius::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let h = Mobius::new(1.0, -0.5, 0.3, 0.85).unwrap();
        let mut s = ScaledMobius::identity();
        let mut plain = Mobius::identity();
        for i in 0..12 {
            let x = if i % 3 == 0 { h } else { g };
            s.left_mul(&x);
            plain = x.compose(&plain);
            assert!((plain.det() - 1.0).abs() <= 1e-12);
        }
        assert!((s.displacement() - plain.displacement()).abs() < 1e-9);
        let inv = plain.inverse().apply(&HalfPlanePoint::base()).unwrap();
        for xi in [Ideal::Infinity, Ideal::Finite(-0.7), Ideal::Finite(2.0)] {
            assert!((s.cocycle_ideal(&xi) - busemann(&xi, &inv)).abs() < 1e-9);
        }
        let p = pt(0.5, 0.8);
        let direct = distance(&p, &inv) - distance(&p, &HalfPlanePoint::base());
        assert!((s.cocycle_point(&p) - direct).abs() < 1e-9);
    }

    #[test]
    fn huge_powers_do_not_overflow() {
        let g = Mobius::new(2.0, 0.0, 0.0, 0.5).unwrap();
        let (tau, gap) = translation_estimate(&g, 1 << 20);
        assert!((tau - 4f64.ln()).abs() < 1e-9, "{tau}");
        assert!(gap < 1e-9);
        let h = Mobius::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let (tau, _) = translation_estimate(&h, 4096);
        assert!((tau - h.translation_length_closed_form()).abs() < 1e-3);
    }
}
