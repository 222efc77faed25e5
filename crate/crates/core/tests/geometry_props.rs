use hyperwalk::geometry::plane::{self, HalfPlanePoint, Ideal, Mobius};
use hyperwalk::geometry::{BoundaryTarget, BoundaryWord, GroupElement, Model, Point, TailMode, Word};
use proptest::prelude::*;

const CASES: u32 = 1000;

fn tree() -> Model {
    Model::Free { rank: 3, depth: 32 }
}

fn letters(max_len: usize) -> impl Strategy<Value = Vec<i32>> {
    prop::collection::vec(prop_oneof![Just(1), Just(-1), Just(2), Just(-2), Just(3), Just(-3)], 0..max_len)
}

fn word(max_len: usize) -> impl Strategy<Value = Word> {
    letters(max_len).prop_map(Word::from_letters)
}

fn vertex() -> impl Strategy<Value = Point> {
    word(12).prop_map(Point::Vertex)
}

fn tree_element() -> impl Strategy<Value = GroupElement> {
    word(10).prop_map(GroupElement::Word)
}

fn tree_target() -> impl Strategy<Value = BoundaryTarget> {
    prop_oneof![
        3 => word(8)
            .prop_filter("nonempty", |w| !w.is_empty())
            .prop_map(|w| BoundaryTarget::Free(BoundaryWord::new(w, TailMode::RepeatLast).unwrap())),
        1 => vertex().prop_map(BoundaryTarget::Interior),
    ]
}

fn plane_point() -> impl Strategy<Value = HalfPlanePoint> {
    (-3.0..3.0f64, -2.0..2.0f64).prop_map(|(x, ly)| HalfPlanePoint::new(x, ly.exp()).unwrap())
}

/// `R(α)·diag(e^{t/2})·R(β)` covers SL₂(ℝ).
fn mobius() -> impl Strategy<Value = Mobius> {
    (0.0..std::f64::consts::TAU, -2.0..2.0f64, 0.0..std::f64::consts::TAU).prop_map(|(a, t, b)| {
        Mobius::rotation(a)
            .compose(&Mobius::diagonal((0.5 * t).exp()))
            .compose(&Mobius::rotation(b))
    })
}

fn ideal() -> impl Strategy<Value = Ideal> {
    prop_oneof![1 => Just(Ideal::Infinity), 9 => (-5.0..5.0f64).prop_map(Ideal::Finite)]
}

fn plane_target() -> impl Strategy<Value = BoundaryTarget> {
    prop_oneof![
        3 => ideal().prop_map(BoundaryTarget::Plane),
        1 => plane_point().prop_map(|p| BoundaryTarget::Interior(Point::Plane(p))),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn tree_metric_axioms(p in vertex(), q in vertex(), r in vertex()) {
        let m = tree();
        let (pq, qp, pr, rq) = (
            m.distance(&p, &q).unwrap(),
            m.distance(&q, &p).unwrap(),
            m.distance(&p, &r).unwrap(),
            m.distance(&r, &q).unwrap(),
        );
        prop_assert_eq!(pq, qp);
        prop_assert!(pq <= pr + rq);
        prop_assert_eq!(pq == 0.0, p == q);
        prop_assert_eq!(m.distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn plane_metric_axioms(p in plane_point(), q in plane_point(), r in plane_point()) {
        let (pq, qp, pr, rq) = (
            plane::distance(&p, &q),
            plane::distance(&q, &p),
            plane::distance(&p, &r),
            plane::distance(&r, &q),
        );
        prop_assert!(close(pq, qp, 1e-12));
        prop_assert!(pq <= pr + rq + 1e-9);
        prop_assert!(pq >= 0.0);
        prop_assert!(plane::distance(&p, &p) <= 1e-9);
    }

    #[test]
    fn tree_isometry_invariance(g in tree_element(), p in vertex(), q in vertex()) {
        let m = tree();
        let d = m.distance(&p, &q).unwrap();
        let d2 = m.distance(&m.apply(&g, &p).unwrap(), &m.apply(&g, &q).unwrap()).unwrap();
        prop_assert_eq!(d, d2);
    }

    #[test]
    fn plane_isometry_invariance(g in mobius(), p in plane_point(), q in plane_point()) {
        let m = Model::Plane;
        let (p, q) = (Point::Plane(p), Point::Plane(q));
        let g = GroupElement::Matrix(g);
        let d = m.distance(&p, &q).unwrap();
        let d2 = m.distance(&m.apply(&g, &p).unwrap(), &m.apply(&g, &q).unwrap()).unwrap();
        prop_assert!(close(d, d2, 1e-9), "{} vs {}", d, d2);
    }

    #[test]
    fn tree_four_point_defect_is_nonpositive(x in vertex(), y in vertex(), z in vertex(), w in vertex()) {
        let defect = tree().hyperbolicity_defect(&[[x, y, z, w]]).unwrap();
        prop_assert!(defect <= 0.0);
    }

    #[test]
    fn plane_four_point_defect_within_delta(
        x in plane_point(), y in plane_point(), z in plane_point(), w in plane_point()
    ) {
        let m = Model::Plane;
        let s = [[Point::Plane(x), Point::Plane(y), Point::Plane(z), Point::Plane(w)]];
        prop_assert!(m.hyperbolicity_defect(&s).unwrap() <= m.delta() + 1e-9);
    }

    #[test]
    fn tree_cocycle_bounds(g in tree_element(), x in tree_target()) {
        let m = tree();
        let kappa = m.displacement(&g).unwrap();
        let o = BoundaryTarget::Interior(m.base_point());
        prop_assert_eq!(m.cocycle(&g, &o).unwrap(), kappa);
        prop_assert!(m.cocycle(&g, &x).unwrap().abs() <= kappa);
    }

    #[test]
    fn plane_cocycle_bounds(g in mobius(), x in plane_target()) {
        let m = Model::Plane;
        let g = GroupElement::Matrix(g);
        let kappa = m.displacement(&g).unwrap();
        let o = BoundaryTarget::Interior(m.base_point());
        prop_assert!(close(m.cocycle(&g, &o).unwrap(), kappa, 1e-9));
        prop_assert!(m.cocycle(&g, &x).unwrap().abs() <= kappa + 1e-9 * (1.0 + kappa));
    }

    #[test]
    fn tree_cocycle_identity(g in tree_element(), h in tree_element(), x in tree_target()) {
        let m = tree();
        let gh = g.mul(&h).unwrap();
        let hx = m.boundary_action(&h, &x).unwrap();
        let lhs = m.cocycle(&gh, &x).unwrap();
        let rhs = m.cocycle(&g, &hx).unwrap() + m.cocycle(&h, &x).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn plane_cocycle_identity(g in mobius(), h in mobius(), x in plane_target()) {
        let m = Model::Plane;
        let (g, h) = (GroupElement::Matrix(g), GroupElement::Matrix(h));
        let gh = g.mul(&h).unwrap();
        let hx = m.boundary_action(&h, &x).unwrap();
        let lhs = m.cocycle(&gh, &x).unwrap();
        let rhs = m.cocycle(&g, &hx).unwrap() + m.cocycle(&h, &x).unwrap();
        prop_assert!(close(lhs, rhs, 1e-9), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn tree_horofunction_is_lipschitz(x in tree_target(), p in vertex(), q in vertex()) {
        let m = tree();
        prop_assert_eq!(m.horofunction(&x, &m.base_point()).unwrap(), 0.0);
        let gap = (m.horofunction(&x, &p).unwrap() - m.horofunction(&x, &q).unwrap()).abs();
        prop_assert!(gap <= m.distance(&p, &q).unwrap());
    }

    #[test]
    fn plane_horofunction_is_lipschitz(x in plane_target(), p in plane_point(), q in plane_point()) {
        let m = Model::Plane;
        prop_assert!(m.horofunction(&x, &m.base_point()).unwrap().abs() <= 1e-12);
        let (p, q) = (Point::Plane(p), Point::Plane(q));
        let gap = (m.horofunction(&x, &p).unwrap() - m.horofunction(&x, &q).unwrap()).abs();
        prop_assert!(gap <= m.distance(&p, &q).unwrap() + 1e-9);
    }

    #[test]
    fn extended_gromov_matches_interior(x in vertex(), y in vertex(), px in plane_point(), py in plane_point()) {
        let m = tree();
        let o = m.base_point();
        let ext = m.extended_gromov(&BoundaryTarget::Interior(x.clone()), &y, &o).unwrap();
        prop_assert_eq!(ext, m.gromov_product(&x, &y, &o).unwrap());
        let m = Model::Plane;
        let o = m.base_point();
        let (px, py) = (Point::Plane(px), Point::Plane(py));
        let ext = m.extended_gromov(&BoundaryTarget::Interior(px.clone()), &py, &o).unwrap();
        prop_assert!(close(ext, m.gromov_product(&px, &py, &o).unwrap(), 1e-9));
    }

    #[test]
    fn plane_busemann_matches_defining_limit(theta in 0.0..std::f64::consts::TAU, z in plane_point()) {
        // Geodesic ray from i towards ξ = R(θ)·∞, evaluated at t = 30.
        let r = Mobius::rotation(theta);
        let xi = r.apply_ideal(&Ideal::Infinity);
        let t: f64 = 30.0;
        let far = r.apply(&HalfPlanePoint::new(0.0, t.exp()).unwrap()).unwrap();
        let limit = plane::distance(&z, &far) - t;
        prop_assert!((plane::busemann(&xi, &z) - limit).abs() <= 1e-6, "ξ = {:?}", xi);
    }

    #[test]
    fn boundary_action_respects_products(g in tree_element(), h in tree_element(), x in tree_target()) {
        let m = tree();
        let gh = g.mul(&h).unwrap();
        let lhs = m.boundary_action(&gh, &x).unwrap();
        let rhs = m.boundary_action(&g, &m.boundary_action(&h, &x).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }
}

#[test]
fn prefix_only_target_reports_truncation() {
    let m = tree();
    let x = BoundaryTarget::Free(BoundaryWord::new(Word::parse("ab").unwrap(), TailMode::PrefixOnly).unwrap());
    let g = GroupElement::Word(Word::parse("BABA").unwrap());
    // g⁻¹·o = abab runs past the known prefix.
    assert!(m.cocycle(&g, &x).is_err());
    let short = GroupElement::Word(Word::parse("BAB").unwrap());
    assert_eq!(m.cocycle(&short, &x).unwrap(), 3.0);
}
