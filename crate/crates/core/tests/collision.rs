use diffprox::geometry::{Capsule, PaddedPolygon, Pose};
use diffprox::{finite_diff_jacobians, proximity, proximity_jacobians, Shape};
use nalgebra::{Vector3, Vector4};
use proptest::prelude::*;

fn quat() -> impl Strategy<Value = Vector4<f64>> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 0.01)
        .prop_map(|q| Vector4::from(q).normalize())
}

fn position() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-1.5f64..1.5).prop_map(Vector3::from)
}

fn capsule() -> impl Strategy<Value = Capsule> {
    (position(), quat(), 0.5f64..2.5, 0.05f64..0.4)
        .prop_map(|(r, q, l, rad)| Capsule::new(Pose::new(r, q).unwrap(), l, rad).unwrap())
}

fn polygon() -> impl Strategy<Value = PaddedPolygon> {
    (position(), quat(), 3usize..=8, 0.4f64..1.2, 0.05f64..0.3)
        .prop_map(|(r, q, n, rho, rad)| PaddedPolygon::regular(Pose::new(r, q).unwrap(), n, rho, rad).unwrap())
}

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![capsule().prop_map(Shape::from), polygon().prop_map(Shape::from)]
}

fn inflate(s: &Shape, delta: f64) -> Shape {
    match s {
        Shape::Capsule(c) => Capsule::new(c.pose, c.length(), c.radius() + delta).unwrap().into(),
        Shape::Polygon(p) => PaddedPolygon::new(p.pose, p.c().clone(), p.d().clone(), p.radius() + delta)
            .unwrap()
            .into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn phi_is_symmetric(a in shape(), b in shape()) {
        let ab = proximity(&a, &b).unwrap();
        let ba = proximity(&b, &a).unwrap();
        prop_assert!((ab.phi - ba.phi).abs() <= 1e-9);
        prop_assert!((ab.p1 - ba.p2).amax() <= 1e-6 || ab.distance() < 1e-6);
    }

    #[test]
    fn inflating_radii_shifts_phi_exactly(a in shape(), b in shape(), delta in 0.0f64..0.5) {
        let base = proximity(&a, &b).unwrap();
        let fat = proximity(&inflate(&a, delta), &inflate(&b, delta)).unwrap();
        let rr = a.radius() + b.radius();
        let expected = (rr + 2.0 * delta).powi(2) - rr * rr;
        prop_assert!((base.phi - fat.phi - expected).abs() <= 1e-9);
    }

    #[test]
    fn surface_points_lie_on_padded_surfaces(a in shape(), b in shape()) {
        let res = proximity(&a, &b).unwrap();
        if let (Some(s1), Some(s2)) = (res.p1_surf, res.p2_surf) {
            prop_assert!(((s1 - res.p1).norm() - a.radius()).abs() <= 1e-12);
            prop_assert!(((s2 - res.p2).norm() - b.radius()).abs() <= 1e-12);
        } else {
            prop_assert!(res.distance() < 1e-10);
        }
    }

    #[test]
    fn translation_jacobians_cancel(a in shape(), b in shape()) {
        if let Ok(j) = proximity_jacobians(&a, &b) {
            prop_assert!((j.dphi_dr1 + j.dphi_dr2).amax() <= 1e-9);
        }
    }
}

#[test]
fn separated_collinear_capsules_match_finite_differences() {
    let a: Shape = Capsule::new(Pose::identity(), 2.0, 0.25).unwrap().into();
    let b: Shape = Capsule::new(Pose::from_translation(Vector3::new(4.0, 0.0, 0.0)), 2.0, 0.25)
        .unwrap()
        .into();
    // φ = (offset - 2)² - 0.25 along x, so ∂φ/∂r2x = 4.
    let analytic = proximity_jacobians(&a, &b).unwrap();
    assert!((analytic.dphi_dr2[0] - 4.0).abs() <= 1e-9);
    let fd = finite_diff_jacobians(&a, &b, 1e-6).unwrap();
    for (x, y) in analytic.flatten().iter().zip(fd.flatten()) {
        assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
    }
}

#[test]
fn halving_the_step_does_not_worsen_finite_differences() {
    let a: Shape = Capsule::new(
        Pose::new(Vector3::new(0.1, -0.2, 0.3), Vector4::new(0.9, 0.1, -0.3, 0.2).normalize()).unwrap(),
        1.5,
        0.2,
    )
    .unwrap()
    .into();
    let b: Shape = PaddedPolygon::regular(
        Pose::new(Vector3::new(0.4, 0.3, 1.6), Vector4::new(0.8, -0.2, 0.1, 0.4).normalize()).unwrap(),
        5,
        0.8,
        0.1,
    )
    .unwrap()
    .into();
    let analytic = proximity_jacobians(&a, &b).unwrap().flatten();
    let err = |h: f64| {
        let fd = finite_diff_jacobians(&a, &b, h).unwrap().flatten();
        analytic.iter().zip(fd).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (err(1e-5), err(5e-6));
    assert!(fine <= coarse || fine <= 1e-8, "{coarse:e} -> {fine:e}");
}
