use std::f64::consts::PI;

use proptest::prelude::*;
use rslab_core::elliptic::{
    addition_residual, phi_rat, phi_trig, scalar_identity_residual, EllipticParams, ScalarIdentity,
    DEFAULT_POLE_GUARD,
};
use rslab_core::C64;

const I: C64 = C64::new(0.0, 1.0);

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Direct summation over `|k| ≤ 64`, no argument reduction.
fn theta_oracle(z: C64, tau: C64) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for k in -64..=64 {
        let h = k as f64 + 0.5;
        s -= (I * PI * tau * h * h + 2.0 * I * PI * (z + 0.5) * h).exp();
    }
    s
}

fn fd<F: Fn(C64) -> C64>(f: F, z: C64, h: f64) -> C64 {
    (f(z + h) - f(z - h)) / (2.0 * h)
}

// Reference values below come from a 30-digit evaluation of the same series.
#[test]
fn theta_matches_frozen_value() {
    let p = EllipticParams::new(I).unwrap();
    let want = c(0.773651221771173147, 0.172931536591592663);
    assert!(rel(p.theta(c(0.3, 0.1)), want) < 1e-13);
    assert!(rel(theta_oracle(c(0.3, 0.1), I), want) < 1e-13);
}

#[test]
fn theta_derivatives_match_frozen_values() {
    let p = EllipticParams::new(I).unwrap();
    let (d1, d3) = p.theta_derivatives_at_zero();
    assert!(rel(d1, c(2.848694603987787316, 0.0)) < 1e-13);
    assert!(rel(d3, c(-26.84831412062675385, 0.0)) < 1e-12);
}

#[test]
fn phi_matches_frozen_value() {
    let p = EllipticParams::new(I).unwrap();
    let v = p.kronecker_phi(c(0.21, 0.13), c(0.37, 0.21)).unwrap();
    assert!(rel(v, c(3.559117356594300205, -4.706512750235745965)) < 1e-12);
}

#[test]
fn theta_agrees_with_unreduced_series_far_from_origin() {
    for tau in [I, c(0.0, 0.8), c(0.3, 0.9)] {
        let p = EllipticParams::new(tau).unwrap();
        for z in [c(0.31, 0.07), c(2.7, 1.3), c(-1.4, -0.9), c(0.5, 2.1)] {
            assert!(rel(p.theta(z), theta_oracle(z, tau)) < 1e-11, "tau={tau} z={z}");
        }
    }
}

#[test]
fn theta_is_odd_and_antiperiodic() {
    let p = EllipticParams::new(c(0.0, 0.8)).unwrap();
    let z = c(0.31, 0.07);
    assert!(rel(p.theta(z + 1.0), -p.theta(z)) < 1e-14);
    assert!(rel(p.theta(-z), -p.theta(z)) < 1e-14);
    let tau = p.tau();
    let factor = -(-I * PI * tau - 2.0 * I * PI * z).exp();
    assert!(rel(p.theta(z + tau), factor * p.theta(z)) < 1e-13);
}

#[test]
fn first_derivative_at_zero_matches_finite_difference() {
    for tau in [I, c(0.0, 0.8), c(0.3, 0.9)] {
        let p = EllipticParams::new(tau).unwrap();
        let (d1, _) = p.theta_derivatives_at_zero();
        let approx = fd(|z| p.theta(z), C64::new(0.0, 0.0), 1e-5);
        assert!(rel(approx, d1) < 1e-8);
    }
}

#[test]
fn e1_series_near_zero() {
    let p = EllipticParams::new(c(0.0, 0.8)).unwrap();
    let (d1, d3) = p.theta_derivatives_at_zero();
    let z = c(1e-3, 0.0);
    let got = p.eisenstein_e1(z).unwrap() - 1.0 / z;
    let want = z / 3.0 * d3 / d1;
    assert!(rel(got, want) < 1e-5);
}

#[test]
fn e1_is_log_derivative_of_theta() {
    let p = EllipticParams::new(c(0.3, 0.9)).unwrap();
    for z in [c(0.21, 0.13), c(0.77, 0.6), c(1.9, -0.4)] {
        let approx = fd(|w| p.theta(w), z, 1e-5) / p.theta(z);
        assert!(rel(p.eisenstein_e1(z).unwrap(), approx) < 1e-8);
    }
}

#[test]
fn e2_matches_finite_difference_of_e1() {
    let p = EllipticParams::new(I).unwrap();
    for z in [c(0.21, 0.13), c(0.77, 0.6), c(0.4, -0.3)] {
        let approx = -fd(|w| p.eisenstein_e1(w).unwrap(), z, 1e-5);
        assert!(rel(p.eisenstein_e2(z).unwrap(), approx) < 1e-7);
    }
}

#[test]
fn weierstrass_has_no_constant_term() {
    let p = EllipticParams::new(I).unwrap();
    let z = c(1e-3, 5e-4);
    assert!((p.weierstrass_p(z).unwrap() - 1.0 / (z * z)).norm() < 1e-4);
}

#[test]
fn phi_residue_at_zero() {
    let p = EllipticParams::new(I).unwrap();
    let z = c(1e-4, 0.0);
    let u = c(0.37, 0.21);
    let v = p.kronecker_phi(z, u).unwrap();
    // z·φ = 1 + z·E₁(u) + O(z²); the linear term alone is about 2e-4 here.
    let e1 = p.eisenstein_e1(u).unwrap();
    assert!((z * v - 1.0 - z * e1).norm() < 1e-6);
    assert!(((z * v - 1.0).norm() - 2.2399315e-4).abs() < 1e-9);
}

#[test]
fn phi_derivative_near_zero() {
    let p = EllipticParams::new(I).unwrap();
    let u = c(0.37, 0.21);
    let z = c(1e-3, 0.0);
    let d = p.dphi_dz(z, u).unwrap();
    // φ = 1/z + E₁(u) + O(z), so z²∂φ = -1 + O(z²).
    assert!((z * z * d + 1.0).norm() < 1e-5);
}

#[test]
fn phi_alpha_half_period_twist() {
    let p = EllipticParams::new(c(0.0, 0.8)).unwrap();
    let (z, hbar) = (c(0.23, 0.11), c(0.173, 0.041));
    let tau = p.tau();
    let want = (I * PI * z).exp() * p.kronecker_phi(z, tau / 2.0 + hbar / 2.0).unwrap();
    assert!(rel(p.phi_alpha(z, (0, 1), hbar / 2.0, 2).unwrap(), want) < 1e-13);
}

#[test]
fn phi_alpha_matches_theta_composition() {
    let tau = c(0.3, 0.9);
    let p = EllipticParams::new(tau).unwrap();
    let (z, u) = (c(0.23, 0.11), c(0.057, 0.013));
    let d1 = fd(|w| theta_oracle(w, tau), C64::new(0.0, 0.0), 1e-4);
    for m in 2..=3usize {
        for a1 in 0..m as i64 {
            for a2 in 0..m as i64 {
                if (a1, a2) == (0, 0) {
                    continue;
                }
                let w = (a1 as f64 + a2 as f64 * tau) / m as f64 + u;
                let want = (2.0 * I * PI * a2 as f64 * z / m as f64).exp() * d1 * theta_oracle(z + w, tau)
                    / (theta_oracle(z, tau) * theta_oracle(w, tau));
                assert!(rel(p.phi_alpha(z, (a1, a2), u, m).unwrap(), want) < 1e-7);
            }
        }
    }
}

#[test]
fn derivative_of_phi_matches_finite_difference() {
    let p = EllipticParams::new(c(0.0, 0.8)).unwrap();
    for k in 0..50 {
        let t = k as f64 / 50.0;
        let z = c(0.1 + 0.7 * t, 0.6 * (3.0 * t).sin());
        let u = c(0.3 - 0.2 * t, 0.2 + 0.1 * (5.0 * t).cos());
        let approx = fd(|w| p.kronecker_phi(w, u).unwrap(), z, 1e-5);
        assert!(rel(p.dphi_dz(z, u).unwrap(), approx) < 1e-7, "z={z} u={u}");
    }
}

#[test]
fn degenerations() {
    assert!((phi_rat(c(1.0, 0.0), c(2.0, 0.0)).unwrap() - 1.5).norm() < 1e-15);
    assert!(phi_rat(c(0.0, 0.0), c(2.0, 0.0)).is_err());
    let p = EllipticParams::new(c(0.0, 40.0)).unwrap();
    for (z, u) in [(c(0.21, 0.13), c(0.37, -0.2)), (c(0.6, 0.05), c(0.11, 0.3))] {
        assert!(rel(p.kronecker_phi(z, u).unwrap(), phi_trig(z, u).unwrap()) < 1e-10);
    }
}

#[test]
fn fay_survives_trigonometric_degeneration() {
    let pts = [(c(0.21, 0.13), c(0.37, -0.2), c(0.6, 0.05), c(0.11, 0.3)), (c(0.4, -0.3), c(0.2, 0.1), c(0.15, 0.2), c(0.7, -0.1))];
    for (z1, u1, z2, u2) in pts {
        let f = |a, b| phi_trig(a, b).unwrap();
        let lhs = f(z1, u1) * f(z2, u2);
        let rhs = f(z1, u1 + u2) * f(z2 - z1, u2) + f(z2, u1 + u2) * f(z1 - z2, u1);
        let scale = lhs.norm().max(rhs.norm());
        assert!((lhs - rhs).norm() < 1e-11 * scale);
    }
}

#[test]
fn poles_are_reported() {
    let p = EllipticParams::new(I).unwrap();
    assert!(p.kronecker_phi(c(0.0, 0.0), c(0.3, 0.1)).is_err());
    assert!(p.kronecker_phi(c(1.0, 1.0), c(0.3, 0.1)).is_err());
    assert!(p.eisenstein_e1(c(2.0, 0.0)).is_err());
    assert!(EllipticParams::new(c(0.0, -1.0)).is_err());
}

#[test]
fn sampled_identities_over_three_moduli() {
    for tau in [I, c(0.0, 0.8), c(0.3, 0.9)] {
        let p = EllipticParams::new(tau).unwrap();
        for id in ScalarIdentity::ALL {
            let r = scalar_identity_residual(&p, id, 3, 100, 0.05).unwrap();
            assert!(r.relative() < 1e-10, "{} at tau={tau}: {}", id.name(), r.relative());
        }
        for n in 2..=5 {
            let r = addition_residual(&p, n, 3, 100, 0.05).unwrap();
            assert!(r.relative() < 1e-9, "addition n={n} at tau={tau}");
        }
    }
}

#[test]
fn guard_constant_is_small() {
    assert!(DEFAULT_POLE_GUARD <= 1e-8);
}

fn point() -> impl Strategy<Value = C64> {
    (0.05f64..0.95, -0.45f64..0.45).prop_map(|(a, b)| c(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_is_symmetric(z in point(), u in point()) {
        let p = EllipticParams::new(I).unwrap();
        let (a, b) = (p.kronecker_phi(z, u).unwrap(), p.kronecker_phi(u, z).unwrap());
        prop_assert!(rel(a, b) < 1e-12);
    }

    #[test]
    fn phi_quasi_periods(z in point(), u in point()) {
        let p = EllipticParams::new(c(0.3, 0.9)).unwrap();
        let v = p.kronecker_phi(z, u).unwrap();
        prop_assert!(rel(p.kronecker_phi(z + 1.0, u).unwrap(), v) < 1e-12);
        let tau = p.tau();
        let w = (-2.0 * I * PI * u).exp() * v;
        prop_assert!(rel(p.kronecker_phi(z + tau, u).unwrap(), w) < 1e-11);
    }

    #[test]
    fn phi_product_is_weierstrass_difference(z in point(), u in point()) {
        let p = EllipticParams::new(c(0.0, 0.8)).unwrap();
        let lhs = p.kronecker_phi(z, u).unwrap() * p.kronecker_phi(z, -u).unwrap();
        let rhs = p.weierstrass_p(z).unwrap() - p.weierstrass_p(u).unwrap();
        let scale = lhs.norm().max(p.weierstrass_p(z).unwrap().norm()).max(p.weierstrass_p(u).unwrap().norm());
        prop_assert!((lhs - rhs).norm() < 1e-10 * scale);
    }

    #[test]
    fn e2_and_wp_are_periodic(z in point()) {
        let p = EllipticParams::new(c(0.3, 0.9)).unwrap();
        let tau = p.tau();
        let e = p.eisenstein_e2(z).unwrap();
        prop_assert!(rel(p.eisenstein_e2(z + tau).unwrap(), e) < 1e-11);
        prop_assert!(rel(p.eisenstein_e2(z - 1.0).unwrap(), e) < 1e-11);
        let e1 = p.eisenstein_e1(z).unwrap();
        prop_assert!(rel(p.eisenstein_e1(z + tau).unwrap(), e1 - 2.0 * I * PI) < 1e-11);
    }
}
