use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rslab_core::identities::{IndexSubset, ShiftTag, Sign};
use rslab_core::operators::{
    build_scalar_d, build_spin_d, build_spin_d_with, commutator_residual, compose, difference_at, freeze_h1,
    lemma1_residual, lemma1_residual_at, scalar_pair_product, shifted, DifferenceOperator, RationalKernel,
};
use rslab_core::rmatrix::{rbar_two_site, ModelParams};
use rslab_core::tensor::{apply_two_site_right, clock_q, shift_lambda, tensor_power, CMatrix};
use rslab_core::C64;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn set(v: &[usize]) -> IndexSubset {
    IndexSubset::new(v.iter().copied()).unwrap()
}

fn params(m: usize, n: usize) -> ModelParams {
    ModelParams::new(c(0.0, 0.8), c(0.173, 0.041), c(0.289, -0.057), m, n).unwrap()
}

fn cell_points(p: &ModelParams, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p.n()).map(|_| p.cell_point(&mut rng)).collect()
}

/// One printed term `"φ pairs | left R̄ | shifted legs | right R̄"`, e.g.
/// `"13 23 | 23 13 | 3 | 31 32"` for `φ(z₁₃)φ(z₂₃) R̄₂₃R̄₁₃ p₃ R̄₃₁R̄₃₂`.
/// Factors right of `p_I` are moved through it, so they see `z - η e_I`.
fn printed_term(spec: &str, p: &ModelParams, z: &[C64]) -> (Vec<i32>, CMatrix) {
    let parts: Vec<&str> = spec.split('|').map(str::trim).collect();
    let pairs = |s: &str| -> Vec<(usize, usize)> {
        s.split_whitespace()
            .map(|t| {
                let b = t.as_bytes();
                ((b[0] - b'0') as usize, (b[1] - b'0') as usize)
            })
            .collect()
    };
    let legs: Vec<usize> = parts[2].split_whitespace().map(|t| t.parse().unwrap()).collect();
    let nu: Vec<i32> = (1..=p.n()).map(|i| legs.contains(&i) as i32).collect();
    let w = shifted(z, &nu, p.eta());
    let mut weight = c(1.0, 0.0);
    for (i, j) in pairs(parts[0]) {
        weight *= p.elliptic().kronecker_phi(p.hbar(), z[i - 1] - z[j - 1]).unwrap();
    }
    let mut acc = CMatrix::identity(p.space().dim());
    for (points, group) in [(z, parts[1]), (&w[..], parts[3])] {
        for (i, j) in pairs(group) {
            let r = rbar_two_site(points[i - 1] - points[j - 1], p).unwrap();
            acc = apply_two_site_right(&acc, &r, i, j, p.space()).unwrap();
        }
    }
    (nu, acc.scale(weight))
}

fn check_printed(n: usize, k: usize, terms: &[&str]) {
    for m in [1, 2] {
        let p = params(m, n);
        let op = build_spin_d(k, Sign::Plus, &p).unwrap();
        assert_eq!(op.len(), terms.len());
        for seed in 0..3 {
            let z = cell_points(&p, seed);
            for t in terms {
                let (nu, want) = printed_term(t, &p, &z);
                let (got, _) = op.coefficient(&nu, &z).unwrap();
                assert!(got.max_abs_diff(&want) < 1e-12 * want.norm_max(), "{t:?} M={m}");
            }
        }
    }
}

#[test]
fn two_particle_example() {
    check_printed(2, 1, &["21 | | 1 |", "12 | 12 | 2 | 21"]);
}

#[test]
fn three_particle_examples() {
    check_printed(3, 1, &["21 31 | | 1 |", "12 32 | 12 | 2 | 21", "13 23 | 23 13 | 3 | 31 32"]);
    check_printed(3, 2, &["31 32 | | 1 2 |", "21 23 | 23 | 1 3 | 32", "12 13 | 12 13 | 2 3 | 31 21"]);
}

#[test]
fn four_particle_examples() {
    check_printed(
        4,
        1,
        &[
            "21 31 41 | | 1 |",
            "12 32 42 | 12 | 2 | 21",
            "13 23 43 | 23 13 | 3 | 31 32",
            "14 24 34 | 34 24 14 | 4 | 41 42 43",
        ],
    );
    check_printed(
        4,
        2,
        &[
            "31 32 41 42 | | 1 2 |",
            "21 23 41 43 | 23 | 1 3 | 32",
            "21 24 31 34 | 34 24 | 1 4 | 42 43",
            "12 13 42 43 | 12 13 | 2 3 | 31 21",
            "12 14 32 34 | 12 34 14 | 2 4 | 41 43 21",
            "13 14 23 24 | 23 13 24 14 | 3 4 | 41 42 31 32",
        ],
    );
    check_printed(
        4,
        3,
        &[
            "41 42 43 | | 1 2 3 |",
            "31 32 34 | 34 | 1 2 4 | 43",
            "21 23 24 | 23 24 | 1 3 4 | 42 32",
            "12 13 14 | 12 13 14 | 2 3 4 | 41 31 21",
        ],
    );
}

#[test]
fn top_operator_is_total_shift() {
    for n in 2..=4 {
        let p = params(2, n);
        let op = build_spin_d(n, Sign::Plus, &p).unwrap();
        assert_eq!(op.shifts(), vec![vec![1; n]]);
        let (coef, _) = op.coefficient(&vec![1; n], &cell_points(&p, 1)).unwrap();
        assert!(coef.max_abs_diff(&CMatrix::identity(p.space().dim())) < 1e-15);
    }
}

#[test]
fn spin_operators_reduce_to_scalar_ones() {
    let p = params(1, 4);
    for k in 1..=4 {
        for sign in [Sign::Plus, Sign::Minus] {
            let a = build_spin_d(k, sign, &p).unwrap();
            let b = build_scalar_d(k, sign, &p).unwrap();
            for seed in 0..3 {
                let r = difference_at(&a, &b, &cell_points(&p, seed)).unwrap();
                assert!(r.relative() < 1e-12, "k={k} {sign:?}");
            }
        }
    }
}

#[test]
fn scalar_pair_products_shift_consistently() {
    let p = params(1, 5);
    let z = cell_points(&p, 3);
    let (a, b) = (set(&[1, 4]), set(&[2, 3, 5]));
    let eta = p.eta();
    let plus_b: Vec<C64> = (1..=5).map(|i| if b.contains(i) { z[i - 1] + eta } else { z[i - 1] }).collect();
    let minus_a: Vec<C64> = (1..=5).map(|i| if a.contains(i) { z[i - 1] - eta } else { z[i - 1] }).collect();
    let both: Vec<C64> = z.iter().map(|x| x + eta).collect();
    let base = scalar_pair_product(&a, &b, ShiftTag::NONE, &z, &p).unwrap();
    let x = scalar_pair_product(&a, &b, ShiftTag::NONE, &both, &p).unwrap();
    assert!((x - base).norm() < 1e-12 * base.norm());
    let y = scalar_pair_product(&a, &b, ShiftTag::NONE, &plus_b, &p).unwrap();
    let w = scalar_pair_product(&a, &b, ShiftTag::NONE, &minus_a, &p).unwrap();
    assert!((y - w).norm() < 1e-12 * y.norm());
    let tagged = scalar_pair_product(&a, &b, ShiftTag::FIRST, &z, &p).unwrap();
    assert!((tagged - w).norm() < 1e-12 * w.norm());
}

#[test]
fn negative_orders_factor_through_top_operator() {
    let p = params(1, 3);
    let top = build_scalar_d(3, Sign::Minus, &p).unwrap();
    for k in 1..=2 {
        let composed = compose(&build_scalar_d(k, Sign::Plus, &p).unwrap(), &top).unwrap();
        let direct = build_scalar_d(3 - k, Sign::Minus, &p).unwrap();
        for seed in 0..10 {
            let r = difference_at(&composed, &direct, &cell_points(&p, seed)).unwrap();
            assert!(r.relative() < 1e-12, "k={k}");
        }
    }
}

#[test]
fn spin_operators_commute() {
    let p = params(2, 3).with_samples(5);
    for k in 1..=3 {
        for l in 1..=3 {
            for (sk, sl) in [(Sign::Plus, Sign::Plus), (Sign::Plus, Sign::Minus), (Sign::Minus, Sign::Minus)] {
                let a = build_spin_d(k, sk, &p).unwrap();
                let b = build_spin_d(l, sl, &p).unwrap();
                let r = commutator_residual(&a, &b, &p).unwrap();
                assert!(r.relative() < 1e-8, "k={k} {sk:?} l={l} {sl:?}: {}", r.relative());
            }
        }
    }
}

#[test]
fn scalar_operators_commute() {
    let p = params(1, 4).with_samples(5);
    for k in 1..=4 {
        for l in 1..=4 {
            let r = commutator_residual(
                &build_scalar_d(k, Sign::Plus, &p).unwrap(),
                &build_scalar_d(l, Sign::Minus, &p).unwrap(),
                &p,
            )
            .unwrap();
            assert!(r.relative() < 1e-8);
        }
    }
}

#[test]
fn rational_kernel_breaks_commutativity() {
    let p = params(2, 3).with_samples(5);
    let kernel = Arc::new(RationalKernel { hbar: p.hbar(), m: 2 });
    let a = build_spin_d_with(1, Sign::Plus, &p, kernel.clone()).unwrap();
    let b = build_spin_d_with(2, Sign::Plus, &p, kernel).unwrap();
    assert!(commutator_residual(&a, &b, &p).unwrap().relative() > 1e-3);
}

#[test]
fn scalar_builder_needs_scalar_case() {
    assert!(build_scalar_d(1, Sign::Plus, &params(2, 3)).is_err());
    assert!(build_spin_d(4, Sign::Plus, &params(2, 3)).is_err());
    assert!(build_spin_d(0, Sign::Plus, &params(2, 3)).is_err());
}

#[test]
fn shift_product_lemma() {
    let p = params(2, 5).with_samples(5);
    assert!(lemma1_residual(&set(&[1, 3]), &set(&[3, 4]), &p).unwrap().relative() < 1e-9);
    let z = cell_points(&p, 4);
    assert!(lemma1_residual_at(&set(&[1, 2]), &set(&[4, 5]), &p, &z).unwrap().relative() < 1e-10);
    assert!(lemma1_residual_at(&set(&[2, 5]), &set(&[2, 5]), &p, &z).unwrap().relative() < 1e-9);
}

#[test]
fn frozen_hamiltonian() {
    let h = freeze_h1(&params(1, 4)).unwrap();
    assert!(h.norm_max() < 1e-12);
    for m in [2, 3] {
        let h = freeze_h1(&params(m, 4)).unwrap();
        assert!(h.is_finite());
        for g in [clock_q(m), shift_lambda(m)] {
            let gn = tensor_power(&g, 4);
            assert!(h.commutator(&gn).norm_max() < 1e-10 * h.norm_max(), "M={m}");
        }
    }
}

#[test]
fn apply_uses_shifted_arguments() {
    let p = params(1, 2);
    let op = DifferenceOperator::shift(p.space(), p.eta(), vec![1, 0]).unwrap();
    let z = [c(0.3, 0.1), c(0.7, -0.2)];
    let f = |w: &[C64]| Ok(vec![w[0] * w[0] + w[1]]);
    let got = op.apply(f, &z).unwrap()[0];
    let w0 = z[0] - p.eta();
    assert!((got - (w0 * w0 + z[1])).norm() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shifts_compose_additively(a in proptest::collection::vec(-2i32..3, 3), b in proptest::collection::vec(-2i32..3, 3)) {
        let p = params(2, 3);
        let x = DifferenceOperator::shift(p.space(), p.eta(), a.clone()).unwrap();
        let y = DifferenceOperator::shift(p.space(), p.eta(), b.clone()).unwrap();
        let xy = compose(&x, &y).unwrap();
        let sum: Vec<i32> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
        prop_assert_eq!(xy.shifts(), vec![sum]);
    }

    #[test]
    fn multiplication_moves_through_shift(seed in 0u64..1000) {
        let p = params(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (c(rng.gen(), rng.gen()), c(rng.gen(), rng.gen()));
        let f = DifferenceOperator::multiplication(p.space(), p.eta(), Arc::new(move |z: &[C64]| {
            Ok(CMatrix::identity(1).scale(a * z[0] + b * z[1]))
        }));
        let s = DifferenceOperator::shift(p.space(), p.eta(), vec![1, 0]).unwrap();
        let sf = compose(&s, &f).unwrap();
        let z = cell_points(&p, seed);
        let (coef, _) = sf.coefficient(&[1, 0], &z).unwrap();
        let want = a * (z[0] - p.eta()) + b * z[1];
        prop_assert!((coef[(0, 0)] - want).norm() < 1e-13);
    }

    #[test]
    fn first_operators_commute_at_random_seeds(seed in 0u64..10_000) {
        let p = params(2, 3).with_seed(seed).with_samples(2);
        let a = build_spin_d(1, Sign::Plus, &p).unwrap();
        let b = build_spin_d(2, Sign::Minus, &p).unwrap();
        prop_assert!(commutator_residual(&a, &b, &p).unwrap().relative() < 1e-8);
    }
}
