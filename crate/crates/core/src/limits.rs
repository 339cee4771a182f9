//! Small-step expansion of the first spin operator and the trigonometric
//! degeneration of the scalar operators.
//!
//! Under `ħ → εħ`, `η → εη` the normalized first operator applied to
//! `f(z) = exp(c·z) v` is an analytic function of `ε`; its Taylor
//! coefficients are compared with the second-order Hamiltonians.

use std::f64::consts::PI;

use rand::Rng;

use crate::identities::{IndexSubset, Sign};
use crate::operators::{build_scalar_d, spin_plus_coefficient, EllipticKernel};
use crate::rmatrix::{d_classical_r, ModelParams};
use crate::sampling::unit_vector;
use crate::tensor::apply_two_site;
use crate::{Error, Result, C64};

/// Default `ε` grid: two Richardson estimates from consecutive pairs.
pub const DEFAULT_EPS_GRID: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// `f(z) = exp(Σ c_i z_i) v`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub c: Vec<C64>,
    pub v: Vec<C64>,
}

impl TestFunction {
    pub fn new(c: Vec<C64>, v: Vec<C64>) -> Self {
        TestFunction { c, v }
    }

    /// Seeded exponents with components in `(-1, 1)` and a unit vector.
    pub fn random<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Self {
        let c = (0..n).map(|_| C64::new(2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0)).collect();
        TestFunction { c, v: unit_vector(rng, dim) }
    }

    pub fn eval(&self, z: &[C64]) -> Vec<C64> {
        let e = self.c.iter().zip(z).map(|(c, z)| c * z).sum::<C64>().exp();
        self.v.iter().map(|x| x * e).collect()
    }
}

fn check_dims(f: &TestFunction, z: &[C64], p: &ModelParams) -> Result<()> {
    if f.c.len() != p.n() || z.len() != p.n() {
        return Err(Error::DimMismatch { expected: p.n(), got: z.len().min(f.c.len()) });
    }
    if f.v.len() != p.space().dim() {
        return Err(Error::DimMismatch { expected: p.space().dim(), got: f.v.len() });
    }
    Ok(())
}

/// Scalar part `½Σ v_k² f / f` with `v_k = η∂_k - ħ Σ_{i≠k} E₁(z_i - z_k)`.
fn kinetic(f: &TestFunction, z: &[C64], p: &ModelParams) -> Result<C64> {
    let e = p.elliptic();
    let (h, eta, n) = (p.hbar(), p.eta(), p.n());
    let mut s = C64::new(0.0, 0.0);
    for k in 0..n {
        let mut e1 = C64::new(0.0, 0.0);
        let mut e2 = C64::new(0.0, 0.0);
        for i in (0..n).filter(|&i| i != k) {
            e1 += e.eisenstein_e1(z[i] - z[k])?;
            e2 += e.eisenstein_e2(z[i] - z[k])?;
        }
        let c = f.c[k];
        s += eta * eta * c * c - 2.0 * eta * h * c * e1 - eta * h * e2 + h * h * e1 * e1;
    }
    Ok(s / 2.0)
}

fn wp_sum(z: &[C64], p: &ModelParams) -> Result<C64> {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..z.len() {
        for j in (0..z.len()).filter(|&j| j != i) {
            s += p.elliptic().weierstrass_p(z[i] - z[j])?;
        }
    }
    Ok(s)
}

/// `H₂^CM f = ½Σ v_k² f - ħ(ħ-η)/2 Σ_{i≠j} ℘(z_i - z_j) f`; requires `M = 1`.
pub fn h2_cm_apply(f: &TestFunction, z: &[C64], p: &ModelParams) -> Result<Vec<C64>> {
    if p.m() != 1 {
        return Err(Error::BadOrder(format!("the scalar Hamiltonian needs M = 1, got M = {}", p.m())));
    }
    check_dims(f, z, p)?;
    let (h, eta) = (p.hbar(), p.eta());
    let s = kinetic(f, z, p)? - h * (h - eta) / 2.0 * wp_sum(z, p)?;
    Ok(f.eval(z).into_iter().map(|x| x * s).collect())
}

/// `H₂^tops f = (½Σ v_k² + ħη N(N-1)/6 · ϑ'''(0)/ϑ'(0) - ħ²/2 Σ℘) f - ħη/2 Σ_{i≠j} ∂r_{ij}(z_i - z_j) f`.
pub fn h2_tops_apply(f: &TestFunction, z: &[C64], p: &ModelParams) -> Result<Vec<C64>> {
    check_dims(f, z, p)?;
    let (h, eta, n) = (p.hbar(), p.eta(), p.n());
    let (t1, t3) = p.elliptic().theta_derivatives_at_zero();
    let nn = (n * (n - 1)) as f64;
    let s = kinetic(f, z, p)? + h * eta * nn / 6.0 * t3 / t1 - h * h / 2.0 * wp_sum(z, p)?;
    let fz = f.eval(z);
    let mut out: Vec<C64> = fz.iter().map(|x| x * s).collect();
    let space = p.space();
    let col = crate::tensor::CMatrix::from_fn(space.dim(), |r, c| if c == 0 { fz[r] } else { C64::new(0.0, 0.0) });
    for i in 1..=n {
        for j in (1..=n).filter(|&j| j != i) {
            let dr = d_classical_r(z[i - 1] - z[j - 1], p)?;
            let applied = apply_two_site(&dr, i, j, &col, space)?;
            for (r, o) in out.iter_mut().enumerate() {
                *o -= h * eta / 2.0 * applied[(r, 0)];
            }
        }
    }
    Ok(out)
}

/// `(ϑ(εħ)/ϑ'(0))^{N-1} 𝒟₁(εħ, εη) f` at `z`.
pub fn scaled_first_operator_apply(f: &TestFunction, z: &[C64], eps: f64, p: &ModelParams) -> Result<Vec<C64>> {
    check_dims(f, z, p)?;
    let q = p.rescaled(eps);
    let n = p.n();
    let (t1, _) = q.elliptic().theta_derivatives_at_zero();
    let pref = (q.elliptic().theta(q.hbar()) / t1).powi(n as i32 - 1);
    let kernel = EllipticKernel(q.clone());
    let mut out = vec![C64::new(0.0, 0.0); p.space().dim()];
    for i in 1..=n {
        let set = IndexSubset::new([i])?;
        let coeff = spin_plus_coefficient(&set, &kernel, &q, z)?;
        let mut w = z.to_vec();
        w[i - 1] -= q.eta();
        for (o, x) in out.iter_mut().zip(coeff.matvec(&f.eval(&w))) {
            *o += pref * x;
        }
    }
    Ok(out)
}

/// Analytic coefficients of order 0 and 1: `N f` and `-η Σ c_k f`.
pub fn known_low_order(order: usize, f: &TestFunction, z: &[C64], p: &ModelParams) -> Vec<C64> {
    let fz = f.eval(z);
    let s = match order {
        0 => C64::new(p.n() as f64, 0.0),
        1 => -p.eta() * f.c.iter().sum::<C64>(),
        _ => C64::new(0.0, 0.0),
    };
    fz.into_iter().map(|x| x * s).collect()
}

fn max_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Taylor coefficient of order 0, 1 or 2 in `ε` by first-order Richardson on
/// `(g(ε) - Σ_{j<n} g_j ε^j) / ε^n`, with the lower orders taken from
/// [`known_low_order`]. Successive estimates differing by more than
/// `10 · tol` relative raise `ExtrapolationUnstable`.
pub fn epsilon_expansion_coefficient(
    order: usize,
    f: &TestFunction,
    z: &[C64],
    p: &ModelParams,
    eps_grid: &[f64],
    tol: f64,
) -> Result<Vec<C64>> {
    if order > 2 {
        return Err(Error::InvalidParameter(format!("order {order} is not 0, 1 or 2")));
    }
    if eps_grid.len() < 2 || eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter("need at least two positive eps values".into()));
    }
    let lower: Vec<Vec<C64>> = (0..order).map(|j| known_low_order(j, f, z, p)).collect();
    let reduced = |eps: f64| -> Result<Vec<C64>> {
        let g = scaled_first_operator_apply(f, z, eps, p)?;
        Ok(g.iter()
            .enumerate()
            .map(|(r, x)| {
                let mut y = *x;
                for (j, l) in lower.iter().enumerate() {
                    y -= l[r] * eps.powi(j as i32);
                }
                y / eps.powi(order as i32)
            })
            .collect())
    };
    let values: Vec<Vec<C64>> = eps_grid.iter().map(|&e| reduced(e)).collect::<Result<_>>()?;
    let mut estimates: Vec<Vec<C64>> = eps_grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(e, h)| {
            let (e1, e2) = (e[0], e[1]);
            h[0].iter().zip(&h[1]).map(|(a, b)| (e1 * b - e2 * a) / (e1 - e2)).collect()
        })
        .collect();
    for w in estimates.windows(2) {
        let diff: Vec<C64> = w[0].iter().zip(&w[1]).map(|(a, b)| a - b).collect();
        let rel = max_norm(&diff) / max_norm(&w[1]).max(f64::MIN_POSITIVE);
        if rel > 10.0 * tol {
            return Err(Error::ExtrapolationUnstable(rel));
        }
    }
    Ok(estimates.pop().expect("at least one estimate"))
}

/// Macdonald coefficient `t^{k(k-N)/2} ∏_{i∈I, j∉I} (t x_i - x_j)/(x_i - x_j)`
/// with `t = exp(-2πiħ)` and `x_k = exp(2πi z_k)`.
pub fn macdonald_coefficient(set: &IndexSubset, z: &[C64], hbar: C64) -> C64 {
    let n = z.len();
    let k = set.len() as f64;
    let i2p = C64::new(0.0, 2.0 * PI);
    let t = (-i2p * hbar).exp();
    let x: Vec<C64> = z.iter().map(|z| (i2p * z).exp()).collect();
    let mut out = (-i2p * hbar * k * (k - n as f64) / 2.0).exp();
    for &i in set.elements() {
        for j in set.complement(n).elements() {
            out *= (t * x[i - 1] - x[*j - 1]) / (x[i - 1] - x[*j - 1]);
        }
    }
    out
}

/// Worst relative gap between the coefficients of `D_k` and the Macdonald
/// coefficients rescaled by `(π / sin πħ)^{k(N-k)}`, at the given points.
/// Meaningful for large `Im τ`.
pub fn macdonald_comparison(k: usize, p: &ModelParams, z: &[C64]) -> Result<f64> {
    let d = build_scalar_d(k, Sign::Plus, p)?;
    let n = p.n();
    let norm = (PI / (PI * p.hbar()).sin()).powi((k * (n - k)) as i32);
    let mut worst = 0.0f64;
    for set in IndexSubset::all_of_size(n, k) {
        let nu: Vec<i32> = (1..=n).map(|i| set.contains(i) as i32).collect();
        let (c, _) = d.coefficient(&nu, z)?;
        let m = macdonald_coefficient(&set, z, p.hbar()) * norm;
        worst = worst.max((c[(0, 0)] - m).norm() / m.norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_function_derivative_is_multiplicative() {
        let f = TestFunction::new(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.4)], vec![C64::new(1.0, 0.0)]);
        let z = [C64::new(0.1, 0.2), C64::new(0.3, -0.1)];
        let h = 1e-6;
        let zp = [z[0] + h, z[1]];
        let zm = [z[0] - h, z[1]];
        let d = (f.eval(&zp)[0] - f.eval(&zm)[0]) / (2.0 * h);
        assert!((d - f.c[0] * f.eval(&z)[0]).norm() < 1e-8);
    }

    #[test]
    fn cm_needs_scalar_case() {
        let p = ModelParams::with_defaults(2, 2).unwrap();
        let f = TestFunction::new(vec![C64::new(0.0, 0.0); 2], vec![C64::new(1.0, 0.0); 4]);
        let z = [C64::new(0.1, 0.2), C64::new(0.5, 0.3)];
        assert!(matches!(h2_cm_apply(&f, &z, &p), Err(Error::BadOrder(_))));
    }
}
