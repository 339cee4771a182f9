//! Difference operators with matrix coefficients.
//!
//! An operator is a finite sum `Σ_ν c_ν(z) p^ν` with `p^ν f(z) = f(z - ην)`.
//! Coefficients are kept as closures and only evaluated pointwise, which is
//! all that composition and the commutator checks need.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::identities::{evaluate_with, product_factors, IndexSubset, Order, ShiftTag};
use crate::rmatrix::{d_rbar_two_site, rbar_two_site, ModelParams};
use crate::sampling::{sampled_max, stream_id};
use crate::tensor::{permutation_two_site, CMatrix, LegSpace};
use crate::{Error, Residual, Result, C64};

/// Pointwise coefficient `z ↦ c(z)`.
pub type Coeff = Arc<dyn Fn(&[C64]) -> Result<CMatrix> + Send + Sync>;

/// `Σ_ν c_ν(z) p^ν` on `(ℂ^M)^{⊗N}`-valued functions.
#[derive(Clone)]
pub struct DifferenceOperator {
    space: LegSpace,
    eta: C64,
    terms: BTreeMap<Vec<i32>, Vec<Coeff>>,
}

impl std::fmt::Debug for DifferenceOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DifferenceOperator")
            .field("n", &self.space.n())
            .field("m", &self.space.m())
            .field("eta", &self.eta)
            .field("shifts", &self.terms.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl DifferenceOperator {
    /// The zero operator.
    pub fn zero(space: LegSpace, eta: C64) -> Self {
        DifferenceOperator { space, eta, terms: BTreeMap::new() }
    }

    /// The identity operator.
    pub fn identity(space: LegSpace, eta: C64) -> Self {
        Self::shift(space, eta, vec![0; space.n()]).expect("zero shift has length N")
    }

    /// `p^ν` with coefficient `Id`.
    pub fn shift(space: LegSpace, eta: C64, nu: Vec<i32>) -> Result<Self> {
        let dim = space.dim();
        let mut op = Self::zero(space, eta);
        op.add_term(nu, Arc::new(move |_| Ok(CMatrix::identity(dim))))?;
        Ok(op)
    }

    /// Multiplication by `f(z)`.
    pub fn multiplication(space: LegSpace, eta: C64, f: Coeff) -> Self {
        let mut op = Self::zero(space, eta);
        op.add_term(vec![0; space.n()], f).expect("zero shift has length N");
        op
    }

    /// Adds `c(z) p^ν`, merging with any existing term of the same shift.
    pub fn add_term(&mut self, nu: Vec<i32>, c: Coeff) -> Result<()> {
        if nu.len() != self.space.n() {
            return Err(Error::DimMismatch { expected: self.space.n(), got: nu.len() });
        }
        self.terms.entry(nu).or_default().push(c);
        Ok(())
    }

    pub fn space(&self) -> LegSpace {
        self.space
    }

    pub fn eta(&self) -> C64 {
        self.eta
    }

    /// Distinct shift indices in lexicographic order.
    pub fn shifts(&self) -> Vec<Vec<i32>> {
        self.terms.keys().cloned().collect()
    }

    /// Number of merged shift classes.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Summed coefficient of `p^ν` at `z`, with the largest single summand.
    pub fn coefficient(&self, nu: &[i32], z: &[C64]) -> Result<(CMatrix, f64)> {
        let mut total = CMatrix::zeros(self.space.dim());
        let mut scale = 0.0f64;
        if let Some(cs) = self.terms.get(nu) {
            for c in cs {
                let v = c(z)?;
                scale = scale.max(v.norm_max());
                total += &v;
            }
        }
        Ok((total, scale))
    }

    /// `(T f)(z) = Σ_ν c_ν(z) f(z - ην)`.
    pub fn apply<F>(&self, f: F, z: &[C64]) -> Result<Vec<C64>>
    where
        F: Fn(&[C64]) -> Result<Vec<C64>>,
    {
        let mut out = vec![C64::new(0.0, 0.0); self.space.dim()];
        for nu in self.terms.keys() {
            let w = shifted(z, nu, self.eta);
            let v = f(&w)?;
            let (c, _) = self.coefficient(nu, z)?;
            for (o, x) in out.iter_mut().zip(c.matvec(&v)) {
                *o += x;
            }
        }
        Ok(out)
    }
}

/// `z - η ν`.
pub fn shifted(z: &[C64], nu: &[i32], eta: C64) -> Vec<C64> {
    z.iter().zip(nu).map(|(x, &k)| x - eta * k as f64).collect()
}

/// `A ∘ B`: terms `c_A(z) c_B(z - η ν_A) p^{ν_A + ν_B}`.
pub fn compose(a: &DifferenceOperator, b: &DifferenceOperator) -> Result<DifferenceOperator> {
    if a.space != b.space {
        return Err(Error::DimMismatch { expected: a.space.dim(), got: b.space.dim() });
    }
    if a.eta != b.eta {
        return Err(Error::InvalidParameter("operators built with different eta".into()));
    }
    let eta = a.eta;
    let mut out = DifferenceOperator::zero(a.space, eta);
    for (nu_a, cs_a) in &a.terms {
        for (nu_b, cs_b) in &b.terms {
            let nu: Vec<i32> = nu_a.iter().zip(nu_b).map(|(x, y)| x + y).collect();
            for ca in cs_a {
                for cb in cs_b {
                    let (ca, cb, shift) = (ca.clone(), cb.clone(), nu_a.clone());
                    out.add_term(
                        nu.clone(),
                        Arc::new(move |z| Ok(ca(z)?.matmul(&cb(&shifted(z, &shift, eta))?))),
                    )?;
                }
            }
        }
    }
    Ok(out)
}

/// Worst relative coefficient of `A - B` over shift classes at `z`.
pub fn difference_at(a: &DifferenceOperator, b: &DifferenceOperator, z: &[C64]) -> Result<Residual> {
    let mut keys = a.shifts();
    keys.extend(b.shifts());
    keys.sort();
    keys.dedup();
    let mut worst = Residual::default();
    for nu in keys {
        let (ca, sa) = a.coefficient(&nu, z)?;
        let (cb, sb) = b.coefficient(&nu, z)?;
        worst = worst.worst(Residual::new(ca.max_abs_diff(&cb), sa.max(sb)));
    }
    Ok(worst)
}

/// `[A, B]` coefficientwise at sampled points of the cell.
pub fn commutator_residual(a: &DifferenceOperator, b: &DifferenceOperator, p: &ModelParams) -> Result<Residual> {
    let ab = compose(a, b)?;
    let ba = compose(b, a)?;
    let n = a.space.n();
    sampled_max(p.seed(), stream_id("commutator"), p.samples(), |rng| {
        let z: Vec<C64> = (0..n).map(|_| p.cell_point(rng)).collect();
        difference_at(&ab, &ba, &z)
    })
}

/// Normalized two-site R-matrix used inside the spin operators.
pub trait TwoSiteKernel: Send + Sync {
    fn rbar(&self, x: C64) -> Result<CMatrix>;
}

/// The elliptic `R̄(x) = R(x) / φ(ħ, x)`.
#[derive(Clone, Debug)]
pub struct EllipticKernel(pub ModelParams);

impl TwoSiteKernel for EllipticKernel {
    fn rbar(&self, x: C64) -> Result<CMatrix> {
        rbar_two_site(x, &self.0)
    }
}

/// Non-elliptic control `(x + ħP) / (x + ħ)`; operators built from it do not commute.
#[derive(Clone, Debug)]
pub struct RationalKernel {
    pub hbar: C64,
    pub m: usize,
}

impl TwoSiteKernel for RationalKernel {
    fn rbar(&self, x: C64) -> Result<CMatrix> {
        let d = x + self.hbar;
        if d.norm() < 1e-12 {
            return Err(Error::NormalizerZero(d));
        }
        let id = CMatrix::identity(self.m * self.m).scale(x);
        Ok((&id + &permutation_two_site(self.m).scale(self.hbar)).scale(1.0 / d))
    }
}

/// `(I, J) = ∏_{i∈I, j∈J} φ(ħ, z_i - z_j)`, arguments shifted as tagged.
pub fn scalar_pair_product(a: &IndexSubset, b: &IndexSubset, shift: ShiftTag, z: &[C64], p: &ModelParams) -> Result<C64> {
    if !a.is_disjoint(b) {
        return Err(Error::OverlappingSubsets);
    }
    let s = (shift.first as i32 - shift.second as i32) as f64;
    let mut out = C64::new(1.0, 0.0);
    for &i in a.elements() {
        for &j in b.elements() {
            out *= p.elliptic().kronecker_phi(p.hbar(), z[i - 1] - z[j - 1] - s * p.eta())?;
        }
    }
    Ok(out)
}

fn sign_shift(set: &IndexSubset, n: usize, s: i32) -> Vec<i32> {
    (1..=n).map(|i| if set.contains(i) { s } else { 0 }).collect()
}

fn check_order(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::BadOrder(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}

/// Scalar Macdonald-Ruijsenaars operator `D_{±k}`; requires `M = 1`.
///
/// `D_k = Σ (I^c, I) p_I`, `D_{-k} = Σ (I, I^c) p_I^{-1}`.
pub fn build_scalar_d(k: usize, sign: crate::identities::Sign, p: &ModelParams) -> Result<DifferenceOperator> {
    if p.m() != 1 {
        return Err(Error::BadOrder(format!("scalar operators need M = 1, got M = {}", p.m())));
    }
    check_order(k, p.n())?;
    let n = p.n();
    let mut op = DifferenceOperator::zero(p.space(), p.eta());
    for set in IndexSubset::all_of_size(n, k) {
        let comp = set.complement(n);
        let params = p.clone();
        let (nu, c): (Vec<i32>, Coeff) = match sign {
            crate::identities::Sign::Plus => {
                let (s, c) = (set.clone(), comp.clone());
                (sign_shift(&set, n, 1), Arc::new(move |z: &[C64]| {
                    Ok(CMatrix::identity(1).scale(scalar_pair_product(&c, &s, ShiftTag::NONE, z, &params)?))
                }))
            }
            crate::identities::Sign::Minus => {
                let (s, c) = (set.clone(), comp.clone());
                (sign_shift(&set, n, -1), Arc::new(move |z: &[C64]| {
                    Ok(CMatrix::identity(1).scale(scalar_pair_product(&s, &c, ShiftTag::NONE, z, &params)?))
                }))
            }
        };
        op.add_term(nu, c)?;
    }
    Ok(op)
}

/// Ordered product of normalized kernels at `z`.
pub fn kernel_product(
    a: &IndexSubset,
    b: &IndexSubset,
    order: Order,
    shift: ShiftTag,
    kernel: &dyn TwoSiteKernel,
    space: LegSpace,
    eta: C64,
    z: &[C64],
) -> Result<CMatrix> {
    let f = product_factors(a, b, order, shift, z, eta)?;
    evaluate_with(&f, space, |f| kernel.rbar(f.x))
}

/// Coefficient of `p_I` in `𝒟_k`: `(I^c,I) R̄_{I^c,I}(z) R̄'_{I,I^c}(z - η e_I)`.
pub fn spin_plus_coefficient(set: &IndexSubset, kernel: &dyn TwoSiteKernel, p: &ModelParams, z: &[C64]) -> Result<CMatrix> {
    let comp = set.complement(p.n());
    let (space, eta) = (p.space(), p.eta());
    let s = scalar_pair_product(&comp, set, ShiftTag::NONE, z, p)?;
    let left = kernel_product(&comp, set, Order::Less, ShiftTag::NONE, kernel, space, eta, z)?;
    let right = kernel_product(set, &comp, Order::Greater, ShiftTag::FIRST, kernel, space, eta, z)?;
    Ok(left.matmul(&right).scale(s))
}

/// Coefficient of `p_I^{-1}` in `𝒟_{-k}`: `(I,I^c) R̄_{I,I^c}(z) R̄'_{I^c,I}(z + η e_I)`.
pub fn spin_minus_coefficient(set: &IndexSubset, kernel: &dyn TwoSiteKernel, p: &ModelParams, z: &[C64]) -> Result<CMatrix> {
    let comp = set.complement(p.n());
    let (space, eta) = (p.space(), p.eta());
    let s = scalar_pair_product(set, &comp, ShiftTag::NONE, z, p)?;
    let left = kernel_product(set, &comp, Order::Less, ShiftTag::NONE, kernel, space, eta, z)?;
    let right = kernel_product(&comp, set, Order::Greater, ShiftTag::FIRST, kernel, space, eta, z)?;
    Ok(left.matmul(&right).scale(s))
}

/// Spin operator `𝒟_{±k}` with the elliptic `R̄`.
pub fn build_spin_d(k: usize, sign: crate::identities::Sign, p: &ModelParams) -> Result<DifferenceOperator> {
    build_spin_d_with(k, sign, p, Arc::new(EllipticKernel(p.clone())))
}

/// Spin operator `𝒟_{±k}` with an arbitrary normalized two-site kernel.
pub fn build_spin_d_with(
    k: usize,
    sign: crate::identities::Sign,
    p: &ModelParams,
    kernel: Arc<dyn TwoSiteKernel>,
) -> Result<DifferenceOperator> {
    check_order(k, p.n())?;
    let n = p.n();
    let mut op = DifferenceOperator::zero(p.space(), p.eta());
    for set in IndexSubset::all_of_size(n, k) {
        let (params, kern, s) = (p.clone(), kernel.clone(), set.clone());
        match sign {
            crate::identities::Sign::Plus => op.add_term(
                sign_shift(&set, n, 1),
                Arc::new(move |z: &[C64]| spin_plus_coefficient(&s, kern.as_ref(), &params, z)),
            )?,
            crate::identities::Sign::Minus => op.add_term(
                sign_shift(&set, n, -1),
                Arc::new(move |z: &[C64]| spin_minus_coefficient(&s, kern.as_ref(), &params, z)),
            )?,
        }
    }
    Ok(op)
}

/// The two sides of the product lemma for `R̄`-dressed shift operators at `z`.
///
/// Left: `R̄_{I^c,I} p_I R̄'_{I,I^c} · R̄_{J,J^c} p_J^{-1} R̄'_{J^c,J}` via [`compose`].
/// Right: `R̄_{B∪C∪D,A} R̄_{B,C∪D} p_A (R̄_{D,C} R̄'_{C₋,D} R̄_{C₋,D} R̄'_{D,C}) p_B^{-1} R̄'_{C∪D,B} R̄'_{A,B∪C∪D}`
/// with `C = I∩J`, `A = I\C`, `B = J\C`, `D = (I∪J)^c`.
pub fn lemma1_residual_at(i_set: &IndexSubset, j_set: &IndexSubset, p: &ModelParams, z: &[C64]) -> Result<Residual> {
    let n = p.n();
    let kernel: Arc<dyn TwoSiteKernel> = Arc::new(EllipticKernel(p.clone()));
    let (space, eta) = (p.space(), p.eta());
    let single = |set: &IndexSubset, plus: bool| -> Result<DifferenceOperator> {
        let (s, kern) = (set.clone(), kernel.clone());
        let comp = set.complement(n);
        let mut op = DifferenceOperator::zero(space, eta);
        let c: Coeff = if plus {
            Arc::new(move |z: &[C64]| {
                let l = kernel_product(&comp, &s, Order::Less, ShiftTag::NONE, kern.as_ref(), space, eta, z)?;
                Ok(l.matmul(&kernel_product(&s, &comp, Order::Greater, ShiftTag::FIRST, kern.as_ref(), space, eta, z)?))
            })
        } else {
            Arc::new(move |z: &[C64]| {
                let l = kernel_product(&s, &comp, Order::Less, ShiftTag::NONE, kern.as_ref(), space, eta, z)?;
                Ok(l.matmul(&kernel_product(&comp, &s, Order::Greater, ShiftTag::FIRST, kern.as_ref(), space, eta, z)?))
            })
        };
        op.add_term(sign_shift(set, n, if plus { 1 } else { -1 }), c)?;
        Ok(op)
    };
    let lhs = compose(&single(i_set, true)?, &single(j_set, false)?)?;

    let c = i_set.intersection(j_set);
    let a = i_set.difference(&c);
    let b = j_set.difference(&c);
    let d = i_set.union(j_set).complement(n);
    let k = kernel.as_ref();
    let prod = |x: &IndexSubset, y: &IndexSubset, o: Order, t: ShiftTag, w: &[C64]| kernel_product(x, y, o, t, k, space, eta, w);
    let bcd = b.union(&c).union(&d);
    let cd = c.union(&d);
    let nu: Vec<i32> = (1..=n).map(|i| a.contains(i) as i32 - b.contains(i) as i32).collect();
    let w_a = shifted(z, &sign_shift(&a, n, 1), eta);
    let w_ab = shifted(z, &nu, eta);
    let rhs = prod(&bcd, &a, Order::Less, ShiftTag::NONE, z)?
        .matmul(&prod(&b, &cd, Order::Less, ShiftTag::NONE, z)?)
        .matmul(&prod(&d, &c, Order::Less, ShiftTag::NONE, &w_a)?)
        .matmul(&prod(&c, &d, Order::Greater, ShiftTag::FIRST, &w_a)?)
        .matmul(&prod(&c, &d, Order::Less, ShiftTag::FIRST, &w_a)?)
        .matmul(&prod(&d, &c, Order::Greater, ShiftTag::NONE, &w_a)?)
        .matmul(&prod(&cd, &b, Order::Greater, ShiftTag::NONE, &w_ab)?)
        .matmul(&prod(&a, &bcd, Order::Greater, ShiftTag::NONE, &w_ab)?);
    let (l, scale) = lhs.coefficient(&nu, z)?;
    if lhs.shifts() != vec![nu] {
        return Err(Error::InvalidParameter("left side has an unexpected shift".into()));
    }
    Ok(Residual::new(l.max_abs_diff(&rhs), scale.max(rhs.norm_max())))
}

/// Sampled version of [`lemma1_residual_at`].
pub fn lemma1_residual(i_set: &IndexSubset, j_set: &IndexSubset, p: &ModelParams) -> Result<Residual> {
    sampled_max(p.seed(), stream_id("lemma1"), p.samples(), |rng| {
        let z: Vec<C64> = (0..p.n()).map(|_| p.cell_point(rng)).collect();
        lemma1_residual_at(i_set, j_set, p, &z)
    })
}

/// Frozen first Hamiltonian at `x_i = i/N`:
///
/// `H₁ = Σ_i ∏_{j≠i} φ(x_j - x_i) Σ_{k<i} R̄_{i-1,i}⋯R̄_{k,i} (∂R̄_{i,k}) R̄_{i,k+1}⋯R̄_{i,i-1}`.
pub fn freeze_h1(p: &ModelParams) -> Result<CMatrix> {
    let n = p.n();
    let space = p.space();
    let x: Vec<C64> = (1..=n).map(|i| C64::new(i as f64 / n as f64, 0.0)).collect();
    let mut h = CMatrix::zeros(space.dim());
    for i in 1..=n {
        let mut weight = C64::new(1.0, 0.0);
        for j in (1..=n).filter(|&j| j != i) {
            weight *= p.elliptic().kronecker_phi(p.hbar(), x[j - 1] - x[i - 1])?;
        }
        for k in 1..i {
            let mut acc = CMatrix::identity(space.dim());
            for l in (k..i).rev() {
                acc = crate::tensor::apply_two_site_right(&acc, &rbar_two_site(x[l - 1] - x[i - 1], p)?, l, i, space)?;
            }
            acc = crate::tensor::apply_two_site_right(&acc, &d_rbar_two_site(x[i - 1] - x[k - 1], p)?, i, k, space)?;
            for l in k + 1..i {
                acc = crate::tensor::apply_two_site_right(&acc, &rbar_two_site(x[i - 1] - x[l - 1], p)?, i, l, space)?;
            }
            h += &acc.scale(weight);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identities::Sign;

    #[test]
    fn scalar_operator_needs_m_one() {
        let p = ModelParams::with_defaults(2, 3).unwrap();
        assert!(matches!(build_scalar_d(1, Sign::Plus, &p), Err(Error::BadOrder(_))));
        let p = ModelParams::with_defaults(1, 3).unwrap();
        assert!(matches!(build_scalar_d(4, Sign::Plus, &p), Err(Error::BadOrder(_))));
        assert_eq!(build_scalar_d(2, Sign::Plus, &p).unwrap().len(), 3);
    }

    #[test]
    fn top_operator_is_a_pure_shift() {
        let p = ModelParams::with_defaults(2, 3).unwrap();
        let d = build_spin_d(3, Sign::Plus, &p).unwrap();
        assert_eq!(d.shifts(), vec![vec![1, 1, 1]]);
        let z = [C64::new(0.1, 0.2), C64::new(0.4, 0.5), C64::new(0.7, 0.3)];
        let (c, _) = d.coefficient(&[1, 1, 1], &z).unwrap();
        assert!(c.max_abs_diff(&CMatrix::identity(8)) < 1e-14);
    }

    #[test]
    fn compose_shifts_multiplier() {
        let space = LegSpace::new(1, 2).unwrap();
        let eta = C64::new(0.3, 0.1);
        let p1 = DifferenceOperator::shift(space, eta, vec![1, 0]).unwrap();
        let f = DifferenceOperator::multiplication(space, eta, Arc::new(|z: &[C64]| Ok(CMatrix::identity(1).scale(z[0] * z[0]))));
        let c = compose(&p1, &f).unwrap();
        let z = [C64::new(0.5, 0.0), C64::new(0.2, 0.0)];
        let (v, _) = c.coefficient(&[1, 0], &z).unwrap();
        assert!((v[(0, 0)] - (z[0] - eta) * (z[0] - eta)).norm() < 1e-15);
    }
}
