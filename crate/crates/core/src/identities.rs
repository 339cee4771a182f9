//! Ordered products of R-matrices over index subsets, the quadratic
//! identities `Σ_{|I|=k} (F⁻_I - F⁺_I) = 0` built from them, and the residue
//! and quasi-periodicity statements used to prove those identities.
//!
//! A product is first laid out as a list of [`Factor`]s (legs and argument)
//! and only then evaluated, so a residue can swap out a single singular
//! factor without touching the rest.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::elliptic::phi_trig;
use crate::rmatrix::{r_two_site, rbar_two_site, ModelParams};
use crate::sampling::{sampled_max, stream_id};
use crate::tensor::{apply_two_site_right, basis_t, embed_one_site, permutation_p, CMatrix, LegSpace};
use crate::{Error, Residual, Result, C64};

const I_UNIT: C64 = C64::new(0.0, 1.0);

/// Strictly increasing set of 1-based leg indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSubset {
    elements: Vec<usize>,
}

impl IndexSubset {
    /// Sorts the input; repeated or zero indices are rejected.
    pub fn new(elements: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut v: Vec<usize> = elements.into_iter().collect();
        v.sort_unstable();
        if v.windows(2).any(|w| w[0] == w[1]) || v.first() == Some(&0) {
            return Err(Error::InvalidParameter(format!("not a set of 1-based legs: {v:?}")));
        }
        Ok(IndexSubset { elements: v })
    }

    pub fn empty() -> Self {
        IndexSubset::default()
    }

    /// `{1, …, n}`.
    pub fn full(n: usize) -> Self {
        IndexSubset { elements: (1..=n).collect() }
    }

    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.elements.binary_search(&i).is_ok()
    }

    /// Complement in `{1, …, n}`.
    pub fn complement(&self, n: usize) -> Self {
        self.complement_in(&IndexSubset::full(n))
    }

    /// Complement inside an arbitrary universe.
    pub fn complement_in(&self, universe: &IndexSubset) -> Self {
        universe.difference(self)
    }

    pub fn union(&self, other: &IndexSubset) -> Self {
        let mut v = self.elements.clone();
        v.extend(other.elements.iter().filter(|x| !self.contains(**x)));
        v.sort_unstable();
        IndexSubset { elements: v }
    }

    pub fn intersection(&self, other: &IndexSubset) -> Self {
        IndexSubset { elements: self.elements.iter().copied().filter(|x| other.contains(*x)).collect() }
    }

    pub fn difference(&self, other: &IndexSubset) -> Self {
        IndexSubset { elements: self.elements.iter().copied().filter(|x| !other.contains(*x)).collect() }
    }

    pub fn is_disjoint(&self, other: &IndexSubset) -> bool {
        self.elements.iter().all(|x| !other.contains(*x))
    }

    /// All `k`-subsets of `universe` in lexicographic order.
    pub fn subsets_of(universe: &IndexSubset, k: usize) -> Vec<IndexSubset> {
        fn rec(u: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<IndexSubset>) {
            if cur.len() == k {
                out.push(IndexSubset { elements: cur.clone() });
                return;
            }
            for s in start..u.len() {
                if u.len() - s < k - cur.len() {
                    break;
                }
                cur.push(u[s]);
                rec(u, k, s + 1, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        if k <= universe.len() {
            rec(&universe.elements, k, 0, &mut Vec::new(), &mut out);
        }
        out
    }

    /// All `k`-subsets of `{1, …, n}`.
    pub fn all_of_size(n: usize, k: usize) -> Vec<IndexSubset> {
        Self::subsets_of(&IndexSubset::full(n), k)
    }
}

/// `𝓡_{I,J}` (pairs with `i < j`) or `𝓡'_{I,J}` (pairs with `i > j`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Less,
    Greater,
}

/// Which argument set of a product carries `z → z - η`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ShiftTag {
    pub first: bool,
    pub second: bool,
}

impl ShiftTag {
    pub const NONE: ShiftTag = ShiftTag { first: false, second: false };
    pub const FIRST: ShiftTag = ShiftTag { first: true, second: false };
    pub const SECOND: ShiftTag = ShiftTag { first: false, second: true };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// One two-site factor `R_{ij}(x)`; `shifted` marks arguments carrying `-η`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor {
    pub i: usize,
    pub j: usize,
    pub x: C64,
    pub shifted: bool,
}

/// Ordered leg pairs of `𝓡_{I,J}` / `𝓡'_{I,J}`.
///
/// `Less`: for `j ∈ J` ascending, `i ∈ I` descending with `i < j`.
/// `Greater`: for `i ∈ I` descending, `j ∈ J` ascending with `j < i`.
pub fn product_pairs(a: &IndexSubset, b: &IndexSubset, order: Order) -> Result<Vec<(usize, usize)>> {
    if !a.is_disjoint(b) {
        return Err(Error::OverlappingSubsets);
    }
    let mut out = Vec::new();
    match order {
        Order::Less => {
            for &j in b.elements() {
                for &i in a.elements().iter().rev() {
                    if i < j {
                        out.push((i, j));
                    }
                }
            }
        }
        Order::Greater => {
            for &i in a.elements().iter().rev() {
                for &j in b.elements() {
                    if j < i {
                        out.push((i, j));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Factors of a subset product at points `z` (indexed from leg 1).
pub fn product_factors(
    a: &IndexSubset,
    b: &IndexSubset,
    order: Order,
    shift: ShiftTag,
    z: &[C64],
    eta: C64,
) -> Result<Vec<Factor>> {
    let pairs = product_pairs(a, b, order)?;
    let s = (shift.first as i32 - shift.second as i32) as f64;
    Ok(pairs
        .into_iter()
        .map(|(i, j)| Factor { i, j, x: z[i - 1] - z[j - 1] - s * eta, shifted: s != 0.0 })
        .collect())
}

/// Left-to-right product of factors, each evaluated by `eval`.
pub fn evaluate_with<F>(factors: &[Factor], space: LegSpace, mut eval: F) -> Result<CMatrix>
where
    F: FnMut(&Factor) -> Result<CMatrix>,
{
    let mut acc = CMatrix::identity(space.dim());
    for f in factors {
        acc = apply_two_site_right(&acc, &eval(f)?, f.i, f.j, space)?;
    }
    Ok(acc)
}

/// Product of plain (`normalized = false`) or normalized R-matrices.
pub fn evaluate(factors: &[Factor], normalized: bool, p: &ModelParams) -> Result<CMatrix> {
    evaluate_with(factors, p.space(), |f| if normalized { rbar_two_site(f.x, p) } else { r_two_site(f.x, p) })
}

/// `𝓡_{I,J}` or `𝓡'_{I,J}` on the full `N`-leg space.
pub fn rprod(
    a: &IndexSubset,
    b: &IndexSubset,
    order: Order,
    shift: ShiftTag,
    normalized: bool,
    p: &ModelParams,
    z: &[C64],
) -> Result<CMatrix> {
    check_points(z, p)?;
    evaluate(&product_factors(a, b, order, shift, z, p.eta())?, normalized, p)
}

fn check_points(z: &[C64], p: &ModelParams) -> Result<()> {
    if z.len() != p.n() {
        return Err(Error::DimMismatch { expected: p.n(), got: z.len() });
    }
    Ok(())
}

/// Factor list of `F^±_I` with `I^c` taken inside `universe`:
///
/// `F⁻ = 𝓡_{I^c,I} · 𝓡'_{I₋,I^c} · 𝓡_{I₋,I^c} · 𝓡'_{I^c,I}`,
/// `F⁺ = 𝓡_{I,I^c} · 𝓡'_{I^c₋,I} · 𝓡_{I^c₋,I} · 𝓡'_{I,I^c}`.
pub fn f_term_factors(
    set: &IndexSubset,
    universe: &IndexSubset,
    sign: Sign,
    z: &[C64],
    eta: C64,
) -> Result<Vec<Factor>> {
    let comp = set.complement_in(universe);
    let (x, y) = match sign {
        Sign::Minus => (set, &comp),
        Sign::Plus => (&comp, set),
    };
    let mut out = product_factors(y, x, Order::Less, ShiftTag::NONE, z, eta)?;
    out.extend(product_factors(x, y, Order::Greater, ShiftTag::FIRST, z, eta)?);
    out.extend(product_factors(x, y, Order::Less, ShiftTag::FIRST, z, eta)?);
    out.extend(product_factors(y, x, Order::Greater, ShiftTag::NONE, z, eta)?);
    Ok(out)
}

/// Factor list of `F^±_I` written out leg by leg, independently of the
/// subset-product layout.
pub fn f_term_factors_explicit(set: &IndexSubset, n: usize, sign: Sign, z: &[C64], eta: C64) -> Vec<Factor> {
    let idx = set.elements();
    let out_of = |l: usize| !set.contains(l);
    let plain = |i: usize, j: usize| Factor { i, j, x: z[i - 1] - z[j - 1], shifted: false };
    let minus = |i: usize, j: usize| Factor { i, j, x: z[i - 1] - z[j - 1] - eta, shifted: true };
    let mut f = Vec::new();
    match sign {
        Sign::Plus => {
            for &i in idx.iter().rev() {
                f.extend((i + 1..=n).filter(|&l| out_of(l)).map(|l| plain(i, l)));
            }
            for &i in idx {
                f.extend((1..=n).rev().filter(|&j| out_of(j)).map(|j| minus(j, i)));
            }
            for &i in idx.iter().rev() {
                f.extend((1..i).filter(|&m| out_of(m)).map(|m| plain(i, m)));
            }
        }
        Sign::Minus => {
            for &i in idx {
                f.extend((1..i).rev().filter(|&m| out_of(m)).map(|m| plain(m, i)));
            }
            for &i in idx.iter().rev() {
                f.extend((1..=n).filter(|&j| out_of(j)).map(|j| minus(i, j)));
            }
            for &i in idx {
                f.extend((i + 1..=n).rev().filter(|&l| out_of(l)).map(|l| plain(l, i)));
            }
        }
    }
    f
}

/// One term `F^±_I` of the identity, with unnormalized R-matrices.
pub fn f_term(set: &IndexSubset, sign: Sign, p: &ModelParams, z: &[C64]) -> Result<CMatrix> {
    check_points(z, p)?;
    evaluate(&f_term_factors(set, &IndexSubset::full(p.n()), sign, z, p.eta())?, false, p)
}

/// `Σ_{|I|=k} (F⁻_I - F⁺_I)` over subsets of `universe`, with the largest term norm.
pub fn f_sum_in(
    k: usize,
    universe: &IndexSubset,
    z: &[C64],
    eta: C64,
    p: &ModelParams,
) -> Result<(CMatrix, f64)> {
    let mut total = CMatrix::zeros(p.space().dim());
    let mut scale = 0.0f64;
    for set in IndexSubset::subsets_of(universe, k) {
        let minus = evaluate(&f_term_factors(&set, universe, Sign::Minus, z, eta)?, false, p)?;
        let plus = evaluate(&f_term_factors(&set, universe, Sign::Plus, z, eta)?, false, p)?;
        scale = scale.max(minus.norm_max()).max(plus.norm_max());
        total += &(&minus - &plus);
    }
    Ok((total, scale))
}

/// `F(k, N) = Σ_{|I|=k} (F⁻_I - F⁺_I)` and the largest term norm.
pub fn f_total(k: usize, p: &ModelParams, z: &[C64]) -> Result<(CMatrix, f64)> {
    check_points(z, p)?;
    if k == 0 || k > p.n() {
        return Err(Error::InvalidParameter(format!("k = {k} outside 1..={}", p.n())));
    }
    f_sum_in(k, &IndexSubset::full(p.n()), z, p.eta(), p)
}

/// Which scalar function enters the scalar identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarKernel {
    /// `φ(ħ, x)`.
    Elliptic,
    /// `π cot πħ + π cot πx`.
    Trigonometric,
}

fn scalar_phi(kernel: ScalarKernel, x: C64, p: &ModelParams) -> Result<C64> {
    match kernel {
        ScalarKernel::Elliptic => p.elliptic().kronecker_phi(p.hbar(), x),
        ScalarKernel::Trigonometric => phi_trig(p.hbar(), x),
    }
}

/// `Σ_{|I|=k} (∏ φ(z_j-z_i) φ(z_i-z_j-η) - ∏ φ(z_i-z_j) φ(z_j-z_i-η))`
/// over `i ∈ I`, `j ∉ I`, together with the largest product.
pub fn scalar_identity_lhs(k: usize, z: &[C64], kernel: ScalarKernel, p: &ModelParams) -> Result<(C64, f64)> {
    let n = z.len();
    let mut total = C64::new(0.0, 0.0);
    let mut scale = 0.0f64;
    for set in IndexSubset::all_of_size(n, k) {
        let comp = set.complement(n);
        let (mut a, mut b) = (C64::new(1.0, 0.0), C64::new(1.0, 0.0));
        for &i in set.elements() {
            for &j in comp.elements() {
                let (zi, zj) = (z[i - 1], z[j - 1]);
                a *= scalar_phi(kernel, zj - zi, p)? * scalar_phi(kernel, zi - zj - p.eta(), p)?;
                b *= scalar_phi(kernel, zi - zj, p)? * scalar_phi(kernel, zj - zi - p.eta(), p)?;
            }
        }
        scale = scale.max(a.norm()).max(b.norm());
        total += a - b;
    }
    Ok((total, scale))
}

/// `𝓐(a,b) = 𝓡_{{b}, rest∪{a}} · 𝓡_{rest,{a}}` with `rest = {1..N} \ {a,b}`.
pub fn residue_prefactor_a(a: usize, b: usize, p: &ModelParams, z: &[C64]) -> Result<CMatrix> {
    let (sa, sb, rest) = residue_sets(a, b, p.n())?;
    let mut f = product_factors(&sb, &rest.union(&sa), Order::Less, ShiftTag::NONE, z, p.eta())?;
    f.extend(product_factors(&rest, &sa, Order::Less, ShiftTag::NONE, z, p.eta())?);
    evaluate(&f, false, p)
}

/// `𝓑(a,b) = 𝓡'_{{b}, rest} · 𝓡'_{rest∪{b}, {a}}`.
pub fn residue_prefactor_b(a: usize, b: usize, p: &ModelParams, z: &[C64]) -> Result<CMatrix> {
    let (sa, sb, rest) = residue_sets(a, b, p.n())?;
    let mut f = product_factors(&sb, &rest, Order::Greater, ShiftTag::NONE, z, p.eta())?;
    f.extend(product_factors(&rest.union(&sb), &sa, Order::Greater, ShiftTag::NONE, z, p.eta())?);
    evaluate(&f, false, p)
}

fn residue_sets(a: usize, b: usize, n: usize) -> Result<(IndexSubset, IndexSubset, IndexSubset)> {
    if a == b || a == 0 || b == 0 || a > n || b > n {
        return Err(Error::BadLeg { i: a, j: b, n });
    }
    let sa = IndexSubset::new([a])?;
    let sb = IndexSubset::new([b])?;
    let rest = IndexSubset::full(n).difference(&sa.union(&sb));
    Ok((sa, sb, rest))
}

/// `z` with `z_a` replaced by `z_b + η - Ω_{m₁,m₂}`.
pub fn residue_point(a: usize, b: usize, omega: C64, p: &ModelParams, z: &[C64]) -> Vec<C64> {
    let mut w = z.to_vec();
    w[a - 1] = z[b - 1] + p.eta() - omega;
    w
}

/// Exact residue of one term at `z_a = z_b + η - Ω`: the singular factor
/// `R⁻_ab` is replaced by `exp(2πi m₂ ħ/M) T^{(a)} P_ab T^{(a)-1}`.
pub fn residue_term_shifted(
    a: usize,
    b: usize,
    set: &IndexSubset,
    sign: Sign,
    m: (i64, i64),
    p: &ModelParams,
    z: &[C64],
) -> Result<CMatrix> {
    check_points(z, p)?;
    let space = p.space();
    let w = residue_point(a, b, p.big_omega(m.0, m.1), p, z);
    let factors = f_term_factors(set, &IndexSubset::full(p.n()), sign, &w, p.eta())?;
    let singular = |f: &Factor| f.shifted && f.i == a && f.j == b;
    if factors.iter().filter(|f| singular(f)).count() != 1 {
        return Err(Error::InvalidParameter(format!("term {set:?} has no simple pole at z_{a} = z_{b} + eta")));
    }
    let t2 = basis_t(m, p.m());
    let twist = (2.0 * PI * I_UNIT * m.1 as f64 * p.hbar() / p.m() as f64).exp();
    let residue_op = t2.kron(&CMatrix::identity(p.m())).matmul(&crate::tensor::permutation_two_site(p.m()));
    let residue_op = residue_op.matmul(&t2.adjoint().kron(&CMatrix::identity(p.m()))).scale(twist);
    evaluate_with(&factors, space, |f| if singular(f) { Ok(residue_op.clone()) } else { r_two_site(f.x, p) })
}

/// Exact residue of one term at `z_a = z_b + η`.
pub fn residue_term(a: usize, b: usize, set: &IndexSubset, sign: Sign, p: &ModelParams, z: &[C64]) -> Result<CMatrix> {
    residue_term_shifted(a, b, set, sign, (0, 0), p, z)
}

/// Predicted residue of one term: `𝓐 · F^±_{I'} · P_ab · 𝓑` with `I' = I \ {a,b}`
/// taken over `rest`.
pub fn residue_term_factorized(
    a: usize,
    b: usize,
    set: &IndexSubset,
    sign: Sign,
    p: &ModelParams,
    z: &[C64],
) -> Result<CMatrix> {
    let (sa, sb, rest) = residue_sets(a, b, p.n())?;
    let w = residue_point(a, b, C64::new(0.0, 0.0), p, z);
    let reduced = set.difference(&sa.union(&sb));
    let inner = evaluate(&f_term_factors(&reduced, &rest, sign, &w, p.eta())?, false, p)?;
    let pab = permutation_p(a, b, p.space())?;
    Ok(residue_prefactor_a(a, b, p, &w)?.matmul(&inner).matmul(&pab).matmul(&residue_prefactor_b(a, b, p, &w)?))
}

/// `(Res_{z_a = z_b+η} F(k,N), 𝓐 · F(k-1,N-2) · P_ab · 𝓑)` and the largest term norm.
pub fn residue_f(a: usize, b: usize, k: usize, p: &ModelParams, z: &[C64]) -> Result<(CMatrix, CMatrix, f64)> {
    let (lhs, scale) = residue_f_shifted(a, b, k, (0, 0), p, z)?;
    let (_, _, rest) = residue_sets(a, b, p.n())?;
    let w = residue_point(a, b, C64::new(0.0, 0.0), p, z);
    let inner = if k == 1 {
        CMatrix::zeros(p.space().dim())
    } else {
        f_sum_in(k - 1, &rest, &w, p.eta(), p)?.0
    };
    let pab = permutation_p(a, b, p.space())?;
    let rhs = residue_prefactor_a(a, b, p, &w)?.matmul(&inner).matmul(&pab).matmul(&residue_prefactor_b(a, b, p, &w)?);
    Ok((lhs, rhs, scale))
}

/// Exact residue of `F(k,N)` at `z_a = z_b + η - Ω_{m₁,m₂}` and the largest term norm.
pub fn residue_f_shifted(a: usize, b: usize, k: usize, m: (i64, i64), p: &ModelParams, z: &[C64]) -> Result<(CMatrix, f64)> {
    residue_sets(a, b, p.n())?;
    let mut total = CMatrix::zeros(p.space().dim());
    let mut scale = 0.0f64;
    for set in IndexSubset::all_of_size(p.n(), k) {
        let (ina, inb) = (set.contains(a), set.contains(b));
        let (sign, coeff) = match (ina, inb) {
            (true, false) => (Sign::Minus, 1.0),
            (false, true) => (Sign::Plus, -1.0),
            _ => continue,
        };
        let t = residue_term_shifted(a, b, &set, sign, m, p, z)?;
        scale = scale.max(t.norm_max());
        total += &t.scale(C64::new(coeff, 0.0));
    }
    Ok((total, scale))
}

/// `T^{(a)}_{m}` on the full space.
pub fn leg_t(a: usize, m: (i64, i64), p: &ModelParams) -> Result<CMatrix> {
    embed_one_site(&basis_t(m, p.m()), a, p.space())
}

/// Random pairwise-distinct points of the shrunk cell, rejecting any pair
/// whose difference, or difference minus `±η`, is within the guard.
pub fn sample_points(rng: &mut ChaCha8Rng, p: &ModelParams) -> Result<Vec<C64>> {
    let z: Vec<C64> = (0..p.n()).map(|_| p.cell_point(rng)).collect();
    for i in 0..z.len() {
        for j in 0..z.len() {
            if i != j {
                p.off_lattice(z[i] - z[j])?;
                p.off_lattice(z[i] - z[j] - p.eta())?;
                p.off_lattice(z[i] - z[j] - p.hbar())?;
            }
        }
    }
    Ok(z)
}

/// Worst relative size of `F(k, N)` over sampled points.
pub fn f_total_residual(k: usize, p: &ModelParams) -> Result<Residual> {
    sampled_max(p.seed(), stream_id("f_total") ^ k as u64, p.samples(), |rng| {
        let z = sample_points(rng, p)?;
        let (f, scale) = f_total(k, p, &z)?;
        Ok(Residual::new(f.norm_max(), scale))
    })
}

/// Worst residual of the residue factorization at `z_a = z_b + η` over sampled points.
pub fn residue_factorization_residual(a: usize, b: usize, k: usize, p: &ModelParams) -> Result<Residual> {
    residue_sets(a, b, p.n())?;
    if k == 0 || k > p.n() {
        return Err(Error::InvalidParameter(format!("k = {k} outside 1..={}", p.n())));
    }
    sampled_max(p.seed(), stream_id("residue_factorization") ^ ((a * 64 + b) as u64) << 8 ^ k as u64, p.samples(), |rng| {
        let z = sample_points(rng, p)?;
        let (lhs, rhs, scale) = residue_f(a, b, k, p, &z)?;
        Ok(Residual::new(lhs.max_abs_diff(&rhs), scale.max(rhs.norm_max())))
    })
}

/// Worst residual of `Res_{z_a = z_b+η-Ω_m} F = T^{(a)}_m (Res_{z_a = z_b+η} F) T^{(a)-1}_m`.
pub fn omega_residue_residual(a: usize, b: usize, k: usize, m: (i64, i64), p: &ModelParams) -> Result<Residual> {
    residue_sets(a, b, p.n())?;
    let t = leg_t(a, m, p)?;
    let t_inv = t.adjoint();
    sampled_max(p.seed(), stream_id("omega_residue") ^ ((m.0 * 16 + m.1) as u64) << 16 ^ k as u64, p.samples(), |rng| {
        let z = sample_points(rng, p)?;
        let (shifted, s1) = residue_f_shifted(a, b, k, m, p, &z)?;
        let (base, s0) = residue_f_shifted(a, b, k, (0, 0), p, &z)?;
        let expected = t.matmul(&base).matmul(&t_inv);
        Ok(Residual::new(shifted.max_abs_diff(&expected), s1.max(s0)))
    })
}

/// Both product exchange relations
/// `𝓡_{C,A∪B} 𝓡_{B,A} = 𝓡_{B∪C,A} 𝓡_{C,B}` and
/// `𝓡'_{A,B} 𝓡'_{A∪B,C} = 𝓡'_{B,C} 𝓡'_{A,B∪C}`.
pub fn lemma_exchange_residual(a: &IndexSubset, b: &IndexSubset, c: &IndexSubset, p: &ModelParams) -> Result<Residual> {
    if !a.is_disjoint(b) || !a.is_disjoint(c) || !b.is_disjoint(c) {
        return Err(Error::OverlappingSubsets);
    }
    sampled_max(p.seed(), stream_id("lemma_exchange"), p.samples(), |rng| {
        let z = sample_points(rng, p)?;
        lemma_exchange_at(a, b, c, p, &z)
    })
}

/// Exchange relations at fixed points.
pub fn lemma_exchange_at(a: &IndexSubset, b: &IndexSubset, c: &IndexSubset, p: &ModelParams, z: &[C64]) -> Result<Residual> {
    let r = |x: &IndexSubset, y: &IndexSubset, o: Order| rprod(x, y, o, ShiftTag::NONE, false, p, z);
    let l1 = r(c, &a.union(b), Order::Less)?.matmul(&r(b, a, Order::Less)?);
    let r1 = r(&b.union(c), a, Order::Less)?.matmul(&r(c, b, Order::Less)?);
    let l2 = r(a, b, Order::Greater)?.matmul(&r(&a.union(b), c, Order::Greater)?);
    let r2 = r(b, c, Order::Greater)?.matmul(&r(a, &b.union(c), Order::Greater)?);
    let first = Residual::new(l1.max_abs_diff(&r1), l1.norm_max().max(r1.norm_max()));
    let second = Residual::new(l2.max_abs_diff(&r2), l2.norm_max().max(r2.norm_max()));
    Ok(first.worst(second))
}

/// Unitarity of subset products at fixed points:
/// `𝓡_{I,J} 𝓡'_{J,I}` and `𝓡'_{I,J} 𝓡_{J,I}` are scalar φ-products times `Id`,
/// and the normalized products are inverse to each other in both orders.
pub fn unitarity_product_at(a: &IndexSubset, b: &IndexSubset, p: &ModelParams, z: &[C64]) -> Result<Residual> {
    if !a.is_disjoint(b) {
        return Err(Error::OverlappingSubsets);
    }
    let e = p.elliptic();
    let dim = p.space().dim();
    let r = |x: &IndexSubset, y: &IndexSubset, o: Order, nrm: bool| rprod(x, y, o, ShiftTag::NONE, nrm, p, z);
    let pair_product = |less: bool| -> Result<C64> {
        let mut s = C64::new(1.0, 0.0);
        for &i in a.elements() {
            for &j in b.elements() {
                if (i < j) == less {
                    let d = z[i - 1] - z[j - 1];
                    s *= e.kronecker_phi(p.hbar(), d)? * e.kronecker_phi(p.hbar(), -d)?;
                }
            }
        }
        Ok(s)
    };
    let check = |lhs: CMatrix, s: C64| {
        let rhs = CMatrix::identity(dim).scale(s);
        Residual::new(lhs.max_abs_diff(&rhs), lhs.norm_max().max(s.norm()))
    };
    let u1 = check(r(a, b, Order::Less, false)?.matmul(&r(b, a, Order::Greater, false)?), pair_product(true)?);
    let u2 = check(r(a, b, Order::Greater, false)?.matmul(&r(b, a, Order::Less, false)?), pair_product(false)?);
    let one = C64::new(1.0, 0.0);
    let u3 = check(r(a, b, Order::Less, true)?.matmul(&r(b, a, Order::Greater, true)?), one);
    let u4 = check(r(b, a, Order::Greater, true)?.matmul(&r(a, b, Order::Less, true)?), one);
    Ok(u1.worst(u2).worst(u3).worst(u4))
}

/// Sampled version of [`unitarity_product_at`].
pub fn unitarity_product_residual(a: &IndexSubset, b: &IndexSubset, p: &ModelParams) -> Result<Residual> {
    if !a.is_disjoint(b) {
        return Err(Error::OverlappingSubsets);
    }
    sampled_max(p.seed(), stream_id("unitarity_product"), p.samples(), |rng| {
        let z = sample_points(rng, p)?;
        unitarity_product_at(a, b, p, &z)
    })
}

/// `F(η+M) = F(η)` and `F(η+Mτ) = exp(2πi k(N-k) ħ) F(η)` for single terms
/// `F^±_I` with random `|I| = k`. Each of the `k(N-k)` shifted factors
/// `R(x - Mτ) = exp(2πiħ) R(x)` contributes one phase.
pub fn eta_quasiperiodicity_residual(k: usize, p: &ModelParams) -> Result<Residual> {
    if k == 0 || k > p.n() {
        return Err(Error::InvalidParameter(format!("k = {k} outside 1..={}", p.n())));
    }
    sampled_max(p.seed(), stream_id("eta_quasiperiodicity") ^ k as u64, p.samples(), |rng| {
        let z = sample_points(rng, p)?;
        let subsets = IndexSubset::all_of_size(p.n(), k);
        let set = subsets.choose(rng).expect("k <= N").clone();
        let sign = if rng.gen::<bool>() { Sign::Plus } else { Sign::Minus };
        eta_quasiperiodicity_at(&set, sign, p, &z)
    })
}

/// Quasi-periodicity in `η` of a single term at fixed points.
pub fn eta_quasiperiodicity_at(set: &IndexSubset, sign: Sign, p: &ModelParams, z: &[C64]) -> Result<Residual> {
    let n = p.n();
    let k = set.len();
    let universe = IndexSubset::full(n);
    let term = |eta: C64| -> Result<CMatrix> { evaluate(&f_term_factors(set, &universe, sign, z, eta)?, false, p) };
    let mf = p.m() as f64;
    let base = term(p.eta())?;
    let a = term(p.eta() + mf)?;
    let b = term(p.eta() + mf * p.tau())?;
    let f = (2.0 * PI * I_UNIT * (k * (n - k)) as f64 * p.hbar()).exp();
    let fb = base.scale(f);
    let r1 = Residual::new(a.max_abs_diff(&base), a.norm_max().max(base.norm_max()));
    let r2 = Residual::new(b.max_abs_diff(&fb), b.norm_max().max(fb.norm_max()));
    Ok(r1.worst(r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[usize]) -> IndexSubset {
        IndexSubset::new(v.iter().copied()).unwrap()
    }

    #[test]
    fn subset_algebra() {
        let a = s(&[3, 1]);
        assert_eq!(a.elements(), &[1, 3]);
        assert_eq!(a.complement(4).elements(), &[2, 4]);
        assert!(a.is_disjoint(&s(&[2, 4])));
        assert_eq!(a.union(&s(&[2])).elements(), &[1, 2, 3]);
        assert!(IndexSubset::new([1, 1]).is_err());
        assert_eq!(IndexSubset::all_of_size(5, 2).len(), 10);
        assert_eq!(IndexSubset::all_of_size(3, 0), vec![IndexSubset::empty()]);
    }

    #[test]
    fn worked_example_ordering() {
        let pairs = product_pairs(&s(&[1, 2]), &s(&[3, 4, 5]), Order::Less).unwrap();
        assert_eq!(pairs, vec![(2, 3), (1, 3), (2, 4), (1, 4), (2, 5), (1, 5)]);
        assert!(product_pairs(&s(&[3, 4, 5]), &s(&[1, 2]), Order::Less).unwrap().is_empty());
        assert_eq!(product_pairs(&s(&[1]), &s(&[1, 2]), Order::Less), Err(Error::OverlappingSubsets));
    }

    #[test]
    fn shift_tags_move_arguments() {
        let z = [C64::new(0.1, 0.0), C64::new(0.5, 0.0)];
        let eta = C64::new(0.01, 0.0);
        let a = s(&[1]);
        let b = s(&[2]);
        let f = product_factors(&a, &b, Order::Less, ShiftTag::FIRST, &z, eta).unwrap();
        assert!((f[0].x - (z[0] - z[1] - eta)).norm() < 1e-15);
        let g = product_factors(&a, &b, Order::Less, ShiftTag::SECOND, &z, eta).unwrap();
        assert!((g[0].x - (z[0] - z[1] + eta)).norm() < 1e-15);
        let h = product_factors(&a, &b, Order::Less, ShiftTag { first: true, second: true }, &z, eta).unwrap();
        assert!(!h[0].shifted);
    }
}
