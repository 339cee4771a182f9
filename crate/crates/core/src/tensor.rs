//! Dense complex matrices and operators on the legs of `(C^M)^{⊗N}`.
//!
//! Leg `i` (1-based) is the `i`-th base-`M` digit of a basis index, counted
//! from the most significant end. Two-site operators are `M² × M²` matrices
//! whose row index is `a·M + b` with `a` on the first leg.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::{Error, Result, C64};

/// Default upper bound on `M^N` for dense embeddings.
pub const DEFAULT_EMBED_CAP: usize = 4096;

/// Square complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix { dim, data: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        CMatrix { dim, data }
    }

    /// Builds a matrix from row-major entries; the length must be a square.
    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimMismatch { expected: dim * dim, got: data.len() });
        }
        Ok(CMatrix { dim, data })
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = *d;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// `max |A_ij|`, the residual norm used everywhere.
    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// `norm_max(self - other)` without allocating.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix { dim: self.dim, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for (r, b) in row.iter_mut().zip(&other.data[k * n..(k + 1) * n]) {
                    *r += a * b;
                }
            }
        }
        CMatrix { dim: n, data: out }
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.dim, v.len(), "dimension mismatch");
        self.data.chunks(self.dim).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `A ⊗ B` with `A` on the more significant digit.
    pub fn kron(&self, other: &CMatrix) -> CMatrix {
        let (p, q) = (self.dim, other.dim);
        CMatrix::from_fn(p * q, |r, c| self[(r / q, c / q)] * other[(r % q, c % q)])
    }

    /// Non-negative integer power.
    pub fn pow(&self, e: u32) -> CMatrix {
        let mut out = CMatrix::identity(self.dim);
        for _ in 0..e {
            out = out.matmul(self);
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.dim, |i, j| self[(j, i)])
    }

    /// `AB - BA`.
    pub fn commutator(&self, other: &CMatrix) -> CMatrix {
        &self.matmul(other) - &other.matmul(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        CMatrix { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        CMatrix { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Mul<C64> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: C64) -> CMatrix {
        self.scale(rhs)
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale(C64::new(-1.0, 0.0))
    }
}

/// The factorization `(C^M)^{⊗N}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LegSpace {
    m: usize,
    n: usize,
}

impl LegSpace {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!("leg space needs M, N >= 1, got M={m}, N={n}")));
        }
        m.checked_pow(n as u32)
            .ok_or_else(|| Error::InvalidParameter(format!("M^N overflows for M={m}, N={n}")))?;
        Ok(LegSpace { m, n })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    /// Index step of one unit on leg `i`.
    pub fn stride(&self, leg: usize) -> usize {
        self.m.pow((self.n - leg) as u32)
    }

    /// Digit of basis index `index` on leg `leg`.
    pub fn digit(&self, index: usize, leg: usize) -> usize {
        (index / self.stride(leg)) % self.m
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        if i == j || i == 0 || j == 0 || i > self.n || j > self.n {
            return Err(Error::BadLeg { i, j, n: self.n });
        }
        Ok(())
    }

    fn check_two_site(&self, op2: &CMatrix) -> Result<()> {
        if op2.dim() != self.m * self.m {
            return Err(Error::DimMismatch { expected: self.m * self.m, got: op2.dim() });
        }
        Ok(())
    }

    fn check_target(&self, target: &CMatrix) -> Result<()> {
        if target.dim() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), got: target.dim() });
        }
        Ok(())
    }

    /// Basis indices whose digits on legs `i` and `j` are both zero.
    fn bases(&self, i: usize, j: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&x| self.digit(x, i) == 0 && self.digit(x, j) == 0).collect()
    }

    /// Offsets of the `M²` states on legs `(i, j)`, ordered as `a·M + b`.
    fn offsets(&self, i: usize, j: usize) -> Vec<usize> {
        let (si, sj) = (self.stride(i), self.stride(j));
        (0..self.m * self.m).map(|ab| (ab / self.m) * si + (ab % self.m) * sj).collect()
    }
}

/// Matrix `Q = diag(exp(2πik/M))`, `k = 1..M`.
pub fn clock_q(m: usize) -> CMatrix {
    let d: Vec<C64> = (1..=m).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect();
    CMatrix::diagonal(&d)
}

/// Cyclic shift `Λ` with `Λ_{k, k+1 mod M} = 1`.
pub fn shift_lambda(m: usize) -> CMatrix {
    let mut l = CMatrix::zeros(m);
    for k in 0..m {
        l[(k, (k + 1) % m)] = C64::new(1.0, 0.0);
    }
    l
}

/// `T_α = exp(πi α₁α₂/M) Q^{α₁} Λ^{α₂}`.
///
/// The phase is taken from `α` exactly as given; only the matrix powers are
/// reduced modulo `M`. Callers pass `(-α₁, -α₂)` literally for `T_{-α}`.
pub fn basis_t(alpha: (i64, i64), m: usize) -> CMatrix {
    let mm = m as i64;
    let phase = C64::from_polar(1.0, PI * (alpha.0 * alpha.1) as f64 / m as f64);
    let q = clock_q(m).pow(alpha.0.rem_euclid(mm) as u32);
    let l = shift_lambda(m).pow(alpha.1.rem_euclid(mm) as u32);
    q.matmul(&l).scale(phase)
}

/// Two-site swap `P = Σ e_kl ⊗ e_lk`.
pub fn permutation_two_site(m: usize) -> CMatrix {
    let mut p = CMatrix::zeros(m * m);
    for k in 0..m {
        for l in 0..m {
            p[(k * m + l, l * m + k)] = C64::new(1.0, 0.0);
        }
    }
    p
}

/// Transposition of legs `i` and `j` on the whole space.
pub fn permutation_p(i: usize, j: usize, space: LegSpace) -> Result<CMatrix> {
    apply_two_site(&permutation_two_site(space.m()), i, j, &CMatrix::identity(space.dim()), space)
}

/// `(op2 on legs i, j) · target`, without forming the embedding.
pub fn apply_two_site(op2: &CMatrix, i: usize, j: usize, target: &CMatrix, space: LegSpace) -> Result<CMatrix> {
    space.check_pair(i, j)?;
    space.check_two_site(op2)?;
    space.check_target(target)?;
    let d = space.dim();
    let mm = op2.dim();
    let offs = space.offsets(i, j);
    let mut out = CMatrix::zeros(d);
    let mut col = vec![C64::new(0.0, 0.0); mm];
    for base in space.bases(i, j) {
        for c in 0..d {
            for (a, o) in offs.iter().enumerate() {
                col[a] = target[(base + o, c)];
            }
            for (r, o) in offs.iter().enumerate() {
                let row = &op2.as_slice()[r * mm..(r + 1) * mm];
                out[(base + o, c)] = row.iter().zip(&col).map(|(x, y)| x * y).sum();
            }
        }
    }
    Ok(out)
}

/// `target · (op2 on legs i, j)`, without forming the embedding.
pub fn apply_two_site_right(target: &CMatrix, op2: &CMatrix, i: usize, j: usize, space: LegSpace) -> Result<CMatrix> {
    space.check_pair(i, j)?;
    space.check_two_site(op2)?;
    space.check_target(target)?;
    let d = space.dim();
    let mm = op2.dim();
    let offs = space.offsets(i, j);
    let bases = space.bases(i, j);
    let mut out = CMatrix::zeros(d);
    let mut row = vec![C64::new(0.0, 0.0); mm];
    for r in 0..d {
        for &base in &bases {
            for (a, o) in offs.iter().enumerate() {
                row[a] = target[(r, base + o)];
            }
            for (c, o) in offs.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (a, v) in row.iter().enumerate() {
                    acc += v * op2.as_slice()[a * mm + c];
                }
                out[(r, base + o)] = acc;
            }
        }
    }
    Ok(out)
}

/// Dense embedding of a two-site operator, capped at `cap` total dimension.
pub fn embed_two_site_capped(op2: &CMatrix, i: usize, j: usize, space: LegSpace, cap: usize) -> Result<CMatrix> {
    space.check_pair(i, j)?;
    space.check_two_site(op2)?;
    if space.dim() > cap {
        return Err(Error::DimMismatch { expected: cap, got: space.dim() });
    }
    let m = space.m();
    Ok(CMatrix::from_fn(space.dim(), |r, c| {
        for leg in 1..=space.n() {
            if leg != i && leg != j && space.digit(r, leg) != space.digit(c, leg) {
                return C64::new(0.0, 0.0);
            }
        }
        let row = space.digit(r, i) * m + space.digit(r, j);
        let col = space.digit(c, i) * m + space.digit(c, j);
        op2[(row, col)]
    }))
}

/// Dense embedding with the default cap.
pub fn embed_two_site(op2: &CMatrix, i: usize, j: usize, space: LegSpace) -> Result<CMatrix> {
    embed_two_site_capped(op2, i, j, space, DEFAULT_EMBED_CAP)
}

/// `1 ⊗ … ⊗ op ⊗ … ⊗ 1` with `op` on leg `i`.
pub fn embed_one_site(op: &CMatrix, leg: usize, space: LegSpace) -> Result<CMatrix> {
    if leg == 0 || leg > space.n() {
        return Err(Error::BadLeg { i: leg, j: leg, n: space.n() });
    }
    if op.dim() != space.m() {
        return Err(Error::DimMismatch { expected: space.m(), got: op.dim() });
    }
    let id = CMatrix::identity(space.m());
    let mut out = CMatrix::identity(1);
    for l in 1..=space.n() {
        out = out.kron(if l == leg { op } else { &id });
    }
    Ok(out)
}

/// `op^{⊗N}`.
pub fn tensor_power(op: &CMatrix, n: usize) -> CMatrix {
    (0..n).fold(CMatrix::identity(1), |acc, _| acc.kron(op))
}
