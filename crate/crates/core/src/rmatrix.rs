//! The ℤ_M-symmetric elliptic R-matrix
//! `R^ħ(x) = (1/M) Σ_α φ_α(x, ħ/M + ω_α) T_α ⊗ T_{-α}`,
//! its normalized and classical versions, and checks of their properties.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::elliptic::EllipticParams;
use crate::sampling::{cell_point, require_off_lattice, sampled_max, small_point, stream_id};
use crate::tensor::{
    apply_two_site_right, basis_t, clock_q, embed_two_site, permutation_two_site, shift_lambda, CMatrix,
    LegSpace,
};
use crate::{Error, Residual, Result, C64};

const I: C64 = C64::new(0.0, 1.0);

pub const DEFAULT_TAU: C64 = C64::new(0.0, 1.0);
pub const DEFAULT_HBAR: C64 = C64::new(0.173, 0.041);
pub const DEFAULT_ETA: C64 = C64::new(0.289, -0.057);
/// Minimal lattice distance of sampled arguments and of `ħ`, `η`.
pub const DEFAULT_DELTA: f64 = 0.02;
pub const DEFAULT_SAMPLES: usize = 20;

/// Pairs `T_α ⊗ T_{-α}` for all `α ∈ ℤ_M × ℤ_M`, in lexicographic order.
#[derive(Debug)]
pub struct HeisenbergPairs {
    alphas: Vec<(i64, i64)>,
    pairs: Vec<CMatrix>,
}

impl HeisenbergPairs {
    pub fn new(m: usize) -> Self {
        let mut alphas = Vec::new();
        let mut pairs = Vec::new();
        for a1 in 0..m as i64 {
            for a2 in 0..m as i64 {
                alphas.push((a1, a2));
                pairs.push(basis_t((a1, a2), m).kron(&basis_t((-a1, -a2), m)));
            }
        }
        HeisenbergPairs { alphas, pairs }
    }

    pub fn iter(&self) -> impl Iterator<Item = ((i64, i64), &CMatrix)> {
        self.alphas.iter().copied().zip(self.pairs.iter())
    }
}

/// Every free constant of the model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    tau: C64,
    hbar: C64,
    eta: C64,
    m: usize,
    n: usize,
    pole_guard: f64,
    seed: u64,
    samples: usize,
    elliptic: EllipticParams,
    pairs: Arc<HeisenbergPairs>,
}

impl ModelParams {
    /// Validated parameters with default guard, seed 0 and 20 samples.
    pub fn new(tau: C64, hbar: C64, eta: C64, m: usize, n: usize) -> Result<Self> {
        let elliptic = EllipticParams::new(tau)?;
        let p = ModelParams {
            tau,
            hbar,
            eta,
            m,
            n,
            pole_guard: DEFAULT_DELTA,
            seed: 0,
            samples: DEFAULT_SAMPLES,
            elliptic,
            pairs: Arc::new(HeisenbergPairs::new(m.max(1))),
        };
        p.validate()?;
        Ok(p)
    }

    /// Defaults `τ = i`, `ħ = 0.173+0.041i`, `η = 0.289-0.057i`.
    pub fn with_defaults(m: usize, n: usize) -> Result<Self> {
        Self::new(DEFAULT_TAU, DEFAULT_HBAR, DEFAULT_ETA, m, n)
    }

    fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidParameter("M must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter("N must be at least 2".into()));
        }
        if !(self.pole_guard > 0.0) {
            return Err(Error::InvalidParameter("pole guard must be positive".into()));
        }
        LegSpace::new(self.m, self.n)?;
        let e = &self.elliptic;
        for (name, v) in [("hbar", self.hbar), ("eta", self.eta)] {
            if e.lattice_distance(v) < self.pole_guard {
                return Err(Error::InvalidParameter(format!("{name} = {v} is within the pole guard of the lattice")));
            }
        }
        for (alpha, _) in self.pairs.iter() {
            let w = self.hbar / self.m as f64 + e.omega(alpha, self.m);
            if e.lattice_distance(w) < self.pole_guard {
                return Err(Error::InvalidParameter(format!("hbar/M + omega{alpha:?} is within the pole guard")));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_pole_guard(mut self, delta: f64) -> Result<Self> {
        self.pole_guard = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_n(mut self, n: usize) -> Result<Self> {
        self.n = n;
        self.validate()?;
        Ok(self)
    }

    pub fn with_hbar_eta(mut self, hbar: C64, eta: C64) -> Result<Self> {
        self.hbar = hbar;
        self.eta = eta;
        self.validate()?;
        Ok(self)
    }

    /// Copy with `ħ → εħ`, `η → εη`. Skips the lattice-distance check on
    /// `ħ` and `η`, which small `ε` violates by design.
    pub fn rescaled(&self, eps: f64) -> ModelParams {
        let mut p = self.clone();
        p.hbar *= eps;
        p.eta *= eps;
        p
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }
    pub fn hbar(&self) -> C64 {
        self.hbar
    }
    pub fn eta(&self) -> C64 {
        self.eta
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn pole_guard(&self) -> f64 {
        self.pole_guard
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn samples(&self) -> usize {
        self.samples
    }
    pub fn elliptic(&self) -> &EllipticParams {
        &self.elliptic
    }
    pub fn pairs(&self) -> &HeisenbergPairs {
        &self.pairs
    }
    pub fn space(&self) -> LegSpace {
        LegSpace::new(self.m, self.n).expect("validated at construction")
    }

    /// `Ω_{m₁,m₂} = m₁ + m₂τ`.
    pub fn big_omega(&self, m1: i64, m2: i64) -> C64 {
        m1 as f64 + m2 as f64 * self.tau
    }

    /// Uniform point of the shrunk fundamental cell.
    pub fn cell_point(&self, rng: &mut ChaCha8Rng) -> C64 {
        cell_point(rng, self.tau)
    }

    /// Rejects `z` closer than the guard to the lattice.
    pub fn off_lattice(&self, z: C64) -> Result<()> {
        require_off_lattice(&self.elliptic, z, self.pole_guard)
    }
}

/// `R^{slot}(x)` with an explicit ħ-slot, as in `R^y_{12}(x)`.
pub fn belavin_r(x: C64, slot: C64, p: &ModelParams) -> Result<CMatrix> {
    let m = p.m;
    let mut out = CMatrix::zeros(m * m);
    for (alpha, pair) in p.pairs.iter() {
        let c = p.elliptic.phi_alpha(x, alpha, slot / m as f64, m)?;
        out += &pair.scale(c / m as f64);
    }
    Ok(out)
}

/// `R^ħ(x)`.
pub fn r_two_site(x: C64, p: &ModelParams) -> Result<CMatrix> {
    belavin_r(x, p.hbar, p)
}

/// `φ(ħ, x)`, failing with `NormalizerZero` where it vanishes.
pub fn normalizer(x: C64, p: &ModelParams) -> Result<C64> {
    if p.elliptic.near_lattice(p.hbar + x) {
        return Err(Error::NormalizerZero(x));
    }
    p.elliptic.kronecker_phi(p.hbar, x)
}

/// `R̄(x) = R(x) / φ(ħ, x)`.
pub fn rbar_two_site(x: C64, p: &ModelParams) -> Result<CMatrix> {
    let phi = normalizer(x, p)?;
    Ok(r_two_site(x, p)?.scale(1.0 / phi))
}

/// Classical r-matrix `(1/M) E₁(x) 1⊗1 + (1/M) Σ_{α≠0} φ_α(x, ω_α) T_α ⊗ T_{-α}`.
pub fn classical_r_two_site(x: C64, p: &ModelParams) -> Result<CMatrix> {
    let m = p.m;
    let e = &p.elliptic;
    let mut out = CMatrix::identity(m * m).scale(e.eisenstein_e1(x)? / m as f64);
    for (alpha, pair) in p.pairs.iter().skip(1) {
        let c = e.phi_alpha(x, alpha, C64::new(0.0, 0.0), m)?;
        out += &pair.scale(c / m as f64);
    }
    Ok(out)
}

/// `∂_x r(x)`.
pub fn d_classical_r(x: C64, p: &ModelParams) -> Result<CMatrix> {
    let m = p.m;
    let e = &p.elliptic;
    let mut out = CMatrix::identity(m * m).scale(-e.eisenstein_e2(x)? / m as f64);
    for (alpha, pair) in p.pairs.iter().skip(1) {
        let w = e.omega(alpha, m);
        out += &pair.scale(d_phi_alpha(x, alpha, w, p)? / m as f64);
    }
    Ok(out)
}

/// `∂_x [exp(2πi α₂ x/M) φ(x, w)]`.
fn d_phi_alpha(x: C64, alpha: (i64, i64), w: C64, p: &ModelParams) -> Result<C64> {
    let k = 2.0 * I * PI * alpha.1 as f64 / p.m as f64;
    let e = &p.elliptic;
    Ok((k * x).exp() * (k * e.kronecker_phi(x, w)? + e.dphi_dz(x, w)?))
}

/// `∂_x R^ħ(x)`.
pub fn d_r_two_site(x: C64, p: &ModelParams) -> Result<CMatrix> {
    let m = p.m;
    let mut out = CMatrix::zeros(m * m);
    for (alpha, pair) in p.pairs.iter() {
        let w = p.elliptic.omega(alpha, m) + p.hbar / m as f64;
        out += &pair.scale(d_phi_alpha(x, alpha, w, p)? / m as f64);
    }
    Ok(out)
}

/// `∂_x R̄(x) = R'/φ - R φ'/φ²` with `φ = φ(ħ, x)`.
pub fn d_rbar_two_site(x: C64, p: &ModelParams) -> Result<CMatrix> {
    let phi = normalizer(x, p)?;
    let dphi = p.elliptic.dphi_dz(x, p.hbar)?;
    let r = r_two_site(x, p)?;
    let dr = d_r_two_site(x, p)?;
    Ok(&dr.scale(1.0 / phi) - &r.scale(dphi / (phi * phi)))
}

/// Average of `f` over `nodes` equally spaced points of the circle `|x - c| = ρ`.
/// For `f` meromorphic with only a pole at `c` inside, this is the constant
/// Laurent coefficient up to `O(ρ^nodes)`.
pub fn contour_average<F>(center: C64, radius: f64, nodes: usize, phase: f64, mut f: F) -> Result<CMatrix>
where
    F: FnMut(C64) -> Result<CMatrix>,
{
    let mut acc: Option<CMatrix> = None;
    for j in 0..nodes {
        let x = center + C64::from_polar(radius, phase + 2.0 * PI * j as f64 / nodes as f64);
        let v = f(x)?;
        match acc.as_mut() {
            Some(a) => *a += &v,
            None => acc = Some(v),
        }
    }
    Ok(acc.expect("nodes > 0").scale(C64::new(1.0 / nodes as f64, 0.0)))
}

const CONTOUR_RADIUS: f64 = 1e-2;
const CONTOUR_NODES: usize = 16;

/// Residue of `R(x)` at `x = 0`.
pub fn residue_at_zero(p: &ModelParams, phase: f64) -> Result<CMatrix> {
    contour_average(C64::new(0.0, 0.0), CONTOUR_RADIUS, CONTOUR_NODES, phase, |x| Ok(r_two_site(x, p)?.scale(x)))
}

/// Residue of `R^ħ(x)` in `ħ` at `ħ = 0`.
pub fn residue_in_hbar(x: C64, p: &ModelParams, phase: f64) -> Result<CMatrix> {
    contour_average(C64::new(0.0, 0.0), CONTOUR_RADIUS, CONTOUR_NODES, phase, |h| Ok(belavin_r(x, h, p)?.scale(h)))
}

/// Constant term of `R^ħ(x)` in `ħ`, which should be `r(x)`.
pub fn hbar_constant_term(x: C64, p: &ModelParams, phase: f64) -> Result<CMatrix> {
    contour_average(C64::new(0.0, 0.0), CONTOUR_RADIUS, CONTOUR_NODES, phase, |h| belavin_r(x, h, p))
}

/// Observed order of `|R^ħ(x) - Id/ħ - r(x)|` from `ħ = 1e-2` and `5e-3` along the direction of `p.hbar`.
pub fn hbar_expansion_slope(x: C64, p: &ModelParams) -> Result<f64> {
    let dir = p.hbar / p.hbar.norm();
    let r = classical_r_two_site(x, p)?;
    let err = |h: C64| -> Result<f64> {
        let id = CMatrix::identity(p.m * p.m).scale(1.0 / h);
        Ok((&(&belavin_r(x, h, p)? - &id) - &r).norm_max())
    };
    let e1 = err(1e-2 * dir)?;
    let e2 = err(5e-3 * dir)?;
    Ok((e1 / e2).log2())
}

/// Properties of the two-site R-matrix, each checked at sampled points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Property {
    Qybe,
    Aybe,
    Unitarity,
    NormalizedUnitarity,
    Fourier,
    Skew,
    ZmSymmetry,
    PeriodOne,
    PeriodTau,
    LargePeriods,
    ResidueZ,
    ResidueHbar,
    ClassicalYbe,
    HbarExpansion,
    OmegaShift,
}

impl Property {
    pub const ALL: [Property; 15] = [
        Property::Qybe,
        Property::Aybe,
        Property::Unitarity,
        Property::NormalizedUnitarity,
        Property::Fourier,
        Property::Skew,
        Property::ZmSymmetry,
        Property::PeriodOne,
        Property::PeriodTau,
        Property::LargePeriods,
        Property::ResidueZ,
        Property::ResidueHbar,
        Property::ClassicalYbe,
        Property::HbarExpansion,
        Property::OmegaShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Qybe => "qybe",
            Property::Aybe => "aybe",
            Property::Unitarity => "unitarity",
            Property::NormalizedUnitarity => "normalized_unitarity",
            Property::Fourier => "fourier_symmetry",
            Property::Skew => "skew_symmetry",
            Property::ZmSymmetry => "zm_symmetry",
            Property::PeriodOne => "quasi_period_1",
            Property::PeriodTau => "quasi_period_tau",
            Property::LargePeriods => "large_periods",
            Property::ResidueZ => "residue_z",
            Property::ResidueHbar => "residue_hbar",
            Property::ClassicalYbe => "classical_ybe",
            Property::HbarExpansion => "hbar_expansion",
            Property::OmegaShift => "omega_shift",
        }
    }

    /// The identity being checked, in words and symbols.
    pub fn formula(self) -> &'static str {
        match self {
            Property::Qybe => "quantum Yang-Baxter: R12(u) R13(u+v) R23(v) = R23(v) R13(u+v) R12(u)",
            Property::Aybe => "associative Yang-Baxter: R^x_12 R^y_23 = R^y_13 R^{x-y}_12 + R^{y-x}_23 R^x_13",
            Property::Unitarity => "unitarity: R12(z) R21(-z) = phi(hbar,z) phi(hbar,-z) Id",
            Property::NormalizedUnitarity => "normalized unitarity: Rbar12(z) Rbar21(-z) = Id",
            Property::Fourier => "Fourier symmetry: R^z_12(x) P12 = R^x_12(z)",
            Property::Skew => "skew-symmetry: R^hbar_12(z) = -R^{-hbar}_21(-z)",
            Property::ZmSymmetry => "Z_M symmetry: [Q x Q, R] = [Lambda x Lambda, R] = 0",
            Property::PeriodOne => "quasi-period 1: R(z+1) = (Q^-1 x 1) R(z) (Q x 1)",
            Property::PeriodTau => {
                "quasi-period tau: R(z+tau) = exp(-2 pi i hbar/M) (Lambda^-1 x 1) R(z) (Lambda x 1)"
            }
            Property::LargePeriods => "large torus: R(x+M) = R(x), R(x+M tau) = exp(-2 pi i hbar) R(x)",
            Property::ResidueZ => "residue in z: Res_{z=0} R^hbar_12(z) = P12",
            Property::ResidueHbar => "residue in hbar: Res_{hbar=0} R^hbar_12(z) = 1 x 1",
            Property::ClassicalYbe => "classical Yang-Baxter: [r12,r23] + [r12,r13] + [r13,r23] = 0",
            Property::HbarExpansion => "classical limit: R^hbar_12(z) = 1 x 1/hbar + r12(z) + O(hbar)",
            Property::OmegaShift => {
                "lattice shift: R(z - m1 - m2 tau) = exp(2 pi i m2 hbar/M) (T_m x 1) R(z) (T_m^-1 x 1)"
            }
        }
    }
}

fn p12(p: &ModelParams) -> CMatrix {
    permutation_two_site(p.m)
}

/// `P X P`: the same operator with legs exchanged.
fn swap_legs(x: &CMatrix, p: &ModelParams) -> CMatrix {
    let pm = p12(p);
    pm.matmul(x).matmul(&pm)
}

fn one_site_left(a: &CMatrix, p: &ModelParams) -> CMatrix {
    a.kron(&CMatrix::identity(p.m))
}

fn diff(lhs: &CMatrix, rhs: &CMatrix, terms: &[f64]) -> Residual {
    let scale = terms.iter().copied().fold(lhs.norm_max().max(rhs.norm_max()), f64::max);
    Residual::new(lhs.max_abs_diff(rhs), scale)
}

/// Three-leg embedding of a two-site operator.
fn on3(op: &CMatrix, i: usize, j: usize, p: &ModelParams) -> Result<CMatrix> {
    embed_two_site(op, i, j, LegSpace::new(p.m, 3)?)
}

/// AYBE at explicit slots `x, y` and points `z₁, z₂, z₃`.
pub fn aybe_residual_at(x: C64, y: C64, z: [C64; 3], p: &ModelParams) -> Result<Residual> {
    let (z12, z23, z13) = (z[0] - z[1], z[1] - z[2], z[0] - z[2]);
    let a = on3(&belavin_r(z12, x, p)?, 1, 2, p)?.matmul(&on3(&belavin_r(z23, y, p)?, 2, 3, p)?);
    let b = on3(&belavin_r(z13, y, p)?, 1, 3, p)?.matmul(&on3(&belavin_r(z12, x - y, p)?, 1, 2, p)?);
    let c = on3(&belavin_r(z23, y - x, p)?, 2, 3, p)?.matmul(&on3(&belavin_r(z13, x, p)?, 1, 3, p)?);
    Ok(diff(&a, &(&b + &c), &[b.norm_max(), c.norm_max()]))
}

fn check_property(prop: Property, p: &ModelParams, rng: &mut ChaCha8Rng) -> Result<Residual> {
    let e = &p.elliptic;
    let mm = p.m * p.m;
    match prop {
        Property::Qybe => {
            let (u, v) = (p.cell_point(rng), small_point(rng, 0.6));
            for w in [u, v, u + v] {
                p.off_lattice(w)?;
            }
            let r12 = on3(&r_two_site(u, p)?, 1, 2, p)?;
            let r13 = on3(&r_two_site(u + v, p)?, 1, 3, p)?;
            let r23 = on3(&r_two_site(v, p)?, 2, 3, p)?;
            let lhs = r12.matmul(&r13).matmul(&r23);
            let rhs = r23.matmul(&r13).matmul(&r12);
            Ok(diff(&lhs, &rhs, &[]))
        }
        Property::Aybe => {
            let (x, y) = (p.cell_point(rng), p.cell_point(rng));
            let z = [p.cell_point(rng), p.cell_point(rng), p.cell_point(rng)];
            for w in [x, y, x - y, z[0] - z[1], z[1] - z[2], z[0] - z[2]] {
                p.off_lattice(w)?;
            }
            aybe_residual_at(x, y, z, p)
        }
        Property::Unitarity => {
            let x = p.cell_point(rng) - p.cell_point(rng);
            p.off_lattice(x)?;
            let lhs = r_two_site(x, p)?.matmul(&swap_legs(&r_two_site(-x, p)?, p));
            let s = e.kronecker_phi(p.hbar, x)? * e.kronecker_phi(p.hbar, -x)?;
            Ok(diff(&lhs, &CMatrix::identity(mm).scale(s), &[]))
        }
        Property::NormalizedUnitarity => {
            let x = p.cell_point(rng) - p.cell_point(rng);
            p.off_lattice(x)?;
            let lhs = rbar_two_site(x, p)?.matmul(&swap_legs(&rbar_two_site(-x, p)?, p));
            Ok(diff(&lhs, &CMatrix::identity(mm), &[]))
        }
        Property::Fourier => {
            let (x, z) = (p.cell_point(rng), p.cell_point(rng));
            p.off_lattice(x - z)?;
            let lhs = belavin_r(x, z, p)?.matmul(&p12(p));
            Ok(diff(&lhs, &belavin_r(z, x, p)?, &[]))
        }
        Property::Skew => {
            let z = p.cell_point(rng) - p.cell_point(rng);
            p.off_lattice(z)?;
            let rhs = swap_legs(&belavin_r(-z, -p.hbar, p)?, p).scale(C64::new(-1.0, 0.0));
            Ok(diff(&r_two_site(z, p)?, &rhs, &[]))
        }
        Property::ZmSymmetry => {
            let z = p.cell_point(rng);
            let r = r_two_site(z, p)?;
            let qq = clock_q(p.m).kron(&clock_q(p.m));
            let ll = shift_lambda(p.m).kron(&shift_lambda(p.m));
            let a = diff(&qq.matmul(&r), &r.matmul(&qq), &[]);
            let b = diff(&ll.matmul(&r), &r.matmul(&ll), &[]);
            Ok(a.worst(b))
        }
        Property::PeriodOne => {
            let z = p.cell_point(rng);
            let q = one_site_left(&clock_q(p.m), p);
            let qinv = q.adjoint();
            let rhs = qinv.matmul(&r_two_site(z, p)?).matmul(&q);
            Ok(diff(&r_two_site(z + 1.0, p)?, &rhs, &[]))
        }
        Property::PeriodTau => {
            let z = p.cell_point(rng);
            let l = one_site_left(&shift_lambda(p.m), p);
            let f = (-2.0 * I * PI * p.hbar / p.m as f64).exp();
            let rhs = l.adjoint().matmul(&r_two_site(z, p)?).matmul(&l).scale(f);
            Ok(diff(&r_two_site(z + p.tau, p)?, &rhs, &[]))
        }
        Property::LargePeriods => {
            let z = p.cell_point(rng);
            let r = r_two_site(z, p)?;
            let mf = p.m as f64;
            let a = diff(&r_two_site(z + mf, p)?, &r, &[]);
            let f = (-2.0 * I * PI * p.hbar).exp();
            let b = diff(&r_two_site(z + mf * p.tau, p)?, &r.scale(f), &[]);
            Ok(a.worst(b))
        }
        Property::ResidueZ => {
            let res = residue_at_zero(p, 2.0 * PI * rng.gen::<f64>())?;
            Ok(diff(&res, &p12(p), &[]))
        }
        Property::ResidueHbar => {
            let x = p.cell_point(rng);
            let res = residue_in_hbar(x, p, 2.0 * PI * rng.gen::<f64>())?;
            Ok(diff(&res, &CMatrix::identity(mm), &[]))
        }
        Property::ClassicalYbe => {
            let z = [p.cell_point(rng), p.cell_point(rng), p.cell_point(rng)];
            for w in [z[0] - z[1], z[1] - z[2], z[0] - z[2]] {
                p.off_lattice(w)?;
            }
            let r12 = on3(&classical_r_two_site(z[0] - z[1], p)?, 1, 2, p)?;
            let r13 = on3(&classical_r_two_site(z[0] - z[2], p)?, 1, 3, p)?;
            let r23 = on3(&classical_r_two_site(z[1] - z[2], p)?, 2, 3, p)?;
            let mut total = r12.commutator(&r23);
            total += &r12.commutator(&r13);
            total += &r13.commutator(&r23);
            let scale = [(&r12, &r23), (&r12, &r13), (&r13, &r23)]
                .iter()
                .map(|(a, b)| a.matmul(b).norm_max())
                .fold(0.0, f64::max);
            Ok(Residual::new(total.norm_max(), scale))
        }
        Property::HbarExpansion => {
            let x = p.cell_point(rng);
            let c = hbar_constant_term(x, p, 2.0 * PI * rng.gen::<f64>())?;
            Ok(diff(&c, &classical_r_two_site(x, p)?, &[1.0]))
        }
        Property::OmegaShift => {
            let z = p.cell_point(rng);
            let r = r_two_site(z, p)?;
            let mut worst = Residual::default();
            for m1 in 0..p.m as i64 {
                for m2 in 0..p.m as i64 {
                    let t = one_site_left(&basis_t((m1, m2), p.m), p);
                    let f = (2.0 * I * PI * m2 as f64 * p.hbar / p.m as f64).exp();
                    let rhs = t.matmul(&r).matmul(&t.adjoint()).scale(f);
                    let lhs = r_two_site(z - p.big_omega(m1, m2), p)?;
                    worst = worst.worst(diff(&lhs, &rhs, &[]));
                }
            }
            Ok(worst)
        }
    }
}

/// Worst residual of `prop` over `p.samples()` seeded draws.
pub fn property_residual(prop: Property, p: &ModelParams) -> Result<Residual> {
    sampled_max(p.seed, stream_id(prop.name()), p.samples, |rng| check_property(prop, p, rng))
}

/// Forms of the higher addition formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdditionCase {
    /// `∏→ R^{y_i}_{a,i}(x_i) = Σ_m ∏→_{j>m} R^{y_j}_{m,j}(x_j-x_m) R^Y_{a,m}(x_m) ∏→_{j<m} R^{y_j}_{m,j}(x_j-x_m)`
    /// on `N+1` legs with the auxiliary leg last.
    General,
    /// The same with `a ∈ {1..N}` skipped, `y_i = ħ` and `x_i = z_a - z_i - η`.
    Row,
    /// The reversed-order companion `∏← R^-_{i,a}` expanded over `R^{Y,-}_{m,a}`.
    Column,
}

/// Left-to-right product of two-site factors on `space`.
pub fn chain(space: LegSpace, factors: &[(usize, usize, CMatrix)]) -> Result<CMatrix> {
    let mut acc = CMatrix::identity(space.dim());
    for (i, j, op) in factors {
        acc = apply_two_site_right(&acc, op, *i, *j, space)?;
    }
    Ok(acc)
}

/// General addition formula at explicit `x`, `y`; returns the residual.
pub fn addition_residual_at(xs: &[C64], ys: &[C64], p: &ModelParams) -> Result<Residual> {
    let n = xs.len();
    let a = n + 1;
    let space = LegSpace::new(p.m, n + 1)?;
    let big_y: C64 = ys.iter().sum();
    let lhs_f: Vec<_> = (0..n).map(|i| Ok((a, i + 1, belavin_r(xs[i], ys[i], p)?))).collect::<Result<_>>()?;
    let lhs = chain(space, &lhs_f)?;
    let mut rhs = CMatrix::zeros(space.dim());
    let mut scale = lhs.norm_max();
    for m in 0..n {
        let mut f = Vec::new();
        for j in m + 1..n {
            f.push((m + 1, j + 1, belavin_r(xs[j] - xs[m], ys[j], p)?));
        }
        f.push((a, m + 1, belavin_r(xs[m], big_y, p)?));
        for j in 0..m {
            f.push((m + 1, j + 1, belavin_r(xs[j] - xs[m], ys[j], p)?));
        }
        let t = chain(space, &f)?;
        scale = scale.max(t.norm_max());
        rhs += &t;
    }
    Ok(Residual::new(lhs.max_abs_diff(&rhs), scale))
}

/// Special cases at explicit points `z` and distinguished leg `a` (1-based).
pub fn addition_special_residual_at(case: AdditionCase, z: &[C64], a: usize, p: &ModelParams) -> Result<Residual> {
    let n = z.len();
    let space = LegSpace::new(p.m, n)?;
    let h = p.hbar;
    let big_y = h * (n - 1) as f64;
    let r = |i: usize, j: usize| -> Result<(usize, usize, CMatrix)> { Ok((i, j, belavin_r(z[i - 1] - z[j - 1], h, p)?)) };
    let rm = |i: usize, j: usize, y: C64| -> Result<(usize, usize, CMatrix)> {
        Ok((i, j, belavin_r(z[i - 1] - z[j - 1] - p.eta, y, p)?))
    };
    let others: Vec<usize> = (1..=n).filter(|&i| i != a).collect();
    let (lhs_f, terms): (Vec<_>, Vec<Vec<_>>) = match case {
        AdditionCase::General => return Err(Error::InvalidParameter("use addition_residual_at".into())),
        AdditionCase::Row => {
            let lhs = others.iter().map(|&i| rm(a, i, h)).collect::<Result<Vec<_>>>()?;
            let mut terms = Vec::new();
            for &m in &others {
                let mut f = Vec::new();
                for j in (m + 1..=n).filter(|&j| j != a) {
                    f.push(r(m, j)?);
                }
                f.push(rm(a, m, big_y)?);
                for j in (1..m).filter(|&j| j != a) {
                    f.push(r(m, j)?);
                }
                terms.push(f);
            }
            (lhs, terms)
        }
        AdditionCase::Column => {
            let lhs = others.iter().rev().map(|&i| rm(i, a, h)).collect::<Result<Vec<_>>>()?;
            let mut terms = Vec::new();
            for &m in &others {
                let mut f = Vec::new();
                for i in (1..m).rev().filter(|&i| i != a) {
                    f.push(r(i, m)?);
                }
                f.push(rm(m, a, big_y)?);
                for i in (m + 1..=n).rev().filter(|&i| i != a) {
                    f.push(r(i, m)?);
                }
                terms.push(f);
            }
            (lhs, terms)
        }
    };
    let lhs = chain(space, &lhs_f)?;
    let mut scale = lhs.norm_max();
    let mut rhs = CMatrix::zeros(space.dim());
    for f in &terms {
        let t = chain(space, f)?;
        scale = scale.max(t.norm_max());
        rhs += &t;
    }
    Ok(Residual::new(lhs.max_abs_diff(&rhs), scale))
}

/// Worst residual of the addition formula with `nlegs` factors on the left.
pub fn addition_formula_residual(nlegs: usize, case: AdditionCase, p: &ModelParams) -> Result<Residual> {
    if nlegs < 2 {
        return Err(Error::InvalidParameter("addition formula needs at least two factors".into()));
    }
    let stream = stream_id("addition") ^ ((nlegs as u64) << 8) ^ case as u64;
    sampled_max(p.seed, stream, p.samples, |rng| match case {
        AdditionCase::General => {
            let xs: Vec<C64> = (0..nlegs).map(|_| p.cell_point(rng)).collect();
            let ys: Vec<C64> = (0..nlegs).map(|_| small_point(rng, 0.4)).collect();
            for i in 0..nlegs {
                p.off_lattice(xs[i])?;
                p.off_lattice(ys[i])?;
                for j in 0..i {
                    p.off_lattice(xs[i] - xs[j])?;
                }
            }
            p.off_lattice(ys.iter().sum())?;
            addition_residual_at(&xs, &ys, p)
        }
        _ => {
            let z: Vec<C64> = (0..nlegs).map(|_| p.cell_point(rng)).collect();
            let a = rng.gen_range(1..=nlegs);
            for i in 0..nlegs {
                for j in 0..nlegs {
                    if i != j {
                        p.off_lattice(z[i] - z[j])?;
                        p.off_lattice(z[i] - z[j] - p.eta)?;
                    }
                }
            }
            p.off_lattice(p.hbar * (nlegs - 1) as f64)?;
            addition_special_residual_at(case, &z, a, p)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_hbar_on_lattice() {
        let r = ModelParams::new(DEFAULT_TAU, C64::new(1.0, 0.0), DEFAULT_ETA, 2, 3);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        let r = ModelParams::with_defaults(2, 1);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn normalizer_zero_is_reported() {
        let p = ModelParams::with_defaults(2, 3).unwrap();
        assert!(matches!(rbar_two_site(-p.hbar(), &p), Err(Error::NormalizerZero(_))));
    }

    #[test]
    fn contour_average_recovers_laurent_constant() {
        let f = |x: C64| Ok(CMatrix::identity(1).scale(1.0 / x + 2.0 + 3.0 * x));
        let c = contour_average(C64::new(0.0, 0.0), 0.1, 8, 0.3, f).unwrap();
        assert!((c[(0, 0)] - 2.0).norm() < 1e-14);
    }
}
