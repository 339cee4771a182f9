//! Odd Jacobi theta function and the elliptic functions built from it.
//!
//! All evaluations go through a single truncated series. Arguments are first
//! reduced into the fundamental cell `{s + tτ : 0 ≤ s, t < 1}` and the exact
//! quasi-periodicity factors are reapplied afterwards, so the series is never
//! summed far from the origin.

use std::f64::consts::PI;

use crate::{Error, Result, C64};

const I: C64 = C64::new(0.0, 1.0);

/// Relative threshold of the pole guard: `|ϑ(w)| < GUARD · |ϑ'(0)|` is a pole.
pub const DEFAULT_POLE_GUARD: f64 = 1e-10;

/// Below this imaginary part the series converges too slowly for double precision.
pub const MIN_IM_TAU: f64 = 0.05;

const MAX_CUTOFF: usize = 512;

/// Moduli of the elliptic curve together with the series configuration.
#[derive(Clone, Debug)]
pub struct EllipticParams {
    tau: C64,
    series_cutoff: usize,
    reduce_domain: bool,
    guard: f64,
    dtheta0: C64,
    d3theta0: C64,
}

/// Theta series at a reduced point `w`, with `ϑ(z) = sign · exp(log_factor) · ϑ(w)`.
struct Reduced {
    vals: [C64; 3],
    sign: f64,
    log_factor: C64,
    n_tau: i64,
}

impl EllipticParams {
    /// Moduli with the default cutoff and argument reduction switched on.
    pub fn new(tau: C64) -> Result<Self> {
        Self::with_options(tau, None, true)
    }

    /// Full constructor. `cutoff = None` picks the smallest `K` with
    /// `exp(-π Im τ (K+1/2)²) < 1e-18`.
    pub fn with_options(tau: C64, cutoff: Option<usize>, reduce_domain: bool) -> Result<Self> {
        if !(tau.im > 0.0) || !tau.re.is_finite() {
            return Err(Error::InvalidModuli(format!("Im tau must be positive, got {tau}")));
        }
        if tau.im < MIN_IM_TAU {
            return Err(Error::InvalidModuli(format!(
                "Im tau = {} is below {MIN_IM_TAU}; the theta series is too slow",
                tau.im
            )));
        }
        let series_cutoff = match cutoff {
            Some(0) => return Err(Error::InvalidModuli("series cutoff must be positive".into())),
            Some(k) => k,
            None => default_cutoff(tau.im),
        };
        let mut p = EllipticParams {
            tau,
            series_cutoff,
            reduce_domain,
            guard: DEFAULT_POLE_GUARD,
            dtheta0: C64::new(0.0, 0.0),
            d3theta0: C64::new(0.0, 0.0),
        };
        let s = p.series(C64::new(0.0, 0.0), 3);
        p.dtheta0 = s[1];
        p.d3theta0 = s[3];
        Ok(p)
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }

    pub fn series_cutoff(&self) -> usize {
        self.series_cutoff
    }

    pub fn reduce_domain(&self) -> bool {
        self.reduce_domain
    }

    /// `(ϑ'(0), ϑ'''(0))` by term-wise differentiation of the series.
    pub fn theta_derivatives_at_zero(&self) -> (C64, C64) {
        (self.dtheta0, self.d3theta0)
    }

    /// `ω_α = (α₁ + α₂ τ) / M`.
    pub fn omega(&self, alpha: (i64, i64), m: usize) -> C64 {
        (alpha.0 as f64 + alpha.1 as f64 * self.tau) / m as f64
    }

    /// Truncated series and its first `order` derivatives at `w`, summed over
    /// half-integers `k + 1/2` in a window wide enough for any `w` in the cell.
    fn series(&self, w: C64, order: usize) -> [C64; 4] {
        let k = self.series_cutoff as i64;
        let mut out = [C64::new(0.0, 0.0); 4];
        for j in (-k - 2)..=(k + 1) {
            let h = j as f64 + 0.5;
            let e = (I * PI * self.tau * h * h + 2.0 * I * PI * (w + 0.5) * h).exp();
            let d = 2.0 * I * PI * h;
            let mut t = e;
            for slot in out.iter_mut().take(order + 1) {
                *slot -= t;
                t *= d;
            }
        }
        out
    }

    fn reduce(&self, z: C64) -> Reduced {
        if !self.reduce_domain {
            let s = self.series(z, 2);
            return Reduced { vals: [s[0], s[1], s[2]], sign: 1.0, log_factor: C64::new(0.0, 0.0), n_tau: 0 };
        }
        let n = (z.im / self.tau.im).floor();
        let w1 = z - n * self.tau;
        let m = w1.re.floor();
        let w = w1 - m;
        let s = self.series(w, 2);
        let parity = (n as i64 + m as i64).rem_euclid(2);
        Reduced {
            vals: [s[0], s[1], s[2]],
            sign: if parity == 0 { 1.0 } else { -1.0 },
            log_factor: -I * PI * self.tau * n * n - 2.0 * I * PI * n * w,
            n_tau: n as i64,
        }
    }

    fn guarded(&self, z: C64, context: &'static str) -> Result<Reduced> {
        let r = self.reduce(z);
        if r.vals[0].norm() < self.guard * self.dtheta0.norm() {
            return Err(Error::PoleProximity { context, arg: z });
        }
        Ok(r)
    }

    /// `ϑ(z) = -Σ_k exp(πiτ(k+1/2)² + 2πi(z+1/2)(k+1/2))`.
    pub fn theta(&self, z: C64) -> C64 {
        let r = self.reduce(z);
        r.sign * r.log_factor.exp() * r.vals[0]
    }

    /// True when `z` is within the pole guard of the lattice `Z + Zτ`.
    pub fn near_lattice(&self, z: C64) -> bool {
        self.reduce(z).vals[0].norm() < self.guard * self.dtheta0.norm()
    }

    /// Euclidean distance from `z` to the nearest lattice point.
    pub fn lattice_distance(&self, z: C64) -> f64 {
        let n = (z.im / self.tau.im).round();
        let w = z - n * self.tau;
        let m = w.re.round();
        let w = w - m;
        let mut best = f64::INFINITY;
        for a in -2..=2 {
            for b in -2..=2 {
                best = best.min((w - (a as f64) - (b as f64) * self.tau).norm());
            }
        }
        best
    }

    /// Kronecker function `φ(z, u) = ϑ'(0) ϑ(z+u) / (ϑ(z) ϑ(u))`.
    pub fn kronecker_phi(&self, z: C64, u: C64) -> Result<C64> {
        let rz = self.guarded(z, "kronecker_phi")?;
        let ru = self.guarded(u, "kronecker_phi")?;
        let rs = self.reduce(z + u);
        let sign = rs.sign * rz.sign * ru.sign;
        let f = (rs.log_factor - rz.log_factor - ru.log_factor).exp();
        Ok(sign * f * self.dtheta0 * rs.vals[0] / (rz.vals[0] * ru.vals[0]))
    }

    /// `φ_α(z, ω_α + u) = exp(2πi α₂ z / M) φ(z, ω_α + u)`.
    pub fn phi_alpha(&self, z: C64, alpha: (i64, i64), u: C64, m: usize) -> Result<C64> {
        let w = self.omega(alpha, m) + u;
        let twist = (2.0 * I * PI * alpha.1 as f64 * z / m as f64).exp();
        Ok(twist * self.kronecker_phi(z, w)?)
    }

    /// `E₁(z) = ϑ'(z)/ϑ(z)`.
    pub fn eisenstein_e1(&self, z: C64) -> Result<C64> {
        let r = self.guarded(z, "eisenstein_e1")?;
        Ok(r.vals[1] / r.vals[0] - 2.0 * I * PI * r.n_tau as f64)
    }

    /// `E₂(z) = -E₁'(z)`, invariant under both periods.
    pub fn eisenstein_e2(&self, z: C64) -> Result<C64> {
        let r = self.guarded(z, "eisenstein_e2")?;
        let l = r.vals[1] / r.vals[0];
        Ok(l * l - r.vals[2] / r.vals[0])
    }

    /// `℘(z) = E₂(z) + ϑ'''(0) / (3 ϑ'(0))`.
    pub fn weierstrass_p(&self, z: C64) -> Result<C64> {
        Ok(self.eisenstein_e2(z)? + self.d3theta0 / (3.0 * self.dtheta0))
    }

    /// `∂_z φ(z, u) = φ(z, u) (E₁(z+u) - E₁(z))`.
    pub fn dphi_dz(&self, z: C64, u: C64) -> Result<C64> {
        let phi = self.kronecker_phi(z, u)?;
        let e_sum = self.eisenstein_e1(z + u)?;
        Ok(phi * (e_sum - self.eisenstein_e1(z)?))
    }
}

fn default_cutoff(im_tau: f64) -> usize {
    let mut k = 1usize;
    while k < MAX_CUTOFF && (-PI * im_tau * (k as f64 + 0.5).powi(2)).exp() >= 1e-18 {
        k += 1;
    }
    k
}

/// Trigonometric degeneration `π cot(πz) + π cot(πu)`.
pub fn phi_trig(z: C64, u: C64) -> Result<C64> {
    let cot = |x: C64| -> Result<C64> {
        let s = (PI * x).sin();
        if s.norm() < DEFAULT_POLE_GUARD {
            return Err(Error::PoleProximity { context: "phi_trig", arg: x });
        }
        Ok(PI * (PI * x).cos() / s)
    };
    Ok(cot(z)? + cot(u)?)
}

/// Rational degeneration `1/z + 1/u`.
pub fn phi_rat(z: C64, u: C64) -> Result<C64> {
    for x in [z, u] {
        if x.norm() < DEFAULT_POLE_GUARD {
            return Err(Error::PoleProximity { context: "phi_rat", arg: x });
        }
    }
    Ok(1.0 / z + 1.0 / u)
}

/// Scalar identities of the Kronecker function, each checked at sampled points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarIdentity {
    /// `φ(z₁,u₁)φ(z₂,u₂) = φ(z₁,u₁+u₂)φ(z₂-z₁,u₂) + φ(z₂,u₁+u₂)φ(z₁-z₂,u₁)`.
    Fay,
    /// `φ(z,u)φ(z,-u) = ℘(z) - ℘(u)`.
    WpDifference,
    /// `φ(z+1,u) = φ(z,u)`, `φ(z+τ,u) = e^{-2πiu} φ(z,u)`.
    QuasiPeriodicity,
    /// `φ(z,u) = φ(u,z)`.
    Symmetry,
}

impl ScalarIdentity {
    pub const ALL: [ScalarIdentity; 4] =
        [ScalarIdentity::Fay, ScalarIdentity::WpDifference, ScalarIdentity::QuasiPeriodicity, ScalarIdentity::Symmetry];

    pub fn name(self) -> &'static str {
        match self {
            ScalarIdentity::Fay => "fay",
            ScalarIdentity::WpDifference => "phi_product_wp",
            ScalarIdentity::QuasiPeriodicity => "phi_quasi_periodicity",
            ScalarIdentity::Symmetry => "phi_symmetry",
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            ScalarIdentity::Fay => {
                "Fay identity: phi(z1,u1) phi(z2,u2) = phi(z1,u1+u2) phi(z2-z1,u2) + phi(z2,u1+u2) phi(z1-z2,u1)"
            }
            ScalarIdentity::WpDifference => "phi(z,u) phi(z,-u) = wp(z) - wp(u)",
            ScalarIdentity::QuasiPeriodicity => "phi(z+1,u) = phi(z,u), phi(z+tau,u) = exp(-2 pi i u) phi(z,u)",
            ScalarIdentity::Symmetry => "phi(z,u) = phi(u,z)",
        }
    }
}

/// `(|lhs - rhs|, max |term|)`.
fn scalar_gap(lhs: C64, rhs: C64, terms: &[C64]) -> (f64, f64) {
    let scale = terms.iter().map(|t| t.norm()).fold(lhs.norm().max(rhs.norm()), f64::max);
    ((lhs - rhs).norm(), scale)
}

impl EllipticParams {
    /// Residual of a scalar identity at the points `z = [z₁, z₂]`, `u = [u₁, u₂]`.
    pub fn identity_gap(&self, id: ScalarIdentity, z: [C64; 2], u: [C64; 2]) -> Result<(f64, f64)> {
        let phi = |a: C64, b: C64| self.kronecker_phi(a, b);
        Ok(match id {
            ScalarIdentity::Fay => {
                let l = phi(z[0], u[0])? * phi(z[1], u[1])?;
                let t1 = phi(z[0], u[0] + u[1])? * phi(z[1] - z[0], u[1])?;
                let t2 = phi(z[1], u[0] + u[1])? * phi(z[0] - z[1], u[0])?;
                scalar_gap(l, t1 + t2, &[t1, t2])
            }
            ScalarIdentity::WpDifference => {
                let l = phi(z[0], u[0])? * phi(z[0], -u[0])?;
                let (a, b) = (self.weierstrass_p(z[0])?, self.weierstrass_p(u[0])?);
                scalar_gap(l, a - b, &[a, b])
            }
            ScalarIdentity::QuasiPeriodicity => {
                let base = phi(z[0], u[0])?;
                let one = phi(z[0] + 1.0, u[0])?;
                let tau = phi(z[0] + self.tau, u[0])?;
                let expected = (-2.0 * I * PI * u[0]).exp() * base;
                let (d1, s1) = scalar_gap(one, base, &[]);
                let (d2, s2) = scalar_gap(tau, expected, &[]);
                (d1.max(d2), s1.max(s2))
            }
            ScalarIdentity::Symmetry => scalar_gap(phi(z[0], u[0])?, phi(u[0], z[0])?, &[]),
        })
    }

    /// `∏ φ(x_i, y_i) = Σ_i φ(x_i, Σ y) ∏_{j≠i} φ(x_j - x_i, y_j)`.
    pub fn addition_gap(&self, xs: &[C64], ys: &[C64]) -> Result<(f64, f64)> {
        if xs.len() != ys.len() {
            return Err(Error::DimMismatch { expected: xs.len(), got: ys.len() });
        }
        let total: C64 = ys.iter().sum();
        let mut lhs = C64::new(1.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            lhs *= self.kronecker_phi(*x, *y)?;
        }
        let mut terms = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let mut t = self.kronecker_phi(xs[i], total)?;
            for j in (0..xs.len()).filter(|&j| j != i) {
                t *= self.kronecker_phi(xs[j] - xs[i], ys[j])?;
            }
            terms.push(t);
        }
        Ok(scalar_gap(lhs, terms.iter().sum(), &terms))
    }
}

/// Worst relative residual of `id` over `samples` seeded draws from the cell.
pub fn scalar_identity_residual(p: &EllipticParams, id: ScalarIdentity, seed: u64, samples: usize, delta: f64) -> Result<crate::Residual> {
    use crate::sampling::{cell_point, require_off_lattice, sampled_max, stream_id};
    sampled_max(seed, stream_id(id.name()), samples, |rng| {
        let z = [cell_point(rng, p.tau), cell_point(rng, p.tau)];
        let u = [cell_point(rng, p.tau) - 0.5 * (1.0 + p.tau), cell_point(rng, p.tau) - 0.5 * (1.0 + p.tau)];
        for x in [z[0], z[1], u[0], u[1], z[0] - z[1], u[0] + u[1], z[0] + u[0], z[0] - u[0]] {
            require_off_lattice(p, x, delta)?;
        }
        let (abs, scale) = p.identity_gap(id, z, u)?;
        Ok(crate::Residual::new(abs, scale))
    })
}

/// Worst relative residual of the `n`-term addition formula over seeded draws.
pub fn addition_residual(p: &EllipticParams, n: usize, seed: u64, samples: usize, delta: f64) -> Result<crate::Residual> {
    use crate::sampling::{cell_point, require_off_lattice, sampled_max, small_point, stream_id};
    sampled_max(seed, stream_id("scalar_addition") ^ n as u64, samples, |rng| {
        let xs: Vec<C64> = (0..n).map(|_| cell_point(rng, p.tau)).collect();
        let ys: Vec<C64> = (0..n).map(|_| small_point(rng, 0.4)).collect();
        for i in 0..n {
            require_off_lattice(p, xs[i], delta)?;
            require_off_lattice(p, ys[i], delta)?;
            for j in 0..i {
                require_off_lattice(p, xs[i] - xs[j], delta)?;
            }
        }
        require_off_lattice(p, ys.iter().sum(), delta)?;
        let (abs, scale) = p.addition_gap(&xs, &ys)?;
        Ok(crate::Residual::new(abs, scale))
    })
}
