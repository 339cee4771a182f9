//! Seeded sampling of pole-free points and residual bookkeeping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Error, Result, C64};

/// Draws per sample before a check gives up; 100 means a 99% rejection rate.
pub const MAX_ATTEMPTS: usize = 100;

/// An absolute discrepancy together with the size of the terms behind it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Residual {
    pub abs: f64,
    pub scale: f64,
}

impl Residual {
    pub fn new(abs: f64, scale: f64) -> Self {
        Residual { abs, scale }
    }

    /// `abs / scale`, or `abs` when every term vanished.
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.abs / self.scale
        } else {
            self.abs
        }
    }

    /// The worse of two residuals by relative size.
    pub fn worst(self, other: Residual) -> Residual {
        if other.relative() > self.relative() || self.relative().is_nan() || (other.relative() == self.relative() && other.scale > self.scale) {
            other
        } else {
            self
        }
    }
}

/// Stable 64-bit tag for a named stream (FNV-1a).
pub fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for one draw of one sample of one stream.
pub fn sample_rng(seed: u64, stream: u64, sample: usize, attempt: usize) -> ChaCha8Rng {
    let s = mix(seed ^ mix(stream ^ mix((sample as u64) << 16 ^ attempt as u64)));
    ChaCha8Rng::seed_from_u64(s)
}

/// Uniform point of the fundamental cell shrunk by 0.9 about its centre.
pub fn cell_point<R: Rng>(rng: &mut R, tau: C64) -> C64 {
    let s = 0.05 + 0.9 * rng.gen::<f64>();
    let t = 0.05 + 0.9 * rng.gen::<f64>();
    s + t * tau
}

/// Small complex number with components uniform in `(-r, r)`.
pub fn small_point<R: Rng>(rng: &mut R, r: f64) -> C64 {
    C64::new(r * (2.0 * rng.gen::<f64>() - 1.0), r * (2.0 * rng.gen::<f64>() - 1.0))
}

/// Unit-norm complex vector with Gaussian-like components.
pub fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..dim).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / n).collect()
}

/// Runs `f` on `samples` seeded draws and keeps the worst residual.
///
/// A draw that hits a pole (`PoleProximity` or `NormalizerZero`) is redrawn;
/// other errors propagate.
pub fn sampled_max<F>(seed: u64, stream: u64, samples: usize, mut f: F) -> Result<Residual>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<Residual>,
{
    let mut worst = Residual::default();
    for s in 0..samples {
        worst = worst.worst(draw(seed, stream, s, &mut f)?);
    }
    Ok(worst)
}

/// One accepted draw of sample `s`.
pub fn draw<T, F>(seed: u64, stream: u64, s: usize, f: &mut F) -> Result<T>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<T>,
{
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = sample_rng(seed, stream, s, attempt);
        match f(&mut rng) {
            Ok(v) => return Ok(v),
            Err(Error::PoleProximity { .. }) | Err(Error::NormalizerZero(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SamplingExhausted { attempts: MAX_ATTEMPTS })
}

/// Rejects points closer than `delta` to the lattice.
pub fn require_off_lattice(p: &crate::elliptic::EllipticParams, z: C64, delta: f64) -> Result<()> {
    if p.lattice_distance(z) < delta {
        return Err(Error::PoleProximity { context: "sampling", arg: z });
    }
    Ok(())
}
