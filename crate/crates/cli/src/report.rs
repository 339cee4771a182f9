use serde::Serialize;

use rslab_core::rmatrix::ModelParams;
use rslab_core::{Residual, C64};

/// One named check and its outcome.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub paper_ref: String,
    /// Relative residual; `null` when the check could not be evaluated.
    pub max_residual: Option<f64>,
    pub scale: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub wall_time_ms: f64,
}

/// How a residual is judged against its tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expect {
    /// Pass when the residual is at most the tolerance.
    Small,
    /// Pass when the residual exceeds the tolerance (negative controls).
    Large,
}

impl CheckResult {
    pub fn from_outcome(
        name: String,
        paper_ref: String,
        outcome: &rslab_core::Result<Residual>,
        tolerance: f64,
        expect: Expect,
        wall_time_ms: f64,
    ) -> Self {
        let (max_residual, scale, pass) = match outcome {
            Ok(r) => {
                let rel = r.relative();
                let pass = match expect {
                    Expect::Small => rel <= tolerance,
                    Expect::Large => rel > tolerance,
                };
                (Some(rel), Some(r.scale), pass && rel.is_finite())
            }
            Err(_) => (None, None, false),
        };
        CheckResult { name, paper_ref, max_residual, scale, tolerance, pass, wall_time_ms }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamsEcho {
    pub tau: String,
    pub hbar: String,
    pub eta: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub pole_guard: f64,
    pub seed: u64,
    pub samples: usize,
}

pub fn format_complex(c: C64) -> String {
    format!("{}{:+}i", c.re, c.im)
}

impl From<&ModelParams> for ParamsEcho {
    fn from(p: &ModelParams) -> Self {
        ParamsEcho {
            tau: format_complex(p.tau()),
            hbar: format_complex(p.hbar()),
            eta: format_complex(p.eta()),
            m: p.m(),
            n: p.n(),
            pole_guard: p.pole_guard(),
            seed: p.seed(),
            samples: p.samples(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub suite: String,
    pub params: ParamsEcho,
    pub checks: Vec<CheckResult>,
    pub seed: u64,
    pub version: String,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
