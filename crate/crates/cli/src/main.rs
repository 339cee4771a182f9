//! `rslab`: run the numerical verification suites and write JSON reports.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rslab_core::rmatrix::{r_two_site, ModelParams, DEFAULT_ETA, DEFAULT_HBAR, DEFAULT_TAU};
use rslab_core::C64;

use rslab_cli::report::{format_complex, VerificationReport};
use rslab_cli::suites::{self, Options, Suite};

#[derive(Parser, Debug)]
#[command(name = "rslab", version, about = "Numerical checks for the elliptic R-matrix and spin difference operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a verification suite.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[command(flatten)]
        model: ModelArgs,
        /// Restrict identity checks to one subset size.
        #[arg(long)]
        k: Option<usize>,
        /// Override every tolerance (the negative-control floor excepted).
        #[arg(long)]
        tol: Option<f64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        /// Also check that a non-elliptic R-matrix breaks commutativity.
        #[arg(long)]
        negative_control: bool,
    },
    /// Print raw objects.
    Dump {
        #[command(subcommand)]
        what: DumpTarget,
    },
}

#[derive(Subcommand, Debug)]
enum DumpTarget {
    /// Entries of the two-site R-matrix at spectral parameter `x`.
    Rmatrix {
        #[arg(long, value_parser = parse_complex)]
        x: C64,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long = "M", default_value_t = 2)]
    m: usize,
    #[arg(long = "N", default_value_t = 3)]
    n: usize,
    #[arg(long, value_parser = parse_complex, default_value = "1i")]
    tau: C64,
    #[arg(long, value_parser = parse_complex)]
    hbar: Option<C64>,
    #[arg(long, value_parser = parse_complex)]
    eta: Option<C64>,
    /// Falls back to RSLAB_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams, String> {
        let seed = match self.seed {
            Some(s) => s,
            None => match std::env::var("RSLAB_SEED") {
                Ok(v) => v.trim().parse().map_err(|_| format!("RSLAB_SEED is not an integer: {v:?}"))?,
                Err(_) => 0,
            },
        };
        if self.samples == 0 {
            return Err("--samples must be positive".into());
        }
        let tau = if self.tau == C64::new(0.0, 0.0) { DEFAULT_TAU } else { self.tau };
        ModelParams::new(tau, self.hbar.unwrap_or(DEFAULT_HBAR), self.eta.unwrap_or(DEFAULT_ETA), self.m, self.n)
            .map(|p| p.with_seed(seed).with_samples(self.samples))
            .map_err(|e| e.to_string())
    }
}

/// Parses `a`, `bi`, `a+bi`, `a-bi` (also with `j`).
fn parse_complex(s: &str) -> Result<C64, String> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || format!("not a complex number: {s:?} (expected a+bi)");
    if t.is_empty() {
        return Err(bad());
    }
    let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) else {
        return t.parse::<f64>().map(|re| C64::new(re, 0.0)).map_err(|_| bad());
    };
    // Split at the last sign that is not the leading one and not part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let imag = |x: &str| -> Result<f64, String> {
        match x {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => x.parse::<f64>().map_err(|_| bad()),
        }
    };
    match split {
        Some(i) => Ok(C64::new(body[..i].parse::<f64>().map_err(|_| bad())?, imag(&body[i..])?)),
        None => Ok(C64::new(0.0, imag(body)?)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Verify { suite, model, k, tol, report, jobs, negative_control } => {
            let params = match model.params() {
                Ok(p) => p,
                Err(e) => return usage(&e),
            };
            if matches!(tol, Some(t) if !(t > 0.0)) {
                return usage("--tol must be positive");
            }
            let opts = Options { k, tol, negative_control };
            let checks = match suites::build(suite, &params, &opts) {
                Ok(c) => c,
                Err(e) => return usage(&e.to_string()),
            };
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(j) = jobs {
                if j == 0 {
                    return usage("--jobs must be positive");
                }
                pool = pool.num_threads(j);
            }
            let pool = match pool.build() {
                Ok(p) => p,
                Err(e) => return usage(&e.to_string()),
            };
            let results = pool.install(|| suites::run(checks));
            let rep = VerificationReport {
                suite: suite.name().into(),
                params: (&params).into(),
                checks: results,
                seed: params.seed(),
                version: env!("CARGO_PKG_VERSION").into(),
            };
            let json = serde_json::to_string_pretty(&rep).expect("report serializes");
            let written = match &report {
                Some(path) => std::fs::write(path, json + "\n"),
                None => writeln!(std::io::stdout(), "{json}"),
            };
            if let Err(e) = written {
                eprintln!("rslab: cannot write report: {e}");
                return ExitCode::from(2);
            }
            if rep.all_pass() {
                ExitCode::SUCCESS
            } else {
                for c in rep.checks.iter().filter(|c| !c.pass) {
                    eprintln!("rslab: FAIL {} (residual {:?}, tolerance {:e})", c.name, c.max_residual, c.tolerance);
                }
                ExitCode::from(1)
            }
        }
        Command::Dump { what: DumpTarget::Rmatrix { x, model } } => {
            let params = match model.params() {
                Ok(p) => p,
                Err(e) => return usage(&e),
            };
            match r_two_site(x, &params) {
                Ok(r) => {
                    let d = r.dim();
                    let mut out = std::io::stdout().lock();
                    for i in 0..d {
                        let row: Vec<String> = (0..d).map(|j| format_complex(r[(i, j)])).collect();
                        let _ = writeln!(out, "{}", row.join("\t"));
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => usage(&e.to_string()),
            }
        }
    }
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("rslab: {msg}");
    ExitCode::from(2)
}

#[cfg(test)]
mod tests {
    use super::parse_complex;
    use rslab_core::C64;

    #[test]
    fn complex_literals() {
        assert_eq!(parse_complex("0.8i").unwrap(), C64::new(0.0, 0.8));
        assert_eq!(parse_complex("0.3+0.9i").unwrap(), C64::new(0.3, 0.9));
        assert_eq!(parse_complex("0.289-0.057i").unwrap(), C64::new(0.289, -0.057));
        assert_eq!(parse_complex("-i").unwrap(), C64::new(0.0, -1.0));
        assert_eq!(parse_complex("2").unwrap(), C64::new(2.0, 0.0));
        assert_eq!(parse_complex("1e-3+2E-2i").unwrap(), C64::new(1e-3, 2e-2));
        assert!(parse_complex("abc").is_err());
        assert!(parse_complex("1+2").is_err());
    }
}
