use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rslab_core::elliptic::{addition_residual, scalar_identity_residual, ScalarIdentity};
use rslab_core::identities::{
    evaluate, eta_quasiperiodicity_residual, f_term_factors, f_term_factors_explicit, f_total_residual,
    lemma_exchange_at, omega_residue_residual, residue_factorization_residual, sample_points, scalar_identity_lhs,
    unitarity_product_at, IndexSubset, ScalarKernel, Sign,
};
use rslab_core::limits::{
    epsilon_expansion_coefficient, h2_cm_apply, h2_tops_apply, known_low_order, macdonald_comparison,
    TestFunction,
};
use rslab_core::operators::{
    build_scalar_d, build_spin_d, build_spin_d_with, commutator_residual, freeze_h1, lemma1_residual_at,
    RationalKernel,
};
use rslab_core::rmatrix::{addition_formula_residual, property_residual, AdditionCase, ModelParams, Property};
use rslab_core::sampling::{sampled_max, stream_id};
use rslab_core::tensor::{clock_q, shift_lambda, tensor_power};
use rslab_core::{Error, Residual, Result, C64};

use crate::report::{CheckResult, Expect};

/// Floor the rational-kernel commutator has to exceed.
pub const NEGATIVE_CONTROL_FLOOR: f64 = 1e-3;

type Job = Box<dyn Fn() -> Result<Residual> + Send + Sync>;

pub struct Check {
    pub name: String,
    pub paper_ref: String,
    pub tolerance: f64,
    pub expect: Expect,
    pub job: Job,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Elliptic,
    Rmatrix,
    Identities,
    Operators,
    Limits,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Elliptic => "elliptic",
            Suite::Rmatrix => "rmatrix",
            Suite::Identities => "identities",
            Suite::Operators => "operators",
            Suite::Limits => "limits",
            Suite::All => "all",
        }
    }
}

pub struct Options {
    pub k: Option<usize>,
    pub tol: Option<f64>,
    pub negative_control: bool,
}

pub fn check(
    suite: &str,
    name: impl Into<String>,
    paper_ref: impl Into<String>,
    tol: f64,
    job: impl Fn() -> Result<Residual> + Send + Sync + 'static,
) -> Check {
    Check {
        name: format!("{suite}.{}", name.into()),
        paper_ref: paper_ref.into(),
        tolerance: tol,
        expect: Expect::Small,
        job: Box::new(job),
    }
}

pub fn build(suite: Suite, p: &ModelParams, opts: &Options) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Elliptic {
        out.extend(elliptic(p)?);
    }
    if all || suite == Suite::Rmatrix {
        out.extend(rmatrix(p)?);
    }
    if all || suite == Suite::Identities {
        out.extend(identities(p, opts)?);
    }
    if all || suite == Suite::Operators {
        out.extend(operators(p, opts)?);
    }
    if all || suite == Suite::Limits {
        out.extend(limits(p)?);
    }
    if let Some(t) = opts.tol {
        for c in out.iter_mut().filter(|c| c.expect == Expect::Small) {
            c.tolerance = t;
        }
    }
    Ok(out)
}

/// Runs every check on the current rayon pool and returns results sorted by name.
pub fn run(checks: Vec<Check>) -> Vec<CheckResult> {
    let mut results: Vec<CheckResult> = checks
        .into_par_iter()
        .map(|c| {
            let start = Instant::now();
            let outcome = (c.job)();
            let ms = start.elapsed().as_secs_f64() * 1e3;
            CheckResult::from_outcome(c.name, c.paper_ref, &outcome, c.tolerance, c.expect, ms)
        })
        .collect();
    results.sort_by(|a, b| a.name.cmp(&b.name));
    results
}

fn elliptic(p: &ModelParams) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for id in ScalarIdentity::ALL {
        let e = p.elliptic().clone();
        let (seed, samples, delta) = (p.seed(), p.samples(), p.pole_guard());
        out.push(check("elliptic", id.name(), id.formula(), 1e-9, move || {
            scalar_identity_residual(&e, id, seed, samples, delta)
        }));
    }
    for n in 2..=5 {
        let e = p.elliptic().clone();
        let (seed, samples, delta) = (p.seed(), p.samples(), p.pole_guard());
        out.push(check(
            "elliptic",
            format!("addition_n{n}"),
            "N-term addition: prod phi(x_i,y_i) = sum_i phi(x_i, sum y) prod_{j!=i} phi(x_j-x_i, y_j)",
            1e-9,
            move || addition_residual(&e, n, seed, samples, delta),
        ));
    }
    Ok(out)
}

fn rmatrix(p: &ModelParams) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for prop in Property::ALL {
        let q = p.clone();
        out.push(check("rmatrix", prop.name(), prop.formula(), 1e-9, move || property_residual(prop, &q)));
    }
    for nlegs in 2..=p.n().clamp(2, 4) {
        let q = p.clone();
        out.push(check(
            "rmatrix",
            format!("addition_general_n{nlegs}"),
            "higher addition formula: prod R^{y_i}_{a,i}(x_i) = sum_m (...) R^Y_{a,m}(x_m) (...)",
            1e-9,
            move || addition_formula_residual(nlegs, AdditionCase::General, &q),
        ));
    }
    for (case, label) in [(AdditionCase::Row, "row"), (AdditionCase::Column, "column")] {
        let q = p.clone();
        let nlegs = p.n().max(3);
        out.push(check(
            "rmatrix",
            format!("addition_{label}_n{nlegs}"),
            "addition formula with y_i = hbar and x_i = z_a - z_i - eta",
            1e-9,
            move || addition_formula_residual(nlegs, case, &q),
        ));
    }
    Ok(out)
}

fn k_range(p: &ModelParams, opts: &Options) -> Result<Vec<usize>> {
    match opts.k {
        Some(k) if k == 0 || k > p.n() => Err(Error::InvalidParameter(format!("--k {k} outside 1..={}", p.n()))),
        Some(k) => Ok(vec![k]),
        None => Ok((1..=p.n()).collect()),
    }
}

/// Random disjoint subsets: each leg lands in one of `parts` sets or in none.
fn random_partition(rng: &mut ChaCha8Rng, n: usize, parts: usize) -> Vec<IndexSubset> {
    let mut sets = vec![Vec::new(); parts];
    for leg in 1..=n {
        let slot = rng.gen_range(0..=parts);
        if slot < parts {
            sets[slot].push(leg);
        }
    }
    sets.into_iter().map(|v| IndexSubset::new(v).expect("distinct legs")).collect()
}

fn identities(p: &ModelParams, opts: &Options) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let n = p.n();
    let scalar = ModelParams::new(p.tau(), p.hbar(), p.eta(), 1, n)?.with_seed(p.seed()).with_samples(p.samples());
    for k in k_range(p, opts)? {
        let q = p.clone();
        out.push(check(
            "identities",
            format!("f_total_k{k}"),
            "sum over |I|=k of (R_{Ic,I} R'_{I-,Ic} R_{I-,Ic} R'_{Ic,I} - R_{I,Ic} R'_{Ic-,I} R_{Ic-,I} R'_{I,Ic}) = 0",
            1e-9,
            move || f_total_residual(k, &q),
        ));
        let q = p.clone();
        out.push(check(
            "identities",
            format!("f_layouts_k{k}"),
            "leg-by-leg products of each term agree with the subset-product form",
            1e-11,
            move || {
                sampled_max(q.seed(), stream_id("f_layouts") ^ k as u64, q.samples(), |rng| {
                    let z = sample_points(rng, &q)?;
                    let full = IndexSubset::full(q.n());
                    let mut worst = Residual::default();
                    for set in IndexSubset::all_of_size(q.n(), k) {
                        for sign in [Sign::Plus, Sign::Minus] {
                            let a = evaluate(&f_term_factors(&set, &full, sign, &z, q.eta())?, false, &q)?;
                            let b = evaluate(&f_term_factors_explicit(&set, q.n(), sign, &z, q.eta()), false, &q)?;
                            worst = worst.worst(Residual::new(a.max_abs_diff(&b), a.norm_max()));
                        }
                    }
                    Ok(worst)
                })
            },
        ));
        let s = scalar.clone();
        out.push(check(
            "identities",
            format!("scalar_identity_k{k}"),
            "sum over |I|=k of (prod phi(z_j-z_i) phi(z_i-z_j-eta) - prod phi(z_i-z_j) phi(z_j-z_i-eta)) = 0",
            1e-10,
            move || {
                sampled_max(s.seed(), stream_id("scalar_identity") ^ k as u64, s.samples(), |rng| {
                    let z = sample_points(rng, &s)?;
                    let (v, scale) = scalar_identity_lhs(k, &z, ScalarKernel::Elliptic, &s)?;
                    Ok(Residual::new(v.norm(), scale))
                })
            },
        ));
        let q = p.clone();
        out.push(check(
            "identities",
            format!("eta_quasiperiodicity_k{k}"),
            "F(eta+M) = F(eta), F(eta+M tau) = exp(2 pi i k(N-k) hbar) F(eta), termwise",
            1e-9,
            move || eta_quasiperiodicity_residual(k, &q),
        ));
        if n >= 3 {
            for (a, b) in [(1, n), (n, 1)] {
                let q = p.clone();
                out.push(check(
                    "identities",
                    format!("residue_k{k}_a{a}_b{b}"),
                    "Res_{z_a=z_b+eta} F(k,N) = A(a,b) F(k-1,N-2) P_ab B(a,b)",
                    1e-9,
                    move || residue_factorization_residual(a, b, k, &q),
                ));
            }
            for m1 in 0..p.m() as i64 {
                for m2 in 0..p.m() as i64 {
                    if (m1, m2) == (0, 0) {
                        continue;
                    }
                    let q = p.clone();
                    out.push(check(
                        "identities",
                        format!("omega_residue_k{k}_m{m1}{m2}"),
                        "Res at z_a = z_b+eta-Omega equals T^(a) (Res at z_b+eta) T^(a)^-1",
                        1e-9,
                        move || omega_residue_residual(1, n, k, (m1, m2), &q),
                    ));
                }
            }
        }
    }
    let q = p.clone();
    out.push(check(
        "identities",
        "lemma_exchange",
        "R_{C,A+B} R_{B,A} = R_{B+C,A} R_{C,B} and R'_{A,B} R'_{A+B,C} = R'_{B,C} R'_{A,B+C}",
        1e-9,
        move || {
            sampled_max(q.seed(), stream_id("cli_lemma_exchange"), q.samples(), |rng| {
                let parts = random_partition(rng, q.n(), 3);
                let z = sample_points(rng, &q)?;
                lemma_exchange_at(&parts[0], &parts[1], &parts[2], &q, &z)
            })
        },
    ));
    let q = p.clone();
    out.push(check(
        "identities",
        "unitarity_products",
        "R_{I,J} R'_{J,I} = Id prod phi phi, and the normalized products are mutually inverse",
        1e-9,
        move || {
            sampled_max(q.seed(), stream_id("cli_unitarity_products"), q.samples(), |rng| {
                let parts = random_partition(rng, q.n(), 2);
                let z = sample_points(rng, &q)?;
                unitarity_product_at(&parts[0], &parts[1], &q, &z)
            })
        },
    ));
    Ok(out)
}

fn operators(p: &ModelParams, opts: &Options) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let n = p.n();
    for k in 1..=n {
        for l in k + 1..=n {
            let q = p.clone();
            out.push(check(
                "operators",
                format!("commutator_k{k}_l{l}"),
                "[D_k, D_l] = 0 for the spin operators",
                1e-8,
                move || commutator_residual(&build_spin_d(k, Sign::Plus, &q)?, &build_spin_d(l, Sign::Plus, &q)?, &q),
            ));
        }
        for l in 1..=n {
            let q = p.clone();
            out.push(check(
                "operators",
                format!("commutator_k{k}_minus{l}"),
                "[D_k, D_-l] = 0 for the spin operators",
                1e-8,
                move || commutator_residual(&build_spin_d(k, Sign::Plus, &q)?, &build_spin_d(l, Sign::Minus, &q)?, &q),
            ));
        }
    }
    let scalar = ModelParams::new(p.tau(), p.hbar(), p.eta(), 1, n)?.with_seed(p.seed()).with_samples(p.samples());
    for k in 1..=n {
        for l in 1..=n {
            let s = scalar.clone();
            out.push(check(
                "operators",
                format!("scalar_commutator_k{k}_minus{l}"),
                "[D_k, D_-l] = 0 for the scalar Macdonald-Ruijsenaars operators",
                1e-8,
                move || commutator_residual(&build_scalar_d(k, Sign::Plus, &s)?, &build_scalar_d(l, Sign::Minus, &s)?, &s),
            ));
        }
    }
    let q = p.clone();
    out.push(check(
        "operators",
        "lemma_shift_products",
        "Rbar_{Ic,I} p_I Rbar'_{I,Ic} Rbar_{J,Jc} p_J^-1 Rbar'_{Jc,J} = Rbar_{BCD,A} Rbar_{B,CD} p_A (...) p_B^-1 Rbar'_{CD,B} Rbar'_{A,BCD}",
        1e-9,
        move || {
            sampled_max(q.seed(), stream_id("cli_lemma1"), q.samples(), |rng| {
                let legs: Vec<usize> = (1..=q.n()).collect();
                let pick = |rng: &mut ChaCha8Rng| {
                    let k = rng.gen_range(1..=q.n());
                    IndexSubset::new(legs.choose_multiple(rng, k).copied()).expect("distinct legs")
                };
                let (i, j) = (pick(rng), pick(rng));
                let z: Vec<C64> = (0..q.n()).map(|_| q.cell_point(rng)).collect();
                lemma1_residual_at(&i, &j, &q, &z)
            })
        },
    ));
    let q = p.clone();
    out.push(check(
        "operators",
        "frozen_h1_symmetry",
        "frozen first Hamiltonian at x_i = i/N commutes with Q^{xN} and Lambda^{xN}; vanishes at M = 1",
        1e-10,
        move || frozen_h1_check(&q),
    ));
    if opts.negative_control {
        let q = p.clone();
        out.push(Check {
            name: "operators.negative_control_rational".into(),
            paper_ref: "operators built from a non-elliptic Rbar = (x + hbar P)/(x + hbar) do not commute".into(),
            tolerance: NEGATIVE_CONTROL_FLOOR,
            expect: Expect::Large,
            job: Box::new(move || negative_control(&q)),
        });
    }
    Ok(out)
}

/// `[𝒟₁, 𝒟₂]` with the rational kernel and elliptic φ.
pub fn negative_control(p: &ModelParams) -> Result<Residual> {
    if p.m() < 2 {
        return Err(Error::InvalidParameter("the negative control needs M >= 2".into()));
    }
    let kernel = std::sync::Arc::new(RationalKernel { hbar: p.hbar(), m: p.m() });
    let a = build_spin_d_with(1, Sign::Plus, p, kernel.clone())?;
    let b = build_spin_d_with(2, Sign::Plus, p, kernel)?;
    commutator_residual(&a, &b, p)
}

/// Relative size of `[H₁, Q^{⊗N}]` and `[H₁, Λ^{⊗N}]`, or of `H₁` itself at `M = 1`.
pub fn frozen_h1_check(p: &ModelParams) -> Result<Residual> {
    let h = freeze_h1(p)?;
    if !h.is_finite() {
        return Err(Error::InvalidParameter("frozen Hamiltonian is not finite".into()));
    }
    if p.m() == 1 {
        return Ok(Residual::new(h.norm_max(), 1.0));
    }
    let q = tensor_power(&clock_q(p.m()), p.n());
    let l = tensor_power(&shift_lambda(p.m()), p.n());
    let c = h.commutator(&q).norm_max().max(h.commutator(&l).norm_max());
    Ok(Residual::new(c, h.norm_max()))
}

/// Halved from the library default: the order-1 remainder on the coarser grid sits near 1e-4.
pub const EXPANSION_GRID: [f64; 3] = [5e-3, 2.5e-3, 1.25e-3];

/// Minimum lattice distance between points fed to the ε-expansion; closer
/// pairs shrink the convergence radius below the default grid.
pub const EXPANSION_SEPARATION: f64 = 0.2;

fn separated_points(rng: &mut ChaCha8Rng, p: &ModelParams) -> Result<Vec<C64>> {
    let e = p.elliptic();
    for _ in 0..10_000 {
        let z: Vec<C64> = (0..p.n()).map(|_| p.cell_point(rng)).collect();
        let ok = (0..z.len()).all(|i| (0..i).all(|j| e.lattice_distance(z[i] - z[j]) >= EXPANSION_SEPARATION));
        if ok {
            return Ok(z);
        }
    }
    Err(Error::InvalidParameter(format!("no configuration with separation {EXPANSION_SEPARATION}")))
}

/// Worst relative gap between an extracted `ε`-coefficient and its prediction.
pub fn expansion_check(order: usize, p: &ModelParams, tol: f64, scalar_hamiltonian: bool) -> Result<Residual> {
    let stream = stream_id("expansion") ^ order as u64 ^ ((scalar_hamiltonian as u64) << 4);
    sampled_max(p.seed(), stream, p.samples(), |rng| {
        let z = separated_points(rng, p)?;
        let f = TestFunction::random(rng, p.n(), p.space().dim());
        let got = epsilon_expansion_coefficient(order, &f, &z, p, &EXPANSION_GRID, tol)?;
        let want = match order {
            0 | 1 => known_low_order(order, &f, &z, p),
            _ if scalar_hamiltonian => h2_cm_apply(&f, &z, p)?,
            _ => h2_tops_apply(&f, &z, p)?,
        };
        let abs = got.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = want.iter().map(|a| a.norm()).fold(0.0, f64::max);
        Ok(Residual::new(abs, scale))
    })
}

/// Scalar and matrix second-order Hamiltonians agree at `M = 1`.
pub fn cm_tops_check(p: &ModelParams) -> Result<Residual> {
    sampled_max(p.seed(), stream_id("cm_tops"), p.samples(), |rng| {
        let z: Vec<C64> = (0..p.n()).map(|_| p.cell_point(rng)).collect();
        let f = TestFunction::random(rng, p.n(), 1);
        let a = h2_cm_apply(&f, &z, p)?;
        let b = h2_tops_apply(&f, &z, p)?;
        Ok(Residual::new((a[0] - b[0]).norm(), a[0].norm().max(b[0].norm())))
    })
}

/// Scalar operators at large `Im τ` against the Macdonald coefficients.
pub fn macdonald_check(k: usize, p: &ModelParams) -> Result<Residual> {
    sampled_max(p.seed(), stream_id("macdonald") ^ k as u64, p.samples(), |rng| {
        let z: Vec<C64> =
            (0..p.n()).map(|_| C64::new(rng.gen::<f64>(), 0.6 * rng.gen::<f64>() - 0.3)).collect();
        for i in 0..z.len() {
            for j in 0..i {
                p.off_lattice(z[i] - z[j])?;
            }
        }
        Ok(Residual::new(macdonald_comparison(k, p, &z)?, 1.0))
    })
}

fn limits(p: &ModelParams) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let n = p.n();
    let scalar = ModelParams::new(p.tau(), p.hbar(), p.eta(), 1, n)?.with_seed(p.seed()).with_samples(p.samples());
    for order in 0..=2usize {
        let q = p.clone();
        let reference = match order {
            0 => "order eps^0 of the first operator is N Id",
            1 => "order eps^1 of the first operator is -Id sum eta d/dz_k",
            _ => "order eps^2 of the first operator is the interacting-tops Hamiltonian H2",
        };
        out.push(check("limits", format!("expansion_order{order}"), reference, 1e-4, move || {
            expansion_check(order, &q, 1e-4, false)
        }));
    }
    let s = scalar.clone();
    out.push(check(
        "limits",
        "expansion_order2_scalar",
        "order eps^2 of the scalar first operator is the Calogero-Moser Hamiltonian",
        1e-4,
        move || expansion_check(2, &s, 1e-4, true),
    ));
    let s = scalar.clone();
    out.push(check(
        "limits",
        "cm_equals_tops_m1",
        "the tops Hamiltonian reduces to the Calogero-Moser one at M = 1",
        1e-10,
        move || cm_tops_check(&s),
    ));
    let trig = ModelParams::new(C64::new(0.0, 40.0), p.hbar(), p.eta(), 1, n)?
        .with_seed(p.seed())
        .with_samples(p.samples());
    for k in 1..=n {
        let t = trig.clone();
        out.push(check(
            "limits",
            format!("macdonald_k{k}"),
            "trigonometric limit of D_k equals the Macdonald operator up to (pi / sin pi hbar)^{k(N-k)}",
            1e-8,
            move || macdonald_check(k, &t),
        ));
    }
    Ok(out)
}
