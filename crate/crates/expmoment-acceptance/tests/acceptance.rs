//! Acceptance checks, one PASS/FAIL line each.
//!
//! The binary exits with status 1 when any check fails. Values in the detail
//! column are informational; each verdict is decided by the threshold named
//! on its line.

use expmoment::auxiliary::{
    auxiliary_precision, block_gap_parameters, build_auxiliary, certify_auxiliary, CertificateStatus,
};
use expmoment::bilinear::{self, BilinearError, Polynomial, QSpec, ReachOptions, RectangleSystem};
use expmoment::control::{self, b_profile_expdelta, lebeau_robbiano_control, unit_mode, ControlProblem, LrOptions};
use expmoment::hypotheses::{self, GapCertificate, StructuralConstants, WeylFit};
use expmoment::moment::{self, biorthogonal_family, GramSystem, ResidualMethod};
use expmoment::mp;
use expmoment::spectra::{self, PerturbedSquare, SideLength, SpectralSequence, Spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::Float;
use std::sync::Arc;
use std::time::Instant;

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

const PREC: u32 = mp::DEFAULT_PREC;

/// Weyl data of the 5,000-term perturbed square, shared by criteria 1, 2 and 10.
struct WeylContext {
    fit: WeylFit,
    gap: GapCertificate,
    consts: StructuralConstants,
}

fn criterion_1(seq: &SpectralSequence) -> (Check, Option<WeylContext>) {
    let start = Instant::now();
    let run = || -> Result<(WeylContext, String, bool), Box<dyn std::error::Error>> {
        let (a, b) = (Float::with_val(PREC, 0.5), Float::with_val(PREC, 0.25));
        let gamma_max = seq.value(5000)?;
        let fit = hypotheses::fit_weyl(seq, &a, &b, &gamma_max)?;
        let gap = hypotheses::check_weak_gap(seq)?;
        // Both sides of every jump: N = k at μ_k, and N = k just below μ_{k+1}.
        let vals = seq.values_slice();
        let mut all_hold = true;
        for (i, v) in vals.iter().enumerate() {
            let k = i as u64 + 1;
            all_hold &= fit.bounds_hold(v, k);
            if let Some(next) = vals.get(i + 1) {
                let below = Float::with_val(PREC, next - Float::with_val(PREC, next * 1e-40));
                all_hold &= fit.bounds_hold(&below, k);
            }
        }
        let one_over_k =
            vals.windows(2).enumerate().all(|(i, w)| Float::with_val(PREC, &w[1] - &w[0]) * (i as u64 + 1) >= 1u32);
        let ks = hypotheses::k_star(&fit)?;
        let mu_ks = PerturbedSquare::new(PREC).value(ks)?;
        let consts = hypotheses::structural_constants(&fit, seq.first_value(), &mu_ks, &Float::with_val(PREC, 0.5))?;
        let finite = fit.c_w1.is_finite() && fit.c_w2.is_finite() && gap.c_w.is_finite();
        let detail = format!(
            "c_W1 = {}, c_W2 = {}, c_w = {}, bounds at all jumps = {all_hold}, gap ≥ 1/k on range = {one_over_k}",
            mp::to_decimal(&fit.c_w1, 8),
            mp::to_decimal(&fit.c_w2, 8),
            mp::to_decimal(&gap.c_w, 8),
        );
        Ok((WeylContext { fit, gap, consts }, detail, finite && all_hold))
    };
    match run() {
        Ok((ctx, detail, ok)) => {
            let secs = start.elapsed().as_secs_f64();
            (Ok((ok && secs <= 30.0, format!("{detail}; {secs:.1}s (limit 30s)"))), Some(ctx))
        }
        Err(e) => (Err(e), None),
    }
}

fn criterion_2(ctx: Option<&WeylContext>) -> Check {
    let ctx = ctx.ok_or("criterion 1 produced no constants")?;
    let mut ok = true;
    let mut parts = Vec::new();
    for factor in [1u32, 2, 4] {
        let start = Instant::now();
        let lambda = Float::with_val(PREC, &ctx.consts.lambda_0 * factor);
        let oracle = Arc::new(PerturbedSquare::new(auxiliary_precision(&lambda, PREC)));
        let aux = build_auxiliary(oracle, &ctx.fit, &lambda, 2000)?;
        let params = block_gap_parameters(&ctx.consts, &lambda)?;
        let certs = certify_auxiliary(&aux, &ctx.consts, &params, &ctx.gap.c_w)?;
        let secs = start.elapsed().as_secs_f64();
        let all = certs.iter().all(|c| c.status == CertificateStatus::Passed && c.worst_margin >= 0);
        let worst = certs.iter().map(|c| c.worst_margin.to_f64()).fold(f64::INFINITY, f64::min);
        ok &= all && secs <= 60.0;
        parts
            .push(format!("{factor}Λ₀: {} certificates pass = {all}, min margin {worst:.3e}, {secs:.1}s", certs.len()));
    }
    Ok((ok, format!("{} (limit 60s each)", parts.join("; "))))
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let seq = spectra::generate_perturbed_square_example(12, PREC)?;
    let horizon = mp::from_f64(64, 0.5);
    let digits = moment::auto_digits(seq.values_slice(), &horizon).max(300);
    let fam =
        biorthogonal_family(seq.values_slice(), &horizon, digits, ResidualMethod::Quadrature { nodes_per_panel: 200 })?;
    let err = fam.identity_error();
    let secs = start.elapsed().as_secs_f64();
    let ok = err <= 1e-20 && secs <= 120.0;
    Ok((
        ok,
        format!(
            "digits {digits}, 200 nodes per panel: identity error 1e{:.1} (limit 1e-20), {secs:.1}s (limit 120s)",
            mp::log10_abs(&err)
        ),
    ))
}

fn unit_random_targets(n: usize, seed: u64, prec: u32) -> Vec<Float> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Float> = (0..n).map(|_| Float::with_val(prec, rng.random_range(-1.0..1.0))).collect();
    let norm = mp::norm2(&raw);
    raw.into_iter().map(|x| x / &norm).collect()
}

fn criterion_4() -> Check {
    let n = 12;
    let seeds = 0u64..5;
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [0.25, 0.5] {
        let seq = spectra::generate_perturbed_square_example(n, PREC)?;
        let horizon = mp::from_f64(64, t);
        let digits = moment::auto_digits(seq.values_slice(), &horizon);
        let method = ResidualMethod::default_for(n);
        let base = GramSystem::build(seq.values_slice(), &horizon, digits, digits << moment::AUTO_DOUBLINGS)?;
        let doubled =
            GramSystem::build(seq.values_slice(), &horizon, 2 * digits, 2 * digits << moment::AUTO_DOUBLINGS)?;
        let (oracle, oracle2) = match method {
            ResidualMethod::Quadrature { nodes_per_panel } => {
                (Some(base.quadrature_oracle(nodes_per_panel)), Some(doubled.quadrature_oracle(nodes_per_panel)))
            }
            ResidualMethod::Algebraic => (None, None),
        };
        let mut worst = f64::NEG_INFINITY;
        let mut worst_algebraic = f64::NEG_INFINITY;
        let mut monotone = true;
        for seed in seeds.clone() {
            let x = unit_random_targets(n, seed, base.prec());
            let sol = base.solve(&x, method, oracle.as_ref())?;
            let x2 = unit_random_targets(n, seed, doubled.prec());
            let sol2 = doubled.solve(&x2, method, oracle2.as_ref())?;
            let alg = base.solve(&x, ResidualMethod::Algebraic, None)?;
            let (r, r2) = (sol.max_residual(), sol2.max_residual());
            worst = worst.max(mp::log10_abs(&r));
            worst_algebraic = worst_algebraic.max(mp::log10_abs(&alg.max_residual()));
            monotone &= r2 <= r;
        }
        let pass_t = worst <= -15.0 && monotone;
        ok &= pass_t;
        parts.push(format!(
            "T = {t}: digits {digits}, max quadrature residual 1e{worst:.1}, doubling never increases = {monotone} \
             (algebraic residual 1e{worst_algebraic:.1}, info)"
        ));
    }
    Ok((ok, format!("{} (limit 1e-15)", parts.join("; "))))
}

fn null_control_problem() -> Result<ControlProblem, Box<dyn std::error::Error>> {
    let n = 40;
    let seq = spectra::generate_perturbed_square_example(n, PREC)?;
    let b = b_profile_expdelta(seq.values_slice(), 1.0, 0.5);
    Ok(ControlProblem::new(seq, b, unit_mode(n, 1, PREC), mp::from_f64(PREC, 0.5), n)?)
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let problem = null_control_problem()?;
    let sol = lebeau_robbiano_control(&problem, control::DEFAULT_DELTA, 7.0, LrOptions::default())?;
    let fin = mp::norm2(&control::simulate(&problem, &sol));
    let bound = Float::with_val(PREC, problem.xi0_norm() * 1e-8);
    let secs = start.elapsed().as_secs_f64();
    let ok = sol.converged && fin <= bound && secs <= 300.0;
    Ok((
        ok,
        format!(
            "converged = {}, simulated ‖ξ(T)‖ = {} (limit 1e-8 ‖ξ₀‖), cost {}, {secs:.1}s (limit 300s)",
            sol.converged,
            mp::to_decimal(&fin, 4),
            mp::to_decimal(&sol.total_norm, 6)
        ),
    ))
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let problem = null_control_problem()?;
    let grid = [0.15, 0.2, 0.3, 0.4, 0.6, 0.8];
    let scan = control::cost_scan(&problem, &grid, 7.0, control::DEFAULT_DELTA, LrOptions::default())?;
    // The envelope is checked here from the raw points, not from the scan's own flag.
    let c = scan.envelope_c;
    let below = scan.points.iter().all(|p| p.log_cost <= c * (1.0 + p.horizon.powi(-7)) + 1e-6);
    let nonincreasing = scan.points.windows(2).all(|w| w[1].cost <= w[0].cost);
    let ok = c.is_finite() && below && nonincreasing;
    let costs: Vec<String> = scan.points.iter().map(|p| format!("{}: {:.3e}", p.horizon, p.cost.to_f64())).collect();
    Ok((
        ok,
        format!(
            "C = {c:.4e} (least squares {:.4e}), below envelope + 1e-6 = {below}, nonincreasing = {nonincreasing}, costs [{}], {:.1}s",
            scan.least_squares_c,
            costs.join(", "),
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn criterion_7() -> Check {
    let prec = 128;
    let one = Float::with_val(prec, 1);
    let pi = mp::pi(prec);
    let pi2 = Float::with_val(prec, pi.square_ref());
    let x2 = Polynomial::monomial(2);
    let off = bilinear::sine_pair_closed_form(&x2, &one, 1, 2).ok_or("no closed form for degree 2")?;
    let diag = bilinear::sine_pair_closed_form(&x2, &one, 1, 1).ok_or("no closed form for degree 2")?;
    let off_ref = Float::with_val(prec, 8u32) / Float::with_val(prec, &pi2 * 9u32);
    let diag_ref =
        Float::with_val(prec, Float::with_val(prec, &pi2 * 2u32) - 3u32) / Float::with_val(prec, &pi2 * 12u32);
    let rel = |x: &Float, r: &Float| (Float::with_val(prec, x.abs_ref()) - r).abs().to_f64() / r.to_f64();
    let (e_off, e_diag) = (rel(&off, &off_ref), rel(&diag, &diag_ref));
    let agreement = bilinear::cross_check_paths(&x2, &one, 50)?;
    let ok = e_off <= 1e-12 && e_diag <= 1e-12 && agreement.max_relative <= 1e-12;
    Ok((
        ok,
        format!(
            "|(1,2)| vs 8/(9π²): {e_off:.1e}, (1,1) vs (2π²−3)/(12π²): {e_diag:.1e}, quadrature vs closed form over {} pairs: {:.1e} (limit 1e-12)",
            agreement.pairs_checked, agreement.max_relative
        ),
    ))
}

fn criterion_8() -> Check {
    let system = RectangleSystem::standard(200, PREC)?;
    let cert = bilinear::roth_gap_scan(&system, 1.0)?;
    let lattice =
        spectra::generate_rectangle_bilaplacian(&SideLength::one(), &SideLength::cube_root_of_two(), 200, PREC)?;
    let distinct = lattice.multiplicities().iter().all(|(_, pairs)| pairs.len() == 1);
    let square = RectangleSystem::new(SideLength::one(), SideLength::one(), QSpec::x2y2(), 200, PREC)?;
    let witness = match bilinear::roth_gap_scan(&square, 1.0) {
        Err(BilinearError::RepeatedEigenvalue { index, pairs, .. }) if pairs.len() >= 2 => Some((index, pairs)),
        _ => None,
    };
    let ok = distinct && cert.fitted_c > 0 && witness.is_some();
    Ok((
        ok,
        format!(
            "200 eigenvalues distinct = {distinct}, fitted C = {:.4e} (worst k = {}), square witness {:?}",
            cert.fitted_c.to_f64(),
            cert.worst_index,
            witness
        ),
    ))
}

fn criterion_9() -> Check {
    let start = Instant::now();
    let n = 25;
    let system = RectangleSystem::standard(n, PREC)?;
    let opts = ReachOptions::default();
    let psi0 = bilinear::perturbed_mode(n, 1, 1e-3);
    let result = bilinear::reach_eigensolution(&system, 1, &psi0, 0.5, &opts)?;
    let ratio = bilinear::perturbation_ratio_test(&system, 1, 0.5, (1e-3, 1e-4), &opts)?;
    let reach_ok = result.converged && result.final_error <= 1e-4 && result.verified_error <= 1e-4;
    let ok = reach_ok && ratio.super_linear;
    Ok((
        ok,
        format!(
            "converged = {}, final error {:.3e}, doubled resolution {:.3e} (limit 1e-4); one-iterate defects {:.3e} / {:.3e}, \
             order {:.3}, resolved above floor {:.0e} = {}, super-linear = {}; {:.1}s",
            result.converged,
            result.final_error,
            result.verified_error,
            ratio.defects_after_one.0,
            ratio.defects_after_one.1,
            ratio.order,
            ratio.floor,
            ratio.resolved,
            ratio.super_linear,
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn criterion_10(seq: &SpectralSequence, certified: bool) -> Check {
    let lattice = spectra::generate_rectangle_laplacian(&SideLength::one(), &SideLength::one(), 5000, PREC)?;
    let runs = lattice.multiplicities();
    let max_mult = runs.iter().map(|(_, p)| p.len()).max().unwrap_or(0);
    let has = |m: usize| runs.iter().any(|(_, p)| p.len() >= m);
    let pi2 = Float::with_val(PREC, mp::pi(PREC).square_ref());
    let target = Float::with_val(PREC, &pi2 * 325u32);
    let witness = runs.iter().any(|(v, p)| {
        p.len() == 6 && p.iter().all(|(l, m)| l * l + m * m == 325) && spectra::values_coincide(v, &target)
    });
    let raw_gap_fails = matches!(
        hypotheses::weak_gap_over(&lattice.raw_values, 1),
        Err(hypotheses::HypothesesError::RepeatedValue { .. })
    );
    let perturbed_distinct = seq.size() == 5000;
    let ok = has(2) && has(3) && has(4) && witness && raw_gap_fails && perturbed_distinct && certified;
    Ok((
        ok,
        format!(
            "multiplicities ≥ 2, 3, 4 found = {}, {}, {}; largest {max_mult}; 325π² with multiplicity 6 = {witness}; \
             raw gap check rejects repeats = {raw_gap_fails}; perturbed sequence certified under 1–2 = {certified}",
            has(2),
            has(3),
            has(4)
        ),
    ))
}

fn report(id: u32, outcome: &Check, failures: &mut Vec<u32>) -> bool {
    let (pass, detail) = match outcome {
        Ok((p, d)) => (*p, d.clone()),
        Err(e) => (false, format!("error: {e}")),
    };
    if !pass {
        failures.push(id);
    }
    println!("criterion {id:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let total = Instant::now();
    let mut failures = Vec::new();
    let seq = match spectra::generate_perturbed_square_example(5000, PREC) {
        Ok(s) => s,
        Err(e) => {
            println!("cannot generate the perturbed square: {e}");
            std::process::exit(1);
        }
    };
    let (c1, ctx) = criterion_1(&seq);
    let p1 = report(1, &c1, &mut failures);
    let p2 = report(2, &criterion_2(ctx.as_ref()), &mut failures);
    report(3, &criterion_3(), &mut failures);
    report(4, &criterion_4(), &mut failures);
    report(5, &criterion_5(), &mut failures);
    report(6, &criterion_6(), &mut failures);
    report(7, &criterion_7(), &mut failures);
    report(8, &criterion_8(), &mut failures);
    report(9, &criterion_9(), &mut failures);
    report(10, &criterion_10(&seq, p1 && p2), &mut failures);
    println!("acceptance: {} of 10 passed in {:.1}s", 10 - failures.len(), total.elapsed().as_secs_f64());
    if !failures.is_empty() {
        println!("failed: {failures:?}");
        std::process::exit(1);
    }
}
