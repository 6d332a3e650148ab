//! Fits the Weyl law on the perturbed square, derives the structural constants
//! and certifies the auxiliary sequence at `Λ₀`, `2Λ₀` and `4Λ₀`.
//!
//! Run with `cargo run --release --example certify_auxiliary`.

use expmoment::auxiliary::{auxiliary_precision, block_gap_parameters, build_auxiliary, certify_auxiliary};
use expmoment::hypotheses::{check_weak_gap, fit_weyl, k_star, structural_constants};
use expmoment::mp;
use expmoment::spectra::{generate_perturbed_square_example, PerturbedSquare, Spectrum};
use rug::Float;
use std::sync::Arc;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prec = mp::DEFAULT_PREC;
    let seq = generate_perturbed_square_example(5000, prec)?;
    let (a, b) = (Float::with_val(prec, 0.5), Float::with_val(prec, 0.25));
    let fit = fit_weyl(&seq, &a, &b, &seq.value(5000)?)?;
    let gap = check_weak_gap(&seq)?;
    let ks = k_star(&fit)?;
    let mu_ks = PerturbedSquare::new(prec).value(ks)?;
    let consts = structural_constants(&fit, seq.first_value(), &mu_ks, &Float::with_val(prec, 0.5))?;
    println!("c_W1 = {}", mp::to_decimal(&fit.c_w1, 12));
    println!("c_W2 = {}", mp::to_decimal(&fit.c_w2, 12));
    println!("K_W  = {}", mp::to_decimal(&fit.k_w, 12));
    println!("c_w  = {}", mp::to_decimal(&gap.c_w, 12));
    println!("k*   = {ks}");
    println!("Λ₀   = {}", mp::to_decimal(&consts.lambda_0, 12));
    println!("θ    = {}", mp::to_decimal(&consts.theta, 12));

    for factor in [1u32, 2, 4] {
        let start = Instant::now();
        let lambda = Float::with_val(prec, &consts.lambda_0 * factor);
        let oracle = Arc::new(PerturbedSquare::new(auxiliary_precision(&lambda, prec)));
        let aux = build_auxiliary(oracle, &fit, &lambda, 2000)?;
        let params = block_gap_parameters(&consts, &lambda)?;
        let certs = certify_auxiliary(&aux, &consts, &params, &gap.c_w)?;
        println!("\nΛ = {factor}Λ₀: k*_Λ = {}, n_Λ = {}", aux.k_star_lambda, params.n_lambda);
        for c in &certs {
            println!(
                "  {:<18} {:?} worst margin {} at k = {}",
                c.name,
                c.status,
                mp::to_decimal(&c.worst_margin, 6),
                c.witness_index
            );
        }
        println!("  elapsed {:.1} s", start.elapsed().as_secs_f64());
    }
    Ok(())
}
