//! Couplings `⟨𝔅φ_j, φ_k⟩` for the weight `Q = x² y²`: the one-dimensional
//! closed forms, their agreement with quadrature, and the spreading constant.

use expmoment::bilinear::{self, Polynomial, RectangleSystem};
use rug::Float;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prec = 128;
    let one = Float::with_val(prec, 1);
    let x2 = Polynomial::monomial(2);
    let off = bilinear::sine_pair_closed_form(&x2, &one, 1, 2).expect("degree 2");
    let diag = bilinear::sine_pair_closed_form(&x2, &one, 1, 1).expect("degree 2");
    println!("∫ x² sin(πx) sin(2πx) dx = {}", off.to_f64());
    println!("∫ x² sin²(πx) dx        = {}", diag.to_f64());

    let start = Instant::now();
    let agreement = bilinear::cross_check_paths(&x2, &one, 50)?;
    println!(
        "closed form vs quadrature over {} index pairs: max relative difference {:.3e} at {:?} ({:.1}s)",
        agreement.pairs_checked,
        agreement.max_relative,
        agreement.worst,
        start.elapsed().as_secs_f64()
    );

    let system = RectangleSystem::standard(50, 256)?;
    let cert = bilinear::verify_spreading(&system, 1, 0.5)?;
    println!("spreading, j = 1, δ = 1/2: C_B1 = {:.6} attained at k = {}", cert.c_bj.to_f64(), cert.attained_at);
    for (k, l) in cert.log10_magnitudes.iter().enumerate().take(10) {
        println!("  k = {:>2}  pair {:?}  log10 |<Bφ_1, φ_k>| = {:.3}", k + 1, system.pair(k + 1), l);
    }
    Ok(())
}
