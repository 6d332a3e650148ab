//! Repeated eigenvalues of the unit-square Laplacian among its first 5,000
//! values, and the perturbed sequence that separates them.
//!
//! Run with `cargo run --release --example multiplicity_blocks`.

use expmoment::hypotheses::{check_weak_gap, weak_gap_over};
use expmoment::mp;
use expmoment::spectra::{generate_perturbed_square_example, generate_rectangle_laplacian, SideLength};
use rug::Float;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prec = mp::DEFAULT_PREC;
    let lap = generate_rectangle_laplacian(&SideLength::one(), &SideLength::one(), 5000, prec)?;
    let runs = lap.multiplicities();
    let pi2 = Float::with_val(prec, mp::pi(prec).square_ref());
    for m in [2, 3, 4, 6, 8, 12] {
        if let Some((v, pairs)) = runs.iter().find(|(_, p)| p.len() >= m) {
            let s = Float::with_val(prec, v / &pi2);
            println!("first multiplicity ≥ {m:>2}: λ = {}π², pairs {pairs:?}", mp::to_decimal(&s, 12));
        }
    }
    match weak_gap_over(&lap.raw_values, 1) {
        Err(e) => println!("raw λ: {e}"),
        Ok(c) => println!("raw λ: unexpected weak gap c_w = {}", mp::to_decimal(&c.c_w, 6)),
    }
    let mu = generate_perturbed_square_example(5000, prec)?;
    let gap = check_weak_gap(&mu)?;
    println!(
        "perturbed μ: strictly increasing, weak-gap c_w = {} (worst k = {})",
        mp::to_decimal(&gap.c_w, 10),
        gap.worst_index
    );
    Ok(())
}
