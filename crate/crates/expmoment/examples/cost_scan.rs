//! Control cost of the first perturbed-square mode over a grid of horizons,
//! fitted against the envelope `log(cost) ≤ C (1 + T^{-7})`.
//!
//! Run with `cargo run --release --example cost_scan`.

use expmoment::control::{b_profile_expdelta, cost_scan, unit_mode, ControlProblem, LrOptions};
use expmoment::mp;
use expmoment::spectra::generate_perturbed_square_example;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 40;
    let prec = mp::DEFAULT_PREC;
    let spectrum = generate_perturbed_square_example(n, prec)?;
    let b = b_profile_expdelta(spectrum.values_slice(), 1.0, 0.5);
    let problem = ControlProblem::new(spectrum, b, unit_mode(n, 1, prec), mp::from_f64(prec, 0.5), n)?;
    let grid = [0.15, 0.2, 0.3, 0.4, 0.6, 0.8];

    let start = Instant::now();
    let scan = cost_scan(&problem, &grid, 7.0, 0.25, LrOptions::default())?;
    println!("{:>6} {:>22} {:>10} {:>7} {:>10}", "T", "cost", "log cost", "stages", "converged");
    for p in &scan.points {
        println!(
            "{:>6} {:>22} {:>10.4} {:>7} {:>10}",
            p.horizon,
            mp::to_decimal(&p.cost, 12),
            p.log_cost,
            p.stages,
            p.converged
        );
    }
    println!("envelope C = {:.6e}, least-squares C = {:.6e}", scan.envelope_c, scan.least_squares_c);
    println!("max positive deviation from the least-squares fit = {:.4}", scan.max_positive_deviation);
    println!("below envelope: {}, nonincreasing: {}", scan.below_envelope(1e-6), scan.nonincreasing);
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
