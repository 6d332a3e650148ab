//! Lebeau–Robbiano null control of the first perturbed-square mode with
//! forty simulated modes, `b_k = exp(-μ_k^{1/2})` and `T = 0.5`, checked by
//! the exact spectral simulator.
//!
//! Run with `cargo run --release --example null_control`.

use expmoment::control::{b_profile_expdelta, lebeau_robbiano_control, simulate, unit_mode, ControlProblem, LrOptions};
use expmoment::mp;
use expmoment::spectra::generate_perturbed_square_example;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 40;
    let prec = mp::DEFAULT_PREC;
    let spectrum = generate_perturbed_square_example(n, prec)?;
    let b = b_profile_expdelta(spectrum.values_slice(), 1.0, 0.5);
    let problem = ControlProblem::new(spectrum, b, unit_mode(n, 1, prec), mp::from_f64(prec, 0.5), n)?;

    let start = Instant::now();
    let sol = lebeau_robbiano_control(&problem, 0.25, 7.0, LrOptions::default())?;
    println!("synthesized in {:.1}s", start.elapsed().as_secs_f64());
    for s in &sol.schedule {
        println!(
            "stage {}: [{}, {}] Λ = {} controls {} modes, cost {}, digits {}",
            s.index,
            mp::to_decimal(&s.interval_start, 6),
            mp::to_decimal(&s.interval_end, 6),
            mp::to_decimal(&s.lambda, 6),
            s.controlled_modes,
            mp::to_decimal(&s.cost, 8),
            s.digits
        );
    }
    let fin = simulate(&problem, &sol);
    println!("‖v‖ = {}", mp::to_decimal(&sol.total_norm, 12));
    println!(
        "‖ξ(T)‖ = {} (recomputed: {})",
        mp::to_decimal(&sol.final_state_norm, 6),
        mp::to_decimal(&mp::norm2(&fin), 6)
    );
    println!("converged to 1e-8: {}", sol.converged);
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
