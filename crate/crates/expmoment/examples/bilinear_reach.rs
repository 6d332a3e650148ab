//! Steers `φ₁ + 10⁻³ φ₂` onto the eigensolution `e^{-μ₁ t} φ₁` on the
//! rectangle `(0, 1) × (0, 2^{1/3})` with the weight `Q = x² y²`, then runs
//! the two-point perturbation test.

use expmoment::bilinear::{self, ReachOptions, RectangleSystem};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = Instant::now();
    let system = RectangleSystem::standard(25, 256)?;
    let opts = ReachOptions::default();
    let psi0 = bilinear::perturbed_mode(25, 1, 1e-3);
    let result = bilinear::reach_eigensolution(&system, 1, &psi0, 0.5, &opts)?;

    println!("{:>4} {:>10} {:>10} {:>14} {:>12} {:>6}", "iter", "t_start", "t_end", "defect", "||v||_2", "steps");
    for r in &result.records {
        println!(
            "{:>4} {:>10.6} {:>10.6} {:>14.6e} {:>12.4e} {:>6}",
            r.index, r.t_start, r.t_end, r.defect, r.control_l2, r.steps
        );
    }
    println!("defects     {:?}", result.defects);
    println!("contraction {:?}", result.contraction);
    println!(
        "final error {:.3e} (doubled resolution {:.3e}, doubled truncation {:?})",
        result.final_error, result.verified_error, result.doubled_truncation_error
    );
    println!("converged {} in {} iterations", result.converged, result.iterations);

    let ratio = bilinear::perturbation_ratio_test(&system, 1, 0.5, (1e-3, 1e-4), &opts)?;
    println!(
        "ratio test: defects after one iterate {:.3e} / {:.3e}, order {:.3}, simulator floor {:.1e}, resolved {}, super-linear {}",
        ratio.defects_after_one.0, ratio.defects_after_one.1, ratio.order, ratio.floor, ratio.resolved, ratio.super_linear
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
