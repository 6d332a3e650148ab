//! Gap scan of the bi-Laplace spectrum on `(0, 1) × (0, 2^{1/3})`, and the
//! square, where the symmetry `(ℓ, m) ↔ (m, ℓ)` forces repeated eigenvalues.

use expmoment::bilinear::{self, BilinearError, QSpec, RectangleSystem};
use expmoment::spectra::SideLength;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for n in [50, 100, 200] {
        let system = RectangleSystem::standard(n, 256)?;
        let cert = bilinear::roth_gap_scan(&system, 1.0)?;
        println!(
            "N = {n:>3}: fitted C = {:.6e} (worst k = {}), weak-gap c_w = {:.4}",
            cert.fitted_c.to_f64(),
            cert.worst_index,
            cert.weak_gap_c_w.to_f64()
        );
    }
    let square = RectangleSystem::new(SideLength::one(), SideLength::one(), QSpec::x2y2(), 200, 256)?;
    match bilinear::roth_gap_scan(&square, 1.0) {
        Err(BilinearError::RepeatedEigenvalue { index, value, pairs }) => {
            println!("square: eigenvalue {value} repeats at index {index}, pairs {pairs:?}");
        }
        other => println!("square: unexpected outcome {other:?}"),
    }
    Ok(())
}
