pub mod auxiliary;
pub mod bilinear;
pub mod cli;
pub mod control;
pub mod hypotheses;
pub mod lattice;
pub mod linalg;
pub mod moment;
pub mod mp;
pub mod quadrature;
pub mod spectra;
