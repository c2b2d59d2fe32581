//! Steerable Fourier-Bessel basis on the unit disk.
//!
//! A basis element is `psi_{nu,q}(r, theta) = J_nu(lambda_{nu,q} r) exp(i nu theta)`,
//! where `lambda_{nu,q}` is the `q`-th positive zero of `J_nu`. Real images
//! are described by coefficients for `nu >= 0` only; the `-nu` terms are the
//! complex conjugates and are folded into synthesis. Rotating an image by
//! `phi` multiplies each coefficient by `exp(i nu phi)`.
//!
//! Pixel `l = (row, col)` offset from the disk center is sampled at polar
//! radius `r = |l| / R`, where `R` is the support radius of the spec. The
//! default `R = n + 1/2` is the disk inscribed in the `L x L` square;
//! [`SupportRadius::Pixels`] selects `R = n` instead.

mod bessel;
mod expansion;

pub use bessel::{bessel_j, bessel_root, bessel_roots};
pub use expansion::{
    build_basis, build_index_set, project, steer, synthesize, BasisIndex, BasisSpec, BasisTable,
    CoeffVec, SupportRadius,
};
