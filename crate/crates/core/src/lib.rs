//! Decoherence and dissipation timescales of a heavy test particle coupled to
//! an ideal Fermi gas or to thermal radiation.
//!
//! The crate is organised by environment:
//!
//! * [`quadcore`]: adaptive Gauss–Kronrod quadrature, complete Fermi–Dirac
//!   integrals, ζ at integer argument and Richardson derivatives.
//! * [`fermigas`]: particle-hole propagator, friction and stationary
//!   decoherence rates, the ratio surface `R(u, v)`, effective couplings and
//!   the IR-regulated build-up of the decoherence potential.
//! * [`photon`]: thermal photon kernel, photon decoherence potential and the
//!   Abraham–Lorentz timescale.
//! * [`collisional`]: scattering-based decoherence function, cross sections
//!   and the applicability audit.
//! * [`mastereq`]: finite-difference evolution of the 1D density matrix.
//! * [`cli`]: the `decolab` command-line frontend.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod collisional;
pub mod constants;
mod error;
pub mod fermigas;
pub mod mastereq;
pub mod photon;
pub mod quadcore;

pub use error::{Error, Result};
