//! Small-signal stability analysis for multi-microgrid (multi-µG) networks.
//!
//! The library models a linking grid of microgrids coupled at their points of
//! common coupling (PCC), each interface governed by swing dynamics with
//! virtual inertia and damping. It provides:
//!
//! - static network modeling and admittance-matrix construction ([`netmodel`])
//! - flow-function evaluation and equilibrium solving ([`powerflow`])
//! - Jacobian/Laplacian spectra and their structural diagnostics ([`spectral`])
//! - local stability certificates and the per-node stability index
//!   ([`certificates`])
//! - Kron reduction of passive nodes with assumption checking ([`kron`])
//! - distributed parameter tuning and coordinated line switching ([`control`])
//! - time-domain integration of the swing and droop-VSI models ([`simulate`])
//! - deterministic synthetic test-case generation ([`synth`])
//!
//! All values are per unit, all angles in radians. Every operation is a pure
//! function over immutable inputs and is safe to run in parallel on distinct
//! data.

pub mod certificates;
pub mod control;
pub mod kron;
pub mod netmodel;
pub mod powerflow;
pub mod simulate;
pub mod spectral;
pub mod synth;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
