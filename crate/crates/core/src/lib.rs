//! Simulation and reconstruction toolkit for X-ray excited luminescence
//! tomography.
//!
//! Light emitted by X-ray excited nanophosphors diffuses through tissue and
//! leaves through the boundary. Weighting the boundary flux with a solution
//! of the adjoint diffusion problem turns each measurement into an interior
//! integral of the concentration against the excitation pattern. The crate
//! simulates that physics and inverts the resulting transforms:
//!
//! * [`diffusion`]: finite-volume diffusion operator with Robin boundary
//!   conditions, weights `v = Vh`, boundary flux and the reciprocity check.
//! * [`excitation`]: double-cone apertures, the cone transform and the
//!   parallel-beam X-ray transform.
//! * [`multiplier`]: Fourier-multiplier symbols, the visibility/stability
//!   analysis and explicit inversion for translation-invariant cones.
//! * [`xray_recon`]: filtered backprojection and division by the weight.
//! * [`algebraic`]: LSQR, Poisson measurement noise and error metrics.
//! * [`pipeline`]: configuration and end-to-end experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebraic;
pub mod bessel;
pub mod closed_form;
pub mod diffusion;
pub mod error;
pub mod excitation;
pub mod fft;
pub mod field;
pub mod format;
pub mod multiplier;
pub mod optics;
pub mod phantom;
pub mod pipeline;
pub mod xray_recon;

pub use diffusion::{BoundaryField, DiffusionOperator, Quadrature};
pub use error::{Error, Result};
pub use excitation::{Aperture, ConeScanData, Sinogram};
pub use field::{Grid, ScalarField};
pub use optics::OpticalMedium;
pub use phantom::{Inclusion, PhantomSpec};
