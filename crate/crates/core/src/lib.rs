//! Simulation and analysis of two-photon (Hong-Ou-Mandel) interference in
//! a rotating frame, with a nested fibre Sagnac loop in each photon's arm.
//!
//! * [`physics`]: parameters and loop propagation delays
//! * [`models`]: closed-form coincidence landscapes
//! * [`oracle`]: brute-force spectral quadrature used to check the closed forms
//! * [`sim`]: synthetic delay scans with counting noise and thermal drift
//! * [`analysis`]: feature amplitudes, sinusoid fits, histogram statistics
//! * [`io`] and [`plot`]: configuration, CSV formats and SVG output

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod io;
pub mod models;
pub mod oracle;
pub mod physics;
pub mod plot;
pub mod sim;

pub use error::{AnalysisError, InvalidParameter, IoError, ModelError, QuadratureError, SimError};
pub use models::{
    background_cb, finite_sigma_coincidence_probability, finite_sigma_counts, finite_sigma_state_probability,
    nc_asymmetric, nc_symmetric, AsymmetricModelInput, ModelOutput, SymmetricModelInput,
};
pub use physics::{
    delay_to_stage, flip_half_period, propagation_times, sagnac_delay, stage_to_delay, ArmDelays, Direction,
    OpticalConfig, RotationState, SagnacArm, StageMapping, SPEED_OF_LIGHT,
};
