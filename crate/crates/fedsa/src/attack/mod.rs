//! Attacker implementations: the sliding-mode controller and the three
//! crafted-submission baselines, plus the reference-checkpoint library.

pub mod baselines;
pub mod reference;
pub mod sliding;

pub use baselines::{lie_attack, lie_z, min_max_attack, min_sum_attack, PerturbMode};
pub use reference::{calibrate_offset, Calibration, ReferenceLibrary};
pub use sliding::{
    compute_error, simulate_scalar_plant, BenignInfo, JacobianMode, SlidingState, ThetaMode,
    SCALAR_PLANT_GAIN,
};
