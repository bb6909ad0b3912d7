//! Bayesian calibration of simulation models with an explicit model
//! discrepancy term, evidence-based model comparison and discrepancy
//! attribution to boundary conditions.

pub mod analysis;
pub mod basis;
pub mod emulator;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod optimize;
pub mod thermalbox;

pub use basis::{
    build_complement_basis, build_simulation_basis, project_observation, BasisPair, BoundaryConditions, ParamBounds,
    ParameterDesign, SimulationEnsemble,
};
pub use emulator::{emulator_predict, fit_emulator, EmulatorConfig, EmulatorModel, SimulationPriors};
pub use error::{Error, Result};
pub use inference::{AnnealingSchedule, ObservationPriors, PosteriorArchive};
pub use kernel::{DiscrepancyKernelParams, EmulatorKernelParams};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Child seed number `stream` of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}
