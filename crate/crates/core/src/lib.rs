//! Laboratory for instance-dependent label noise modeled as a mixture of
//! basis transition matrices.
//!
//! The numerical kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! data generators, training loop and experiments run in `f64` and the
//! aliases below name those concrete instantiations.

pub mod error;
pub mod estimator;
pub mod io;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod synth;
pub mod train;
pub mod transition;

pub use error::{Error, Result};
pub use estimator::{batch_estimate, init_bases, EstimatorState};
pub use net::{
    assignment, compute_gradients, decoupling_loss, forward, partition_subspaces, Correction,
    GateSource, LossSpec, NetworkParams, Sample, Shape, SubspacePartition,
};
pub use rng::Rng;
pub use scalar::Scalar;
pub use transition::{
    align_bases, frobenius_error, l1_error, mix_transition, sample_noisy_label,
    validate_transition, Alignment, AssignmentWeights, BasisSet, TransitionMatrix,
};

pub type Matrix = TransitionMatrix<f64>;
pub type Bases = BasisSet<f64>;
pub type Weights = AssignmentWeights<f64>;
pub type Params = NetworkParams<f64>;
