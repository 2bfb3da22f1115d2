//! Scalable spatio-temporal Gaussian-process inference.
//!
//! Separable space-time kernels are rewritten as linear Gaussian state-space
//! models whose state stacks one temporal SDE per spatial (or inducing) point.
//! Variational inference is carried out with conjugate-computation natural
//! gradients: every update is a Gaussian "pseudo-observation" that the Kalman
//! filter and RTS smoother (sequential or associative-scan parallel) absorb
//! in time linear in the number of time steps.
//!
//! The numerical core is generic over the floating-point type through
//! [`Scalar`]; the `*64` aliases at the crate root fix it to `f64`, which is
//! what the harness and CLI use.

pub mod cvi_inference;
pub mod error;
pub mod gaussian_algebra;
pub mod harness;
pub mod likelihoods;
pub mod markov_kernels;
pub mod mean_field;
pub mod scalar;
pub mod sparse_inference;
pub mod state_space;

#[cfg(feature = "oracle")]
pub mod dense_oracle;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use cvi_inference::{
    ApproxLikelihoodBank, FitConfig, FitState, GridData, HyperParams, ModelSpec,
};
pub use gaussian_algebra::{GaussianParams, KroneckerMatrix, Parameterization};
pub use harness::{FittedModel, GridDataset, RunConfig, Variant};
pub use likelihoods::{Likelihood, QuadratureRule};
pub use markov_kernels::{
    DiscreteSTModel, MarkovKernelSS, SpatialFamily, SpatialKernel, TemporalFamily,
};
pub use mean_field::MFModel;
pub use sparse_inference::{BlockApproxLikelihood, ScatteredData, SparseProjection};
pub use state_space::{FilterMode, FilterOutput, PseudoObservations, StateMarginals};

pub type GaussianParams64 = GaussianParams<f64>;
pub type KroneckerMatrix64 = KroneckerMatrix<f64>;
pub type MarkovKernelSS64 = MarkovKernelSS<f64>;
pub type SpatialKernel64 = SpatialKernel<f64>;
pub type DiscreteSTModel64 = DiscreteSTModel<f64>;
pub type PseudoObservations64 = PseudoObservations<f64>;
pub type StateMarginals64 = StateMarginals<f64>;
pub type Likelihood64 = Likelihood<f64>;
pub type GridData64 = GridData<f64>;
pub type ScatteredData64 = ScatteredData<f64>;
pub type FitState64 = FitState<f64>;
pub type ModelSpec64 = ModelSpec<f64>;
pub type MFModel64 = MFModel<f64>;
