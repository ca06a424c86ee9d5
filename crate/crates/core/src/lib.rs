//! Sequence-structure co-design of antibody CDR loops by diffusion sampling,
//! with black-box property guidance applied in the denoiser's shared latent
//! space.
//!
//! The crate is organized bottom-up:
//!
//! * [`schedule`], [`so3`], [`diffusion`]: noise schedules, rotation-group
//!   machinery and the forward/reverse transitions over residue types,
//!   coordinates and orientations.
//! * [`denoiser`]: the shared-encoder contract, a closed-form oracle for the
//!   synthetic mixture task in [`task`], and a small trainable network.
//! * [`guidance`], [`evaluators`], [`metrics`]: latent-space selection and
//!   update rules, reward functions, design metrics.
//! * [`pipeline`], [`harness`]: whole sampling chains and batch experiments.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod evaluators;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod schedule;
pub mod so3;
pub mod state;
pub mod task;

pub use error::{Error, EvalError, Result};
pub use schedule::{NoiseSchedule, ScheduleKind, ScheduleParams};
pub use so3::{Rotation, Vec3};
pub use state::{AminoAcid, CdrState, ChainTag, ComplexContext, NUM_TYPES};
