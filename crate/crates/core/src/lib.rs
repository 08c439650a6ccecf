//! Hybrid internal model locomotion training at desk scale.
//!
//! The learning stack is generic over the scalar type; the aliases below
//! name the two supported precisions.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod eval;
pub mod him;
pub mod nn;
pub mod num;
pub mod ppo;
pub mod rewards;
pub mod sim;
pub mod terrain;
pub mod trainer;

/// Scalar used by the command line tools.
pub type Scalar = f32;

pub type Trainer32 = trainer::Trainer<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type Agent32 = trainer::Agent<f32>;
pub type Agent64 = trainer::Agent<f64>;
pub type Him32 = him::HybridInternalModel<f32>;
pub type Him64 = him::HybridInternalModel<f64>;
pub type ActorCritic32 = ppo::ActorCritic<f32>;
pub type ActorCritic64 = ppo::ActorCritic<f64>;
