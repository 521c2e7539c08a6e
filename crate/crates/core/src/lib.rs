//! Value-consistency guided model soups at desk scale.
//!
//! The crate works over a finite, featurized preference universe so every
//! quantity in the pipeline is exactly computable:
//!
//! * [`data`]: toy universes, preference pairs, JSONL datasets.
//! * [`reward`]: linear reward models, Bradley–Terry fitting, score statistics.
//! * [`consistency`]: normalized reward gaps, the value-consistency score, threshold filtering.
//! * [`policy`]: tabular softmax policies, the DPO loss and its gradient, exact expected rewards.
//! * [`soup`]: convex merging of value vectors over the weight simplex.
//! * [`pareto`]: dominance, frontier extraction and hypervolume.
//! * [`theory`]: gradient-conflict, merging-gap and parameter-geometry diagnostics.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common `f64` instantiations.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consistency;
pub mod data;
pub mod error;
pub mod pareto;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod scalar;
pub mod soup;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type UniverseF64 = data::Universe<f64>;
pub type UniverseF32 = data::Universe<f32>;
pub type RewardModelF64 = reward::RewardModel<f64>;
pub type RewardModelF32 = reward::RewardModel<f32>;
pub type RewardStatsF64 = reward::RewardStats<f64>;
pub type ConsistencyRecordF64 = consistency::ConsistencyRecord<f64>;
pub type PolicyF64 = policy::TabularPolicy<f64>;
pub type PolicyF32 = policy::TabularPolicy<f32>;
pub type ValueVectorF64 = policy::ValueVector<f64>;
pub type WeightVectorF64 = soup::WeightVector<f64>;
pub type CandidateF64 = soup::CandidateModel<f64>;
pub type FrontierF64 = pareto::ParetoFrontier<f64>;
