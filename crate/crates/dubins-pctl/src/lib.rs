//! Maximum-probability feedback control for a Dubins vehicle with noisy
//! actuation, checked against pick-up/drop-off/avoid missions.
//!
//! The pipeline: quantize the actuator noise into a finite set of
//! representative values ([`dynamics`]), expand the reachable stage
//! trajectories into a bounded-depth tree MDP that tracks worst-case position
//! uncertainty ([`mdp`]), model-check a PCTL mission formula on it and
//! extract the maximizing policy ([`pctl`]), map gyroscope measurement
//! histories back onto tree states to obtain a feedback strategy
//! ([`strategy`]), and validate the resulting satisfaction lower bound by
//! Monte Carlo simulation of the continuous-noise system ([`montecarlo`]).
//! The [`cli`] module wires these into the `dubins-pctl` binary.

pub mod cli;
pub mod dynamics;
pub mod geometry;
mod hashing;
pub mod mdp;
pub mod montecarlo;
pub mod pctl;
pub mod strategy;

pub use dynamics::{propagate, quantized_successors, NoisePartition, Pose, StageTrajectory, VehicleParams};
pub use geometry::{ConvexRegion, Environment, Point2, Prop, PropSet, RegionLabel};
pub use mdp::{build, find_min_k, BuildConfig, Mdp, MdpState};
pub use montecarlo::{run, SimConfig, Summary, Word};
pub use pctl::{parse_formula, pickup_dropoff_formula, synthesize, Action, Formula, Policy};
pub use strategy::{locate, next_input, MeasurementRecord, StrategyTable};
