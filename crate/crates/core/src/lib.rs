//! Coalitional model predictive control for networks of input-coupled
//! linear subsystems.
//!
//! Agents run local MPC controllers and, at regular negotiation instants,
//! bargain in pairs: two players merge into a coalition (and solve one joint
//! MPC problem) when the joint optimal cost plus the cooperation cost does
//! not exceed what they achieve apart. Coalitions dissolve after a fixed
//! lifetime.
//!
//! - [`model`]: coupled subsystems, plant step, stage cost, block composition.
//! - [`qp`] and [`mpc`]: condensed horizon QPs and their box-constrained solver.
//! - [`coalition`]: cooperation costs, merge criteria, Shapley allocation,
//!   negotiation rounds and coalition expiry.
//! - [`sim`]: closed-loop runs in centralized, decentralized and coalitional modes.
//! - [`scenario`]: the storage-grid benchmark, JSON scenario files and outputs.

pub mod coalition;
pub mod error;
pub mod model;
pub mod mpc;
pub mod qp;
pub mod scenario;
pub mod sim;

pub use coalition::{
    BargainConfig, BargainOutcome, CoopCostConfig, CoopCostKind, CostMap, Criterion, PartitionState, Player,
};
pub use error::{Error, Result};
pub use model::{AgentId, CoupledNetwork, InputLayout, SubsystemModel};
pub use mpc::{MpcConfig, MpcSolution};
pub use qp::{BoxQp, QpSettings};
pub use scenario::{build_scenario, Scenario, ScenarioSpec};
pub use sim::{run, Mode, SimConfig, SimResult};
