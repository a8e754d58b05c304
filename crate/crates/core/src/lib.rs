//! Two-stage stochastic electricity market clearing.
//!
//! Producers report a Gaussian forecast of their type (down-regulation cost,
//! baseline production, up-regulation cost) ahead of time and their realized
//! type in real time. The operator dispatches producers, procures reserve and
//! dispatchable power by sample-average approximation of the expected system
//! cost, redispatches once types are realized, and settles both stages with
//! VCG-style payments.
//!
//! Module map:
//!
//! * [`model`]: domain types, cost functions, configuration and validation
//! * [`scenario`]: reproducible Gaussian sampling of realized types
//! * [`stage2`]: exact real-time redispatch (merit order)
//! * [`stage1`]: time-ahead decision by enumeration and cutting planes
//! * [`payments`]: two-stage VCG payments and settlement
//! * [`experiments`]: case study, misreport and payment sweeps, baseline comparison
//! * [`lp`]: small dense simplex used by the cutting-plane master problem

pub mod error;
pub mod experiments;
pub mod lp;
pub mod model;
pub mod payments;
pub mod scenario;
pub mod stage1;
pub mod stage2;
pub mod table;

pub use error::{MarketError, Result};
pub use model::{
    FirstStageDecision, MarketConfig, Prices, ProducerType, SecondStageDecision,
    SettlementRecord, TypeDistribution,
};

/// Absolute tolerance used for money and energy comparisons.
pub const TOLERANCE: f64 = 1e-9;
