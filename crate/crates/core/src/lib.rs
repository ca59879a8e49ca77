//! Safe data collection for policy evaluation in tabular bandits, tree MDPs
//! and layered DAG MDPs.
//!
//! The crate is organised bottom-up: [`env`] holds environments and the
//! episode simulator, [`allocation`] the variance-optimal proportions and
//! hardness quantities, [`estimator`] the running statistics and confidence
//! bounds, [`strategies`] the behavior policies with their safety budget, and
//! [`harness`] the Monte Carlo driver with its config and output formats.

pub mod allocation;
pub mod env;
pub mod estimator;
pub mod harness;
pub mod strategies;

pub use allocation::{compute_b_star, compute_m, dag_b0, AllocationTable, ComplexityReport};
pub use env::{LayeredMdp, TargetPolicy, Topology};
pub use estimator::{EstimateView, SufficientStats, WidthMode, WidthParams};
pub use strategies::StrategyKind;
