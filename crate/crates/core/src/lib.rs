//! Congestion-aware pricing of EV charging stations.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithm of the
//! toolchain; IO, configuration files and the command line live in the
//! companion `evcs` crate.
//!
//! - [`model`]: EV types, station profiles, instances and derived quantities.
//! - [`scenario`]: seeded Monte-Carlo sampling of days.
//! - [`dual`]: Lagrangian dual decomposition with subgradient price updates.
//! - [`exact`]: exhaustive feasibility and optimum for small instances.
//! - [`pricing`]: Monte-Carlo multiplier samples, price tables and quotes.
//! - [`online`]: online replay under priced or first-come-first-serve policies.

#![no_std]

extern crate alloc;

pub mod dual;
pub mod exact;
pub mod model;
pub mod online;
pub mod pricing;
pub mod scenario;

pub use dual::{
    dual_value, solve_dual, station_relaxed_schedule, update_multipliers, user_choice, Assignment,
    DualError, DualResult, FractionalSchedule, PriceMatrix, SolverParams, StepSchedule,
    UpdateMode,
};
pub use exact::{
    check_schedule, feasible_schedule, optimal_assignment, BinarySchedule, ExactSolution,
    OracleError,
};
pub use model::{disutility, distance, energy_slots, EvType, Instance, ModelError, Point, StationProfile};
pub use online::{
    commit_schedules, compute_metrics, fcfs_choose, priced_choose, simulate_day, DayReport,
    Policy, PolicyKind, PolicySummary, Ratio, SimError, SimOptions, StationState,
};
pub use pricing::{
    build_price_table, feature_bucket, quote, run_monte_carlo, Aggregation, BucketScheme,
    FeatureKey, Heuristic, MultiplierSample, PriceTable, PricingError, TableOptions,
};
pub use scenario::{sample_scenario, Dist, GenConfig, GenError, Scenario, PRNG_ALGORITHM};
