//! Contract-based pricing for LLM-backed cloud services.
//!
//! Services are scored on latency and satisfaction ([`qos`]), costed
//! ([`cost`]), and offered to users of hidden type through a menu of
//! quality/price contracts ([`contract`], [`solver`]). [`scenario`] and
//! [`experiment`] tie these together for the `pact` command-line tool.

pub mod contract;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod qos;
pub mod report;
pub mod scalar;
pub mod scenario;
pub mod solver;

pub use contract::{
    best_response, satisfies_reduced_constraints, sp_expected_profit, user_utility, verify_feasibility, ContractItem,
    ContractMenu, FeasibilityReport, TypeSet, Valuation,
};
pub use cost::{cost_at, fit_cost_curve, service_cost, token_cost, CostCurve, CostFamily, CostParams};
pub use error::ValidationError;
pub use qos::{qos_score, qos_table, total_latency, Environment, QosLevel, ServiceConfig};
pub use scenario::{load_scenario, Scenario};
pub use solver::{
    brute_force_second_best, prices_from_binding, solve_first_best, solve_second_best, virtual_weights, SolveMode,
    SolveResult, SolverOptions,
};
