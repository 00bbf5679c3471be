//! Scenario-level runs: QoS tables, menu solves, liability sweeps and
//! population simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::contract::{
    best_response_within, raw_utility, verify_feasibility, ContractError, ContractMenu, FeasibilityReport, TypeSet,
    Valuation, FEASIBILITY_TOLERANCE,
};
use crate::cost::{fit_cost_curve, service_cost, CostBreakdown, CostCurve, CostError};
use crate::error::ValidationError;
use crate::qos::{qos_table, QosError, QosTable};
use crate::scenario::Scenario;
use crate::solver::{solve_first_best, solve_second_best, SolveMode, SolveResult, SolverError};

/// Identifier of the generator behind [`simulate`], written into output headers.
pub const RNG_ALGORITHM: &str = "chacha8/seed_from_u64";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Qos(#[from] QosError),
    #[error("cost model: {0}")]
    Cost(#[from] CostError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("menu is infeasible for this scenario (max violation {})", .0.max_violation)]
    Infeasible(Box<FeasibilityReport>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QosReport {
    pub table: QosTable,
    pub gamma_calibration: f64,
    /// `q − expected_q` per service, where a reference value is given.
    pub deviations: Vec<Option<f64>>,
}

impl QosReport {
    pub fn max_abs_deviation(&self) -> Option<f64> {
        self.deviations
            .iter()
            .flatten()
            .map(|d| d.abs())
            .reduce(f64::max)
    }
}

pub fn run_qos(scenario: &Scenario) -> Result<QosReport, ExperimentError> {
    let table = qos_table(&scenario.services, &scenario.environment)?;
    let deviations = scenario
        .services
        .iter()
        .zip(&table.levels)
        .map(|(svc, lvl)| svc.expected_q.map(|e| lvl.q - e))
        .collect();
    Ok(QosReport {
        table,
        gamma_calibration: scenario.environment.gamma_calibration,
        deviations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostPoint {
    pub id: u32,
    pub q: f64,
    pub cost: CostBreakdown,
}

/// `(q_k, C_k)` for every service, with each liability surcharge scaled by
/// `liability_multiplier`.
pub fn cost_points(scenario: &Scenario, liability_multiplier: f64) -> Result<Vec<CostPoint>, ExperimentError> {
    if !(liability_multiplier.is_finite() && liability_multiplier >= 0.0) {
        return Err(ValidationError::new("multiplier", "liability multiplier must be a nonnegative number").into());
    }
    let table = qos_table(&scenario.services, &scenario.environment)?;
    scenario
        .services
        .iter()
        .zip(&table.levels)
        .map(|(svc, lvl)| {
            let mut svc = svc.clone();
            svc.liability *= liability_multiplier;
            let cost = service_cost(&svc, &scenario.environment, &scenario.cost_params)?;
            Ok(CostPoint {
                id: svc.id,
                q: lvl.q,
                cost,
            })
        })
        .collect()
}

pub fn fit_scenario_curve(scenario: &Scenario, liability_multiplier: f64) -> Result<(Vec<CostPoint>, CostCurve), ExperimentError> {
    let points = cost_points(scenario, liability_multiplier)?;
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.q, p.cost.total)).collect();
    let curve = fit_cost_curve(&xy, scenario.cost_fit_family)?;
    Ok((points, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveRun {
    pub with_liability: bool,
    pub points: Vec<CostPoint>,
    pub curve: CostCurve,
    pub result: SolveResult,
    /// Full constraint check; only produced for second best.
    pub feasibility: Option<FeasibilityReport>,
}

/// Fits the cost curve (with liability when `with_liability`) and solves.
pub fn run_solve(scenario: &Scenario, mode: SolveMode, with_liability: bool) -> Result<SolveRun, ExperimentError> {
    let multiplier = if with_liability { 1.0 } else { 0.0 };
    let (points, curve) = fit_scenario_curve(scenario, multiplier)?;
    let (result, feasibility) = match mode {
        SolveMode::SecondBest => {
            let r = solve_second_best(&scenario.types, &scenario.valuation, &curve, &scenario.solver_options)?;
            let report = verify_feasibility(&r.menu, &scenario.types, &scenario.valuation, FEASIBILITY_TOLERANCE)?;
            (r, Some(report))
        }
        SolveMode::FirstBest => (
            solve_first_best(&scenario.types, &scenario.valuation, &curve, &scenario.solver_options)?,
            None,
        ),
    };
    Ok(SolveRun {
        with_liability,
        points,
        curve,
        result,
        feasibility,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub multiplier: f64,
    pub expected_profit: f64,
    pub mean_q: f64,
    pub mean_p: f64,
    pub social_welfare: f64,
}

/// Second-best solves with every liability surcharge scaled by each
/// multiplier in turn.
pub fn run_sweep_liability(scenario: &Scenario, multipliers: &[f64]) -> Result<Vec<SweepRow>, ExperimentError> {
    multipliers
        .iter()
        .map(|&m| {
            let (_, curve) = fit_scenario_curve(scenario, m)?;
            let r = solve_second_best(&scenario.types, &scenario.valuation, &curve, &scenario.solver_options)?;
            Ok(SweepRow {
                multiplier: m,
                expected_profit: r.expected_profit,
                mean_q: r.expected_quality(),
                mean_p: r.expected_price(),
                social_welfare: r.social_welfare,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationOutcome {
    pub n: u64,
    pub seed: u64,
    pub rng: &'static str,
    /// Draws per type.
    pub type_counts: Vec<u64>,
    /// Draws that selected each menu item.
    pub selection_counts: Vec<u64>,
    pub empirical_profit: f64,
    pub empirical_mean_utility: f64,
    pub empirical_social_welfare: f64,
}

/// Draws `n` users from the type distribution and lets each pick its best
/// menu item. The menu must pass the full constraint check at `tolerance`,
/// which is also the tie tolerance for choices. A choice that is identical
/// to the type's own item is counted against the type's own slot.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    types: &TypeSet,
    v: &Valuation,
    curve: &CostCurve,
    menu: &ContractMenu,
    n: u64,
    seed: u64,
    tolerance: f64,
) -> Result<SimulationOutcome, ExperimentError> {
    if n == 0 {
        return Err(ValidationError::new("n", "at least one draw is required").into());
    }
    let report = verify_feasibility(menu, types, v, tolerance)?;
    if !report.feasible {
        return Err(ExperimentError::Infeasible(Box::new(report)));
    }

    let k = types.len();
    let choices = types
        .thetas()
        .iter()
        .enumerate()
        .map(|(t, &theta)| {
            let (idx, u) = best_response_within(theta, v, menu, tolerance)?;
            // Identical items are one offering; credit it to the type's own slot.
            let own = t.min(menu.len() - 1);
            Ok(if menu.items()[idx] == menu.items()[own] { (own, u) } else { (idx, u) })
        })
        .collect::<Result<Vec<_>, ContractError>>()?;

    let mut cdf = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &p in types.pmf() {
        acc += p;
        cdf.push(acc);
    }
    let last_supported = types.pmf().iter().rposition(|&p| p > 0.0).unwrap_or(k - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut type_counts = vec![0_u64; k];
    for _ in 0..n {
        let u: f64 = rng.gen();
        let drawn = cdf.iter().position(|&f| u < f).unwrap_or(last_supported).min(last_supported);
        type_counts[drawn] += 1;
    }

    let mut selection_counts = vec![0_u64; menu.len()];
    let (mut profit, mut utility) = (0.0, 0.0);
    for (t, &count) in type_counts.iter().enumerate() {
        let (item_idx, _) = choices[t];
        let item = menu.items()[item_idx];
        selection_counts[item_idx] += count;
        profit += count as f64 * (item.p - curve.effective_cost(item.q));
        utility += count as f64 * raw_utility(types.theta(t), v, &item);
    }
    let n_f = n as f64;
    Ok(SimulationOutcome {
        n,
        seed,
        rng: RNG_ALGORITHM,
        type_counts,
        selection_counts,
        empirical_profit: profit / n_f,
        empirical_mean_utility: utility / n_f,
        empirical_social_welfare: (profit + utility) / n_f,
    })
}

/// [`simulate`] against the scenario's types, valuation and fitted cost curve.
pub fn simulate_population(scenario: &Scenario, menu: &ContractMenu, n: u64, seed: u64) -> Result<SimulationOutcome, ExperimentError> {
    simulate_population_within(scenario, menu, n, seed, FEASIBILITY_TOLERANCE)
}

pub fn simulate_population_within(
    scenario: &Scenario,
    menu: &ContractMenu,
    n: u64,
    seed: u64,
    tolerance: f64,
) -> Result<SimulationOutcome, ExperimentError> {
    let multiplier = if scenario.liability_enabled { 1.0 } else { 0.0 };
    let (_, curve) = fit_scenario_curve(scenario, multiplier)?;
    simulate(&scenario.types, &scenario.valuation, &curve, menu, n, seed, tolerance)
}
