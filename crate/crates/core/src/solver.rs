//! Optimal menus under hidden types (second best) and observed types
//! (first best), plus an exhaustive grid oracle.
//!
//! With participation binding for the lowest type and each truth-telling
//! constraint binding against the next type down, prices are pinned by the
//! quality schedule and expected profit becomes
//! `Σ_k w_k·v(q_k) − P_k·C(q_k)`, where `w_k` is the virtual weight of type k.
//! Each term is maximized on its own; if the resulting schedule is not
//! monotone, adjacent violating types are pooled onto one shared quality
//! (pool-adjacent-violators) until it is.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{
    raw_utility, verify_feasibility, ContractError, ContractItem, ContractMenu, FeasibilityReport, TypeSet, Valuation,
    FEASIBILITY_TOLERANCE,
};
use crate::cost::{CostCurve, CostError};
use crate::error::{ensure, ValidationError};
use crate::scalar::{golden_section_max, grid_refine_max, NotConverged};

/// Largest type count the brute-force oracle accepts.
pub const ORACLE_MAX_TYPES: usize = 4;

/// Grid resolution for objectives that are not known to be concave.
const FALLBACK_GRID_POINTS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("inner maximization failed: {0}")]
    NotConverged(#[from] NotConverged),
    #[error("quality schedule must be nondecreasing: q[{index}] = {next} < q[{prev_index}] = {prev}", prev_index = .index - 1)]
    NonMonotone { index: usize, prev: f64, next: f64 },
    #[error("brute-force oracle supports at most {ORACLE_MAX_TYPES} types, got {0}")]
    TooManyTypes(usize),
    #[error("solved menu failed verification (max violation {})", .0.max_violation)]
    Infeasible(Box<FeasibilityReport>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Target bracket width for the inner quality search.
    #[serde(default = "default_scalar_tolerance")]
    pub scalar_tolerance: f64,
    /// Oracle grid step.
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
}

fn default_scalar_tolerance() -> f64 {
    1e-10
}

fn default_grid_step() -> f64 {
    1e-3
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scalar_tolerance: default_scalar_tolerance(),
            grid_step: default_grid_step(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), ValidationError> {
        ensure(
            self.scalar_tolerance.is_finite() && self.scalar_tolerance > 0.0,
            "scalar_tolerance",
            "must be positive",
        )?;
        ensure(
            self.grid_step.is_finite() && self.grid_step > 0.0 && self.grid_step <= 0.5,
            "grid_step",
            "must lie in (0, 0.5]",
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    SecondBest,
    FirstBest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeOutcome {
    pub theta: f64,
    pub prob: f64,
    pub q: f64,
    pub p: f64,
    pub user_utility: f64,
    /// `p − C_eff(q)`
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BindingFlags {
    /// Lowest type's participation holds with equality.
    pub ir_lowest: bool,
    /// Entry `k − 1` is set when type k is indifferent to type k − 1's item.
    pub adjacent_ic: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub mode: SolveMode,
    pub menu: ContractMenu,
    pub per_type: Vec<TypeOutcome>,
    pub expected_profit: f64,
    /// Empty for first best.
    pub virtual_weights: Vec<f64>,
    /// Index ranges of two or more types sharing one contract.
    pub ironed_segments: Vec<Range<usize>>,
    /// Block id per type; pooled types share an id.
    pub block_ids: Vec<usize>,
    pub binding: BindingFlags,
    /// Entry `k − 1` is set when `q_k > q_{k−1}`.
    pub strict_increase: Vec<bool>,
    pub social_welfare: f64,
}

impl SolveResult {
    pub fn expected_user_utility(&self) -> f64 {
        self.per_type.iter().map(|t| t.prob * t.user_utility).sum()
    }

    pub fn expected_quality(&self) -> f64 {
        self.per_type.iter().map(|t| t.prob * t.q).sum()
    }

    pub fn expected_price(&self) -> f64 {
        self.per_type.iter().map(|t| t.prob * t.p).sum()
    }

    pub fn is_pooled(&self) -> bool {
        !self.ironed_segments.is_empty()
    }
}

/// `w_k = P_k·θ_k − (1 − F_k)·(θ_{k+1} − θ_k)`, with the rent term zero for
/// the top type.
pub fn virtual_weights(types: &TypeSet) -> Vec<f64> {
    let k = types.len();
    let mut cumulative = 0.0;
    (0..k)
        .map(|i| {
            cumulative += types.prob(i);
            let own = types.prob(i) * types.theta(i);
            if i + 1 < k {
                own - (1.0 - cumulative) * (types.theta(i + 1) - types.theta(i))
            } else {
                own
            }
        })
        .collect()
}

/// Prices that make the lowest type's participation and every adjacent
/// downward truth-telling constraint bind.
pub fn prices_from_binding(qs: &[f64], types: &TypeSet, v: &Valuation) -> Result<Vec<f64>, SolverError> {
    if qs.len() != types.len() {
        return Err(ContractError::Misaligned {
            menu: qs.len(),
            types: types.len(),
        }
        .into());
    }
    for (i, w) in qs.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(SolverError::NonMonotone {
                index: i + 1,
                prev: w[0],
                next: w[1],
            });
        }
    }
    let mut prices = Vec::with_capacity(qs.len());
    let mut prev_value = 0.0;
    let mut prev_price = 0.0;
    for (k, &q) in qs.iter().enumerate() {
        let value = v.value(q);
        let price = prev_price + types.theta(k) * (value - prev_value);
        prices.push(price);
        prev_value = value;
        prev_price = price;
    }
    Ok(prices)
}

/// Maximizes `weight·v(q) − mass·C_eff(q)` over `[0, 1]`. The null contract
/// wins ties.
fn best_quality(weight: f64, mass: f64, v: &Valuation, curve: &CostCurve, opts: &SolverOptions) -> Result<f64, SolverError> {
    if weight <= 0.0 {
        return Ok(0.0);
    }
    let objective = |q: f64| weight * v.value(q) - mass * curve.eval(q);
    let (q, value) = if curve.is_convex() {
        golden_section_max(objective, 0.0, 1.0, opts.scalar_tolerance)?
    } else {
        grid_refine_max(objective, 0.0, 1.0, FALLBACK_GRID_POINTS, opts.scalar_tolerance)?
    };
    if q <= 0.0 || value <= 0.0 {
        Ok(0.0)
    } else {
        Ok(q)
    }
}

struct Block {
    start: usize,
    end: usize,
    weight: f64,
    mass: f64,
    q: f64,
}

pub fn solve_second_best(
    types: &TypeSet,
    v: &Valuation,
    curve: &CostCurve,
    opts: &SolverOptions,
) -> Result<SolveResult, SolverError> {
    check_inputs(v, curve, opts)?;
    let weights = virtual_weights(types);

    let mut stack: Vec<Block> = Vec::with_capacity(types.len());
    for (k, &w) in weights.iter().enumerate() {
        let mass = types.prob(k);
        stack.push(Block {
            start: k,
            end: k + 1,
            weight: w,
            mass,
            q: best_quality(w, mass, v, curve, opts)?,
        });
        while stack.len() >= 2 && stack[stack.len() - 2].q > stack[stack.len() - 1].q {
            let top = stack.pop().unwrap();
            let below = stack.last_mut().unwrap();
            below.end = top.end;
            below.weight += top.weight;
            below.mass += top.mass;
            below.q = best_quality(below.weight, below.mass, v, curve, opts)?;
        }
    }

    let mut qs = vec![0.0; types.len()];
    let mut block_ids = vec![0; types.len()];
    let mut ironed_segments = Vec::new();
    for (id, block) in stack.iter().enumerate() {
        for k in block.start..block.end {
            qs[k] = block.q;
            block_ids[k] = id;
        }
        if block.end - block.start > 1 {
            ironed_segments.push(block.start..block.end);
        }
    }

    let prices = prices_from_binding(&qs, types, v)?;
    let menu = ContractMenu::from_pairs(&qs, &prices)?;
    let result = assemble(SolveMode::SecondBest, menu, types, v, curve, weights, block_ids, ironed_segments);
    let report = verify_feasibility(&result.menu, types, v, FEASIBILITY_TOLERANCE)?;
    if !report.feasible {
        return Err(SolverError::Infeasible(Box::new(report)));
    }
    Ok(result)
}

/// Full-information benchmark: each type gets its surplus-maximizing quality
/// and pays its full valuation.
pub fn solve_first_best(
    types: &TypeSet,
    v: &Valuation,
    curve: &CostCurve,
    opts: &SolverOptions,
) -> Result<SolveResult, SolverError> {
    check_inputs(v, curve, opts)?;
    let items = types
        .thetas()
        .iter()
        .map(|&theta| {
            let q = best_quality(theta, 1.0, v, curve, opts)?;
            Ok(ContractItem::new(q, theta * v.value(q)))
        })
        .collect::<Result<Vec<_>, SolverError>>()?;
    let menu = ContractMenu::new(items)?;
    let block_ids = (0..types.len()).collect();
    Ok(assemble(SolveMode::FirstBest, menu, types, v, curve, Vec::new(), block_ids, Vec::new()))
}

/// Exhaustive search over every nondecreasing quality vector on the grid
/// `{0, step, 2·step, …, 1}`, with prices from the binding constraints.
///
/// The search is organised as a dynamic program over the types: profit is
/// rewritten as `Σ_k T_k·θ_k·(v(q_k) − v(q_{k−1})) − P_k·C_eff(q_k)` with
/// `T_k = Σ_{j≥k} P_j`, so each stage only needs the best prefix value. This
/// visits the same candidate set as plain enumeration without relying on the
/// virtual-weight algebra the solver uses.
pub fn brute_force_second_best(
    types: &TypeSet,
    v: &Valuation,
    curve: &CostCurve,
    grid_step: f64,
) -> Result<SolveResult, SolverError> {
    let k = types.len();
    if k > ORACLE_MAX_TYPES {
        return Err(SolverError::TooManyTypes(k));
    }
    SolverOptions {
        grid_step,
        ..SolverOptions::default()
    }
    .validate()?;
    v.validate()?;
    curve.check_shape()?;

    let grid = quality_grid(grid_step);
    let n = grid.len();
    let values: Vec<f64> = grid.iter().map(|&q| v.value(q)).collect();
    let costs: Vec<f64> = grid.iter().map(|&q| curve.effective_cost(q)).collect();
    let tails: Vec<f64> = (0..k).map(|i| types.pmf()[i..].iter().sum()).collect();

    // best[i]: best profit of types 0..=stage with q_stage = grid[i].
    // choice[stage][i]: grid index of q_{stage-1} attaining it.
    let mut best: Vec<f64> = (0..n)
        .map(|i| tails[0] * types.theta(0) * values[i] - types.prob(0) * costs[i])
        .collect();
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(k);
    choice.push(vec![0; n]);
    for stage in 1..k {
        let rent = tails[stage] * types.theta(stage);
        let mut next = vec![0.0; n];
        let mut picks = vec![0; n];
        let mut prefix_best = f64::NEG_INFINITY;
        let mut prefix_arg = 0;
        for i in 0..n {
            let carried = best[i] - rent * values[i];
            if carried > prefix_best {
                prefix_best = carried;
                prefix_arg = i;
            }
            next[i] = prefix_best + rent * values[i] - types.prob(stage) * costs[i];
            picks[i] = prefix_arg;
        }
        best = next;
        choice.push(picks);
    }

    let mut idx = (0..n).fold(0, |acc, i| if best[i] > best[acc] { i } else { acc });
    let mut q_idx = vec![0; k];
    for stage in (0..k).rev() {
        q_idx[stage] = idx;
        idx = choice[stage][idx];
    }
    let qs: Vec<f64> = q_idx.iter().map(|&i| grid[i]).collect();
    let prices = prices_from_binding(&qs, types, v)?;
    let menu = ContractMenu::from_pairs(&qs, &prices)?;

    let mut block_ids = Vec::with_capacity(k);
    let mut ironed_segments = Vec::new();
    let mut start = 0;
    for i in 0..k {
        if i > 0 && qs[i] != qs[i - 1] {
            if i - start > 1 {
                ironed_segments.push(start..i);
            }
            start = i;
        }
        block_ids.push(if i == start { i } else { block_ids[start] });
    }
    if k - start > 1 {
        ironed_segments.push(start..k);
    }
    let weights = virtual_weights(types);
    Ok(assemble(SolveMode::SecondBest, menu, types, v, curve, weights, block_ids, ironed_segments))
}

fn quality_grid(step: f64) -> Vec<f64> {
    let ratio = 1.0 / step;
    if (ratio - ratio.round()).abs() < 1e-9 {
        let n = ratio.round() as usize;
        return (0..=n).map(|i| i as f64 / n as f64).collect();
    }
    let n = ratio.floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    grid.push(1.0);
    grid
}

fn check_inputs(v: &Valuation, curve: &CostCurve, opts: &SolverOptions) -> Result<(), SolverError> {
    opts.validate()?;
    v.validate()?;
    curve.check_shape()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    mode: SolveMode,
    menu: ContractMenu,
    types: &TypeSet,
    v: &Valuation,
    curve: &CostCurve,
    virtual_weights: Vec<f64>,
    block_ids: Vec<usize>,
    ironed_segments: Vec<Range<usize>>,
) -> SolveResult {
    let per_type: Vec<TypeOutcome> = menu
        .items()
        .iter()
        .enumerate()
        .map(|(k, item)| TypeOutcome {
            theta: types.theta(k),
            prob: types.prob(k),
            q: item.q,
            p: item.p,
            user_utility: raw_utility(types.theta(k), v, item),
            margin: item.p - curve.effective_cost(item.q),
        })
        .collect();
    let expected_profit = per_type.iter().map(|t| t.prob * t.margin).sum();
    let social_welfare = per_type.iter().map(|t| t.prob * (t.user_utility + t.margin)).sum();

    let items = menu.items();
    let binding = BindingFlags {
        ir_lowest: per_type[0].user_utility.abs() <= FEASIBILITY_TOLERANCE,
        adjacent_ic: match mode {
            SolveMode::FirstBest => Vec::new(),
            SolveMode::SecondBest => (1..items.len())
                .map(|k| {
                    let theta = types.theta(k);
                    (raw_utility(theta, v, &items[k]) - raw_utility(theta, v, &items[k - 1])).abs()
                        <= FEASIBILITY_TOLERANCE
                })
                .collect(),
        },
    };
    let strict_increase = items.windows(2).map(|w| w[1].q > w[0].q).collect();

    SolveResult {
        mode,
        menu,
        per_type,
        expected_profit,
        virtual_weights,
        ironed_segments,
        block_ids,
        binding,
        strict_increase,
        social_welfare,
    }
}
