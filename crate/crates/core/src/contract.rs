//! Contract primitives: user types, valuations, menus, utilities and the
//! participation / truth-telling checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostCurve;
use crate::error::{ensure, ensure_finite, ValidationError};

/// Default absolute tolerance on utility differences.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// Utilities within this distance of the best are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

const PMF_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ContractError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("menu has {menu} items but there are {types} types")]
    Misaligned { menu: usize, types: usize },
    #[error("menu is empty")]
    EmptyMenu,
}

/// Ordered user types with their probability mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeSet {
    thetas: Vec<f64>,
    pmf: Vec<f64>,
}

impl TypeSet {
    pub fn new(thetas: Vec<f64>, pmf: Vec<f64>) -> Result<Self, ValidationError> {
        ensure(!thetas.is_empty(), "thetas", "at least one type is required")?;
        ensure(
            thetas.len() == pmf.len(),
            "pmf",
            format!("has {} entries for {} types", pmf.len(), thetas.len()),
        )?;
        for (i, &t) in thetas.iter().enumerate() {
            let path = format!("thetas[{i}]");
            ensure_finite(t, &path)?;
            ensure(t > 0.0, &path, "type values must be positive")?;
        }
        for (i, w) in thetas.windows(2).enumerate() {
            ensure(
                w[0] < w[1],
                &format!("thetas[{}]", i + 1),
                format!("type values must be strictly ascending ({} follows {})", w[1], w[0]),
            )?;
        }
        for (i, &p) in pmf.iter().enumerate() {
            let path = format!("pmf[{i}]");
            ensure_finite(p, &path)?;
            ensure(p >= 0.0, &path, "probabilities must be nonnegative")?;
        }
        let total: f64 = pmf.iter().sum();
        ensure(
            (total - 1.0).abs() <= PMF_SUM_TOLERANCE,
            "pmf",
            format!("probabilities must sum to 1, got {total}"),
        )?;
        Ok(Self { thetas, pmf })
    }

    pub fn uniform(thetas: Vec<f64>) -> Result<Self, ValidationError> {
        let k = thetas.len().max(1);
        Self::new(thetas, vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn theta(&self, k: usize) -> f64 {
        self.thetas[k]
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.pmf[k]
    }
}

/// Concave valuation of quality, with `v(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Valuation {
    /// `a·ln(1 + q)`
    Log { a: f64 },
    /// `a·√q`
    Sqrt { a: f64 },
    /// `a·q^b` with `0 < b < 1`
    Power { a: f64, b: f64 },
}

impl Default for Valuation {
    fn default() -> Self {
        Valuation::Log { a: 1.0 }
    }
}

impl Valuation {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let a = self.scale();
        ensure_finite(a, "a")?;
        ensure(a > 0.0, "a", "valuation scale must be positive")?;
        if let Valuation::Power { b, .. } = *self {
            ensure_finite(b, "b")?;
            ensure(b > 0.0 && b < 1.0, "b", "power exponent must lie in (0, 1)")?;
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        match *self {
            Valuation::Log { a } | Valuation::Sqrt { a } | Valuation::Power { a, .. } => a,
        }
    }

    pub fn value(&self, q: f64) -> f64 {
        match *self {
            Valuation::Log { a } => a * q.ln_1p(),
            Valuation::Sqrt { a } => a * q.sqrt(),
            Valuation::Power { a, b } => a * q.powf(b),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            Valuation::Log { a } => Valuation::Log { a: a * factor },
            Valuation::Sqrt { a } => Valuation::Sqrt { a: a * factor },
            Valuation::Power { a, b } => Valuation::Power { a: a * factor, b },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractItem {
    pub q: f64,
    pub p: f64,
}

impl ContractItem {
    pub const NULL: ContractItem = ContractItem { q: 0.0, p: 0.0 };

    pub fn new(q: f64, p: f64) -> Self {
        Self { q, p }
    }

    fn validate(&self) -> Result<(), ValidationError> {
        ensure_finite(self.q, "q")?;
        ensure_finite(self.p, "p")?;
        ensure((0.0..=1.0).contains(&self.q), "q", "quality must lie in [0, 1]")?;
        ensure(self.p >= 0.0, "p", "price must be nonnegative")?;
        Ok(())
    }
}

/// One `(q, p)` item per type, in type order.
///
/// Construction only checks the domain of each item; a menu need not be
/// feasible or monotone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractMenu {
    items: Vec<ContractItem>,
}

impl ContractMenu {
    pub fn new(items: Vec<ContractItem>) -> Result<Self, ValidationError> {
        for (i, item) in items.iter().enumerate() {
            item.validate().map_err(|e| e.under(&format!("items[{i}]")))?;
        }
        Ok(Self { items })
    }

    pub fn from_pairs(qs: &[f64], ps: &[f64]) -> Result<Self, ValidationError> {
        ensure(qs.len() == ps.len(), "items", "q and p vectors differ in length")?;
        Self::new(qs.iter().zip(ps).map(|(&q, &p)| ContractItem::new(q, p)).collect())
    }

    pub fn items(&self) -> &[ContractItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn qs(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.q).collect()
    }

    pub fn ps(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.p).collect()
    }

    /// True when both q and p are weakly nondecreasing in type.
    pub fn is_monotone(&self) -> bool {
        self.items.windows(2).all(|w| w[0].q <= w[1].q && w[0].p <= w[1].p)
    }

    fn aligned(&self, types: &TypeSet) -> Result<(), ContractError> {
        if self.len() != types.len() {
            return Err(ContractError::Misaligned {
                menu: self.len(),
                types: types.len(),
            });
        }
        Ok(())
    }
}

/// `θ·v(q) − p` without domain checks.
pub(crate) fn raw_utility(theta: f64, v: &Valuation, item: &ContractItem) -> f64 {
    theta * v.value(item.q) - item.p
}

pub fn user_utility(theta: f64, v: &Valuation, item: ContractItem) -> Result<f64, ContractError> {
    ensure_finite(theta, "theta")?;
    ensure(theta > 0.0, "theta", "type value must be positive")?;
    v.validate()?;
    item.validate()?;
    Ok(raw_utility(theta, v, &item))
}

/// Expected provider margin over the type distribution. Items with `q = 0`
/// are the null contract and cost nothing.
pub fn sp_expected_profit(menu: &ContractMenu, types: &TypeSet, curve: &CostCurve) -> Result<f64, ContractError> {
    menu.aligned(types)?;
    Ok(menu
        .items
        .iter()
        .zip(types.pmf())
        .map(|(item, &prob)| prob * (item.p - curve.effective_cost(item.q)))
        .sum())
}

/// The item a type would pick, returned as `(0-based index, utility)`.
/// Near-ties go to the higher index.
pub fn best_response(theta: f64, v: &Valuation, menu: &ContractMenu) -> Result<(usize, f64), ContractError> {
    best_response_within(theta, v, menu, TIE_TOLERANCE)
}

/// [`best_response`] with an explicit tie tolerance.
pub fn best_response_within(
    theta: f64,
    v: &Valuation,
    menu: &ContractMenu,
    tie_tolerance: f64,
) -> Result<(usize, f64), ContractError> {
    if menu.is_empty() {
        return Err(ContractError::EmptyMenu);
    }
    let utilities: Vec<f64> = menu.items.iter().map(|it| raw_utility(theta, v, it)).collect();
    let best = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let idx = utilities
        .iter()
        .rposition(|&u| u >= best - tie_tolerance)
        .expect("nonempty menu");
    Ok((idx, utilities[idx]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrViolation {
    pub type_index: usize,
    /// `u_k(q_k, p_k)`; negative when violated.
    pub slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IcViolation {
    pub type_index: usize,
    pub deviation: usize,
    /// `u_k(q_k, p_k) − u_k(q_j, p_j)`; negative when violated.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub ir_violations: Vec<IrViolation>,
    pub ic_violations: Vec<IcViolation>,
    pub max_violation: f64,
    pub tolerance: f64,
    pub feasible: bool,
    pub constraints_checked: usize,
}

/// Checks every participation constraint and every pairwise truth-telling
/// constraint, `K + K·(K − 1)` in total.
pub fn verify_feasibility(
    menu: &ContractMenu,
    types: &TypeSet,
    v: &Valuation,
    tolerance: f64,
) -> Result<FeasibilityReport, ContractError> {
    menu.aligned(types)?;
    let k = types.len();
    let mut ir_violations = Vec::new();
    let mut ic_violations = Vec::new();
    let mut max_violation = 0.0_f64;

    for (i, &theta) in types.thetas().iter().enumerate() {
        let own = raw_utility(theta, v, &menu.items[i]);
        if own < -tolerance {
            ir_violations.push(IrViolation { type_index: i, slack: own });
        }
        max_violation = max_violation.max(-own);
        for (j, other) in menu.items.iter().enumerate() {
            if j == i {
                continue;
            }
            let slack = own - raw_utility(theta, v, other);
            if slack < -tolerance {
                ic_violations.push(IcViolation {
                    type_index: i,
                    deviation: j,
                    slack,
                });
            }
            max_violation = max_violation.max(-slack);
        }
    }

    Ok(FeasibilityReport {
        feasible: max_violation <= tolerance,
        ir_violations,
        ic_violations,
        max_violation,
        tolerance,
        constraints_checked: k + k * (k - 1),
    })
}

/// The reduced constraint set: participation for the lowest type, each
/// type's truth-telling against its lower neighbour, and monotone quality.
pub fn satisfies_reduced_constraints(
    menu: &ContractMenu,
    types: &TypeSet,
    v: &Valuation,
    tolerance: f64,
) -> Result<bool, ContractError> {
    menu.aligned(types)?;
    let items = &menu.items;
    if raw_utility(types.theta(0), v, &items[0]) < -tolerance {
        return Ok(false);
    }
    for k in 1..items.len() {
        let theta = types.theta(k);
        if raw_utility(theta, v, &items[k]) - raw_utility(theta, v, &items[k - 1]) < -tolerance {
            return Ok(false);
        }
        if items[k].q < items[k - 1].q {
            return Ok(false);
        }
    }
    Ok(true)
}
