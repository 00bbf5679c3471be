//! Provider cost per service and the fitted cost-versus-QoS curve.
//!
//! A service's cost is the token compute cost plus fixed hardware and model
//! fees plus its liability surcharge. The solver does not work with the
//! discrete services directly; it consumes a continuous curve `C(q)` fitted
//! through the `(q_k, cost_k)` points. Fits are restricted to curves that are
//! nondecreasing and nonnegative on `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ensure_finite, ValidationError};
use crate::qos::{flops_per_token, token_count, Environment, ServiceConfig};
use crate::scalar::golden_section_max;

/// Resolution of the monotonicity / nonnegativity scan over `[0, 1]`.
pub const MONOTONE_CHECK_STEPS: usize = 1000;

const EXP_RATE_BOUND: f64 = 60.0;
const EXP_RATE_STEP: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("{family:?} fit needs at least {needed} points, got {got}")]
    TooFewPoints {
        family: CostFamily,
        needed: usize,
        got: usize,
    },
    #[error("cost curve is not nondecreasing on [0, 1]: {0}")]
    NotMonotone(String),
    #[error("cost curve is negative on [0, 1]: {0}")]
    Negative(String),
    #[error("q = {0} is outside [0, 1]")]
    OutOfDomain(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    /// Currency per FLOP.
    pub flop_price: f64,
    /// Fixed per-request hardware fee.
    pub hw_fee: f64,
    /// Fixed per-request model fee.
    pub model_fee: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<(), ValidationError> {
        for (name, value) in [
            ("flop_price", self.flop_price),
            ("hw_fee", self.hw_fee),
            ("model_fee", self.model_fee),
        ] {
            ensure_finite(value, name)?;
            ensure(value >= 0.0, name, "must be nonnegative")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub token_cost: f64,
    pub hw_cost: f64,
    pub model_cost: f64,
    pub liability_cost: f64,
    pub total: f64,
}

pub fn token_cost(cfg: &ServiceConfig, env: &Environment, params: &CostParams) -> Result<f64, CostError> {
    cfg.validate()?;
    env.validate()?;
    params.validate()?;
    Ok(params.flop_price * token_count(cfg, env) * flops_per_token(cfg))
}

pub fn service_cost(cfg: &ServiceConfig, env: &Environment, params: &CostParams) -> Result<CostBreakdown, CostError> {
    let token_cost = token_cost(cfg, env, params)?;
    let (hw_cost, model_cost, liability_cost) = (params.hw_fee, params.model_fee, cfg.liability);
    Ok(CostBreakdown {
        token_cost,
        hw_cost,
        model_cost,
        liability_cost,
        total: token_cost + hw_cost + model_cost + liability_cost,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostFamily {
    /// `a·q² + b·q + c0`
    #[default]
    Quadratic,
    /// `a·exp(b·q) + c0`
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CurveShape {
    Quadratic { a: f64, b: f64, c0: f64 },
    Exponential { a: f64, b: f64, c0: f64 },
}

impl CurveShape {
    pub fn family(&self) -> CostFamily {
        match self {
            CurveShape::Quadratic { .. } => CostFamily::Quadratic,
            CurveShape::Exponential { .. } => CostFamily::Exponential,
        }
    }

    pub fn coefficients(&self) -> [f64; 3] {
        match *self {
            CurveShape::Quadratic { a, b, c0 } | CurveShape::Exponential { a, b, c0 } => [a, b, c0],
        }
    }

    fn eval(&self, q: f64) -> f64 {
        match *self {
            CurveShape::Quadratic { a, b, c0 } => (a * q + b) * q + c0,
            CurveShape::Exponential { a, b, c0 } => a * (b * q).exp() + c0,
        }
    }
}

/// A fitted, monotone cost curve on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostCurve {
    shape: CurveShape,
    fit_rmse: f64,
}

impl CostCurve {
    /// Wraps a hand-specified shape after checking it is nondecreasing and
    /// nonnegative on `[0, 1]`.
    pub fn new(shape: CurveShape) -> Result<Self, CostError> {
        for (i, c) in shape.coefficients().iter().enumerate() {
            ensure_finite(*c, &format!("coefficients[{i}]"))?;
        }
        let curve = Self { shape, fit_rmse: 0.0 };
        curve.check_shape()?;
        Ok(curve)
    }

    pub fn quadratic(a: f64, b: f64, c0: f64) -> Result<Self, CostError> {
        Self::new(CurveShape::Quadratic { a, b, c0 })
    }

    pub fn exponential(a: f64, b: f64, c0: f64) -> Result<Self, CostError> {
        Self::new(CurveShape::Exponential { a, b, c0 })
    }

    pub fn shape(&self) -> CurveShape {
        self.shape
    }

    pub fn family(&self) -> CostFamily {
        self.shape.family()
    }

    pub fn fit_rmse(&self) -> f64 {
        self.fit_rmse
    }

    /// Convex curves make every served type's objective concave in q.
    pub fn is_convex(&self) -> bool {
        match self.shape {
            CurveShape::Quadratic { a, .. } | CurveShape::Exponential { a, .. } => a >= 0.0,
        }
    }

    /// Evaluates the curve. Callers must keep `q` within `[0, 1]`.
    pub(crate) fn eval(&self, q: f64) -> f64 {
        self.shape.eval(q)
    }

    /// Cost of serving a contract of quality `q`. The null contract `q = 0`
    /// is not served and costs nothing.
    pub fn effective_cost(&self, q: f64) -> f64 {
        if q == 0.0 {
            0.0
        } else {
            self.eval(q)
        }
    }

    /// Same curve with every cost multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let shape = match self.shape {
            CurveShape::Quadratic { a, b, c0 } => CurveShape::Quadratic {
                a: a * factor,
                b: b * factor,
                c0: c0 * factor,
            },
            CurveShape::Exponential { a, b, c0 } => CurveShape::Exponential {
                a: a * factor,
                b,
                c0: c0 * factor,
            },
        };
        Self {
            shape,
            fit_rmse: self.fit_rmse * factor,
        }
    }

    /// Scans `[0, 1]` on a 10^-3 grid for decreases or negative values.
    pub fn check_shape(&self) -> Result<(), CostError> {
        let values: Vec<f64> = (0..=MONOTONE_CHECK_STEPS)
            .map(|i| self.eval(i as f64 / MONOTONE_CHECK_STEPS as f64))
            .collect();
        let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let slack = 1e-12 * scale;
        for (i, w) in values.windows(2).enumerate() {
            if w[1] < w[0] - slack {
                return Err(CostError::NotMonotone(format!(
                    "C({:.3}) = {} > C({:.3}) = {}",
                    i as f64 / MONOTONE_CHECK_STEPS as f64,
                    w[0],
                    (i + 1) as f64 / MONOTONE_CHECK_STEPS as f64,
                    w[1]
                )));
            }
        }
        if values[0] < -slack {
            return Err(CostError::Negative(format!("C(0) = {}", values[0])));
        }
        Ok(())
    }
}

pub fn cost_at(curve: &CostCurve, q: f64) -> Result<f64, CostError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(CostError::OutOfDomain(q));
    }
    Ok(curve.eval(q))
}

/// Least-squares fit of `family` through `(q, cost)` points, restricted to
/// parameters giving a nondecreasing curve with `C(0) >= 0`.
///
/// Data with no increasing trend collapses to a flat curve under that
/// restriction, which is reported as [`CostError::NotMonotone`].
pub fn fit_cost_curve(points: &[(f64, f64)], family: CostFamily) -> Result<CostCurve, CostError> {
    const MIN_POINTS: usize = 3;
    if points.len() < MIN_POINTS {
        return Err(CostError::TooFewPoints {
            family,
            needed: MIN_POINTS,
            got: points.len(),
        });
    }
    for (i, &(q, c)) in points.iter().enumerate() {
        ensure_finite(q, &format!("points[{i}].q"))?;
        ensure_finite(c, &format!("points[{i}].cost"))?;
        ensure((0.0..=1.0).contains(&q), &format!("points[{i}].q"), "q must lie in [0, 1]")?;
    }
    let mut qs: Vec<f64> = points.iter().map(|p| p.0).collect();
    qs.sort_by(f64::total_cmp);
    if let Some(w) = qs.windows(2).find(|w| w[0] == w[1]) {
        return Err(ValidationError::new("points", format!("q values must be distinct, {} repeats", w[0])).into());
    }

    let ys = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let (shape, sse) = match family {
        CostFamily::Quadratic => fit_quadratic(points, &ys),
        CostFamily::Exponential => fit_exponential(points, &ys),
    };

    let rise = shape.eval(1.0) - shape.eval(0.0);
    let scale = ys.iter().fold(1.0_f64, |m, y| m.max(y.abs()));
    if !(rise > 1e-12 * scale) {
        return Err(CostError::NotMonotone(
            "costs show no increasing trend in q; best monotone fit is flat".into(),
        ));
    }
    let curve = CostCurve {
        shape,
        fit_rmse: (sse / points.len() as f64).sqrt(),
    };
    curve.check_shape()?;
    Ok(curve)
}

/// Minimizes `||X·θ - y||²` subject to `g·θ >= 0` for each constraint row,
/// by solving on every face of the constraint cone and keeping the best
/// feasible candidate. Each face is described by a basis of directions.
fn fit_on_faces(
    design: &DMatrix<f64>,
    ys: &DVector<f64>,
    constraints: &[DVector<f64>],
    faces: &[Vec<DVector<f64>>],
) -> (DVector<f64>, f64) {
    let n_params = design.ncols();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for face in faces {
        let theta = if face.is_empty() {
            DVector::zeros(n_params)
        } else {
            let dirs = DMatrix::from_columns(face);
            let reduced = design * &dirs;
            let Ok(z) = reduced.svd(true, true).solve(ys, 1e-14) else {
                continue;
            };
            dirs * z
        };
        let tol = 1e-10 * theta.amax().max(1.0);
        if constraints.iter().any(|g| g.dot(&theta) < -tol) {
            continue;
        }
        let sse = (design * &theta - ys).norm_squared();
        if best.as_ref().map_or(true, |(_, s)| sse < *s) {
            best = Some((theta, sse));
        }
    }
    // The all-active face (θ = 0) is always feasible.
    best.expect("zero face is feasible")
}

fn fit_quadratic(points: &[(f64, f64)], ys: &DVector<f64>) -> (CurveShape, f64) {
    let design = DMatrix::from_fn(points.len(), 3, |r, c| {
        let q = points[r].0;
        [q * q, q, 1.0][c]
    });
    let e = |i: usize| DVector::from_fn(3, |r, _| if r == i { 1.0 } else { 0.0 });
    let flat_slope = DVector::from_vec(vec![1.0, -2.0, 0.0]);
    // c0 >= 0, b >= 0 (slope at 0), 2a + b >= 0 (slope at 1)
    let constraints = [e(2), e(1), DVector::from_vec(vec![2.0, 1.0, 0.0])];
    let faces = vec![
        vec![e(0), e(1), e(2)],
        vec![e(0), e(1)],
        vec![e(0), e(2)],
        vec![flat_slope.clone(), e(2)],
        vec![e(0)],
        vec![flat_slope],
        vec![e(2)],
        vec![],
    ];
    let (theta, sse) = fit_on_faces(&design, ys, &constraints, &faces);
    (
        CurveShape::Quadratic {
            a: theta[0],
            b: theta[1],
            c0: theta[2],
        },
        sse,
    )
}

/// Best monotone `a·exp(b·q) + c0` for a fixed rate `b`.
fn fit_exponential_at(points: &[(f64, f64)], ys: &DVector<f64>, rate: f64) -> (CurveShape, f64) {
    // Column scaling keeps the design well conditioned for large |b|.
    let col_scale = points
        .iter()
        .map(|p| (rate * p.0).exp())
        .fold(1.0_f64, f64::max);
    let design = DMatrix::from_fn(points.len(), 2, |r, c| {
        if c == 0 {
            (rate * points[r].0).exp() / col_scale
        } else {
            1.0
        }
    });
    let e0 = DVector::from_vec(vec![1.0, 0.0]);
    let e1 = DVector::from_vec(vec![0.0, 1.0]);
    let at_zero = DVector::from_vec(vec![1.0 / col_scale, 1.0]);
    let sign = if rate > 0.0 { 1.0 } else { -1.0 };
    // sign(b)·a >= 0 (monotone), a + c0 >= 0 (C(0) >= 0)
    let constraints = [DVector::from_vec(vec![sign, 0.0]), at_zero];
    let faces = vec![
        vec![e0.clone(), e1.clone()],
        vec![e1],
        vec![DVector::from_vec(vec![1.0, -1.0 / col_scale])],
        vec![],
    ];
    let (theta, sse) = fit_on_faces(&design, ys, &constraints, &faces);
    (
        CurveShape::Exponential {
            a: theta[0] / col_scale,
            b: rate,
            c0: theta[1],
        },
        sse,
    )
}

fn fit_exponential(points: &[(f64, f64)], ys: &DVector<f64>) -> (CurveShape, f64) {
    let steps = (2.0 * EXP_RATE_BOUND / EXP_RATE_STEP).round() as usize;
    let rate_at = |i: usize| -EXP_RATE_BOUND + EXP_RATE_STEP * i as f64;
    let profile = |rate: f64| {
        if rate.abs() < 1e-8 {
            f64::INFINITY
        } else {
            fit_exponential_at(points, ys, rate).1
        }
    };

    let mut best_i = 0;
    let mut best_sse = f64::INFINITY;
    for i in 0..=steps {
        let sse = profile(rate_at(i));
        if sse < best_sse {
            best_sse = sse;
            best_i = i;
        }
    }
    let lo = rate_at(best_i.saturating_sub(1));
    let hi = rate_at((best_i + 1).min(steps));
    let rate = match golden_section_max(|r| -profile(r), lo, hi, 1e-13) {
        Ok((r, neg)) if -neg <= best_sse => r,
        _ => rate_at(best_i),
    };
    fit_exponential_at(points, ys, rate)
}
