//! Bounded one-dimensional maximization.

use thiserror::Error;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("scalar search did not reach tolerance {tolerance} after {iterations} iterations (bracket width {width})")]
pub struct NotConverged {
    pub tolerance: f64,
    pub iterations: usize,
    pub width: f64,
}

pub const MAX_GOLDEN_ITERATIONS: usize = 500;

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
///
/// The endpoints are compared against the interior estimate at the end, so a
/// maximum sitting on the boundary is returned exactly. Ties prefer the
/// upper endpoint, then the lower one.
pub fn golden_section_max<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64), NotConverged>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iterations = 0;
    while b - a > tol {
        if iterations >= MAX_GOLDEN_ITERATIONS {
            return Err(NotConverged {
                tolerance: tol,
                iterations,
                width: b - a,
            });
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
        iterations += 1;
    }
    let mid = 0.5 * (a + b);
    let interior = (mid, f(mid));
    Ok(pick_best([(hi, f(hi)), (lo, f(lo)), interior]))
}

/// Evaluates `f` on `n + 1` evenly spaced points of `[lo, hi]`, then polishes
/// the best cell with golden-section search. Used when `f` is not known to be
/// unimodal.
pub fn grid_refine_max<F>(f: F, lo: f64, hi: f64, n: usize, tol: f64) -> Result<(f64, f64), NotConverged>
where
    F: Fn(f64) -> f64,
{
    let n = n.max(1);
    let step = (hi - lo) / n as f64;
    let mut best = (lo, f(lo));
    let mut best_i = 0;
    for i in 1..=n {
        let x = if i == n { hi } else { lo + step * i as f64 };
        let fx = f(x);
        if fx >= best.1 {
            best = (x, fx);
            best_i = i;
        }
    }
    let a = lo + step * best_i.saturating_sub(1) as f64;
    let b = if best_i + 1 >= n { hi } else { lo + step * (best_i + 1) as f64 };
    let polished = golden_section_max(&f, a, b, tol)?;
    Ok(pick_best([best, polished, best]))
}

fn pick_best<const N: usize>(candidates: [(f64, f64); N]) -> (f64, f64) {
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.1 > best.1 {
            best = *c;
        }
    }
    best
}
