//! The information-cost trade-off: curve sweeps with warm starting,
//! phase-transition detection, binary search of `beta` for a cost guarantee,
//! and slope/convexity verification of the resulting curve.

use crate::error::{Error, Result};
use crate::plant::{CostSpec, PlantSpec};
use crate::solver::{self, SolveReport, SolverConfig};

/// One sample of the information-cost curve.
#[derive(Debug, Clone)]
pub struct TradeoffPoint {
    pub beta: f64,
    pub cost_rate: f64,
    /// Information rate in nats; `f64::INFINITY` at the classic limit.
    pub info_rate: f64,
    pub order: usize,
    pub converged: bool,
    pub lagrangian: f64,
}

impl TradeoffPoint {
    pub fn from_report(r: &SolveReport) -> Self {
        TradeoffPoint {
            beta: r.state.beta,
            cost_rate: r.cost_rate,
            info_rate: r.info_rate,
            order: r.order(),
            converged: r.converged,
            lagrangian: r.lagrangian,
        }
    }
}

/// A sweep over ascending `beta` values plus the detected order changes.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<TradeoffPoint>,
    /// `(beta_critical, old_order, new_order)`, refined by bisection.
    pub transitions: Vec<(f64, usize, usize)>,
}

/// The order-0 anchor solution at `beta = 0`.
pub fn beta_zero_solution(
    plant: &PlantSpec,
    cost: &CostSpec,
    config: &SolverConfig,
) -> Result<SolveReport> {
    solver::beta_zero_report(plant, cost, config)
}

/// The classic limit `beta = infinity`.
pub fn beta_inf_solution(
    plant: &PlantSpec,
    cost: &CostSpec,
    config: &SolverConfig,
) -> Result<SolveReport> {
    solver::beta_inf_report(plant, cost, config)
}

/// Warm-started continuation sweep over an ascending grid. Per-point
/// non-convergence is recorded and the sweep continues from the last
/// converged state. Order changes between consecutive converged points are
/// refined by bisection to 1e-6 relative width.
pub fn sweep_curve(
    plant: &PlantSpec,
    cost: &CostSpec,
    beta_grid: &[f64],
    config: &SolverConfig,
) -> Result<SweepResult> {
    if beta_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "beta grid must be strictly ascending".into(),
        ));
    }
    if beta_grid.iter().any(|&b| b < 0.0 || !b.is_finite()) {
        return Err(Error::InvalidArgument(
            "beta grid entries must be finite and nonnegative".into(),
        ));
    }
    let base = solver::beta_zero_report(plant, cost, config)?;
    let mut warm = base.state.clone();
    let mut points = Vec::with_capacity(beta_grid.len());
    let mut transitions = Vec::new();
    let mut prev_converged: Option<(f64, usize)> = None;

    for &beta in beta_grid {
        let report = if beta == 0.0 {
            solver::beta_zero_report(plant, cost, config)?
        } else {
            solver::solve_fixed_point(plant, cost, beta, &warm, config)?
        };
        let point = TradeoffPoint::from_report(&report);
        if report.converged {
            if let Some((prev_beta, prev_order)) = prev_converged {
                if point.order != prev_order {
                    let critical = refine_transition(
                        plant, cost, prev_beta, beta, prev_order, &warm, config,
                    )?;
                    transitions.push((critical, prev_order, point.order));
                }
            }
            warm = report.state.clone();
            prev_converged = Some((beta, point.order));
        }
        points.push(point);
    }
    Ok(SweepResult {
        points,
        transitions,
    })
}

/// Bisects the order change between two consecutive converged sweep points.
fn refine_transition(
    plant: &PlantSpec,
    cost: &CostSpec,
    beta_lo: f64,
    beta_hi: f64,
    order_lo: usize,
    warm_lo: &solver::FixedPointState,
    config: &SolverConfig,
) -> Result<f64> {
    let mut lo = beta_lo.max(1e-300);
    let mut hi = beta_hi;
    let mut warm = warm_lo.clone();
    while (hi - lo) / lo.max(1e-300) > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let r = if mid == 0.0 {
            solver::beta_zero_report(plant, cost, config)?
        } else {
            solver::solve_fixed_point(plant, cost, mid, &warm, config)?
        };
        if r.converged && r.order() == order_lo {
            lo = mid;
            warm = r.state.clone();
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Binary search of `beta` for the cost guarantee `c`: returns the solution
/// with `cost_rate <= c` and the smallest information rate found along the
/// continuation path.
pub fn solve_for_cost(
    plant: &PlantSpec,
    cost: &CostSpec,
    c: f64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    if !c.is_finite() || c < 0.0 {
        return Err(Error::InvalidArgument(
            "cost guarantee must be finite and nonnegative".into(),
        ));
    }
    let cost_tol = 1e-8_f64.max(1e-6 * c);
    let zero = solver::beta_zero_report(plant, cost, config)?;
    if c >= zero.cost_rate - cost_tol {
        return Ok(zero);
    }
    let inf = solver::beta_inf_report(plant, cost, config)?;
    if c < inf.cost_rate - cost_tol {
        return Err(Error::InfeasibleCost {
            requested: c,
            minimum: inf.cost_rate,
        });
    }

    // expand [beta_lo, beta_hi] until the upper end meets the guarantee
    let mut beta_lo = 1e-6;
    let mut beta_hi = 1.0;
    let mut hi_report = solver::solve_beta(plant, cost, beta_hi, config)?;
    let mut best: Option<SolveReport> = None;
    let consider = |r: &SolveReport, best: &mut Option<SolveReport>| {
        if r.converged && r.cost_rate <= c + cost_tol {
            let better = match best {
                None => true,
                Some(b) => r.info_rate < b.info_rate,
            };
            if better {
                *best = Some(r.clone());
            }
        }
    };
    consider(&hi_report, &mut best);
    while hi_report.cost_rate > c && beta_hi < 1e9 {
        beta_lo = beta_hi;
        beta_hi *= 2.0;
        hi_report = solver::solve_beta(plant, cost, beta_hi, config)?;
        consider(&hi_report, &mut best);
    }
    if hi_report.cost_rate > c {
        // even beta = 1e9 falls short: the infinite-beta solution is the answer
        return Ok(inf);
    }

    for _ in 0..200 {
        let mid = (beta_lo * beta_hi).sqrt();
        let r = solver::solve_beta(plant, cost, mid, config)?;
        consider(&r, &mut best);
        if r.converged && (r.cost_rate - c).abs() <= cost_tol {
            return Ok(r);
        }
        if r.cost_rate > c {
            beta_lo = mid;
        } else {
            beta_hi = mid;
        }
        if (beta_hi - beta_lo) / beta_lo < 1e-12 {
            break;
        }
    }
    best.ok_or_else(|| Error::InvalidArgument(
        "binary search failed to locate a converged solution meeting the guarantee".into(),
    ))
}

/// One slope sample of the curve check.
#[derive(Debug, Clone)]
pub struct SlopeSample {
    pub beta: f64,
    pub finite_difference: f64,
    pub expected: f64,
    pub rel_error: f64,
}

/// Slope, monotonicity and convexity diagnostics of a sweep.
#[derive(Debug, Clone)]
pub struct SlopeCheck {
    pub samples: Vec<SlopeSample>,
    pub max_rel_error: f64,
    /// Cost nonincreasing and information nondecreasing along ascending beta.
    pub monotone: bool,
    /// Smallest second divided difference of info vs cost.
    pub min_convexity: f64,
}

/// Central finite differences of information vs cost at interior converged
/// points past the first transition, compared against `-beta`; also verifies
/// monotonicity and discrete convexity of the `(cost, info)` samples.
pub fn slope_check(sweep: &SweepResult) -> Result<SlopeCheck> {
    let pts: Vec<&TradeoffPoint> = sweep
        .points
        .iter()
        .filter(|p| p.converged && p.info_rate.is_finite())
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(
            "slope check needs at least three converged points".into(),
        ));
    }
    let mut monotone = true;
    for w in pts.windows(2) {
        if w[1].cost_rate > w[0].cost_rate + 1e-8 || w[1].info_rate < w[0].info_rate - 1e-8 {
            monotone = false;
        }
    }
    let mut samples = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    for i in 1..pts.len() - 1 {
        // only interior points with active modes on both sides
        if pts[i - 1].order == 0 || pts[i].order == 0 || pts[i + 1].order == 0 {
            continue;
        }
        let dj = pts[i + 1].cost_rate - pts[i - 1].cost_rate;
        if dj.abs() < 1e-14 {
            continue;
        }
        let slope = (pts[i + 1].info_rate - pts[i - 1].info_rate) / dj;
        let expected = -pts[i].beta;
        let rel_error = (slope - expected).abs() / pts[i].beta;
        max_rel_error = max_rel_error.max(rel_error);
        samples.push(SlopeSample {
            beta: pts[i].beta,
            finite_difference: slope,
            expected,
            rel_error,
        });
    }
    let mut min_convexity = f64::INFINITY;
    for w in pts.windows(3) {
        let (x1, x2, x3) = (w[0].cost_rate, w[1].cost_rate, w[2].cost_rate);
        let (f1, f2, f3) = (w[0].info_rate, w[1].info_rate, w[2].info_rate);
        if (x2 - x1).abs() < 1e-12 || (x3 - x2).abs() < 1e-12 || (x3 - x1).abs() < 1e-12 {
            continue;
        }
        let dd = ((f3 - f2) / (x3 - x2) - (f2 - f1) / (x2 - x1)) / (x3 - x1);
        min_convexity = min_convexity.min(dd);
    }
    Ok(SlopeCheck {
        samples,
        max_rel_error,
        monotone,
        min_convexity,
    })
}

/// Logarithmically spaced grid, inclusive of both ends.
pub fn log_grid(beta_min: f64, beta_max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || beta_min <= 0.0 || beta_max <= beta_min {
        return Err(Error::InvalidArgument(
            "log grid needs points >= 2 and 0 < beta_min < beta_max".into(),
        ));
    }
    let ratio = (beta_max / beta_min).powf(1.0 / (points - 1) as f64);
    Ok((0..points)
        .map(|i| {
            if i == points - 1 {
                beta_max
            } else {
                beta_min * ratio.powi(i as i32)
            }
        })
        .collect())
}

/// Linearly spaced grid, inclusive of both ends.
pub fn linear_grid(beta_min: f64, beta_max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || beta_min < 0.0 || beta_max <= beta_min {
        return Err(Error::InvalidArgument(
            "linear grid needs points >= 2 and 0 <= beta_min < beta_max".into(),
        ));
    }
    let step = (beta_max - beta_min) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| {
            if i == points - 1 {
                beta_max
            } else {
                beta_min + step * i as f64
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psd::PsdMatrix;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_plant() -> PlantSpec {
        PlantSpec {
            a: dmatrix![0.9],
            b: dmatrix![1.0],
            c: dmatrix![1.0],
            sigma_xi: PsdMatrix::force(dmatrix![1.0]),
            sigma_eps: PsdMatrix::zeros(1),
        }
    }

    fn unit_cost() -> CostSpec {
        CostSpec {
            q: PsdMatrix::force(dmatrix![1.0]),
            r: PsdMatrix::force(dmatrix![1.0]),
        }
    }

    #[test]
    fn all_points_below_critical_stay_order_zero() {
        let cfg = SolverConfig::default();
        let grid = log_grid(0.005, 0.05, 6).unwrap();
        let sweep = sweep_curve(&scalar_plant(), &unit_cost(), &grid, &cfg).unwrap();
        assert!(sweep.transitions.is_empty());
        for p in &sweep.points {
            assert!(p.converged);
            assert_eq!(p.order, 0);
            assert_eq!(p.info_rate, 0.0);
            assert_relative_eq!(p.cost_rate, 50.0 / 19.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn scalar_transition_near_critical_beta() {
        let cfg = SolverConfig::default();
        let grid = log_grid(0.01, 1.0, 24).unwrap();
        let sweep = sweep_curve(&scalar_plant(), &unit_cost(), &grid, &cfg).unwrap();
        assert_eq!(sweep.transitions.len(), 1);
        let (beta_c, old, new) = sweep.transitions[0];
        assert_eq!((old, new), (0, 1));
        // first critical beta = 1 / lambda_1(beta=0), frozen from the oracle
        assert_relative_eq!(beta_c, 0.053035802469135802, max_relative = 1e-5);
    }

    #[test]
    fn zero_q_never_activates() {
        let cfg = SolverConfig::default();
        let cost = CostSpec {
            q: PsdMatrix::zeros(1),
            r: PsdMatrix::force(dmatrix![1.0]),
        };
        let r = beta_zero_solution(&scalar_plant(), &cost, &cfg).unwrap();
        assert!(r.state.s.matrix().norm() == 0.0);
        assert_eq!(r.state.spectrum.lambda_max(), 0.0);
        let grid = log_grid(0.1, 100.0, 5).unwrap();
        let sweep = sweep_curve(&scalar_plant(), &cost, &grid, &cfg).unwrap();
        assert!(sweep.transitions.is_empty());
        assert!(sweep.points.iter().all(|p| p.order == 0));
    }

    #[test]
    fn solve_for_cost_boundaries() {
        let cfg = SolverConfig::default();
        let plant = scalar_plant();
        let cost = unit_cost();
        // c at the uncontrolled cost: zero information suffices
        let r = solve_for_cost(&plant, &cost, 50.0 / 19.0, &cfg).unwrap();
        assert_eq!(r.info_rate, 0.0);
        assert_eq!(r.state.beta, 0.0);
        // c below the classic limit: infeasible
        let err = solve_for_cost(&plant, &cost, 0.7, &cfg).unwrap_err();
        assert!(matches!(err, Error::InfeasibleCost { .. }));
    }

    #[test]
    fn solve_for_cost_midway() {
        let cfg = SolverConfig::default();
        // midway guarantee frozen from the oracle curve
        let c = 1.686764449353873;
        let r = solve_for_cost(&scalar_plant(), &unit_cost(), c, &cfg).unwrap();
        assert!(r.converged);
        assert!((r.cost_rate - c).abs() < 1e-6 * c.max(1.0));
        assert_relative_eq!(r.state.beta, 0.1834238418206991, max_relative = 1e-3);
    }

    #[test]
    fn grids_are_inclusive_and_sorted() {
        let g = log_grid(0.01, 1.0, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert_relative_eq!(g[0], 0.01);
        assert_relative_eq!(g[4], 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        let l = linear_grid(0.0, 1.0, 3).unwrap();
        assert_eq!(l, vec![0.0, 0.5, 1.0]);
    }
}
