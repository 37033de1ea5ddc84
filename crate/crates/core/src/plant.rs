//! The LTI plant, the quadratic cost, and their stationary statistics.
//!
//! Dynamics: `x' = A x + B u + xi`, `y = C x + eps`, with cost rate
//! `(x'Qx + u'Ru) / 2`. Only stable plants (`rho(A) < 1`) are accepted; the
//! trade-off sweep is anchored at the uncontrolled stationary covariance,
//! which must exist and be finite.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::psd::{self, PsdMatrix, SymMatrix, Tolerance};

/// Plant matrices and noise covariances.
#[derive(Debug, Clone)]
pub struct PlantSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma_xi: PsdMatrix,
    pub sigma_eps: PsdMatrix,
}

impl PlantSpec {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Quadratic cost weights.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub q: PsdMatrix,
    pub r: PsdMatrix,
}

/// Stationary observation statistics derived from a state covariance.
#[derive(Debug, Clone)]
pub struct ObservationStats {
    /// `Sigma_y = C Sigma_x C' + Sigma_eps`
    pub sigma_y: PsdMatrix,
    /// `K = Sigma_x C' Sigma_y^+`
    pub gain: DMatrix<f64>,
    /// `Sigma_xhat_y = K Sigma_y K'`
    pub sigma_xhat_y: PsdMatrix,
    /// Residual state noise `Sigma_kappa = Sigma_x - Sigma_xhat_y`
    pub sigma_kappa: PsdMatrix,
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Dimension and definiteness checks plus the stability requirement.
pub fn validate(plant: &PlantSpec, cost: &CostSpec) -> Result<()> {
    let (n, k, l) = (plant.state_dim(), plant.obs_dim(), plant.control_dim());
    if n == 0 || k == 0 || l == 0 {
        return Err(Error::DimensionMismatch(
            "n, k and l must all be at least 1".into(),
        ));
    }
    if plant.a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A must be square, got {}x{}",
            plant.a.nrows(),
            plant.a.ncols()
        )));
    }
    if plant.b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "B must have {} rows, got {}",
            n,
            plant.b.nrows()
        )));
    }
    if plant.c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C must have {} columns, got {}",
            n,
            plant.c.ncols()
        )));
    }
    if plant.sigma_xi.dim() != n {
        return Err(Error::DimensionMismatch("Sigma_xi must be n x n".into()));
    }
    if plant.sigma_eps.dim() != k {
        return Err(Error::DimensionMismatch("Sigma_eps must be k x k".into()));
    }
    if cost.q.dim() != n {
        return Err(Error::DimensionMismatch("Q must be n x n".into()));
    }
    if cost.r.dim() != l {
        return Err(Error::DimensionMismatch("R must be l x l".into()));
    }
    let rho = spectral_radius(&plant.a);
    if rho >= 1.0 {
        return Err(Error::UnstablePlant { rho });
    }
    Ok(())
}

/// Solves the discrete Lyapunov equation `X = A X A' + C` by squaring
/// (Smith) iterations. Deterministic; converges for `rho(A) < 1`. The
/// constant `C` may be indefinite.
pub fn dlyap(a: &DMatrix<f64>, c: &SymMatrix) -> Result<SymMatrix> {
    let n = a.nrows();
    if c.dim() != n {
        return Err(Error::DimensionMismatch(
            "Lyapunov constant must match A".into(),
        ));
    }
    let cap = 100 * n.max(1);
    let mut x = c.matrix().clone();
    let mut ak = a.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..cap {
        let xn = &x + &ak * &x * ak.transpose();
        residual = (&xn - &x).norm() / (1.0 + xn.norm());
        let done = residual <= 1e-15;
        x = xn;
        if done {
            return Ok(SymMatrix::force(x));
        }
        ak = &ak * &ak;
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::LyapunovCap { cap, residual })
}

/// Stationary covariance of the uncontrolled plant: `X = A X A' + Sigma_xi`.
pub fn uncontrolled_lyapunov(plant: &PlantSpec) -> Result<PsdMatrix> {
    let x = dlyap(&plant.a, &plant.sigma_xi.as_sym())?;
    Ok(PsdMatrix::force(x.into_inner()))
}

/// Uncontrolled cost-to-go multiplier: `S = Q + A' S A`.
pub fn dual_lyapunov(plant: &PlantSpec, cost: &CostSpec) -> Result<SymMatrix> {
    dlyap(&plant.a.transpose(), &cost.q.as_sym())
}

/// One application of the closed-loop state covariance map:
/// `(A+BL) Sigma_xhat_u (A+BL)' + A (Sigma_x - Sigma_xhat_u) A' + Sigma_xi`.
pub fn closed_loop_state_cov(
    plant: &PlantSpec,
    l_gain: &DMatrix<f64>,
    sigma_xhat_u: &PsdMatrix,
    sigma_x_prev: &PsdMatrix,
    tol: &Tolerance,
) -> Result<PsdMatrix> {
    let cond = sigma_x_prev.matrix() - sigma_xhat_u.matrix();
    let cond = psd::clip_psd(&cond, tol).map_err(|_| {
        Error::InconsistentEstimator(
            "Sigma_x - Sigma_xhat_u is not positive semidefinite".into(),
        )
    })?;
    let abl = &plant.a + &plant.b * l_gain;
    let out = &abl * sigma_xhat_u.matrix() * abl.transpose()
        + &plant.a * cond.matrix() * plant.a.transpose()
        + plant.sigma_xi.matrix();
    Ok(PsdMatrix::force(out))
}

/// Observation statistics for a given stationary state covariance.
pub fn observation_stats(
    plant: &PlantSpec,
    sigma_x: &PsdMatrix,
    tol: &Tolerance,
) -> Result<ObservationStats> {
    let sigma_y = PsdMatrix::force(
        &plant.c * sigma_x.matrix() * plant.c.transpose() + plant.sigma_eps.matrix(),
    );
    let sigma_y_pinv = psd::pinv_psd(&sigma_y, tol)?;
    let gain = sigma_x.matrix() * plant.c.transpose() * sigma_y_pinv.matrix();
    let sigma_xhat_y = PsdMatrix::force(&gain * sigma_y.matrix() * gain.transpose());
    // PSD by the Schur complement of the joint (x, y) covariance; clip roundoff.
    let sigma_kappa = psd::clip_psd(&(sigma_x.matrix() - sigma_xhat_y.matrix()), tol)
        .map_err(|_| {
            Error::InconsistentEstimator(
                "Sigma_x - Sigma_xhat_y is not positive semidefinite".into(),
            )
        })?;
    Ok(ObservationStats {
        sigma_y,
        gain,
        sigma_xhat_y,
        sigma_kappa,
    })
}

/// Stationary expected cost rate `(tr(Q Sigma_x) + tr(R Sigma_u)) / 2`.
pub fn expected_cost_rate(cost: &CostSpec, sigma_x: &PsdMatrix, sigma_u: &PsdMatrix) -> f64 {
    0.5 * ((cost.q.matrix() * sigma_x.matrix()).trace()
        + (cost.r.matrix() * sigma_u.matrix()).trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    pub(crate) fn scalar_plant(a: f64, sxi: f64, seps: f64) -> PlantSpec {
        PlantSpec {
            a: dmatrix![a],
            b: dmatrix![1.0],
            c: dmatrix![1.0],
            sigma_xi: PsdMatrix::force(dmatrix![sxi]),
            sigma_eps: PsdMatrix::force(dmatrix![seps]),
        }
    }

    fn unit_cost() -> CostSpec {
        CostSpec {
            q: PsdMatrix::force(dmatrix![1.0]),
            r: PsdMatrix::force(dmatrix![1.0]),
        }
    }

    #[test]
    fn validate_scalar_benchmark() {
        assert!(validate(&scalar_plant(0.9, 1.0, 0.0), &unit_cost()).is_ok());
    }

    #[test]
    fn validate_rejects_unstable() {
        let err = validate(&scalar_plant(1.1, 1.0, 0.0), &unit_cost()).unwrap_err();
        assert!(matches!(err, Error::UnstablePlant { .. }));
    }

    #[test]
    fn validate_rejects_bad_dims() {
        let mut plant = scalar_plant(0.9, 1.0, 0.0);
        plant.b = DMatrix::zeros(2, 1);
        assert!(matches!(
            validate(&plant, &unit_cost()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn lyapunov_scalar_geometric() {
        let plant = scalar_plant(0.9, 1.0, 0.0);
        let x = uncontrolled_lyapunov(&plant).unwrap();
        assert_relative_eq!(x.matrix()[(0, 0)], 1.0 / 0.19, max_relative = 1e-12);
    }

    #[test]
    fn lyapunov_zero_dynamics() {
        let mut plant = scalar_plant(0.0, 1.0, 0.0);
        plant.sigma_xi = PsdMatrix::force(dmatrix![2.5]);
        let x = uncontrolled_lyapunov(&plant).unwrap();
        assert_relative_eq!(x.matrix()[(0, 0)], 2.5, max_relative = 1e-14);
    }

    #[test]
    fn lyapunov_decoupled_diagonal() {
        let plant = PlantSpec {
            a: dmatrix![0.5, 0.0; 0.0, 0.2],
            b: DMatrix::identity(2, 2),
            c: DMatrix::identity(2, 2),
            sigma_xi: PsdMatrix::identity(2),
            sigma_eps: PsdMatrix::zeros(2),
        };
        let x = uncontrolled_lyapunov(&plant).unwrap();
        assert_relative_eq!(x.matrix()[(0, 0)], 1.0 / 0.75, max_relative = 1e-12);
        assert_relative_eq!(x.matrix()[(1, 1)], 1.0 / 0.96, max_relative = 1e-12);
    }

    #[test]
    fn lyapunov_residual_and_lower_bound() {
        let a = dmatrix![0.4, 0.3, -0.1; 0.0, 0.5, 0.2; 0.1, -0.2, 0.6];
        let g = dmatrix![1.0, 0.2, 0.0; -0.3, 0.8, 0.5; 0.1, 0.0, 1.2];
        let sigma_xi = PsdMatrix::force(&g * g.transpose());
        let plant = PlantSpec {
            a: a.clone(),
            b: DMatrix::identity(3, 3),
            c: DMatrix::identity(3, 3),
            sigma_xi: sigma_xi.clone(),
            sigma_eps: PsdMatrix::zeros(3),
        };
        let x = uncontrolled_lyapunov(&plant).unwrap();
        let resid = (x.matrix() - &a * x.matrix() * a.transpose() - sigma_xi.matrix()).norm()
            / (1.0 + x.matrix().norm());
        assert!(resid < 1e-12);
        // X - Sigma_xi is PSD
        assert!(psd::min_eig_sym(&(x.matrix() - sigma_xi.matrix())).unwrap() > -1e-10);
    }

    #[test]
    fn dual_lyapunov_cases() {
        let plant = scalar_plant(0.9, 1.0, 0.0);
        let s = dual_lyapunov(&plant, &unit_cost()).unwrap();
        assert_relative_eq!(s.matrix()[(0, 0)], 1.0 / 0.19, max_relative = 1e-12);

        let zero_q = CostSpec {
            q: PsdMatrix::zeros(1),
            r: PsdMatrix::force(dmatrix![1.0]),
        };
        let s0 = dual_lyapunov(&plant, &zero_q).unwrap();
        assert!(s0.matrix().norm() == 0.0);

        let plant0 = scalar_plant(0.0, 1.0, 0.0);
        let sq = dual_lyapunov(&plant0, &unit_cost()).unwrap();
        assert_relative_eq!(sq.matrix()[(0, 0)], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn closed_loop_cov_scalar_arithmetic() {
        // (a+bL)^2 * Sxu + a^2 (Sx - Sxu) + sxi with a=0.9, L=-0.5, Sxu=2, Sx=4
        let plant = scalar_plant(0.9, 1.0, 0.0);
        let out = closed_loop_state_cov(
            &plant,
            &dmatrix![-0.5],
            &PsdMatrix::force(dmatrix![2.0]),
            &PsdMatrix::force(dmatrix![4.0]),
            &tol(),
        )
        .unwrap();
        assert_relative_eq!(out.matrix()[(0, 0)], 2.94, max_relative = 1e-12);
    }

    #[test]
    fn closed_loop_cov_degenerate_forms() {
        let plant = scalar_plant(0.9, 1.0, 0.0);
        let sx = PsdMatrix::force(dmatrix![4.0]);
        // Sxu = 0 reduces to the uncontrolled map
        let a_only = closed_loop_state_cov(&plant, &dmatrix![-0.7], &PsdMatrix::zeros(1), &sx, &tol()).unwrap();
        assert_relative_eq!(a_only.matrix()[(0, 0)], 0.81 * 4.0 + 1.0, max_relative = 1e-12);
        // L = 0 recombines to the uncontrolled map regardless of Sxu
        let l_zero = closed_loop_state_cov(
            &plant,
            &dmatrix![0.0],
            &PsdMatrix::force(dmatrix![1.5]),
            &sx,
            &tol(),
        )
        .unwrap();
        assert_relative_eq!(l_zero.matrix()[(0, 0)], 0.81 * 4.0 + 1.0, max_relative = 1e-12);
    }

    #[test]
    fn closed_loop_cov_rejects_inconsistent() {
        let plant = scalar_plant(0.9, 1.0, 0.0);
        let err = closed_loop_state_cov(
            &plant,
            &dmatrix![0.0],
            &PsdMatrix::force(dmatrix![5.0]),
            &PsdMatrix::force(dmatrix![4.0]),
            &tol(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InconsistentEstimator(_)));
    }

    #[test]
    fn observation_stats_full_and_no_observability() {
        let g = dmatrix![1.0, 0.3; -0.2, 0.9];
        let sx = PsdMatrix::force(&g * g.transpose());
        let full = PlantSpec {
            a: dmatrix![0.5, 0.0; 0.0, 0.5],
            b: DMatrix::identity(2, 2),
            c: DMatrix::identity(2, 2),
            sigma_xi: PsdMatrix::identity(2),
            sigma_eps: PsdMatrix::zeros(2),
        };
        let obs = observation_stats(&full, &sx, &tol()).unwrap();
        assert!(psd::rel_residual(obs.sigma_xhat_y.matrix(), sx.matrix()) < 1e-10);
        assert!(obs.sigma_kappa.matrix().norm() < 1e-10);

        let blind = PlantSpec {
            c: DMatrix::zeros(2, 2),
            sigma_eps: PsdMatrix::identity(2),
            ..full
        };
        let obs = observation_stats(&blind, &sx, &tol()).unwrap();
        assert!(obs.gain.norm() == 0.0);
        assert!(obs.sigma_xhat_y.matrix().norm() == 0.0);
        assert!(psd::rel_residual(obs.sigma_kappa.matrix(), sx.matrix()) < 1e-12);
        assert!(psd::rel_residual(obs.sigma_y.matrix(), &DMatrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn observation_stats_scalar_derived() {
        // Sx = 100/19, c = 1, seps = 1: Sy = 119/19, K = 100/119, Sxy = 10000/2261
        let plant = scalar_plant(0.9, 1.0, 1.0);
        let sx = PsdMatrix::force(dmatrix![100.0 / 19.0]);
        let obs = observation_stats(&plant, &sx, &tol()).unwrap();
        assert_relative_eq!(obs.sigma_y.matrix()[(0, 0)], 119.0 / 19.0, max_relative = 1e-12);
        assert_relative_eq!(obs.gain[(0, 0)], 100.0 / 119.0, max_relative = 1e-12);
        assert_relative_eq!(
            obs.sigma_xhat_y.matrix()[(0, 0)],
            10000.0 / 2261.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn observation_gain_consistency() {
        // K Sy K' = Sx C' Sy^+ C Sx
        let g = dmatrix![1.2, 0.1, -0.4; 0.0, 0.7, 0.2; 0.5, -0.3, 1.0];
        let sx = PsdMatrix::force(&g * g.transpose());
        let plant = PlantSpec {
            a: DMatrix::identity(3, 3) * 0.5,
            b: DMatrix::identity(3, 3),
            c: dmatrix![1.0, 0.0, 2.0; 0.0, 1.0, -1.0],
            sigma_xi: PsdMatrix::identity(3),
            sigma_eps: PsdMatrix::force(dmatrix![0.5, 0.0; 0.0, 0.2]),
        };
        let obs = observation_stats(&plant, &sx, &tol()).unwrap();
        let pinv_y = psd::pinv_psd(&obs.sigma_y, &tol()).unwrap();
        let rhs = sx.matrix() * plant.c.transpose() * pinv_y.matrix() * &plant.c * sx.matrix();
        assert!(psd::rel_residual(obs.sigma_xhat_y.matrix(), &rhs) < 1e-10);
        // Sigma_xhat_y <= Sigma_x in the PSD order
        assert!(
            psd::min_eig_sym(&(sx.matrix() - obs.sigma_xhat_y.matrix())).unwrap() > -1e-10
        );
        assert!(
            psd::rank_psd(&obs.sigma_xhat_y, &tol()).unwrap()
                <= psd::rank_psd(&sx, &tol()).unwrap().min(plant.obs_dim())
        );
    }

    #[test]
    fn cost_rate_cases() {
        let cost = unit_cost();
        let zero = CostSpec {
            q: PsdMatrix::zeros(1),
            r: PsdMatrix::zeros(1),
        };
        let sx = PsdMatrix::force(dmatrix![100.0 / 19.0]);
        let su = PsdMatrix::zeros(1);
        assert_eq!(expected_cost_rate(&zero, &sx, &su), 0.0);
        assert_relative_eq!(
            expected_cost_rate(&cost, &sx, &su),
            50.0 / 19.0,
            max_relative = 1e-12
        );
        let sx2 = PsdMatrix::force(dmatrix![2.0]);
        let su3 = PsdMatrix::force(dmatrix![3.0]);
        assert_relative_eq!(expected_cost_rate(&cost, &sx2, &su3), 2.5, max_relative = 1e-14);
    }

    #[test]
    fn dlyap_errors_on_unstable() {
        let a = dmatrix![1.01];
        let c = SymMatrix::force(dmatrix![1.0]);
        assert!(dlyap(&a, &c).is_err());
    }

    #[test]
    fn dlyap_indefinite_constant() {
        // S-equation with Q - M indefinite still has a unique solution.
        let a = dmatrix![0.6, 0.1; -0.2, 0.3];
        let c = SymMatrix::force(dmatrix![1.0, 0.0; 0.0, -2.0]);
        let s = dlyap(&a.transpose(), &c).unwrap();
        let resid = (s.matrix() - (c.matrix() + a.transpose() * s.matrix() * &a)).norm();
        assert!(resid < 1e-12);
    }
}
