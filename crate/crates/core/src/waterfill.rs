//! Closed-form solution of the log-det semidefinite program
//!
//! ```text
//!   max_X  log |M1 - X|+  +  tr(M2 X)   s.t.  0 <= X <= M1
//! ```
//!
//! solved by water-filling over the eigenmodes of `M1^{1/2} M2 M1^{1/2}`:
//! a mode with eigenvalue `lambda_i > 1` is active with coefficient
//! `D_i = 1 - 1/lambda_i`, all others stay at zero. A projected-gradient
//! oracle verifies the closed form on small instances.
//!
//! The pseudodeterminant is evaluated at fixed rank `r = rank(M1)`: the
//! feasible boundary where `M1 - X` loses rank corresponds to infinite
//! information and is excluded, so the objective is `-inf` there.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::psd::{self, PsdMatrix, SymMatrix, Tolerance};

/// Output of the closed-form water-filling solve.
#[derive(Debug, Clone)]
pub struct WaterfillResult {
    /// The optimizer `X = M1^{1/2} V D V' M1^{1/2}`.
    pub x: PsdMatrix,
    /// The complement `M1 - X = M1^{1/2} V (I-D) V' M1^{1/2}`, formed
    /// directly from `1 - D_i = min(1, 1/lambda_i)` so it stays accurate
    /// when coefficients approach 1.
    pub complement: PsdMatrix,
    /// Orthogonal mode basis; the trailing `n - rank(M1)` columns span the
    /// kernel of `M1`.
    pub basis: DMatrix<f64>,
    /// Eigenvalues of `M1^{1/2} M2 M1^{1/2}`, descending, kernel modes zero.
    pub eigenvalues: DVector<f64>,
    /// Active-mode coefficients `D_i` in `[0, 1)`.
    pub coeffs: DVector<f64>,
    /// `1 - D_i`, computed without cancellation.
    pub one_minus_coeffs: DVector<f64>,
    /// Number of active modes.
    pub active_count: usize,
    /// Objective value of `x` (fixed-rank pseudodeterminant convention).
    pub objective: f64,
}

/// Closed-form water-filling solve of the SDP.
pub fn solve_waterfill(m1: &PsdMatrix, m2: &PsdMatrix, tol: &Tolerance) -> Result<WaterfillResult> {
    let n = m1.dim();
    if m2.dim() != n {
        return Err(Error::DimensionMismatch(
            "water-filling inputs must share a dimension".into(),
        ));
    }
    let evd1 = psd::evd_sym(&m1.as_sym())?;
    let lmax = evd1.values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = tol.rank_rel * lmax;
    let r = if lmax > 0.0 {
        evd1.values.iter().filter(|&&l| l > cutoff).count()
    } else {
        0
    };

    let u_range = evd1.vectors.columns(0, r).into_owned();
    let u_kernel = evd1.vectors.columns(r, n - r).into_owned();
    let psi_root: Vec<f64> = (0..r).map(|i| evd1.values[i].max(0.0).sqrt()).collect();

    // range-restricted M1^{1/2} M2 M1^{1/2}
    let mut t_range = u_range.transpose() * m2.matrix() * &u_range;
    for i in 0..r {
        for j in 0..r {
            t_range[(i, j)] *= psi_root[i] * psi_root[j];
        }
    }
    let evd_t = psd::evd_sym(&SymMatrix::force(t_range))?;

    let mut basis = DMatrix::zeros(n, n);
    basis.columns_mut(0, r).copy_from(&(&u_range * &evd_t.vectors));
    basis.columns_mut(r, n - r).copy_from(&u_kernel);

    let mut eigenvalues = DVector::zeros(n);
    eigenvalues.rows_mut(0, r).copy_from(&evd_t.values);

    let mut coeffs = DVector::zeros(n);
    let mut one_minus = DVector::from_element(n, 1.0);
    let mut active = 0usize;
    for i in 0..n {
        let lam = eigenvalues[i];
        if lam > 1.0 {
            one_minus[i] = 1.0 / lam;
            coeffs[i] = 1.0 - one_minus[i];
            active += 1;
        }
    }

    // M1^{1/2} from the range EVD, then W = M1^{1/2} V on the range block
    let mut m1_half = DMatrix::zeros(n, n);
    for (i, &root) in psi_root.iter().enumerate() {
        let col = u_range.column(i);
        m1_half += root * &col * col.transpose();
    }
    let w = &m1_half * basis.columns(0, r);

    let mut x = DMatrix::zeros(n, n);
    let mut complement = DMatrix::zeros(n, n);
    for j in 0..r {
        let col = w.column(j);
        let outer = &col * col.transpose();
        x += coeffs[j] * &outer;
        complement += one_minus[j] * &outer;
    }
    let x = PsdMatrix::force(x);
    let complement = PsdMatrix::force(complement);
    let objective = objective_fixed_rank(m1, m2, &x, tol)?;

    Ok(WaterfillResult {
        x,
        complement,
        basis,
        eigenvalues,
        coeffs,
        one_minus_coeffs: one_minus,
        active_count: active,
        objective,
    })
}

/// Objective `log |M1 - X|+ + tr(M2 X)` with the pseudodeterminant taken at
/// fixed rank `rank(M1)`; `-inf` when `M1 - X` loses rank on that range.
pub fn objective_fixed_rank(
    m1: &PsdMatrix,
    m2: &PsdMatrix,
    x: &PsdMatrix,
    tol: &Tolerance,
) -> Result<f64> {
    let r = psd::rank_psd(m1, tol)?;
    let lmax1 = psd::evd_sym(&m1.as_sym())?
        .values
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    let diff = SymMatrix::force(m1.matrix() - x.matrix());
    let evd = psd::evd_sym(&diff)?;
    let mut log_det = 0.0;
    for i in 0..r {
        let l = evd.values[i];
        if l <= tol.rank_rel * lmax1.max(1.0) * 1e-4 {
            return Ok(f64::NEG_INFINITY);
        }
        log_det += l.ln();
    }
    Ok(log_det + (m2.matrix() * x.matrix()).trace())
}

/// Configuration of the projected-gradient oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub restarts: usize,
    pub steps: usize,
    pub seed: u64,
    pub step_size: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            restarts: 16,
            steps: 5000,
            seed: 42,
            step_size: 1e-2,
        }
    }
}

/// Projects a symmetric matrix onto `{0 <= X <= M1}` by alternating
/// eigenvalue clipping of `X` and `M1 - X`.
fn project_box(x: &DMatrix<f64>, m1: &PsdMatrix) -> Result<DMatrix<f64>> {
    let mut y = psd::symmetrize(x);
    for _ in 0..3 {
        // clip X >= 0
        let evd = psd::evd_sym(&SymMatrix::force(y))?;
        let weights: Vec<f64> = evd.values.iter().map(|&l| l.max(0.0)).collect();
        y = evd.assemble(&weights);
        // clip M1 - X >= 0
        let evd = psd::evd_sym(&SymMatrix::force(m1.matrix() - &y))?;
        let weights: Vec<f64> = evd.values.iter().map(|&l| l.max(0.0)).collect();
        y = m1.matrix() - evd.assemble(&weights);
    }
    // final nonnegativity pass
    let evd = psd::evd_sym(&SymMatrix::force(y))?;
    let weights: Vec<f64> = evd.values.iter().map(|&l| l.max(0.0)).collect();
    Ok(evd.assemble(&weights))
}

/// Best-effort maximization of the SDP objective by projected gradient
/// ascent with random restarts. Intended for dimensions up to 4.
pub fn brute_force_sdp(
    m1: &PsdMatrix,
    m2: &PsdMatrix,
    cfg: &OracleConfig,
    tol: &Tolerance,
) -> Result<(PsdMatrix, f64)> {
    let n = m1.dim();
    if m2.dim() != n {
        return Err(Error::DimensionMismatch(
            "oracle inputs must share a dimension".into(),
        ));
    }
    let m1_half = psd::sqrt_psd(m1, tol)?;
    let mut best_x = PsdMatrix::zeros(n);
    let mut best_f = objective_fixed_rank(m1, m2, &best_x, tol)?;

    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        // random feasible start: M1^{1/2} V diag(t) V' M1^{1/2}, t in [0, 0.9)
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let qr = raw.qr();
        let v0 = qr.q();
        let t = DVector::from_fn(n, |_, _| 0.9 * rng.random::<f64>());
        let mut inner = DMatrix::zeros(n, n);
        for j in 0..n {
            let col = v0.column(j);
            inner += t[j] * &col * col.transpose();
        }
        let mut x = project_box(&(m1_half.matrix() * inner * m1_half.matrix()), m1)?;
        let mut fx = objective_fixed_rank(m1, m2, &PsdMatrix::force(x.clone()), tol)?;
        if fx.is_infinite() {
            x = DMatrix::zeros(n, n);
            fx = objective_fixed_rank(m1, m2, &PsdMatrix::zeros(n), tol)?;
        }
        let mut step = cfg.step_size;
        let mut flat = 0usize;
        for _ in 0..cfg.steps {
            let barrier = psd::pinv_psd(&psd::clip_psd(&(m1.matrix() - &x), tol).unwrap_or_else(
                |_| PsdMatrix::force(m1.matrix() - &x),
            ), tol)?;
            let grad = m2.matrix() - barrier.matrix();
            let x_try = project_box(&(&x + step * psd::symmetrize(&grad)), m1)?;
            let f_try = objective_fixed_rank(m1, m2, &PsdMatrix::force(x_try.clone()), tol)?;
            if f_try < fx - 1e-14 {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
                continue;
            }
            if (f_try - fx).abs() < 1e-14 {
                flat += 1;
                if flat >= 30 {
                    x = x_try;
                    fx = f_try;
                    break;
                }
            } else {
                flat = 0;
            }
            x = x_try;
            fx = f_try;
        }
        if fx > best_f {
            best_f = fx;
            best_x = PsdMatrix::force(x);
        }
    }
    Ok((best_x, best_f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn diagonal_case_entrywise() {
        let m1 = PsdMatrix::identity(2);
        let m2 = PsdMatrix::force(dmatrix![2.0, 0.0; 0.0, 0.5]);
        let wf = solve_waterfill(&m1, &m2, &tol()).unwrap();
        assert_relative_eq!(wf.eigenvalues[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(wf.eigenvalues[1], 0.5, max_relative = 1e-12);
        assert_relative_eq!(wf.coeffs[0], 0.5, max_relative = 1e-12);
        assert_eq!(wf.coeffs[1], 0.0);
        assert!((wf.x.matrix() - dmatrix![0.5, 0.0; 0.0, 0.0]).norm() < 1e-12);
        assert_eq!(wf.active_count, 1);
        // objective: log(0.5) + log(1) + tr(diag(2,.5) diag(.5,0)) = ln(1/2) + 1
        assert_relative_eq!(wf.objective, 0.5_f64.ln() + 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_value_matrix_is_inactive() {
        let m1 = PsdMatrix::force(dmatrix![2.0, 0.3; 0.3, 1.0]);
        let m2 = PsdMatrix::zeros(2);
        let wf = solve_waterfill(&m1, &m2, &tol()).unwrap();
        assert_eq!(wf.active_count, 0);
        assert!(wf.x.matrix().norm() == 0.0);
    }

    #[test]
    fn singular_m1_kernel_modes_stay_inactive() {
        let m1 = PsdMatrix::force(dmatrix![1.0, 0.0; 0.0, 0.0]);
        let m2 = PsdMatrix::force(dmatrix![3.0, 0.0; 0.0, 7.0]);
        let wf = solve_waterfill(&m1, &m2, &tol()).unwrap();
        // only the range mode is active despite M2 favoring the kernel mode
        assert_eq!(wf.active_count, 1);
        assert_relative_eq!(wf.x.matrix()[(0, 0)], 2.0 / 3.0, max_relative = 1e-12);
        assert!(wf.x.matrix()[(1, 1)].abs() < 1e-14);
        // kernel column of basis spans ker(M1) and carries D = 0
        let kernel_col = wf.basis.column(1);
        assert!((m1.matrix() * kernel_col).norm() < 1e-12);
        assert_eq!(wf.coeffs[1], 0.0);
    }

    #[test]
    fn complementary_slackness() {
        let g = dmatrix![1.0, 0.2, 0.0; -0.5, 0.9, 0.3; 0.1, 0.4, 1.2];
        let m1 = PsdMatrix::force(&g * g.transpose());
        let h = dmatrix![0.9, 0.0, 0.3; 0.2, 0.5, -0.1; 0.0, 0.7, 0.4];
        let m2 = PsdMatrix::force(&h * h.transpose());
        let wf = solve_waterfill(&m1, &m2, &tol()).unwrap();
        for i in 0..3 {
            if wf.coeffs[i] == 0.0 {
                assert!(wf.eigenvalues[i] <= 1.0 + 1e-12);
            } else {
                assert!(wf.eigenvalues[i] > 1.0 - 1e-12);
                assert_relative_eq!(
                    wf.coeffs[i],
                    1.0 - 1.0 / wf.eigenvalues[i],
                    max_relative = 1e-12
                );
                assert!(wf.coeffs[i] < 1.0);
            }
        }
        // 0 <= X <= M1 and M1 - X strictly positive on the range
        assert!(psd::min_eig_sym(wf.x.matrix()).unwrap() > -1e-10);
        assert!(psd::min_eig_sym(&(m1.matrix() - wf.x.matrix())).unwrap() > -1e-10);
    }

    #[test]
    fn scaling_m2_never_deactivates() {
        let g = dmatrix![1.1, -0.2; 0.3, 0.8];
        let m1 = PsdMatrix::force(&g * g.transpose());
        let h = dmatrix![0.7, 0.1; -0.4, 0.9];
        let m2 = PsdMatrix::force(&h * h.transpose());
        let base = solve_waterfill(&m1, &m2, &tol()).unwrap();
        let scaled = solve_waterfill(&m1, &PsdMatrix::force(m2.matrix() * 3.0), &tol()).unwrap();
        assert!(scaled.active_count >= base.active_count);
        for i in 0..2 {
            assert!(scaled.coeffs[i] >= base.coeffs[i] - 1e-12);
        }
    }

    #[test]
    fn oracle_matches_closed_form_diag() {
        let m1 = PsdMatrix::identity(2);
        let m2 = PsdMatrix::force(dmatrix![2.0, 0.0; 0.0, 0.5]);
        let wf = solve_waterfill(&m1, &m2, &tol()).unwrap();
        let cfg = OracleConfig {
            restarts: 4,
            steps: 2000,
            ..OracleConfig::default()
        };
        let (x, f) = brute_force_sdp(&m1, &m2, &cfg, &tol()).unwrap();
        assert!(wf.objective >= f - 1e-6);
        assert!((f - wf.objective).abs() < 1e-4);
        assert!((x.matrix() - wf.x.matrix()).norm() < 1e-3);
    }

    #[test]
    fn oracle_matches_closed_form_singular_m1() {
        let m1 = PsdMatrix::force(dmatrix![1.0, 0.0; 0.0, 0.0]);
        let m2 = PsdMatrix::force(dmatrix![3.0, 0.0; 0.0, 7.0]);
        let wf = solve_waterfill(&m1, &m2, &tol()).unwrap();
        let cfg = OracleConfig {
            restarts: 4,
            steps: 2000,
            ..OracleConfig::default()
        };
        let (x, f) = brute_force_sdp(&m1, &m2, &cfg, &tol()).unwrap();
        assert!((f - wf.objective).abs() < 1e-4);
        assert!((x.matrix() - wf.x.matrix()).norm() < 1e-3);
        // oracle X supported on range(M1)
        assert!(x.matrix()[(1, 1)].abs() < 1e-6);
    }

    #[test]
    fn oracle_zero_m2() {
        let m1 = PsdMatrix::force(dmatrix![2.0, 0.5; 0.5, 1.0]);
        let m2 = PsdMatrix::zeros(2);
        let cfg = OracleConfig {
            restarts: 2,
            steps: 1500,
            ..OracleConfig::default()
        };
        let (x, _) = brute_force_sdp(&m1, &m2, &cfg, &tol()).unwrap();
        assert!(x.matrix().norm() < 1e-3);
    }
}
