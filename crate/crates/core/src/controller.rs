//! Memoryless controller representations and their information-theoretic
//! checks: the raw feedback form `u = H y + eta` and the estimator form
//! `xhat_y = K y`, `xhat_u = W xhat_y + omega`, `u = L xhat_u`, conversions
//! between them, MMSE estimator properties, and Gaussian mutual information.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::plant::{self, PlantSpec};
use crate::psd::{self, PsdMatrix, SymMatrix, Tolerance};

/// Raw memoryless feedback `u = H y + eta`.
#[derive(Debug, Clone)]
pub struct ControllerRaw {
    pub h: DMatrix<f64>,
    pub sigma_eta: PsdMatrix,
}

/// Estimator-based controller.
#[derive(Debug, Clone)]
pub struct ControllerEstimator {
    /// `K`, shared with the observation statistics.
    pub gain: DMatrix<f64>,
    /// Estimator map `W`.
    pub w: DMatrix<f64>,
    /// Estimator noise covariance.
    pub sigma_omega: PsdMatrix,
    /// Feedback gain `L`.
    pub l: DMatrix<f64>,
}

/// `H = L W K`, `Sigma_eta = L Sigma_omega L'`.
pub fn estimator_to_raw(est: &ControllerEstimator) -> ControllerRaw {
    ControllerRaw {
        h: &est.l * &est.w * &est.gain,
        sigma_eta: PsdMatrix::force(&est.l * est.sigma_omega.matrix() * est.l.transpose()),
    }
}

/// A zero-mean joint Gaussian over named variable blocks.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    labels: Vec<(String, usize)>,
    cov: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(labels: Vec<(String, usize)>, cov: DMatrix<f64>, tol: &Tolerance) -> Result<Self> {
        let total: usize = labels.iter().map(|(_, d)| d).sum();
        if cov.nrows() != total || cov.ncols() != total {
            return Err(Error::DimensionMismatch(format!(
                "joint covariance is {}x{}, labels declare {}",
                cov.nrows(),
                cov.ncols(),
                total
            )));
        }
        // Validate numerical PSD-ness but keep the entries untouched:
        // rebuilding from a clipped EVD would smear roundoff into blocks that
        // are exactly zero (constant variables).
        let cov = psd::symmetrize(&cov);
        let min_eig = psd::min_eig_sym(&cov)?;
        let scale = cov.norm().max(1.0);
        if min_eig < -tol.rank_rel * scale {
            return Err(Error::NotPsd {
                min_eig,
                scale,
            });
        }
        Ok(JointGaussian { labels, cov })
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn span(&self, names: &[&str]) -> Result<Vec<usize>> {
        let mut idx = Vec::new();
        for name in names {
            let mut offset = 0;
            let mut found = false;
            for (label, dim) in &self.labels {
                if label == name {
                    idx.extend(offset..offset + dim);
                    found = true;
                    break;
                }
                offset += dim;
            }
            if !found {
                return Err(Error::InvalidArgument(format!(
                    "unknown variable '{name}' in joint"
                )));
            }
        }
        Ok(idx)
    }

    /// Covariance block between two index sets.
    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.cov[(rows[i], cols[j])])
    }
}

/// Mutual information (nats) between two disjoint groups of a joint Gaussian.
/// Returns `f64::INFINITY` when the conditional covariance loses rank, i.e.
/// one group determines a nontrivial linear functional of the other.
pub fn gaussian_mutual_info(
    joint: &JointGaussian,
    group_a: &[&str],
    group_b: &[&str],
    tol: &Tolerance,
) -> Result<f64> {
    for a in group_a {
        if group_b.contains(a) {
            return Err(Error::InvalidArgument(format!(
                "groups must be disjoint, '{a}' appears in both"
            )));
        }
    }
    let ia = joint.span(group_a)?;
    let ib = joint.span(group_b)?;
    let sig_a = PsdMatrix::force(joint.block(&ia, &ia));
    let sig_b = PsdMatrix::force(joint.block(&ib, &ib));
    let cross = joint.block(&ia, &ib);
    let b_pinv = psd::pinv_psd(&sig_b, tol)?;
    let cond = psd::symmetrize(&(sig_a.matrix() - &cross * b_pinv.matrix() * cross.transpose()));

    // Rank decisions for both the marginal and the conditional use the
    // marginal's largest eigenvalue as the common scale: the conditional of
    // a (near-)deterministic relation collapses to roundoff of that scale
    // and must count as a rank drop.
    let evd_a = psd::evd_sym(&sig_a.as_sym())?;
    let lmax_a = evd_a.values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = tol.rank_rel * lmax_a;
    let retained_a: Vec<f64> = evd_a
        .values
        .iter()
        .cloned()
        .filter(|&l| lmax_a > 0.0 && l > cutoff)
        .collect();
    let evd_cond = psd::evd_sym(&SymMatrix::force(cond))?;
    let retained_cond: Vec<f64> = evd_cond
        .values
        .iter()
        .cloned()
        .filter(|&l| lmax_a > 0.0 && l > cutoff)
        .collect();
    if retained_cond.len() < retained_a.len() {
        return Ok(f64::INFINITY);
    }
    let log_pdet = |vals: &[f64]| vals.iter().map(|l| l.ln()).sum::<f64>();
    let mi = 0.5 * (log_pdet(&retained_a) - log_pdet(&retained_cond));
    Ok(mi.max(0.0))
}

/// Per-property outcome of the MMSE estimator characterization.
#[derive(Debug, Clone)]
pub struct MmseReport {
    /// `Sigma_xhat;x = Sigma_xhat`
    pub cross_matches_cov: bool,
    /// `Sigma_x|xhat = Sigma_x - Sigma_xhat`
    pub conditional_is_difference: bool,
    /// regression of `x` on `xhat` acts as the identity on range(Sigma_xhat)
    pub regression_is_identity: bool,
    pub residual_cross: f64,
    pub residual_conditional: f64,
    pub residual_regression: f64,
}

impl MmseReport {
    pub fn all_pass(&self) -> bool {
        self.cross_matches_cov && self.conditional_is_difference && self.regression_is_identity
    }
    /// The three properties are equivalent; they must agree.
    pub fn agree(&self) -> bool {
        self.cross_matches_cov == self.conditional_is_difference
            && self.conditional_is_difference == self.regression_is_identity
    }
}

/// Checks the equivalent MMSE properties for a pair `(x, xhat)` with
/// `cross = E[x xhat']`.
pub fn mmse_properties_check(
    cov_x: &PsdMatrix,
    cov_xhat: &PsdMatrix,
    cross: &DMatrix<f64>,
    tol: &Tolerance,
) -> Result<MmseReport> {
    let n = cov_x.dim();
    let m = cov_xhat.dim();
    if cross.nrows() != n || cross.ncols() != m {
        return Err(Error::DimensionMismatch(
            "cross covariance must be dim(x) x dim(xhat)".into(),
        ));
    }
    // the joint must be PSD for the pair to be a valid Gaussian
    let mut joint = DMatrix::zeros(n + m, n + m);
    joint.view_mut((0, 0), (n, n)).copy_from(cov_x.matrix());
    joint.view_mut((0, n), (n, m)).copy_from(cross);
    joint.view_mut((n, 0), (m, n)).copy_from(&cross.transpose());
    joint.view_mut((n, n), (m, m)).copy_from(cov_xhat.matrix());
    PsdMatrix::new(joint, tol)?;

    let xhat_pinv = psd::pinv_psd(cov_xhat, tol)?;
    let residual_cross = psd::rel_residual(&cross.transpose(), cov_xhat.matrix());

    let conditional = cov_x.matrix() - cross * xhat_pinv.matrix() * cross.transpose();
    let difference = cov_x.matrix() - cov_xhat.matrix();
    let residual_conditional = psd::rel_residual(&conditional, &difference);

    let regression = cross * xhat_pinv.matrix();
    let projector = cov_xhat.matrix() * xhat_pinv.matrix();
    let residual_regression = psd::rel_residual(&regression, &projector);
    let rank_match = {
        let reg_cov = PsdMatrix::force(&regression * cov_xhat.matrix() * regression.transpose());
        psd::rank_psd(&reg_cov, tol)? == psd::rank_psd(cov_xhat, tol)?
    };

    Ok(MmseReport {
        cross_matches_cov: residual_cross < tol.residual,
        conditional_is_difference: residual_conditional < tol.residual,
        regression_is_identity: residual_regression < tol.residual && rank_match,
        residual_cross,
        residual_conditional,
        residual_regression,
    })
}

/// Controller order: the number of active modes of `Sigma_xhat_u`.
pub fn controller_order(sigma_xhat_u: &PsdMatrix, tol: &Tolerance) -> Result<usize> {
    psd::rank_psd(sigma_xhat_u, tol)
}

/// Analytic stationary covariances of the plant in closed loop with a raw
/// controller.
#[derive(Debug, Clone)]
pub struct ClosedLoopStationary {
    pub sigma_x: PsdMatrix,
    pub sigma_y: PsdMatrix,
    pub sigma_u: PsdMatrix,
    /// `E[y u']`
    pub cross_yu: DMatrix<f64>,
}

/// Stationary second moments of `x' = (A + BHC) x + BH eps + B eta + xi`.
pub fn closed_loop_stationary(
    plant: &PlantSpec,
    raw: &ControllerRaw,
    _tol: &Tolerance,
) -> Result<ClosedLoopStationary> {
    let a_cl = &plant.a + &plant.b * &raw.h * &plant.c;
    let rho = plant::spectral_radius(&a_cl);
    if rho >= 1.0 {
        return Err(Error::UnstablePlant { rho });
    }
    let bh = &plant.b * &raw.h;
    let noise = &bh * plant.sigma_eps.matrix() * bh.transpose()
        + &plant.b * raw.sigma_eta.matrix() * plant.b.transpose()
        + plant.sigma_xi.matrix();
    let sigma_x = PsdMatrix::force(plant::dlyap(&a_cl, &psd::SymMatrix::force(noise))?.into_inner());
    let sigma_y = PsdMatrix::force(
        &plant.c * sigma_x.matrix() * plant.c.transpose() + plant.sigma_eps.matrix(),
    );
    let sigma_u = PsdMatrix::force(
        &raw.h * sigma_y.matrix() * raw.h.transpose() + raw.sigma_eta.matrix(),
    );
    let cross_yu = sigma_y.matrix() * raw.h.transpose();
    Ok(ClosedLoopStationary {
        sigma_x,
        sigma_y,
        sigma_u,
        cross_yu,
    })
}

/// Joint stationary Gaussian of `(y, u, xhat_y, xhat_u)` induced by an
/// estimator controller in closed loop.
pub fn estimator_joint(
    plant: &PlantSpec,
    est: &ControllerEstimator,
    tol: &Tolerance,
) -> Result<JointGaussian> {
    let raw = estimator_to_raw(est);
    let stationary = closed_loop_stationary(plant, &raw, tol)?;
    joint_from_sigma_y(plant, est, &stationary.sigma_y, tol)
}

/// Same joint, but anchored at a given stationary `Sigma_y`.
pub fn joint_from_sigma_y(
    plant: &PlantSpec,
    est: &ControllerEstimator,
    sigma_y: &PsdMatrix,
    tol: &Tolerance,
) -> Result<JointGaussian> {
    let k = plant.obs_dim();
    let l_dim = plant.control_dim();
    let n = plant.state_dim();
    let sy = sigma_y.matrix();
    let sxy = &est.gain * sy * est.gain.transpose(); // Sigma_xhat_y
    let cross_y_xy = sy * est.gain.transpose();
    let sxu = &est.w * &sxy * est.w.transpose() + est.sigma_omega.matrix();
    let cross_y_xu = &cross_y_xy * est.w.transpose();
    let cross_xy_xu = &sxy * est.w.transpose();
    let su = &est.l * &sxu * est.l.transpose();
    let cross_y_u = &cross_y_xu * est.l.transpose();
    let cross_xy_u = &cross_xy_xu * est.l.transpose();
    let cross_xu_u = &sxu * est.l.transpose();

    let total = k + l_dim + 2 * n;
    let mut cov = DMatrix::zeros(total, total);
    let (oy, ou, oxy, oxu) = (0, k, k + l_dim, k + l_dim + n);
    cov.view_mut((oy, oy), (k, k)).copy_from(sy);
    cov.view_mut((ou, ou), (l_dim, l_dim)).copy_from(&su);
    cov.view_mut((oxy, oxy), (n, n)).copy_from(&sxy);
    cov.view_mut((oxu, oxu), (n, n)).copy_from(&sxu);
    let mut put = |r: usize, c: usize, m: &DMatrix<f64>| {
        cov.view_mut((r, c), (m.nrows(), m.ncols())).copy_from(m);
        cov.view_mut((c, r), (m.ncols(), m.nrows()))
            .copy_from(&m.transpose());
    };
    put(oy, ou, &cross_y_u);
    put(oy, oxy, &cross_y_xy);
    put(oy, oxu, &cross_y_xu);
    put(oxy, ou, &cross_xy_u);
    put(oxu, ou, &cross_xu_u);
    put(oxy, oxu, &cross_xy_xu);

    JointGaussian::new(
        vec![
            ("y".into(), k),
            ("u".into(), l_dim),
            ("xhat_y".into(), n),
            ("xhat_u".into(), n),
        ],
        cov,
        tol,
    )
}

/// `|I[y;u] - I[xhat_y;xhat_u]|` at stationarity. Equal for MMSE controllers
/// whose `L` is injective on the range of `Sigma_xhat_u`.
pub fn info_equality_check(
    plant: &PlantSpec,
    sigma_y: &PsdMatrix,
    est: &ControllerEstimator,
    tol: &Tolerance,
) -> Result<f64> {
    let joint = joint_from_sigma_y(plant, est, sigma_y, tol)?;
    let i_yu = gaussian_mutual_info(&joint, &["y"], &["u"], tol)?;
    let i_est = gaussian_mutual_info(&joint, &["xhat_y"], &["xhat_u"], tol)?;
    if i_yu.is_infinite() && i_est.is_infinite() {
        return Ok(0.0);
    }
    if i_yu.is_infinite() || i_est.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok((i_yu - i_est).abs())
}
