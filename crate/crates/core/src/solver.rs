//! The coupled forward/backward fixed point for a minimum-information
//! memoryless controller at trade-off coefficient `beta`.
//!
//! One sweep runs the forward statistics, the backward value recursion and
//! the water-filling allocation. The `S` update takes a single value-style
//! application per sweep and both `S` and `Sigma_xhat_u` are damped; whenever
//! an attempt diverges, turns the control curvature indefinite, or stalls,
//! the solve restarts from its initial state with the damping halved.
//!
//! The information-cost curvature `M` is evaluated through the spectral form
//! of the SNR matrix, `Z = Sigma_xhat_y^{+/2} V diag(beta D_i lambda_i) V'
//! Sigma_xhat_y^{+/2}`, which stays finite and well-conditioned as the active
//! coefficients approach 1 at large `beta`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::ControllerEstimator;
use crate::error::{Error, Result};
use crate::plant::{self, CostSpec, ObservationStats, PlantSpec};
use crate::psd::{self, PsdMatrix, SymMatrix, Tolerance};
use crate::waterfill::{self, WaterfillResult};

/// Water-filling spectrum in the Theorem scale: eigenvalues of
/// `Sigma_xhat_y^{1/2} N Sigma_xhat_y^{1/2}`, a mode being active when
/// `lambda_i > 1/beta`.
#[derive(Debug, Clone)]
pub struct ModeSpectrum {
    /// Orthogonal basis; trailing columns span the kernel of `Sigma_xhat_y`.
    pub basis: DMatrix<f64>,
    /// Eigenvalues, descending (kernel modes zero).
    pub lambdas: DVector<f64>,
    /// Active-mode coefficients `D_i`.
    pub coeffs: DVector<f64>,
    /// `1 - D_i` without cancellation.
    pub one_minus: DVector<f64>,
}

impl ModeSpectrum {
    fn from_waterfill(wf: &WaterfillResult, beta: f64) -> Self {
        ModeSpectrum {
            basis: wf.basis.clone(),
            lambdas: wf.eigenvalues.map(|l| l / beta),
            coeffs: wf.coeffs.clone(),
            one_minus: wf.one_minus_coeffs.clone(),
        }
    }

    pub fn active_count(&self) -> usize {
        self.coeffs.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambdas.iter().cloned().fold(0.0, f64::max)
    }
}

/// All coupled quantities of the stationary optimality system.
#[derive(Debug, Clone)]
pub struct FixedPointState {
    pub beta: f64,
    pub sigma_x: PsdMatrix,
    pub obs: ObservationStats,
    /// Cost-to-go multiplier; symmetric, possibly indefinite.
    pub s: SymMatrix,
    /// Information-cost curvature; positive semidefinite.
    pub m: SymMatrix,
    pub l: DMatrix<f64>,
    /// Control value matrix `N = L'(R + B'SB)L`.
    pub n_value: SymMatrix,
    pub spectrum: ModeSpectrum,
    pub sigma_xhat_u: PsdMatrix,
    /// Conditional covariance `Sigma_xhat_y|xhat_u`, kept explicitly so the
    /// information rate stays accurate when coefficients approach 1.
    pub sigma_cond: PsdMatrix,
    /// SNR matrix `Z = Sigma_xhat_y|xhat_u^+ - Sigma_xhat_y^+` (spectral form).
    pub z: SymMatrix,
}

/// Solver knobs.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Sweep cap per damping attempt.
    pub max_outer_iters: usize,
    /// Initial damping; halved on failure, underflow below 1e-6 gives up.
    pub damping: f64,
    /// Relative-change tolerance across `(Sigma_x, S, Sigma_xhat_u)`.
    pub fix_tol: f64,
    pub tol: Tolerance,
    /// Continuation step bound: consecutive beta rungs differ by at most
    /// this factor.
    pub ladder_ratio: f64,
    /// Beyond `high_beta_factor / lambda_1(beta=0)` the solve is seeded from
    /// the `beta = infinity` solution instead of climbing from below.
    pub high_beta_factor: f64,
    /// Extra randomized starts (fixed seeds); the lowest converged
    /// Lagrangian wins. Zero keeps the deterministic continuation path only.
    pub multi_start: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iters: 2000,
            damping: 1.0,
            fix_tol: 1e-10,
            tol: Tolerance::default(),
            ladder_ratio: 4.0,
            high_beta_factor: 50.0,
            multi_start: 0,
        }
    }
}

/// Result of a solve at one beta.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub state: FixedPointState,
    pub controller: ControllerEstimator,
    pub sigma_u: PsdMatrix,
    /// Information rate in nats.
    pub info_rate: f64,
    pub cost_rate: f64,
    pub lagrangian: f64,
    pub residuals: BTreeMap<String, f64>,
    pub max_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub damping_used: f64,
}

impl SolveReport {
    pub fn order(&self) -> usize {
        self.state.spectrum.active_count()
    }
}

fn sqrt_halves(m: &PsdMatrix, tol: &Tolerance) -> Result<(PsdMatrix, PsdMatrix)> {
    psd::sqrt_pair(m, tol)
}

/// `Sigma_xhat_y^{+/2} V diag(w) V' Sigma_xhat_y^{+/2}` for per-mode weights.
fn mode_form(half_inv: &PsdMatrix, spectrum: &ModeSpectrum, weights: &[f64]) -> SymMatrix {
    let g = half_inv.matrix() * &spectrum.basis;
    let n = g.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (j, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            let col = g.column(j);
            out += w * &col * col.transpose();
        }
    }
    SymMatrix::force(out)
}

/// Spectral SNR matrix: `Z = Sigma^{+/2} V diag(D_i/(1-D_i)) V' Sigma^{+/2}`.
fn spectral_snr(
    sigma_xhat_y: &PsdMatrix,
    spectrum: &ModeSpectrum,
    tol: &Tolerance,
) -> Result<SymMatrix> {
    let (_, half_inv) = sqrt_halves(sigma_xhat_y, tol)?;
    let weights: Vec<f64> = spectrum
        .coeffs
        .iter()
        .zip(spectrum.one_minus.iter())
        .map(|(&d, &e)| if d > 0.0 { d / e } else { 0.0 })
        .collect();
    Ok(mode_form(&half_inv, spectrum, &weights))
}

/// Spectral form of `M = beta^{-1} C'K' Z KC`, evaluated without dividing by
/// `beta`: the per-mode weight is `D_i lambda_i`.
fn spectral_curvature(
    plant: &PlantSpec,
    obs: &ObservationStats,
    spectrum: &ModeSpectrum,
    tol: &Tolerance,
) -> Result<SymMatrix> {
    let (_, half_inv) = sqrt_halves(&obs.sigma_xhat_y, tol)?;
    let weights: Vec<f64> = spectrum
        .coeffs
        .iter()
        .zip(spectrum.lambdas.iter())
        .map(|(&d, &lam)| d * lam)
        .collect();
    let inner = mode_form(&half_inv, spectrum, &weights);
    let kc = &obs.gain * &plant.c;
    Ok(SymMatrix::force(
        kc.transpose() * inner.matrix() * &kc,
    ))
}

/// Forward step: the stationary state covariance under the current
/// `(L, Sigma_xhat_u)`, followed by fresh observation statistics.
pub fn forward_step(plant: &PlantSpec, state: &mut FixedPointState, tol: &Tolerance) -> Result<()> {
    let abl = &plant.a + &plant.b * &state.l;
    let constant = &abl * state.sigma_xhat_u.matrix() * abl.transpose()
        - &plant.a * state.sigma_xhat_u.matrix() * plant.a.transpose()
        + plant.sigma_xi.matrix();
    let solved = plant::dlyap(&plant.a, &SymMatrix::force(constant))?;
    let min_eig = psd::min_eig_sym(solved.matrix())?;
    let scale = solved.matrix().norm().max(1.0);
    if !solved.matrix().iter().all(|v| v.is_finite()) || scale > 1e12 {
        return Err(Error::InconsistentEstimator(
            "forward state covariance diverged".into(),
        ));
    }
    if min_eig < -1e-6 * scale {
        return Err(Error::InconsistentEstimator(
            "forward state covariance left the PSD cone".into(),
        ));
    }
    let lenient = Tolerance {
        rank_rel: 1e-6,
        ..*tol
    };
    state.sigma_x = psd::clip_psd(solved.matrix(), &lenient)?;
    state.obs = plant::observation_stats(plant, &state.sigma_x, tol)?;
    Ok(())
}

/// Backward step in the literal equation form: pinv-based `Z`, full dual
/// Lyapunov solve for `S`, then `L` and `N`.
pub fn backward_step(
    plant: &PlantSpec,
    cost: &CostSpec,
    state: &mut FixedPointState,
    beta: f64,
    tol: &Tolerance,
) -> Result<()> {
    if beta <= 0.0 {
        return Err(Error::BetaZero("backward_step"));
    }
    let cond = psd::clip_psd(
        &(state.obs.sigma_xhat_y.matrix() - state.sigma_xhat_u.matrix()),
        &Tolerance {
            rank_rel: 1e-6,
            ..*tol
        },
    )
    .map_err(|_| {
        Error::InconsistentEstimator("Sigma_xhat_y - Sigma_xhat_u is not PSD".into())
    })?;
    let z = SymMatrix::force(
        psd::pinv_psd(&cond, tol)?.matrix() - psd::pinv_psd(&state.obs.sigma_xhat_y, tol)?.matrix(),
    );
    let kc = &state.obs.gain * &plant.c;
    let m = SymMatrix::force(kc.transpose() * z.matrix() * &kc / beta);
    let s = plant::dlyap(
        &plant.a.transpose(),
        &SymMatrix::force(cost.q.matrix() - m.matrix()),
    )?;
    let (l, n) = gains_from_s(plant, cost, &s, tol)?;
    state.z = z;
    state.m = m;
    state.s = s;
    state.l = l;
    state.n_value = n;
    Ok(())
}

/// `L = -(R + B'SB)^+ B'SA` and `N = L'(R + B'SB)L`. Errors when the
/// curvature `R + B'SB` is indefinite beyond tolerance.
fn gains_from_s(
    plant: &PlantSpec,
    cost: &CostSpec,
    s: &SymMatrix,
    tol: &Tolerance,
) -> Result<(DMatrix<f64>, SymMatrix)> {
    let rb = SymMatrix::force(
        cost.r.matrix() + plant.b.transpose() * s.matrix() * &plant.b,
    );
    let min_eig = psd::min_eig_sym(rb.matrix())?;
    let scale = rb.matrix().norm().max(1.0);
    if min_eig < -1e-8 * scale {
        return Err(Error::IndefiniteCurvature { min_eig });
    }
    let rb_pinv = psd::clip_psd(rb.matrix(), tol).and_then(|p| psd::pinv_psd(&p, tol))?;
    let l = -(rb_pinv.matrix() * plant.b.transpose() * s.matrix() * &plant.a);
    let n = SymMatrix::force(l.transpose() * rb.matrix() * &l);
    Ok((l, n))
}

/// Water-filling step: solves the SDP at `(Sigma_xhat_y, beta N)` and
/// installs the resulting spectrum, estimator covariance, conditional and
/// SNR matrix.
pub fn waterfill_step(
    state: &mut FixedPointState,
    beta: f64,
    tol: &Tolerance,
) -> Result<()> {
    if beta <= 0.0 {
        return Err(Error::BetaZero("waterfill_step"));
    }
    let m2 = PsdMatrix::force(state.n_value.matrix() * beta);
    let wf = waterfill::solve_waterfill(&state.obs.sigma_xhat_y, &m2, tol)?;
    let spectrum = ModeSpectrum::from_waterfill(&wf, beta);
    state.z = spectral_snr(&state.obs.sigma_xhat_y, &spectrum, tol)?;
    state.sigma_xhat_u = wf.x;
    state.sigma_cond = wf.complement;
    state.spectrum = spectrum;
    Ok(())
}

/// Information rate in nats: `sum_i max(0, log(beta lambda_i)) / 2`,
/// evaluated as `-log(1 - D_i)/2` over active modes.
pub fn info_rate(state: &FixedPointState) -> f64 {
    state
        .spectrum
        .coeffs
        .iter()
        .zip(state.spectrum.one_minus.iter())
        .filter(|(&d, _)| d > 0.0)
        .map(|(_, &e)| -0.5 * e.ln())
        .sum()
}

/// Information rate through the pseudodeterminant route:
/// `(log|Sigma_xhat_y|+ - log|Sigma_xhat_y|xhat_u|+) / 2`.
pub fn info_rate_pdet(state: &FixedPointState, tol: &Tolerance) -> Result<f64> {
    Ok(0.5
        * (psd::log_pdet(&state.obs.sigma_xhat_y, tol)? - psd::log_pdet(&state.sigma_cond, tol)?))
}

/// Stationary control covariance `L Sigma_xhat_u L'`.
pub fn control_covariance(state: &FixedPointState) -> PsdMatrix {
    PsdMatrix::force(&state.l * state.sigma_xhat_u.matrix() * state.l.transpose())
}

/// Reduced Lagrangian value
/// `(beta^{-1}(log|Sxy|+ - log|Sxy|xu|+) + tr(M Sx) - tr(N Sxu) + tr(S Sxi))/2`
/// with `M = Q + A'SA - S`.
pub fn lagrangian_value(
    plant: &PlantSpec,
    cost: &CostSpec,
    state: &FixedPointState,
    tol: &Tolerance,
) -> Result<f64> {
    let beta = state.beta;
    if beta <= 0.0 {
        return Err(Error::BetaZero("lagrangian_value"));
    }
    let m_iv = cost.q.matrix() + plant.a.transpose() * state.s.matrix() * &plant.a
        - state.s.matrix();
    let info_term = if beta.is_infinite() {
        0.0
    } else {
        (psd::log_pdet(&state.obs.sigma_xhat_y, tol)? - psd::log_pdet(&state.sigma_cond, tol)?)
            / beta
    };
    Ok(0.5
        * (info_term + (m_iv * state.sigma_x.matrix()).trace()
            - (state.n_value.matrix() * state.sigma_xhat_u.matrix()).trace()
            + (state.s.matrix() * plant.sigma_xi.matrix()).trace()))
}

/// Frobenius-relative residual of every stationarity equation at `state`.
pub fn residuals(
    plant: &PlantSpec,
    cost: &CostSpec,
    state: &FixedPointState,
    tol: &Tolerance,
) -> Result<BTreeMap<String, f64>> {
    let beta = state.beta;
    let mut out = BTreeMap::new();
    let abl = &plant.a + &plant.b * &state.l;
    let rhs_10a = &abl * state.sigma_xhat_u.matrix() * abl.transpose()
        + &plant.a * (state.sigma_x.matrix() - state.sigma_xhat_u.matrix()) * plant.a.transpose()
        + plant.sigma_xi.matrix();
    out.insert(
        "10a_state_cov".into(),
        psd::rel_residual(state.sigma_x.matrix(), &rhs_10a),
    );
    let rhs_10b = &plant.c * state.sigma_x.matrix() * plant.c.transpose()
        + plant.sigma_eps.matrix();
    out.insert(
        "10b_obs_cov".into(),
        psd::rel_residual(state.obs.sigma_y.matrix(), &rhs_10b),
    );
    let sy_pinv = psd::pinv_psd(&state.obs.sigma_y, tol)?;
    let rhs_10c = state.sigma_x.matrix() * plant.c.transpose() * sy_pinv.matrix();
    out.insert("10c_obs_gain".into(), psd::rel_residual(&state.obs.gain, &rhs_10c));
    let rhs_10d = &state.obs.gain * state.obs.sigma_y.matrix() * state.obs.gain.transpose();
    out.insert(
        "10d_obs_estimator".into(),
        psd::rel_residual(state.obs.sigma_xhat_y.matrix(), &rhs_10d),
    );

    // Honest pinv-based SNR for 10e and the gradient condition.
    let lenient = Tolerance {
        rank_rel: 1e-6,
        ..*tol
    };
    let cond = psd::clip_psd(
        &(state.obs.sigma_xhat_y.matrix() - state.sigma_xhat_u.matrix()),
        &lenient,
    )?;
    let z_pinv = psd::pinv_psd(&cond, tol)?.matrix()
        - psd::pinv_psd(&state.obs.sigma_xhat_y, tol)?.matrix();
    let kc = &state.obs.gain * &plant.c;
    if beta.is_infinite() {
        let rhs_m = kc.transpose() * state.n_value.matrix() * &kc;
        out.insert("10e_info_curvature".into(), psd::rel_residual(state.m.matrix(), &rhs_m));
        out.insert("gradient_state_cov".into(), 0.0);
        out.insert("snr_identity".into(), 0.0);
    } else if beta > 0.0 {
        let rhs_m = kc.transpose() * &z_pinv * &kc / beta;
        out.insert("10e_info_curvature".into(), psd::rel_residual(state.m.matrix(), &rhs_m));
        out.insert(
            "gradient_state_cov".into(),
            0.5 * (state.m.matrix() - &rhs_m).norm() / (1.0 + state.m.matrix().norm()),
        );
        out.insert(
            "snr_identity".into(),
            psd::rel_residual(state.z.matrix(), &z_pinv),
        );
    } else {
        let zero = DMatrix::zeros(plant.state_dim(), plant.state_dim());
        out.insert("10e_info_curvature".into(), psd::rel_residual(state.m.matrix(), &zero));
        out.insert(
            "gradient_state_cov".into(),
            0.5 * state.m.matrix().norm(),
        );
        out.insert("snr_identity".into(), psd::rel_residual(state.z.matrix(), &zero));
    }

    let rhs_10f = cost.q.matrix() + plant.a.transpose() * state.s.matrix() * &plant.a
        - state.m.matrix();
    out.insert("10f_cost_to_go".into(), psd::rel_residual(state.s.matrix(), &rhs_10f));

    let rb = SymMatrix::force(cost.r.matrix() + plant.b.transpose() * state.s.matrix() * &plant.b);
    let rb_pinv = psd::clip_psd(rb.matrix(), &lenient).and_then(|p| psd::pinv_psd(&p, tol))?;
    let rhs_10g = -(rb_pinv.matrix() * plant.b.transpose() * state.s.matrix() * &plant.a);
    out.insert("10g_feedback_gain".into(), psd::rel_residual(&state.l, &rhs_10g));
    let rhs_10h = state.l.transpose() * rb.matrix() * &state.l;
    out.insert("10h_control_value".into(), psd::rel_residual(state.n_value.matrix(), &rhs_10h));

    if beta > 0.0 && beta.is_finite() {
        let m2 = PsdMatrix::force(state.n_value.matrix() * beta);
        let wf = waterfill::solve_waterfill(&state.obs.sigma_xhat_y, &m2, tol)?;
        out.insert(
            "10i_control_estimator".into(),
            psd::rel_residual(state.sigma_xhat_u.matrix(), wf.x.matrix()),
        );
        // 10j: V Lambda V' reconstructs Sigma^{1/2} N Sigma^{1/2} (Theorem scale)
        let (half, _) = sqrt_halves(&state.obs.sigma_xhat_y, tol)?;
        let lhs_10j = half.matrix() * state.n_value.matrix() * half.matrix();
        let mut recon = DMatrix::zeros(plant.state_dim(), plant.state_dim());
        for j in 0..state.spectrum.lambdas.len() {
            let col = state.spectrum.basis.column(j);
            recon += state.spectrum.lambdas[j] * &col * col.transpose();
        }
        out.insert("10j_evd".into(), psd::rel_residual(&recon, &lhs_10j));
        // 10k: threshold rule on the stored coefficients
        let mut worst: f64 = 0.0;
        for i in 0..state.spectrum.lambdas.len() {
            let lam = state.spectrum.lambdas[i];
            let expected = if beta * lam > 1.0 {
                1.0 - 1.0 / (beta * lam)
            } else {
                0.0
            };
            worst = worst.max((state.spectrum.coeffs[i] - expected).abs());
        }
        out.insert("10k_active_coeffs".into(), worst);
    } else if beta == 0.0 {
        out.insert(
            "10i_control_estimator".into(),
            state.sigma_xhat_u.matrix().norm() / (1.0 + state.obs.sigma_xhat_y.matrix().norm()),
        );
        let max_d = state.spectrum.coeffs.iter().cloned().fold(0.0, f64::max);
        out.insert("10k_active_coeffs".into(), max_d);
    } else {
        // beta = infinity: Sigma_xhat_u = Sigma_xhat_y
        out.insert(
            "10i_control_estimator".into(),
            psd::rel_residual(state.sigma_xhat_u.matrix(), state.obs.sigma_xhat_y.matrix()),
        );
    }

    let lhs_st = rb.matrix() * &state.l * state.sigma_xhat_u.matrix();
    let rhs_st = -(plant.b.transpose() * state.s.matrix() * &plant.a * state.sigma_xhat_u.matrix());
    out.insert("stationarity".into(), psd::rel_residual(&lhs_st, &rhs_st));
    Ok(out)
}

/// The order-0 state that anchors the continuation: `Sigma_x` and `S` from
/// the two uncontrolled Lyapunov equations, `D = 0`, `Sigma_xhat_u = 0`.
pub fn beta_zero_state(plant: &PlantSpec, cost: &CostSpec, tol: &Tolerance) -> Result<FixedPointState> {
    let n = plant.state_dim();
    let sigma_x = plant::uncontrolled_lyapunov(plant)?;
    let s = plant::dual_lyapunov(plant, cost)?;
    let obs = plant::observation_stats(plant, &sigma_x, tol)?;
    let (l, n_value) = gains_from_s(plant, cost, &s, tol)?;
    // Theorem-scale spectrum from the EVD of Sigma^{1/2} N Sigma^{1/2}
    let wf = waterfill::solve_waterfill(
        &obs.sigma_xhat_y,
        &psd::clip_psd(n_value.matrix(), tol)?,
        tol,
    )?;
    let dim = wf.eigenvalues.len();
    let spectrum = ModeSpectrum {
        basis: wf.basis,
        lambdas: wf.eigenvalues,
        coeffs: DVector::zeros(dim),
        one_minus: DVector::from_element(dim, 1.0),
    };
    Ok(FixedPointState {
        beta: 0.0,
        sigma_cond: obs.sigma_xhat_y.clone(),
        sigma_x,
        obs,
        s,
        m: SymMatrix::force(DMatrix::zeros(n, n)),
        l,
        n_value,
        spectrum,
        sigma_xhat_u: PsdMatrix::zeros(n),
        z: SymMatrix::force(DMatrix::zeros(n, n)),
    })
}

/// Dedicated `beta = infinity` path: `D = I`, `Sigma_xhat_u = Sigma_xhat_y`,
/// `M = C'K'NKC`, iterated in single value-style steps.
pub fn beta_inf_state(
    plant: &PlantSpec,
    cost: &CostSpec,
    config: &SolverConfig,
) -> Result<(FixedPointState, usize, bool)> {
    let tol = &config.tol;
    let n = plant.state_dim();
    let mut sigma_x = plant::uncontrolled_lyapunov(plant)?;
    let mut s = plant::dual_lyapunov(plant, cost)?;
    let cap = config.max_outer_iters.max(2000) * 10;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cap {
        iterations = it;
        let obs = plant::observation_stats(plant, &sigma_x, tol)?;
        let (l_new, n_new) = gains_from_s(plant, cost, &s, tol)?;
        let kc = &obs.gain * &plant.c;
        let m_new = SymMatrix::force(kc.transpose() * n_new.matrix() * &kc);
        let s_new = SymMatrix::force(
            cost.q.matrix() - m_new.matrix() + plant.a.transpose() * s.matrix() * &plant.a,
        );
        let abl = &plant.a + &plant.b * &l_new;
        let sxy = &obs.sigma_xhat_y;
        let sx_new = PsdMatrix::force(
            &abl * sxy.matrix() * abl.transpose()
                + &plant.a * (sigma_x.matrix() - sxy.matrix()) * plant.a.transpose()
                + plant.sigma_xi.matrix(),
        );
        let ch = psd::rel_residual(sx_new.matrix(), sigma_x.matrix())
            .max(psd::rel_residual(s_new.matrix(), s.matrix()));
        sigma_x = sx_new;
        s = s_new;
        if ch < config.fix_tol.max(1e-13) {
            converged = true;
            break;
        }
    }
    let obs = plant::observation_stats(plant, &sigma_x, tol)?;
    let (l, n_value) = gains_from_s(plant, cost, &s, tol)?;
    let kc = &obs.gain * &plant.c;
    let m = SymMatrix::force(kc.transpose() * n_value.matrix() * &kc);
    let wf = waterfill::solve_waterfill(
        &obs.sigma_xhat_y,
        &psd::clip_psd(n_value.matrix(), tol)?,
        tol,
    )?;
    let dim = wf.eigenvalues.len();
    let spectrum = ModeSpectrum {
        basis: wf.basis,
        lambdas: wf.eigenvalues,
        coeffs: DVector::from_element(dim, 1.0),
        one_minus: DVector::zeros(dim),
    };
    let state = FixedPointState {
        beta: f64::INFINITY,
        sigma_xhat_u: obs.sigma_xhat_y.clone(),
        sigma_cond: PsdMatrix::zeros(n),
        sigma_x,
        s,
        m,
        l,
        n_value,
        spectrum,
        z: SymMatrix::force(DMatrix::zeros(n, n)),
        obs,
    };
    Ok((state, iterations, converged))
}

enum AttemptOutcome {
    Converged(FixedPointState, usize),
    Failed {
        iterations: usize,
        fatal: bool,
        last: Option<FixedPointState>,
    },
}

/// One damped sweep attempt from `init` at fixed damping.
fn attempt(
    plant: &PlantSpec,
    cost: &CostSpec,
    beta: f64,
    init: &FixedPointState,
    gamma: f64,
    config: &SolverConfig,
) -> Result<AttemptOutcome> {
    let tol = &config.tol;
    let mut state = init.clone();
    state.beta = beta;
    let window = 100usize;
    let win_factor = 0.98f64;
    let mut win_best = f64::INFINITY;
    let mut prev_win_best = f64::INFINITY;
    let mut win_count = 0usize;

    for it in 1..=config.max_outer_iters {
        let sx_prev = state.sigma_x.clone();
        let s_prev = state.s.clone();
        let sxu_prev = state.sigma_xhat_u.clone();

        if let Err(e) = forward_step(plant, &mut state, tol) {
            return match e {
                Error::InconsistentEstimator(_) | Error::LyapunovCap { .. } => {
                    Ok(AttemptOutcome::Failed {
                        iterations: it,
                        fatal: false,
                        last: None,
                    })
                }
                other => Err(other),
            };
        }

        // backward sweep: spectral curvature, one damped value-style S step
        let m = spectral_curvature(plant, &state.obs, &state.spectrum, tol)?;
        let s_target = SymMatrix::force(
            cost.q.matrix() - m.matrix() + plant.a.transpose() * state.s.matrix() * &plant.a,
        );
        let s_new = SymMatrix::force(
            state.s.matrix() * (1.0 - gamma) + s_target.matrix() * gamma,
        );
        if !s_new.matrix().iter().all(|v| v.is_finite()) || s_new.matrix().norm() > 1e12 {
            return Ok(AttemptOutcome::Failed {
                iterations: it,
                fatal: false,
                last: None,
            });
        }
        let gains = match gains_from_s(plant, cost, &s_new, tol) {
            Ok(g) => g,
            Err(Error::IndefiniteCurvature { .. }) => {
                return Ok(AttemptOutcome::Failed {
                    iterations: it,
                    fatal: false,
                    last: None,
                })
            }
            Err(other) => return Err(other),
        };
        state.m = m;
        state.s = s_new;
        state.l = gains.0;
        state.n_value = gains.1;

        // water-filling target, damped estimator covariance update
        let m2 = PsdMatrix::force(state.n_value.matrix() * beta);
        let wf = waterfill::solve_waterfill(&state.obs.sigma_xhat_y, &m2, tol)?;
        let spectrum = ModeSpectrum::from_waterfill(&wf, beta);
        state.sigma_xhat_u = PsdMatrix::force(
            state.sigma_xhat_u.matrix() * (1.0 - gamma) + wf.x.matrix() * gamma,
        );
        state.sigma_cond = PsdMatrix::force(
            state.sigma_cond.matrix() * (1.0 - gamma) + wf.complement.matrix() * gamma,
        );
        state.spectrum = spectrum;

        let scale_xy = 1.0 + state.obs.sigma_xhat_y.matrix().norm();
        let ch = psd::rel_residual(state.sigma_x.matrix(), sx_prev.matrix())
            .max(psd::rel_residual(state.s.matrix(), s_prev.matrix()))
            .max((state.sigma_xhat_u.matrix() - sxu_prev.matrix()).norm() / scale_xy);

        if ch < config.fix_tol {
            // resync to the exact water-filling outputs so the spectrum, the
            // estimator covariance, the conditional and the SNR matrix are
            // mutually consistent to machine precision
            state.sigma_xhat_u = wf.x;
            state.sigma_cond = wf.complement;
            state.z = spectral_snr(&state.obs.sigma_xhat_y, &state.spectrum, tol)?;
            return Ok(AttemptOutcome::Converged(state, it));
        }
        win_best = win_best.min(ch);
        win_count += 1;
        if win_count >= window {
            if win_best > prev_win_best * win_factor {
                return Ok(AttemptOutcome::Failed {
                    iterations: it,
                    fatal: false,
                    last: Some(state),
                });
            }
            prev_win_best = win_best;
            win_best = f64::INFINITY;
            win_count = 0;
        }
    }
    Ok(AttemptOutcome::Failed {
        iterations: config.max_outer_iters,
        fatal: true,
        last: Some(state),
    })
}

/// Damped fixed-point solve from an explicit initial state. Restarts from
/// `init` with halved damping whenever an attempt fails; gives up below
/// damping 1e-6 or when an attempt exhausts `max_outer_iters` without
/// converging or failing.
pub fn solve_fixed_point(
    plant: &PlantSpec,
    cost: &CostSpec,
    beta: f64,
    init: &FixedPointState,
    config: &SolverConfig,
) -> Result<SolveReport> {
    plant::validate(plant, cost)?;
    if beta < 0.0 {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    if beta == 0.0 {
        return beta_zero_report(plant, cost, config);
    }
    let mut gamma = config.damping.clamp(1e-6, 1.0);
    let mut total_iters = 0usize;
    let mut last_state: Option<FixedPointState> = None;
    loop {
        match attempt(plant, cost, beta, init, gamma, config)? {
            AttemptOutcome::Converged(state, iters) => {
                total_iters += iters;
                return finish_report(plant, cost, state, total_iters, true, gamma, config);
            }
            AttemptOutcome::Failed {
                iterations,
                fatal,
                last,
            } => {
                total_iters += iterations;
                if last.is_some() {
                    last_state = last;
                }
                if fatal {
                    break;
                }
                gamma *= 0.5;
                if gamma < 1e-6 {
                    break;
                }
            }
        }
    }
    let state = last_state.unwrap_or_else(|| {
        let mut s = init.clone();
        s.beta = beta;
        s
    });
    finish_report(plant, cost, state, total_iters, false, gamma, config)
}

fn finish_report(
    plant: &PlantSpec,
    cost: &CostSpec,
    state: FixedPointState,
    iterations: usize,
    converged_iter: bool,
    damping: f64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let tol = &config.tol;
    let res = residuals(plant, cost, &state, tol)?;
    let max_residual = res.values().cloned().fold(0.0, f64::max);
    let converged = converged_iter && max_residual < tol.residual;
    let controller = extract_controller(&state, tol)?;
    let sigma_u = control_covariance(&state);
    let cost_rate = plant::expected_cost_rate(cost, &state.sigma_x, &sigma_u);
    let info = info_rate(&state);
    let lagrangian = if state.beta > 0.0 {
        lagrangian_value(plant, cost, &state, tol)?
    } else {
        0.5 * (state.s.matrix() * plant.sigma_xi.matrix()).trace()
    };
    Ok(SolveReport {
        state,
        controller,
        sigma_u,
        info_rate: info,
        cost_rate,
        lagrangian,
        residuals: res,
        max_residual,
        iterations,
        converged,
        damping_used: damping,
    })
}

/// Estimator-form controller of a state: `W = Sigma_xhat_u Sigma_xhat_y^+`
/// and `Sigma_omega = Sigma^{1/2} V D(I-D) V' Sigma^{1/2}`, both assembled
/// spectrally.
pub fn extract_controller(state: &FixedPointState, tol: &Tolerance) -> Result<ControllerEstimator> {
    let (half, half_inv) = sqrt_halves(&state.obs.sigma_xhat_y, tol)?;
    let hv = half.matrix() * &state.spectrum.basis;
    let hiv = half_inv.matrix() * &state.spectrum.basis;
    let n = hv.nrows();
    let mut w = DMatrix::zeros(n, n);
    let mut sigma_omega = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = state.spectrum.coeffs[j];
        if d != 0.0 {
            let cj = hv.column(j);
            w += d * &cj * hiv.column(j).transpose();
            let de = d * state.spectrum.one_minus[j];
            if de != 0.0 {
                sigma_omega += de * &cj * cj.transpose();
            }
        }
    }
    Ok(ControllerEstimator {
        gain: state.obs.gain.clone(),
        w,
        sigma_omega: PsdMatrix::force(sigma_omega),
        l: state.l.clone(),
    })
}

/// Report for the `beta = 0` anchor point.
pub fn beta_zero_report(plant: &PlantSpec, cost: &CostSpec, config: &SolverConfig) -> Result<SolveReport> {
    plant::validate(plant, cost)?;
    let state = beta_zero_state(plant, cost, &config.tol)?;
    finish_report(plant, cost, state, 0, true, config.damping, config)
}

/// Report for the `beta = infinity` limit. The information rate is the
/// infinity sentinel whenever a valuable mode exists.
pub fn beta_inf_report(plant: &PlantSpec, cost: &CostSpec, config: &SolverConfig) -> Result<SolveReport> {
    plant::validate(plant, cost)?;
    let (state, iterations, converged_iter) = beta_inf_state(plant, cost, config)?;
    let tol = &config.tol;
    let res = residuals(plant, cost, &state, tol)?;
    let max_residual = res.values().cloned().fold(0.0, f64::max);
    let controller = ControllerEstimator {
        gain: state.obs.gain.clone(),
        w: {
            // W = projection onto range(Sigma_xhat_y): watch everything
            let p = psd::pinv_psd(&state.obs.sigma_xhat_y, tol)?;
            state.obs.sigma_xhat_y.matrix() * p.matrix()
        },
        sigma_omega: PsdMatrix::zeros(plant.state_dim()),
        l: state.l.clone(),
    };
    let sigma_u = control_covariance(&state);
    let cost_rate = plant::expected_cost_rate(cost, &state.sigma_x, &sigma_u);
    let info = if state.spectrum.lambda_max() > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(SolveReport {
        lagrangian: cost_rate,
        converged: converged_iter && max_residual < tol.residual,
        state,
        controller,
        sigma_u,
        info_rate: info,
        cost_rate,
        residuals: res,
        max_residual,
        iterations,
        damping_used: config.damping,
    })
}

/// Default solve driver: deterministic continuation from the `beta = 0`
/// anchor, climbing in bounded ratio steps; large `beta` is instead seeded
/// from the `beta = infinity` solution. Optional fixed-seed multi-starts
/// keep the lowest converged Lagrangian.
pub fn solve_beta(
    plant: &PlantSpec,
    cost: &CostSpec,
    beta: f64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    plant::validate(plant, cost)?;
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    if beta == 0.0 {
        return beta_zero_report(plant, cost, config);
    }
    if beta.is_infinite() {
        return beta_inf_report(plant, cost, config);
    }
    let base = beta_zero_state(plant, cost, &config.tol)?;
    let lam1 = base.spectrum.lambda_max();
    let mut report = if lam1 <= 0.0 || beta * lam1 <= 1.0 {
        solve_fixed_point(plant, cost, beta, &base, config)?
    } else {
        let beta_c = 1.0 / lam1;
        let mut chosen: Option<SolveReport> = None;
        if beta > config.high_beta_factor * beta_c {
            if let Ok((inf_state, _, true)) = beta_inf_state(plant, cost, config) {
                let mut seed = inf_state;
                seed.beta = beta;
                // re-pin the spectrum at the finite beta
                let m2 = PsdMatrix::force(seed.n_value.matrix() * beta);
                if let Ok(wf) = waterfill::solve_waterfill(&seed.obs.sigma_xhat_y, &m2, &config.tol)
                {
                    seed.spectrum = ModeSpectrum::from_waterfill(&wf, beta);
                    seed.sigma_xhat_u = wf.x;
                    seed.sigma_cond = wf.complement;
                    let r = solve_fixed_point(plant, cost, beta, &seed, config)?;
                    if r.converged {
                        chosen = Some(r);
                    }
                }
            }
        }
        match chosen {
            Some(r) => r,
            None => ladder_solve(plant, cost, beta, beta_c, &base, config)?,
        }
    };
    if config.multi_start > 0 {
        for start in 0..config.multi_start {
            if let Ok(r) = multi_start_solve(plant, cost, beta, &base, start as u64, config) {
                if r.converged && (!report.converged || r.lagrangian < report.lagrangian - 1e-12) {
                    report = r;
                }
            }
        }
    }
    Ok(report)
}

fn ladder_solve(
    plant: &PlantSpec,
    cost: &CostSpec,
    beta: f64,
    beta_c: f64,
    base: &FixedPointState,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let ratio_cap = config.ladder_ratio.max(1.5);
    let rungs = ((beta / beta_c).ln() / ratio_cap.ln()).ceil().max(1.0) as usize;
    let ratio = (beta / beta_c).powf(1.0 / rungs as f64);
    let mut current = base.clone();
    let mut total_iters = 0usize;
    let mut last = None;
    for i in 1..=rungs {
        let bi = if i == rungs {
            beta
        } else {
            beta_c * ratio.powi(i as i32)
        };
        let r = solve_fixed_point(plant, cost, bi, &current, config)?;
        total_iters += r.iterations;
        if !r.converged {
            let mut out = r;
            out.iterations = total_iters;
            return Ok(out);
        }
        current = r.state.clone();
        last = Some(r);
    }
    let mut out = last.expect("at least one rung");
    out.iterations = total_iters;
    Ok(out)
}

fn multi_start_solve(
    plant: &PlantSpec,
    cost: &CostSpec,
    beta: f64,
    base: &FixedPointState,
    start: u64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let tol = &config.tol;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + start);
    let n = plant.state_dim();
    let (half, _) = sqrt_halves(&base.obs.sigma_xhat_y, tol)?;
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    let v0 = raw.qr().q();
    let mut inner = DMatrix::zeros(n, n);
    for j in 0..n {
        let t: f64 = 0.95 * rng.random::<f64>();
        let col = v0.column(j);
        inner += t * &col * col.transpose();
    }
    let mut init = base.clone();
    init.sigma_xhat_u = PsdMatrix::force(half.matrix() * inner * half.matrix());
    init.sigma_cond = psd::clip_psd(
        &(base.obs.sigma_xhat_y.matrix() - init.sigma_xhat_u.matrix()),
        &Tolerance {
            rank_rel: 1e-6,
            ..*tol
        },
    )?;
    solve_fixed_point(plant, cost, beta, &init, config)
}
