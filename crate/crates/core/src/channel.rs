//! The perfectly matched additive Gaussian noise channel realization of a
//! solved controller: encoder `w = E xhat_y`, channel `what = w + v` with
//! `v ~ N(0, I - D)`, decoder `xhat_u = G what`, all restricted to the
//! active modes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::psd::{self, PsdMatrix, Tolerance};
use crate::solver::{self, FixedPointState};

/// Matched channel over the `m` active modes.
#[derive(Debug, Clone)]
pub struct MatchedChannel {
    /// `E = D^{1/2} V' Sigma_xhat_y^{+/2}`, active rows only (`m x n`).
    pub encoder: DMatrix<f64>,
    /// Channel noise covariance `I - D` on the active block (`m x m`).
    pub noise_cov: PsdMatrix,
    /// `G = Sigma_xhat_y^{1/2} V D^{1/2}`, active columns only (`n x m`).
    pub decoder: DMatrix<f64>,
    /// Number of active modes.
    pub active_dim: usize,
}

impl MatchedChannel {
    /// Sum of per-mode capacities `log(1/(1 - D_i)) / 2` in nats.
    pub fn capacity(&self) -> f64 {
        (0..self.active_dim)
            .map(|i| -0.5 * self.noise_cov.matrix()[(i, i)].ln())
            .sum()
    }
}

/// Builds the matched channel of a solved state. Order 0 yields the empty
/// channel.
pub fn build_matched_channel(state: &FixedPointState, tol: &Tolerance) -> Result<MatchedChannel> {
    if !state.beta.is_finite() {
        return Err(Error::InvalidArgument(
            "the matched channel needs a finite-beta solution".into(),
        ));
    }
    let n = state.sigma_x.dim();
    let active: Vec<usize> = (0..n)
        .filter(|&i| state.spectrum.coeffs[i] > 0.0)
        .collect();
    let m = active.len();
    let (half, half_inv) = psd::sqrt_pair(&state.obs.sigma_xhat_y, tol)?;

    let mut encoder = DMatrix::zeros(m, n);
    let mut decoder = DMatrix::zeros(n, m);
    let mut noise = DMatrix::zeros(m, m);
    for (row, &mode) in active.iter().enumerate() {
        let d_root = state.spectrum.coeffs[mode].sqrt();
        let v = state.spectrum.basis.column(mode);
        encoder
            .row_mut(row)
            .copy_from(&(d_root * (half_inv.matrix() * v).transpose()));
        decoder
            .column_mut(row)
            .copy_from(&(d_root * (half.matrix() * v)));
        noise[(row, row)] = state.spectrum.one_minus[mode];
    }
    Ok(MatchedChannel {
        encoder,
        noise_cov: PsdMatrix::force(noise),
        decoder,
        active_dim: m,
    })
}

/// Named identity residuals of the matched-channel construction.
#[derive(Debug, Clone)]
pub struct ChannelReport {
    /// `E Sigma_xhat_y E' = D` (active block)
    pub input_power_residual: f64,
    /// `Sigma_what = D + (I - D) = I`
    pub output_cov_residual: f64,
    /// `G E = W`
    pub composed_map_residual: f64,
    /// `G (I - D) G' = Sigma_omega`
    pub composed_noise_residual: f64,
    /// `sum_i log(1/(1-D_i))/2 = info rate`
    pub capacity_info_gap: f64,
    /// The quadratic KL condition holds iff `Sigma_what = I`.
    pub kl_quadratic_residual: f64,
}

impl ChannelReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.input_power_residual,
            self.output_cov_residual,
            self.composed_map_residual,
            self.composed_noise_residual,
            self.capacity_info_gap,
            self.kl_quadratic_residual,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn pass(&self, tol: &Tolerance) -> bool {
        self.max_residual() < tol.residual
    }
}

/// Verifies the channel identities against the solved state.
pub fn channel_properties_check(
    ch: &MatchedChannel,
    state: &FixedPointState,
    tol: &Tolerance,
) -> Result<ChannelReport> {
    let m = ch.active_dim;
    let sigma_w = &ch.encoder * state.obs.sigma_xhat_y.matrix() * ch.encoder.transpose();
    let mut d_active = DMatrix::zeros(m, m);
    for (row, &d) in state
        .spectrum
        .coeffs
        .iter()
        .filter(|&&d| d > 0.0)
        .enumerate()
        .map(|(r, d)| (r, d))
    {
        d_active[(row, row)] = d;
    }
    let input_power_residual = psd::rel_residual(&sigma_w, &d_active);

    let sigma_what = &sigma_w + ch.noise_cov.matrix();
    let eye = DMatrix::identity(m, m);
    let output_cov_residual = psd::rel_residual(&sigma_what, &eye);
    // the KL divergence is quadratic with coefficient 1/2 exactly when the
    // channel output covariance is the identity
    let kl_quadratic_residual = output_cov_residual;

    let est = solver::extract_controller(state, tol)?;
    let composed = &ch.decoder * &ch.encoder;
    let composed_map_residual = psd::rel_residual(&composed, &est.w);
    let composed_noise = &ch.decoder * ch.noise_cov.matrix() * ch.decoder.transpose();
    let composed_noise_residual = psd::rel_residual(&composed_noise, est.sigma_omega.matrix());

    let capacity_info_gap = (ch.capacity() - solver::info_rate(state)).abs();

    Ok(ChannelReport {
        input_power_residual,
        output_cov_residual,
        composed_map_residual,
        composed_noise_residual,
        capacity_info_gap,
        kl_quadratic_residual,
    })
}
