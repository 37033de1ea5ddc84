//! The solution artifact emitted by `solve` and re-read by `simulate`.
//! Floats serialize with shortest round-trip precision, so re-reading
//! reproduces the controller matrices bit-exactly.

use milqg_core::channel::MatchedChannel;
use milqg_core::psd::{PsdMatrix, Tolerance};
use milqg_core::solver::SolveReport;
use milqg_core::{ControllerEstimator, ControllerRaw};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn unflat(name: &str, data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>, String> {
    if data.len() != rows * cols {
        return Err(format!(
            "artifact field {name}: expected {rows}x{cols} row-major entries, got {}",
            data.len()
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerArtifact {
    /// Row-major `l x k`
    #[serde(rename = "H")]
    pub h: Vec<f64>,
    /// Row-major `l x l`
    pub sigma_eta: Vec<f64>,
    /// Row-major `n x k`
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    /// Row-major `n x n`
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    /// Row-major `n x n`
    pub sigma_omega: Vec<f64>,
    /// Row-major `l x n`
    #[serde(rename = "L")]
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelArtifact {
    pub active_dim: usize,
    /// Row-major `m x n`
    pub encoder: Vec<f64>,
    /// Row-major `m x m`
    pub noise_cov: Vec<f64>,
    /// Row-major `n x m`
    pub decoder: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionArtifact {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub beta: f64,
    /// In the units recorded below.
    pub info_rate: f64,
    pub cost_rate: f64,
    pub lagrangian: f64,
    pub order: usize,
    pub residual_max: f64,
    pub converged: bool,
    pub iterations: usize,
    pub units: String,
    pub controller: ControllerArtifact,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelArtifact>,
}

impl SolutionArtifact {
    pub fn from_report(
        report: &SolveReport,
        dims: (usize, usize, usize),
        bits: bool,
        channel: Option<&MatchedChannel>,
    ) -> Self {
        let (n, k, l) = dims;
        let raw = milqg_core::controller::estimator_to_raw(&report.controller);
        let scale = if bits { std::f64::consts::LN_2 } else { 1.0 };
        SolutionArtifact {
            n,
            k,
            l,
            beta: report.state.beta,
            info_rate: report.info_rate / scale,
            cost_rate: report.cost_rate,
            lagrangian: report.lagrangian,
            order: report.order(),
            residual_max: report.max_residual,
            converged: report.converged,
            iterations: report.iterations,
            units: if bits { "bits".into() } else { "nats".into() },
            controller: ControllerArtifact {
                h: flat(&raw.h),
                sigma_eta: flat(raw.sigma_eta.matrix()),
                k: flat(&report.controller.gain),
                w: flat(&report.controller.w),
                sigma_omega: flat(report.controller.sigma_omega.matrix()),
                l: flat(&report.controller.l),
            },
            channel: channel.map(|ch| ChannelArtifact {
                active_dim: ch.active_dim,
                encoder: flat(&ch.encoder),
                noise_cov: flat(ch.noise_cov.matrix()),
                decoder: flat(&ch.decoder),
            }),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("artifact: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serialization cannot fail")
    }

    pub fn raw_controller(&self, tol: &Tolerance) -> Result<ControllerRaw, String> {
        Ok(ControllerRaw {
            h: unflat("H", &self.controller.h, self.l, self.k)?,
            sigma_eta: PsdMatrix::new(
                unflat("sigma_eta", &self.controller.sigma_eta, self.l, self.l)?,
                tol,
            )
            .map_err(|e| format!("sigma_eta: {e}"))?,
        })
    }

    pub fn estimator_controller(&self, tol: &Tolerance) -> Result<ControllerEstimator, String> {
        Ok(ControllerEstimator {
            gain: unflat("K", &self.controller.k, self.n, self.k)?,
            w: unflat("W", &self.controller.w, self.n, self.n)?,
            sigma_omega: PsdMatrix::new(
                unflat("sigma_omega", &self.controller.sigma_omega, self.n, self.n)?,
                tol,
            )
            .map_err(|e| format!("sigma_omega: {e}"))?,
            l: unflat("L", &self.controller.l, self.l, self.n)?,
        })
    }
}
