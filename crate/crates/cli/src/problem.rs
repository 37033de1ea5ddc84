//! The problem file: a single JSON document with explicit dimensions and
//! row-major dense matrix arrays, plus optional solver/simulation overrides.

use milqg_core::psd::{PsdMatrix, Tolerance};
use milqg_core::solver::SolverConfig;
use milqg_core::{plant, CostSpec, PlantSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    /// Row-major `n x n`
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    /// Row-major `n x l`
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    /// Row-major `k x n`
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    /// Row-major `n x n`
    pub sigma_xi: Vec<f64>,
    /// Row-major `k x k`
    pub sigma_eps: Vec<f64>,
    /// Row-major `n x n`
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    /// Row-major `l x l`
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    /// "nats" (default) or "bits"
    #[serde(default)]
    pub units: Option<String>,
    #[serde(default)]
    pub solver: Option<SolverOverrides>,
    #[serde(default)]
    pub sim: Option<SimOverrides>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolverOverrides {
    pub max_outer_iters: Option<usize>,
    pub damping: Option<f64>,
    pub fix_tol: Option<f64>,
    pub ladder_ratio: Option<f64>,
    pub high_beta_factor: Option<f64>,
    pub multi_start: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimOverrides {
    pub burn_in: Option<usize>,
}

fn matrix(name: &str, data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>, String> {
    if data.len() != rows * cols {
        return Err(format!(
            "{name} must have {rows}*{cols} = {} entries (row-major), got {}",
            rows * cols,
            data.len()
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("problem file: {e}"))
    }

    /// Validated plant and cost.
    pub fn to_specs(&self) -> Result<(PlantSpec, CostSpec), String> {
        let tol = Tolerance::default();
        let (n, k, l) = (self.n, self.k, self.l);
        let a = matrix("A", &self.a, n, n)?;
        let b = matrix("B", &self.b, n, l)?;
        let c = matrix("C", &self.c, k, n)?;
        let sigma_xi = PsdMatrix::new(matrix("sigma_xi", &self.sigma_xi, n, n)?, &tol)
            .map_err(|e| format!("sigma_xi: {e}"))?;
        let sigma_eps = PsdMatrix::new(matrix("sigma_eps", &self.sigma_eps, k, k)?, &tol)
            .map_err(|e| format!("sigma_eps: {e}"))?;
        let q = PsdMatrix::new(matrix("Q", &self.q, n, n)?, &tol).map_err(|e| format!("Q: {e}"))?;
        let r = PsdMatrix::new(matrix("R", &self.r, l, l)?, &tol).map_err(|e| format!("R: {e}"))?;
        let plant_spec = PlantSpec {
            a,
            b,
            c,
            sigma_xi,
            sigma_eps,
        };
        let cost_spec = CostSpec { q, r };
        plant::validate(&plant_spec, &cost_spec).map_err(|e| e.to_string())?;
        Ok((plant_spec, cost_spec))
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(o) = &self.solver {
            if let Some(v) = o.max_outer_iters {
                cfg.max_outer_iters = v;
            }
            if let Some(v) = o.damping {
                cfg.damping = v;
            }
            if let Some(v) = o.fix_tol {
                cfg.fix_tol = v;
            }
            if let Some(v) = o.ladder_ratio {
                cfg.ladder_ratio = v;
            }
            if let Some(v) = o.high_beta_factor {
                cfg.high_beta_factor = v;
            }
            if let Some(v) = o.multi_start {
                cfg.multi_start = v;
            }
        }
        cfg
    }

    /// Default units from the file; the --bits flag overrides.
    pub fn bits_default(&self) -> Result<bool, String> {
        match self.units.as_deref() {
            None | Some("nats") => Ok(false),
            Some("bits") => Ok(true),
            Some(other) => Err(format!("units must be \"nats\" or \"bits\", got {other:?}")),
        }
    }
}
