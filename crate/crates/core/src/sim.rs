//! Seeded Monte Carlo rollout of the plant in closed loop with a controller
//! in raw, estimator, or matched-channel form. Accumulates single-pass
//! second moments with compensated summation and batch-means standard
//! errors, for validation against the analytic stationary statistics.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::MatchedChannel;
use crate::controller::{ControllerEstimator, ControllerRaw, JointGaussian};
use crate::error::{Error, Result};
use crate::plant::{CostSpec, PlantSpec};
use crate::psd::{self, PsdMatrix, Tolerance};

const BATCHES: usize = 20;

/// Simulation parameters. Results are bit-reproducible for identical inputs:
/// each noise source draws from its own counter-seeded stream.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    /// Total steps simulated.
    pub horizon: usize,
    /// Leading steps discarded before accumulating statistics.
    pub burn_in: usize,
    pub seed: u64,
    /// Record the joint second moments of every pipeline variable, not just
    /// `(x, y, u)`.
    pub record_joint: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.burn_in {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must exceed burn-in {}",
                self.horizon, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Default burn-in: enough steps for the closed-loop transient to die out.
pub fn default_burn_in(closed_loop_rho: f64) -> usize {
    let mixing = if closed_loop_rho < 1.0 {
        (50.0 / (1.0 - closed_loop_rho)).ceil() as usize
    } else {
        0
    };
    mixing.max(10_000)
}

/// The controller to simulate.
#[derive(Debug, Clone)]
pub enum SimController {
    /// `u = H y + eta`
    Raw(ControllerRaw),
    /// `xhat_y = K y`, `xhat_u = W xhat_y + omega`, `u = L xhat_u`
    Estimator(ControllerEstimator),
    /// Estimator front end factored through the matched channel:
    /// `y -> xhat_y -> w -> what -> xhat_u -> u`.
    Channel {
        gain: DMatrix<f64>,
        l: DMatrix<f64>,
        channel: MatchedChannel,
    },
}

#[derive(Clone)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn new() -> Self {
        Kahan { sum: 0.0, carry: 0.0 }
    }
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Gaussian sampler for `N(0, Sigma)` via the PSD square root.
struct MvnSampler {
    factor: DMatrix<f64>,
    rng: ChaCha8Rng,
    dim: usize,
}

impl MvnSampler {
    fn new(cov: &PsdMatrix, seed: u64, stream: u64, tol: &Tolerance) -> Result<Self> {
        let factor = psd::sqrt_psd(cov, tol)?.into_inner();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(MvnSampler {
            dim: factor.nrows(),
            factor,
            rng,
        })
    }

    fn draw(&mut self) -> DVector<f64> {
        let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(&mut self.rng));
        &self.factor * z
    }
}

/// Empirical statistics of a rollout.
#[derive(Debug, Clone)]
pub struct SimStats {
    labels: Vec<(String, usize)>,
    /// Joint second-moment matrix over the stacked recorded variables.
    pub second_moments: DMatrix<f64>,
    /// Per-entry batch-means standard errors of `second_moments`.
    pub second_moment_se: DMatrix<f64>,
    pub cost_rate: f64,
    /// Batch-means standard error of the cost rate.
    pub cost_rate_se: f64,
    pub steps_used: usize,
}

impl SimStats {
    fn offset_of(&self, name: &str) -> Result<(usize, usize)> {
        let mut offset = 0;
        for (label, dim) in &self.labels {
            if label == name {
                return Ok((offset, *dim));
            }
            offset += dim;
        }
        Err(Error::InvalidArgument(format!(
            "variable '{name}' was not recorded"
        )))
    }

    /// Empirical covariance block of one variable.
    pub fn cov(&self, name: &str) -> Result<DMatrix<f64>> {
        let (o, d) = self.offset_of(name)?;
        Ok(self.second_moments.view((o, o), (d, d)).into_owned())
    }

    /// Empirical cross-moment block `E[a b']`.
    pub fn cross(&self, a: &str, b: &str) -> Result<DMatrix<f64>> {
        let (oa, da) = self.offset_of(a)?;
        let (ob, db) = self.offset_of(b)?;
        Ok(self.second_moments.view((oa, ob), (da, db)).into_owned())
    }

    /// Batch-means standard errors of one variable's covariance block.
    pub fn cov_se(&self, name: &str) -> Result<DMatrix<f64>> {
        let (o, d) = self.offset_of(name)?;
        Ok(self.second_moment_se.view((o, o), (d, d)).into_owned())
    }

    pub fn labels(&self) -> &[(String, usize)] {
        &self.labels
    }

    /// The recorded joint as a Gaussian (symmetrized, clipped to PSD).
    pub fn joint(&self, tol: &Tolerance) -> Result<JointGaussian> {
        JointGaussian::new(self.labels.clone(), self.second_moments.clone(), tol)
    }
}

/// Gaussian plug-in mutual information between two recorded variables.
pub fn empirical_info(stats: &SimStats, a: &str, b: &str, tol: &Tolerance) -> Result<f64> {
    let joint = stats.joint(tol)?;
    crate::controller::gaussian_mutual_info(&joint, &[a], &[b], tol)
}

/// Simulates `cfg.horizon` steps from `x0 = 0`, discards the burn-in, and
/// accumulates second moments and the empirical cost rate.
pub fn rollout(
    plant: &PlantSpec,
    cost: &CostSpec,
    controller: &SimController,
    cfg: &SimConfig,
    tol: &Tolerance,
) -> Result<SimStats> {
    cfg.validate()?;
    let n = plant.state_dim();
    let k = plant.obs_dim();
    let l_dim = plant.control_dim();

    let mut xi = MvnSampler::new(&plant.sigma_xi, cfg.seed, 0, tol)?;
    let mut eps = MvnSampler::new(&plant.sigma_eps, cfg.seed, 1, tol)?;
    let mut ctrl_noise = match controller {
        SimController::Raw(raw) => MvnSampler::new(&raw.sigma_eta, cfg.seed, 2, tol)?,
        SimController::Estimator(est) => MvnSampler::new(&est.sigma_omega, cfg.seed, 2, tol)?,
        SimController::Channel { channel, .. } => {
            MvnSampler::new(&channel.noise_cov, cfg.seed, 2, tol)?
        }
    };

    let mut labels: Vec<(String, usize)> = vec![
        ("x".into(), n),
        ("y".into(), k),
        ("u".into(), l_dim),
    ];
    if cfg.record_joint {
        match controller {
            SimController::Raw(_) => {}
            SimController::Estimator(_) => {
                labels.push(("xhat_y".into(), n));
                labels.push(("xhat_u".into(), n));
            }
            SimController::Channel { channel, .. } => {
                labels.push(("xhat_y".into(), n));
                labels.push(("xhat_u".into(), n));
                labels.push(("w".into(), channel.active_dim));
            }
        }
    }
    let total: usize = labels.iter().map(|(_, d)| d).sum();

    let mut moments: Vec<Kahan> = vec![Kahan::new(); total * total];
    let mut cost_acc = Kahan::new();
    let used = cfg.horizon - cfg.burn_in;
    let batch_len = (used / BATCHES).max(1);
    let mut batch_cost: Vec<Kahan> = vec![Kahan::new(); BATCHES];
    let mut batch_zz: Vec<Vec<Kahan>> = vec![vec![Kahan::new(); total * total]; BATCHES];
    let mut batch_counts = vec![0usize; BATCHES];

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(total);
    for t in 0..cfg.horizon {
        let y = &plant.c * &x + eps.draw();
        let mut xhat_y_opt = None;
        let mut xhat_u_opt = None;
        let mut w_opt = None;
        let u = match controller {
            SimController::Raw(raw) => &raw.h * &y + ctrl_noise.draw(),
            SimController::Estimator(est) => {
                let xhat_y = &est.gain * &y;
                let xhat_u = &est.w * &xhat_y + ctrl_noise.draw();
                let u = &est.l * &xhat_u;
                xhat_y_opt = Some(xhat_y);
                xhat_u_opt = Some(xhat_u);
                u
            }
            SimController::Channel { gain, l, channel } => {
                let xhat_y = gain * &y;
                let w = &channel.encoder * &xhat_y;
                let what = &w + ctrl_noise.draw();
                let xhat_u = &channel.decoder * what;
                let u = l * &xhat_u;
                xhat_y_opt = Some(xhat_y);
                xhat_u_opt = Some(xhat_u);
                w_opt = Some(w);
                u
            }
        };

        if t >= cfg.burn_in {
            let idx = t - cfg.burn_in;
            let batch = (idx / batch_len).min(BATCHES - 1);
            z.rows_mut(0, n).copy_from(&x);
            z.rows_mut(n, k).copy_from(&y);
            z.rows_mut(n + k, l_dim).copy_from(&u);
            if cfg.record_joint {
                let mut o = n + k + l_dim;
                if let Some(xy) = &xhat_y_opt {
                    z.rows_mut(o, n).copy_from(xy);
                    o += n;
                }
                if let Some(xu) = &xhat_u_opt {
                    z.rows_mut(o, n).copy_from(xu);
                    o += n;
                }
                if let Some(w) = &w_opt {
                    z.rows_mut(o, w.len()).copy_from(w);
                }
            }
            let bz = &mut batch_zz[batch];
            for i in 0..total {
                let zi = z[i];
                for j in i..total {
                    let prod = zi * z[j];
                    moments[i * total + j].add(prod);
                    bz[i * total + j].add(prod);
                }
            }
            let step_cost = 0.5
                * ((&x.transpose() * cost.q.matrix() * &x)[(0, 0)]
                    + (&u.transpose() * cost.r.matrix() * &u)[(0, 0)]);
            cost_acc.add(step_cost);
            batch_cost[batch].add(step_cost);
            batch_counts[batch] += 1;
        }

        x = &plant.a * &x + &plant.b * &u + xi.draw();
        let norm = x.amax();
        if !norm.is_finite() || norm > 1e12 {
            return Err(Error::SimDiverged {
                step: t,
                norm,
            });
        }
    }

    let inv = 1.0 / used as f64;
    let mut second_moments = DMatrix::zeros(total, total);
    for i in 0..total {
        for j in i..total {
            let v = moments[i * total + j].sum * inv;
            second_moments[(i, j)] = v;
            second_moments[(j, i)] = v;
        }
    }
    let cost_rate = cost_acc.sum * inv;

    // non-overlapping batch means
    let batch_means: Vec<f64> = (0..BATCHES)
        .map(|b| batch_cost[b].sum / batch_counts[b].max(1) as f64)
        .collect();
    let mean_of_means = batch_means.iter().sum::<f64>() / BATCHES as f64;
    let var = batch_means
        .iter()
        .map(|m| (m - mean_of_means).powi(2))
        .sum::<f64>()
        / (BATCHES - 1) as f64;
    let cost_rate_se = (var / BATCHES as f64).sqrt();

    let mut second_moment_se = DMatrix::zeros(total, total);
    for i in 0..total {
        for j in i..total {
            let means: Vec<f64> = (0..BATCHES)
                .map(|b| batch_zz[b][i * total + j].sum / batch_counts[b].max(1) as f64)
                .collect();
            let mm = means.iter().sum::<f64>() / BATCHES as f64;
            let v = means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
            let se = (v / BATCHES as f64).sqrt();
            second_moment_se[(i, j)] = se;
            second_moment_se[(j, i)] = se;
        }
    }

    Ok(SimStats {
        labels,
        second_moments,
        second_moment_se,
        cost_rate,
        cost_rate_se,
        steps_used: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller;
    use nalgebra::dmatrix;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

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

    fn zero_controller() -> SimController {
        SimController::Raw(ControllerRaw {
            h: dmatrix![0.0],
            sigma_eta: PsdMatrix::zeros(1),
        })
    }

    #[test]
    fn open_loop_matches_lyapunov_within_3se() {
        let cfg = SimConfig {
            horizon: 200_000,
            burn_in: 5_000,
            seed: 11,
            record_joint: false,
        };
        let stats = rollout(&scalar_plant(), &unit_cost(), &zero_controller(), &cfg, &tol()).unwrap();
        let truth = 100.0 / 19.0;
        let err = (stats.cov("x").unwrap()[(0, 0)] - truth).abs();
        let se = stats.cov_se("x").unwrap()[(0, 0)];
        assert!(err <= 3.0 * se, "err {} vs 3se {}", err, 3.0 * se);
        // and u is identically zero
        assert_eq!(stats.cov("u").unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn deterministic_null_trajectory() {
        let plant = PlantSpec {
            sigma_xi: PsdMatrix::zeros(1),
            ..scalar_plant()
        };
        let cfg = SimConfig {
            horizon: 1_000,
            burn_in: 10,
            seed: 3,
            record_joint: false,
        };
        let stats = rollout(&plant, &unit_cost(), &zero_controller(), &cfg, &tol()).unwrap();
        assert_eq!(stats.cost_rate, 0.0);
        assert_eq!(stats.cov("x").unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn reproducibility_bit_identical() {
        let cfg = SimConfig {
            horizon: 20_000,
            burn_in: 1_000,
            seed: 42,
            record_joint: true,
        };
        let est = ControllerEstimator {
            gain: dmatrix![1.0],
            w: dmatrix![0.3],
            sigma_omega: PsdMatrix::force(dmatrix![0.2]),
            l: dmatrix![-0.5],
        };
        let c = SimController::Estimator(est);
        let a = rollout(&scalar_plant(), &unit_cost(), &c, &cfg, &tol()).unwrap();
        let b = rollout(&scalar_plant(), &unit_cost(), &c, &cfg, &tol()).unwrap();
        assert_eq!(a.second_moments, b.second_moments);
        assert_eq!(a.cost_rate.to_bits(), b.cost_rate.to_bits());
    }

    #[test]
    fn estimator_stats_match_analytic() {
        let est = ControllerEstimator {
            gain: dmatrix![1.0],
            w: dmatrix![0.3],
            sigma_omega: PsdMatrix::force(dmatrix![0.2]),
            l: dmatrix![-0.5],
        };
        let raw = controller::estimator_to_raw(&est);
        let analytic =
            controller::closed_loop_stationary(&scalar_plant(), &raw, &tol()).unwrap();
        let cfg = SimConfig {
            horizon: 400_000,
            burn_in: 10_000,
            seed: 9,
            record_joint: true,
        };
        let stats = rollout(
            &scalar_plant(),
            &unit_cost(),
            &SimController::Estimator(est),
            &cfg,
            &tol(),
        )
        .unwrap();
        let emp = stats.cov("x").unwrap()[(0, 0)];
        let truth = analytic.sigma_x.matrix()[(0, 0)];
        assert!((emp - truth).abs() / truth < 0.03, "emp {emp} truth {truth}");
    }

    #[test]
    fn divergence_is_reported() {
        // destabilizing positive feedback
        let c = SimController::Raw(ControllerRaw {
            h: dmatrix![2.0],
            sigma_eta: PsdMatrix::zeros(1),
        });
        let cfg = SimConfig {
            horizon: 10_000,
            burn_in: 100,
            seed: 5,
            record_joint: false,
        };
        let err = rollout(&scalar_plant(), &unit_cost(), &c, &cfg, &tol()).unwrap_err();
        assert!(matches!(err, Error::SimDiverged { .. }));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = SimConfig {
            horizon: 100,
            burn_in: 100,
            seed: 1,
            record_joint: false,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empirical_info_requires_recorded_pair() {
        let cfg = SimConfig {
            horizon: 5_000,
            burn_in: 100,
            seed: 2,
            record_joint: false,
        };
        let stats = rollout(&scalar_plant(), &unit_cost(), &zero_controller(), &cfg, &tol()).unwrap();
        assert!(empirical_info(&stats, "xhat_y", "xhat_u", &tol()).is_err());
        // open loop: I(y;u) = 0 by the rank convention (u is constant zero)
        assert_eq!(empirical_info(&stats, "y", "u", &tol()).unwrap(), 0.0);
    }
}
