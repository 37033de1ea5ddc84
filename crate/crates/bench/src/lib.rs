//! Shared fixtures for the benchmark suite.

use milqg_core::psd::PsdMatrix;
use milqg_core::{CostSpec, PlantSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The scalar benchmark plant: a = 0.9, b = c = 1, process noise 1, no
/// observation noise.
pub fn scalar_benchmark() -> (PlantSpec, CostSpec) {
    let plant = PlantSpec {
        a: DMatrix::from_element(1, 1, 0.9),
        b: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
        sigma_xi: PsdMatrix::force(DMatrix::from_element(1, 1, 1.0)),
        sigma_eps: PsdMatrix::zeros(1),
    };
    let cost = CostSpec {
        q: PsdMatrix::force(DMatrix::from_element(1, 1, 1.0)),
        r: PsdMatrix::force(DMatrix::from_element(1, 1, 1.0)),
    };
    (plant, cost)
}

/// A seeded random stable plant of the given dimensions.
pub fn random_plant(seed: u64, n: usize, k: usize, l: usize) -> (PlantSpec, CostSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |r: usize, c: usize| {
        DMatrix::from_fn(r, c, |_, _| {
            // Box-Muller from two uniforms keeps the dependency surface small
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
    };
    let mut a = normal(n, n);
    let rho = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max);
    a *= 0.7 / rho.max(1e-9);
    let b = normal(n, l);
    let c = normal(k, n);
    let g = normal(n, n);
    let sigma_xi = PsdMatrix::force(&g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1);
    let h = normal(k, k);
    let sigma_eps = PsdMatrix::force(&h * h.transpose() / k as f64 * 0.5 + DMatrix::identity(k, k) * 0.05);
    let gq = normal(n, n);
    let q = PsdMatrix::force(&gq * gq.transpose() / n as f64);
    let gr = normal(l, l);
    let r = PsdMatrix::force(&gr * gr.transpose() / l as f64 + DMatrix::identity(l, l) * 0.1);
    (
        PlantSpec {
            a,
            b,
            c,
            sigma_xi,
            sigma_eps,
        },
        CostSpec { q, r },
    )
}
