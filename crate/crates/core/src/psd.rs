//! Primitives for symmetric positive-semidefinite matrices: eigendecomposition,
//! pseudoinverse, pseudodeterminant, square roots, and rank decisions under a
//! single tolerance policy.
//!
//! Rank decisions are relative: an eigenvalue counts as zero when it falls
//! below `rank_rel * lambda_max`. The pseudodeterminant of the zero matrix is
//! the empty product, 1.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerances used throughout the crate.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    /// Relative eigenvalue cutoff for rank decisions.
    pub rank_rel: f64,
    /// Allowed relative asymmetry on symmetric inputs.
    pub sym: f64,
    /// Residual tolerance for equation checks.
    pub residual: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rank_rel: 1e-10,
            sym: 1e-12,
            residual: 1e-8,
        }
    }
}

/// `(X + X') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Relative asymmetry `||X - X'|| / (1 + ||X||)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm() / (1.0 + m.norm())
}

/// Frobenius residual of `lhs` against `rhs`, relative to the scale of `rhs`.
pub fn rel_residual(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> f64 {
    (lhs - rhs).norm() / (1.0 + rhs.norm())
}

/// A square matrix kept symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes the input; rejects it when the asymmetry is beyond `tol.sym`.
    pub fn new(m: DMatrix<f64>, tol: &Tolerance) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asym = asymmetry(&m);
        if asym > tol.sym {
            return Err(Error::NotSymmetric {
                asymmetry: asym,
                tol: tol.sym,
            });
        }
        Ok(SymMatrix(symmetrize(&m)))
    }

    /// Symmetrizes unconditionally. For matrices that are symmetric by
    /// construction up to roundoff (products like `L' R L`).
    pub fn force(m: DMatrix<f64>) -> Self {
        SymMatrix(symmetrize(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// A numerically positive-semidefinite matrix. Eigenvalues in
/// `[-rank_rel * lambda_max, 0)` are treated as zero; anything lower is
/// rejected at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    pub fn new(m: DMatrix<f64>, tol: &Tolerance) -> Result<Self> {
        let sym = SymMatrix::force(m);
        let evd = evd_sym(&sym)?;
        let lmax = evd.values.iter().cloned().fold(0.0_f64, f64::max);
        let lmin = evd.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let floor = -tol.rank_rel * lmax.max(1.0);
        if lmin < floor {
            return Err(Error::NotPsd {
                min_eig: lmin,
                scale: lmax,
            });
        }
        Ok(PsdMatrix(sym.into_inner()))
    }

    /// Wraps a matrix that is PSD by construction (congruences, covariances).
    pub fn force(m: DMatrix<f64>) -> Self {
        PsdMatrix(symmetrize(&m))
    }

    pub fn zeros(dim: usize) -> Self {
        PsdMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        PsdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn as_sym(&self) -> SymMatrix {
        SymMatrix::force(self.0.clone())
    }
}

impl std::ops::Deref for PsdMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEvd {
    /// Eigenvalues, descending.
    pub values: DVector<f64>,
    /// Orthogonal matrix whose columns are the matching eigenvectors.
    pub vectors: DMatrix<f64>,
}

impl SymEvd {
    /// Reassembles `V diag(w) V'` for per-mode weights `w`.
    pub fn assemble(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= weights[j];
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn evd_sym(m: &SymMatrix) -> Result<SymEvd> {
    let n = m.dim();
    if n == 0 {
        return Ok(SymEvd {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = nalgebra::linalg::SymmetricEigen::try_new(m.matrix().clone(), f64::EPSILON, 0)
        .ok_or(Error::EigFailure)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &i) in idx.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    Ok(SymEvd { values, vectors })
}

fn retained(values: &DVector<f64>, tol: &Tolerance) -> (f64, Vec<bool>) {
    let lmax = values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = tol.rank_rel * lmax;
    let keep = values.iter().map(|&l| lmax > 0.0 && l > cutoff).collect();
    (lmax, keep)
}

/// Moore-Penrose pseudoinverse of a PSD matrix via its EVD.
pub fn pinv_psd(m: &PsdMatrix, tol: &Tolerance) -> Result<PsdMatrix> {
    let evd = evd_sym(&m.as_sym())?;
    let (_, keep) = retained(&evd.values, tol);
    let weights: Vec<f64> = evd
        .values
        .iter()
        .zip(&keep)
        .map(|(&l, &k)| if k { 1.0 / l } else { 0.0 })
        .collect();
    Ok(PsdMatrix::force(evd.assemble(&weights)))
}

/// Pseudodeterminant: product of the eigenvalues above the rank cutoff.
/// The empty product (zero matrix) is 1.
pub fn pdet(m: &PsdMatrix, tol: &Tolerance) -> Result<f64> {
    Ok(log_pdet(m, tol)?.exp())
}

/// `log` of the pseudodeterminant, summed over retained eigenvalues.
pub fn log_pdet(m: &PsdMatrix, tol: &Tolerance) -> Result<f64> {
    let evd = evd_sym(&m.as_sym())?;
    let (_, keep) = retained(&evd.values, tol);
    Ok(evd
        .values
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&l, _)| l.ln())
        .sum())
}

/// Number of eigenvalues above the rank cutoff.
pub fn rank_psd(m: &PsdMatrix, tol: &Tolerance) -> Result<usize> {
    let evd = evd_sym(&m.as_sym())?;
    let (_, keep) = retained(&evd.values, tol);
    Ok(keep.iter().filter(|&&k| k).count())
}

/// Symmetric PSD square root. Eigenvalues below the cutoff are treated as 0.
pub fn sqrt_psd(m: &PsdMatrix, tol: &Tolerance) -> Result<PsdMatrix> {
    Ok(sqrt_pair(m, tol)?.0)
}

/// Returns `(m^{1/2}, m^{+/2})`: the PSD root and the pseudoinverse of the root,
/// built from a single eigendecomposition so the two factors agree exactly on
/// the retained range.
pub fn sqrt_pair(m: &PsdMatrix, tol: &Tolerance) -> Result<(PsdMatrix, PsdMatrix)> {
    let evd = evd_sym(&m.as_sym())?;
    let (_, keep) = retained(&evd.values, tol);
    let mut root = evd.vectors.clone();
    let mut root_inv = evd.vectors.clone();
    for j in 0..evd.values.len() {
        let (r, ri) = if keep[j] {
            let s = evd.values[j].max(0.0).sqrt();
            (s, 1.0 / s)
        } else {
            (0.0, 0.0)
        };
        root.column_mut(j).scale_mut(r);
        root_inv.column_mut(j).scale_mut(ri);
    }
    Ok((
        PsdMatrix::force(&root * evd.vectors.transpose()),
        PsdMatrix::force(&root_inv * evd.vectors.transpose()),
    ))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(m: &DMatrix<f64>) -> Result<f64> {
    let evd = evd_sym(&SymMatrix::force(m.clone()))?;
    Ok(evd.values.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Clips eigenvalues below the rank cutoff to zero; small negatives vanish,
/// large negatives are an error.
pub fn clip_psd(m: &DMatrix<f64>, tol: &Tolerance) -> Result<PsdMatrix> {
    let evd = evd_sym(&SymMatrix::force(m.clone()))?;
    let lmax = evd.values.iter().cloned().fold(0.0_f64, f64::max);
    let lmin = evd.values.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin < -tol.rank_rel * lmax.max(1.0) {
        return Err(Error::NotPsd {
            min_eig: lmin,
            scale: lmax,
        });
    }
    let weights: Vec<f64> = evd.values.iter().map(|&l| l.max(0.0)).collect();
    Ok(PsdMatrix::force(evd.assemble(&weights)))
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
    fn evd_diagonal_is_identity_basis() {
        let m = SymMatrix::force(dmatrix![3.0, 0.0; 0.0, 1.0]);
        let evd = evd_sym(&m).unwrap();
        assert_relative_eq!(evd.values[0], 3.0, max_relative = 1e-14);
        assert_relative_eq!(evd.values[1], 1.0, max_relative = 1e-14);
        let recon = &evd.vectors
            * DMatrix::from_diagonal(&evd.values)
            * evd.vectors.transpose();
        assert!((recon - m.matrix()).norm() < 1e-12);
    }

    #[test]
    fn evd_symmetry_forced_pair() {
        let m = SymMatrix::force(dmatrix![0.0, 1.0; 1.0, 0.0]);
        let evd = evd_sym(&m).unwrap();
        assert_relative_eq!(evd.values[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(evd.values[1], -1.0, epsilon = 1e-14);
        let s = 1.0 / 2.0_f64.sqrt();
        let v0 = evd.vectors.column(0);
        assert_relative_eq!(v0[0].abs(), s, epsilon = 1e-12);
        assert_relative_eq!(v0[1].abs(), s, epsilon = 1e-12);
    }

    #[test]
    fn evd_reconstruction_random() {
        // fixed pseudo-random symmetric 4x4
        let raw = dmatrix![
            0.3, -1.2, 0.7, 0.1;
            -0.4, 0.9, -0.6, 1.3;
            0.8, 0.2, -0.5, 0.4;
            -0.9, 0.6, 1.1, -0.2
        ];
        let m = SymMatrix::force(raw);
        let evd = evd_sym(&m).unwrap();
        let recon = &evd.vectors
            * DMatrix::from_diagonal(&evd.values)
            * evd.vectors.transpose();
        assert!((recon - m.matrix()).norm() / m.matrix().norm() < 1e-10);
        let vtv = evd.vectors.transpose() * &evd.vectors;
        assert!((vtv - DMatrix::identity(4, 4)).norm() < 1e-10);
        // descending order
        for i in 1..4 {
            assert!(evd.values[i - 1] >= evd.values[i]);
        }
    }

    #[test]
    fn pinv_diagonal_rank_one() {
        let m = PsdMatrix::new(dmatrix![2.0, 0.0; 0.0, 0.0], &tol()).unwrap();
        let p = pinv_psd(&m, &tol()).unwrap();
        assert!((p.matrix() - dmatrix![0.5, 0.0; 0.0, 0.0]).norm() < 1e-14);
    }

    #[test]
    fn pinv_identity_and_zero() {
        let id = PsdMatrix::identity(3);
        assert!((pinv_psd(&id, &tol()).unwrap().matrix() - DMatrix::identity(3, 3)).norm() < 1e-14);
        let z = PsdMatrix::zeros(2);
        assert!(pinv_psd(&z, &tol()).unwrap().matrix().norm() == 0.0);
    }

    #[test]
    fn pinv_penrose_identities() {
        let g = dmatrix![1.0, 2.0; 0.5, -0.3; 0.9, 0.1];
        let m = PsdMatrix::force(&g * g.transpose()); // rank 2 in 3x3
        let p = pinv_psd(&m, &tol()).unwrap();
        let mpm = m.matrix() * p.matrix() * m.matrix();
        let pmp = p.matrix() * m.matrix() * p.matrix();
        assert!(rel_residual(&mpm, m.matrix()) < 1e-10);
        assert!(rel_residual(&pmp, p.matrix()) < 1e-10);
    }

    #[test]
    fn pdet_diagonal_and_conventions() {
        let m = PsdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0, 3.0])), &tol()).unwrap();
        assert_relative_eq!(pdet(&m, &tol()).unwrap(), 6.0, max_relative = 1e-12);
        assert_relative_eq!(pdet(&PsdMatrix::zeros(3), &tol()).unwrap(), 1.0);
        assert_relative_eq!(pdet(&PsdMatrix::identity(4), &tol()).unwrap(), 1.0);
    }

    #[test]
    fn pdet_scaling_law() {
        let g = dmatrix![1.0, 0.4; -0.7, 0.2; 0.3, 1.5];
        let m = PsdMatrix::force(&g * g.transpose());
        let r = rank_psd(&m, &tol()).unwrap();
        let c = 3.7;
        let scaled = PsdMatrix::force(m.matrix() * c);
        let lhs = pdet(&scaled, &tol()).unwrap();
        let rhs = c.powi(r as i32) * pdet(&m, &tol()).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-8);
    }

    #[test]
    fn sqrt_diagonal() {
        let m = PsdMatrix::new(dmatrix![4.0, 0.0; 0.0, 9.0], &tol()).unwrap();
        let r = sqrt_psd(&m, &tol()).unwrap();
        assert!((r.matrix() - dmatrix![2.0, 0.0; 0.0, 3.0]).norm() < 1e-12);
        let z = sqrt_psd(&PsdMatrix::zeros(2), &tol()).unwrap();
        assert!(z.matrix().norm() == 0.0);
    }

    #[test]
    fn sqrt_squares_back() {
        let g = dmatrix![0.8, -0.1, 0.3; 0.2, 1.1, -0.4; -0.6, 0.5, 0.9];
        let m = PsdMatrix::force(&g * g.transpose());
        let r = sqrt_psd(&m, &tol()).unwrap();
        assert!((r.matrix() * r.matrix() - m.matrix()).norm() < 1e-9);
        // root commutes with m and has the same rank
        let lhs = r.matrix() * m.matrix();
        let rhs = m.matrix() * r.matrix();
        assert!((lhs - &rhs).norm() / (1.0 + rhs.norm()) < 1e-10);
        assert_eq!(rank_psd(&r, &tol()).unwrap(), rank_psd(&m, &tol()).unwrap());
    }

    #[test]
    fn sqrt_pair_consistency() {
        let g = dmatrix![1.0, 0.0; 2.0, 0.0]; // rank 1
        let m = PsdMatrix::force(&g * g.transpose());
        let (h, hi) = sqrt_pair(&m, &tol()).unwrap();
        // h * hi is the projector onto the range
        let p = h.matrix() * hi.matrix();
        assert!((&p * &p - &p).norm() < 1e-12);
        assert!(rel_residual(&(&p * m.matrix()), m.matrix()) < 1e-12);
    }

    #[test]
    fn rank_cutoff_is_relative() {
        let m = PsdMatrix::new(dmatrix![1.0, 0.0; 0.0, 1e-14], &tol()).unwrap();
        assert_eq!(rank_psd(&m, &tol()).unwrap(), 1);
        assert_eq!(rank_psd(&PsdMatrix::zeros(3), &tol()).unwrap(), 0);
        let d = PsdMatrix::new(dmatrix![1.0, 0.0; 0.0, 0.0], &tol()).unwrap();
        assert_eq!(rank_psd(&d, &tol()).unwrap(), 1);
    }

    #[test]
    fn psd_rejects_indefinite() {
        let m = dmatrix![1.0, 0.0; 0.0, -0.5];
        assert!(PsdMatrix::new(m, &tol()).is_err());
    }

    #[test]
    fn sym_rejects_asymmetric() {
        let m = dmatrix![1.0, 0.5; 0.0, 1.0];
        assert!(SymMatrix::new(m, &tol()).is_err());
    }
}
