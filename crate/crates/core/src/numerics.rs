//! Dense real-matrix kernels: symmetric eigenvalues, margin-based
//! definiteness, Kronecker products, spectral radius and the
//! Schur-complement test for block matrices.
//!
//! Everything here is sized for desk-scale problems (dimensions up to a
//! few dozen), so plain dense routines from `nalgebra` are used throughout.

use nalgebra::{Cholesky, DMatrix, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
pub type Matrix = DMatrix<f64>;

/// Build a matrix from nested rows. Every row must have the same length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidMatrix("ragged rows".into()));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

/// Inverse of [`matrix_from_rows`].
pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix("non-finite entry".into()))
    }
}

/// Square symmetric matrix. Symmetry is enforced at construction by
/// replacing the input with `(M + Mᵀ) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite(&m)?;
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        Self::new(Matrix::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }

    /// Ascending eigenvalues.
    pub fn eigvals(&self) -> Vec<f64> {
        sym_eigvals(self)
    }

    pub fn max_eigval(&self) -> f64 {
        self.eigvals().last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn min_eigval(&self) -> f64 {
        self.eigvals().first().copied().unwrap_or(f64::INFINITY)
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigvals(m: &SymMatrix) -> Vec<f64> {
    if m.dim() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(m.0.clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Top eigenpair `(λ_max, unit eigenvector)` of a symmetric matrix.
pub fn sym_top_eigpair(m: &SymMatrix) -> (f64, nalgebra::DVector<f64>) {
    let eig = SymmetricEigen::new(m.0.clone());
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty matrix");
    (val, eig.eigenvectors.column(idx).into_owned())
}

/// Strictness for matrix inequalities: `M ≺ 0` is read as
/// `λ_max(M) ≤ −epsilon_rel · (1 + ‖M‖_F)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefinitenessMargin {
    epsilon_rel: f64,
}

impl Default for DefinitenessMargin {
    fn default() -> Self {
        Self { epsilon_rel: 1e-8 }
    }
}

impl DefinitenessMargin {
    pub fn new(epsilon_rel: f64) -> Result<Self> {
        if !(epsilon_rel > 0.0 && epsilon_rel.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "definiteness margin must be positive, got {epsilon_rel}"
            )));
        }
        Ok(Self { epsilon_rel })
    }

    pub fn epsilon_rel(&self) -> f64 {
        self.epsilon_rel
    }

    /// The largest admissible `λ_max` for a matrix of the given Frobenius norm.
    pub fn threshold(&self, frobenius_norm: f64) -> f64 {
        -self.epsilon_rel * (1.0 + frobenius_norm)
    }
}

/// Amount by which `λ_max(m)` exceeds the margin threshold. Non-positive
/// values mean `m` counts as negative definite.
pub fn neg_definite_slack(m: &SymMatrix, margin: DefinitenessMargin) -> f64 {
    m.max_eigval() - margin.threshold(m.frobenius_norm())
}

pub fn is_neg_definite(m: &SymMatrix, margin: DefinitenessMargin) -> bool {
    neg_definite_slack(m, margin) <= 0.0
}

pub fn is_pos_definite(m: &SymMatrix, margin: DefinitenessMargin) -> bool {
    is_neg_definite(&m.scaled(-1.0), margin)
}

/// Kronecker product, dimensions `(ra·rb) × (ca·cb)`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Largest eigenvalue modulus of a square matrix (complex eigenvalues
/// included), computed from a real Schur decomposition.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m)?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::NoConvergence)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Assemble `[[P, M], [Mᵀ, Q]]`.
pub fn block_matrix(p: &SymMatrix, m: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    check_schur_dims(p, m, q)?;
    let (np, nq) = (p.dim(), q.dim());
    let mut out = Matrix::zeros(np + nq, np + nq);
    out.view_mut((0, 0), (np, np)).copy_from(p.as_matrix());
    out.view_mut((0, np), (np, nq)).copy_from(m);
    out.view_mut((np, 0), (nq, np)).copy_from(&m.transpose());
    out.view_mut((np, np), (nq, nq)).copy_from(q.as_matrix());
    SymMatrix::new(out)
}

fn check_schur_dims(p: &SymMatrix, m: &Matrix, q: &SymMatrix) -> Result<()> {
    if p.dim() != m.nrows() || q.dim() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "block matrix: P is {0}x{0}, M is {1}x{2}, Q is {3}x{3}",
            p.dim(),
            m.nrows(),
            m.ncols(),
            q.dim()
        )));
    }
    Ok(())
}

/// Schur complement `P − M Q⁻¹ Mᵀ`, or `None` when `−Q` is not positive
/// definite (so no Cholesky factor exists).
pub fn schur_complement(p: &SymMatrix, m: &Matrix, q: &SymMatrix) -> Result<Option<SymMatrix>> {
    check_schur_dims(p, m, q)?;
    let Some(chol) = Cholesky::new(-q.as_matrix()) else {
        return Ok(None);
    };
    // P − M Q⁻¹ Mᵀ = P + M (−Q)⁻¹ Mᵀ
    let sol = chol.solve(&m.transpose());
    Ok(Some(SymMatrix::new(p.as_matrix() + m * sol)?))
}

/// Block negative definiteness through the Schur complement:
/// `[[P, M], [Mᵀ, Q]] ≺ 0` iff `Q ≺ 0` and `P − M Q⁻¹ Mᵀ ≺ 0`.
pub fn schur_neg_def(
    p: &SymMatrix,
    m: &Matrix,
    q: &SymMatrix,
    margin: DefinitenessMargin,
) -> Result<bool> {
    check_schur_dims(p, m, q)?;
    if !is_neg_definite(q, margin) {
        return Ok(false);
    }
    match schur_complement(p, m, q)? {
        Some(s) => Ok(is_neg_definite(&s, margin)),
        None => Ok(false),
    }
}

/// Rank of a matrix from its singular values, relative tolerance.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * smax.max(1e-300)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn eigvals_small_cases() {
        let d = SymMatrix::from_diagonal(&[2.0, -1.0]).unwrap();
        assert_eq!(sym_eigvals(&d), vec![-1.0, 2.0]);
        let id = sym_eigvals(&SymMatrix::identity(3));
        assert!(id.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let swap = SymMatrix::new(m(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        let e = sym_eigvals(&swap);
        assert!((e[0] + 1.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn construction_symmetrizes_and_rejects_nan() {
        let s = SymMatrix::new(m(&[&[1.0, 2.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], 1.0);
        assert_eq!(s.as_matrix()[(1, 0)], 1.0);
        let bad = Matrix::from_element(2, 2, f64::NAN);
        assert!(matches!(SymMatrix::new(bad), Err(Error::InvalidMatrix(_))));
        assert!(matches!(
            SymMatrix::new(Matrix::zeros(2, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn negative_definiteness_is_strict() {
        let margin = DefinitenessMargin::default();
        assert!(is_neg_definite(&SymMatrix::identity(2).scaled(-1.0), margin));
        assert!(!is_neg_definite(&SymMatrix::zeros(2), margin));
        let tiny = SymMatrix::from_diagonal(&[-1.0, 1e-12]).unwrap();
        assert!(!is_neg_definite(&tiny, DefinitenessMargin::new(1e-8).unwrap()));
        assert!(DefinitenessMargin::new(0.0).is_err());
    }

    #[test]
    fn kron_examples() {
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let k = kron(&Matrix::identity(2, 2), &b);
        assert_eq!(k.view((0, 0), (2, 2)), b.view((0, 0), (2, 2)));
        assert_eq!(k.view((2, 2), (2, 2)), b.view((0, 0), (2, 2)));
        assert_eq!(k.view((0, 2), (2, 2)), Matrix::zeros(2, 2).view((0, 0), (2, 2)));
        assert_eq!(kron(&m(&[&[3.0]]), &m(&[&[-2.0]]))[(0, 0)], -6.0);
        let k = kron(&b, &m(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn spectral_radius_examples() {
        let d = m(&[&[0.5, 0.0], &[0.0, -0.9]]);
        assert!((spectral_radius(&d).unwrap() - 0.9).abs() < 1e-14);
        let rot = m(&[&[0.0, -1.0], &[1.0, 0.0]]);
        assert!((spectral_radius(&rot).unwrap() - 1.0).abs() < 1e-14);
        let scalar = m(&[&[0.2 * 1.44 + 0.8 * 0.25]]);
        assert!((spectral_radius(&scalar).unwrap() - 0.488).abs() < 1e-15);
        assert!(matches!(
            spectral_radius(&Matrix::zeros(2, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn schur_examples() {
        let margin = DefinitenessMargin::default();
        let neg = SymMatrix::identity(2).scaled(-1.0);
        assert!(schur_neg_def(&neg, &Matrix::zeros(2, 2), &neg, margin).unwrap());
        let p = SymMatrix::from_diagonal(&[1.0]).unwrap();
        let q = SymMatrix::from_diagonal(&[-1.0]).unwrap();
        assert!(!schur_neg_def(&p, &m(&[&[0.0]]), &q, margin).unwrap());
        // Schur complement −1 − 2·(−1)⁻¹·2 = 3 > 0
        let p = SymMatrix::from_diagonal(&[-1.0]).unwrap();
        let s = schur_complement(&p, &m(&[&[2.0]]), &q).unwrap().unwrap();
        assert!((s.as_matrix()[(0, 0)] - 3.0).abs() < 1e-15);
        assert!(!schur_neg_def(&p, &m(&[&[2.0]]), &q, margin).unwrap());
        // Q singular: reported as false, not an error
        assert!(!schur_neg_def(&p, &m(&[&[2.0]]), &SymMatrix::zeros(1), margin).unwrap());
    }

    fn small_matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_dim).prop_flat_map(|n| {
            proptest::collection::vec(-2.0f64..2.0, n * n)
                .prop_map(move |v| Matrix::from_row_slice(n, n, &v))
        })
    }

    proptest! {
        #[test]
        fn gram_matrix_is_psd(a in small_matrix(6)) {
            let g = SymMatrix::new(a.transpose() * &a).unwrap();
            prop_assert!(sym_eigvals(&g).iter().all(|&x| x >= -1e-10));
        }

        #[test]
        fn kron_squares_spectral_radius(a in small_matrix(4)) {
            let r = spectral_radius(&a).unwrap();
            let r2 = spectral_radius(&kron(&a, &a)).unwrap();
            prop_assert!((r2 - r * r).abs() <= 1e-8 * (1.0 + r * r));
        }
    }
}
