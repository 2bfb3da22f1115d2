//! Gaussian parameterizations, Cholesky factorization, Kronecker products and
//! the multivariate normal log density.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Default cap on either dimension of a materialized Kronecker product.
pub const KRON_MATERIALIZE_CAP: usize = 4096;

/// Relative jitter added on the single Cholesky retry.
pub const CHOLESKY_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    /// (m, P)
    Moment,
    /// (P⁻¹m, −½P⁻¹)
    Natural,
    /// (m, mmᵀ + P)
    Expectation,
}

/// A multivariate Gaussian in one of its three standard parameterizations.
///
/// `first` is the vector-valued parameter and `second` the matrix-valued one;
/// their meaning depends on `param`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<T: Scalar> {
    pub first: DVector<T>,
    pub second: DMatrix<T>,
    pub param: Parameterization,
}

impl<T: Scalar> GaussianParams<T> {
    pub fn moment(mean: DVector<T>, cov: DMatrix<T>) -> Self {
        Self {
            first: mean,
            second: cov,
            param: Parameterization::Moment,
        }
    }

    pub fn natural(eta1: DVector<T>, eta2: DMatrix<T>) -> Self {
        Self {
            first: eta1,
            second: eta2,
            param: Parameterization::Natural,
        }
    }

    pub fn expectation(mu1: DVector<T>, mu2: DMatrix<T>) -> Self {
        Self {
            first: mu1,
            second: mu2,
            param: Parameterization::Expectation,
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Converts to `target`, going through the moment form.
    pub fn convert(&self, target: Parameterization) -> Result<Self> {
        if self.second.nrows() != self.dim() || self.second.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector parameter has length {} but matrix parameter is {}x{}",
                self.dim(),
                self.second.nrows(),
                self.second.ncols()
            )));
        }
        if self.param == target {
            return Ok(self.clone());
        }
        let (mean, cov) = self.to_moments()?;
        Ok(match target {
            Parameterization::Moment => Self::moment(mean, cov),
            Parameterization::Natural => {
                let chol = CholeskyFactor::new_strict(&cov, "covariance P")?;
                let precision = chol.inverse();
                let eta1 = &precision * &mean;
                Self::natural(eta1, precision * lit::<T>(-0.5))
            }
            Parameterization::Expectation => {
                CholeskyFactor::new_strict(&cov, "covariance P")?;
                let mu2 = &mean * mean.transpose() + cov;
                Self::expectation(mean, mu2)
            }
        })
    }

    fn to_moments(&self) -> Result<(DVector<T>, DMatrix<T>)> {
        match self.param {
            Parameterization::Moment => {
                CholeskyFactor::new_strict(&self.second, "covariance P")?;
                Ok((self.first.clone(), self.second.clone()))
            }
            Parameterization::Natural => {
                let neg2 = &self.second * lit::<T>(-2.0);
                let chol = CholeskyFactor::new_strict(&neg2, "natural parameter λ²")
                    .map_err(|_| Error::NotNegativeDefinite {
                        what: "natural parameter λ²".into(),
                    })?;
                let cov = chol.inverse();
                let mean = &cov * &self.first;
                Ok((mean, cov))
            }
            Parameterization::Expectation => {
                let cov = &self.second - &self.first * self.first.transpose();
                CholeskyFactor::new_strict(&cov, "µ₂ − µ₁µ₁ᵀ")?;
                Ok((self.first.clone(), cov))
            }
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = P`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<T: Scalar> {
    lower: DMatrix<T>,
}

/// Plain Cholesky–Banachiewicz; returns the failing pivot on breakdown.
fn cholesky_raw<T: Scalar>(p: &DMatrix<T>) -> std::result::Result<DMatrix<T>, usize> {
    let n = p.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut diag = p[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return Err(j);
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = p[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

impl<T: Scalar> CholeskyFactor<T> {
    /// Factorizes `p`, retrying once with `1e-8·mean(diag)·I` added.
    pub fn new(p: &DMatrix<T>, what: &str) -> Result<Self> {
        check_square(p, what)?;
        match cholesky_raw(p) {
            Ok(lower) => Ok(Self { lower }),
            Err(_) => {
                let n = p.nrows();
                let mean_diag = if n == 0 {
                    T::zero()
                } else {
                    p.diagonal().sum() / lit::<T>(n as f64)
                };
                let jitter = lit::<T>(CHOLESKY_JITTER) * mean_diag.abs();
                let mut q = p.clone();
                for i in 0..n {
                    q[(i, i)] += jitter;
                }
                cholesky_raw(&q)
                    .map(|lower| Self { lower })
                    .map_err(|pivot| Error::not_pd(what, pivot))
            }
        }
    }

    /// Factorizes without the jitter retry.
    pub fn new_strict(p: &DMatrix<T>, what: &str) -> Result<Self> {
        check_square(p, what)?;
        cholesky_raw(p)
            .map(|lower| Self { lower })
            .map_err(|pivot| Error::not_pd(what, pivot))
    }

    pub fn lower(&self) -> &DMatrix<T> {
        &self.lower
    }

    pub fn into_lower(self) -> DMatrix<T> {
        self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// log det P = 2 Σ log Lᵢᵢ
    pub fn log_det(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.dim() {
            s += self.lower[(i, i)].ln();
        }
        s * lit::<T>(2.0)
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.lower
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let y = self.solve_lower(b);
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<T> {
        let n = self.dim();
        symmetrize(&self.solve(&DMatrix::identity(n, n)))
    }
}

fn check_square<T: Scalar>(p: &DMatrix<T>, what: &str) -> Result<()> {
    if p.nrows() != p.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    Ok(())
}

/// Cholesky factor of a symmetric positive-definite matrix, with the single
/// jitter retry.
pub fn cholesky_factor<T: Scalar>(p: &DMatrix<T>) -> Result<DMatrix<T>> {
    CholeskyFactor::new(p, "matrix").map(CholeskyFactor::into_lower)
}

/// Inverse of an SPD matrix via its Cholesky factor.
pub fn spd_inverse<T: Scalar>(p: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    CholeskyFactor::new(p, what).map(|c| c.inverse())
}

/// ½(P + Pᵀ)
pub fn symmetrize<T: Scalar>(p: &DMatrix<T>) -> DMatrix<T> {
    (p + p.transpose()) * lit::<T>(0.5)
}

/// log N(x | m, P), evaluated through the Cholesky factor of `P`.
pub fn mvn_logpdf<T: Scalar>(x: &DVector<T>, mean: &DVector<T>, cov: &DMatrix<T>) -> Result<T> {
    if x.len() != mean.len() || cov.nrows() != x.len() {
        return Err(Error::Dimension(format!(
            "mvn_logpdf: x has length {}, mean {}, cov {}x{}",
            x.len(),
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = CholeskyFactor::new(cov, "covariance")?;
    Ok(mvn_logpdf_chol(&(x - mean), &chol))
}

/// log N(r | 0, P) for a residual `r` and a factorized `P`.
pub(crate) fn mvn_logpdf_chol<T: Scalar>(residual: &DVector<T>, chol: &CholeskyFactor<T>) -> T {
    let n = residual.len();
    let z = chol
        .lower()
        .solve_lower_triangular(residual)
        .expect("Cholesky factor has a positive diagonal");
    let two_pi = T::two_pi();
    lit::<T>(-0.5) * (z.dot(&z) + chol.log_det() + lit::<T>(n as f64) * two_pi.ln())
}

/// Dense Kronecker product, no size cap. Used for state-sized matrices.
pub fn kron_dense<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}

/// Lazily materialized Kronecker product `A ⊗ B`.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerMatrix<T: Scalar> {
    pub left: DMatrix<T>,
    pub right: DMatrix<T>,
}

/// Builds the (unmaterialized) product `A ⊗ B`.
pub fn kron<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> KroneckerMatrix<T> {
    KroneckerMatrix {
        left: a.clone(),
        right: b.clone(),
    }
}

impl<T: Scalar> KroneckerMatrix<T> {
    pub fn nrows(&self) -> usize {
        self.left.nrows() * self.right.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.left.ncols() * self.right.ncols()
    }

    /// Entry `(i·r + k, j·s + l) = A[i,j]·B[k,l]`.
    pub fn entry(&self, row: usize, col: usize) -> T {
        let (r, s) = self.right.shape();
        self.left[(row / r, col / s)] * self.right[(row % r, col % s)]
    }

    pub fn materialize(&self) -> Result<DMatrix<T>> {
        self.materialize_with_cap(KRON_MATERIALIZE_CAP)
    }

    pub fn materialize_with_cap(&self, cap: usize) -> Result<DMatrix<T>> {
        let (rows, cols) = (self.nrows(), self.ncols());
        if rows > cap || cols > cap {
            return Err(Error::Capacity { rows, cols, cap });
        }
        Ok(kron_dense(&self.left, &self.right))
    }

    /// `(A ⊗ B) x` without forming the product: reshapes `x` to `X` (q×s,
    /// row-major) and returns the row-major flattening of `A X Bᵀ`.
    pub fn matvec(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let (p, q) = self.left.shape();
        let (r, s) = self.right.shape();
        if x.len() != q * s {
            return Err(Error::Dimension(format!(
                "Kronecker matvec expects length {}, got {}",
                q * s,
                x.len()
            )));
        }
        let xm = DMatrix::from_row_slice(q, s, x.as_slice());
        let ym = &self.left * xm * self.right.transpose();
        let mut out = DVector::zeros(p * r);
        for i in 0..p {
            for k in 0..r {
                out[i * r + k] = ym[(i, k)];
            }
        }
        Ok(out)
    }

    /// `(A ⊗ B)⁻¹ = A⁻¹ ⊗ B⁻¹`
    pub fn try_inverse(&self) -> Option<Self> {
        Some(Self {
            left: self.left.clone().try_inverse()?,
            right: self.right.clone().try_inverse()?,
        })
    }

    /// Mixed product `(A ⊗ B)(C ⊗ D) = (AC) ⊗ (BD)`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.left.ncols() != other.left.nrows() || self.right.ncols() != other.right.nrows() {
            return Err(Error::Dimension(
                "Kronecker factors do not conform for the mixed product".into(),
            ));
        }
        Ok(Self {
            left: &self.left * &other.left,
            right: &self.right * &other.right,
        })
    }

    pub fn transpose(&self) -> Self {
        Self {
            left: self.left.transpose(),
            right: self.right.transpose(),
        }
    }
}
