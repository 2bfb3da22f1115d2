//! Brute-force dense references for small problems: exact GP regression,
//! the natural-gradient VGP recursion on the joint `q(f)`, and the
//! collapsed-optimal SVGP. Compiled only with the `oracle` feature.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian_algebra::{mvn_logpdf_chol, spd_inverse, symmetrize, CholeskyFactor};
use crate::likelihoods::Likelihood;
use crate::markov_kernels::{MarkovKernelSS, SpatialKernel};
use crate::scalar::Scalar;

/// Largest problem an oracle accepts.
pub const ORACLE_MAX_POINTS: usize = 256;

fn check_size(n: usize) -> Result<()> {
    if n > ORACLE_MAX_POINTS {
        return Err(Error::Capacity {
            rows: n,
            cols: n,
            cap: ORACLE_MAX_POINTS,
        });
    }
    Ok(())
}

/// Separable Gram `κ_t(t_i,t_j) κ_s(s_a,s_b)` over all (time, location)
/// pairs, time-major.
pub fn st_gram<T: Scalar>(
    kt: &MarkovKernelSS<T>,
    ks: &SpatialKernel<T>,
    times_a: &[T],
    locs_a: &DMatrix<T>,
    times_b: &[T],
    locs_b: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let (na, nb) = (times_a.len() * locs_a.nrows(), times_b.len() * locs_b.nrows());
    check_size(na.max(nb))?;
    let kss = ks.gram(locs_a, locs_b)?;
    let (sa, sb) = (locs_a.nrows(), locs_b.nrows());
    Ok(DMatrix::from_fn(na, nb, |i, j| {
        kt.kernel(times_a[i / sa] - times_b[j / sb]) * kss[(i % sa, j % sb)]
    }))
}

/// Posterior moments at all inputs and the log marginal likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseRegression<T: Scalar> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
    pub log_marginal: T,
}

/// Conditions `N(0, K)` on `y_o ~ N(f_o, V_o)` for the observed rows.
pub fn dense_regression<T: Scalar>(
    k: &DMatrix<T>,
    y: &DVector<T>,
    noise: &DMatrix<T>,
    observed: &[bool],
) -> Result<DenseRegression<T>> {
    let n = k.nrows();
    check_size(n)?;
    let idx: Vec<usize> = (0..n).filter(|&i| observed[i]).collect();
    if idx.is_empty() {
        return Ok(DenseRegression {
            mean: DVector::zeros(n),
            cov: k.clone(),
            log_marginal: T::zero(),
        });
    }
    let o = idx.len();
    let koo = DMatrix::from_fn(o, o, |i, j| k[(idx[i], idx[j])] + noise[(idx[i], idx[j])]);
    let kxo = k.select_columns(idx.iter());
    let yo = DVector::from_fn(o, |i, _| y[idx[i]]);
    let chol = CholeskyFactor::new(&symmetrize(&koo), "K_oo + V")?;
    let alpha = chol.solve_vec(&yo);
    let mean = &kxo * alpha;
    let cov = symmetrize(&(k - &kxo * chol.solve(&kxo.transpose())));
    Ok(DenseRegression {
        mean,
        cov,
        log_marginal: mvn_logpdf_chol(&yo, &chol),
    })
}

/// Joint Gaussian `q(f)` in natural parameters `(P⁻¹m, −½P⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNatural<T: Scalar> {
    pub eta1: DVector<T>,
    pub eta2: DMatrix<T>,
}

impl<T: Scalar> DenseNatural<T> {
    pub fn prior(k: &DMatrix<T>) -> Result<Self> {
        let kinv = spd_inverse(k, "prior covariance K")?;
        Ok(Self {
            eta1: DVector::zeros(k.nrows()),
            eta2: kinv * T::lit(-0.5),
        })
    }

    pub fn moments(&self) -> Result<(DVector<T>, DMatrix<T>)> {
        let p = spd_inverse(&(&self.eta2 * T::lit(-2.0)), "−2η₂")?;
        Ok((&p * &self.eta1, p))
    }
}

/// `λ ← λ + β[∂L/∂m − 2(∂L/∂P)m, ∂L/∂P]` on the full joint `q(f)`, with
/// `∂L/∂m = g_m − K⁻¹m`, `∂L/∂P = diag(g_v) + ½P⁻¹ − ½K⁻¹`.
pub fn dense_vgp_natgrad_step<T: Scalar>(
    q: &DenseNatural<T>,
    k: &DMatrix<T>,
    y: &DVector<T>,
    observed: &[bool],
    lik: &Likelihood<T>,
    beta: T,
    quadrature_order: usize,
) -> Result<DenseNatural<T>> {
    let n = k.nrows();
    check_size(n)?;
    let (m, p) = q.moments()?;
    let kinv = spd_inverse(k, "prior covariance K")?;
    let pinv = &q.eta2 * T::lit(-2.0);
    let mut gm = DVector::zeros(n);
    let mut gv = DVector::zeros(n);
    for i in 0..n {
        if observed[i] {
            let (a, b) = lik.elik_grads_order(y[i], m[i], p[(i, i)], quadrature_order)?;
            gm[i] = a;
            gv[i] = b;
        }
    }
    let dm = gm - &kinv * &m;
    let dp = DMatrix::from_diagonal(&gv) + (pinv - kinv) * T::lit(0.5);
    Ok(DenseNatural {
        eta1: &q.eta1 + (&dm - (&dp * &m) * T::lit(2.0)) * beta,
        eta2: symmetrize(&(&q.eta2 + dp * beta)),
    })
}

/// Collapsed-optimal `q(u)` and the Titsias bound for Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSvgp<T: Scalar> {
    pub mean_u: DVector<T>,
    pub cov_u: DMatrix<T>,
    pub elbo: T,
}

/// `log N(y | 0, Q_ff + σ²I) − tr(K_ff − Q_ff)/(2σ²)` with
/// `Q_ff = K_fu K_uu⁻¹ K_uf`.
pub fn dense_svgp<T: Scalar>(
    kff_diag: &DVector<T>,
    kfu: &DMatrix<T>,
    kuu: &DMatrix<T>,
    y: &DVector<T>,
    noise_variance: T,
) -> Result<DenseSvgp<T>> {
    let (n, m) = kfu.shape();
    check_size(n.max(m))?;
    let s2 = noise_variance;
    let luu = CholeskyFactor::new(kuu, "K_uu")?;
    let a = luu.solve_lower(&kfu.transpose());
    let qff = symmetrize(&(a.transpose() * &a));
    let cov = symmetrize(&(&qff + DMatrix::identity(n, n) * s2));
    let chol = CholeskyFactor::new(&cov, "Q_ff + σ²I")?;
    let trace = (0..n).fold(T::zero(), |acc, i| acc + kff_diag[i] - qff[(i, i)]);
    let elbo = mvn_logpdf_chol(y, &chol) - trace / (s2 + s2);

    let sigma = symmetrize(&(kuu + kfu.transpose() * kfu / s2));
    let cs = CholeskyFactor::new(&sigma, "K_uu + σ⁻²K_uf K_fu")?;
    let mean_u = kuu * cs.solve_vec(&(kfu.transpose() * y)) / s2;
    let cov_u = symmetrize(&(kuu * cs.solve(kuu)));
    Ok(DenseSvgp { mean_u, cov_u, elbo })
}

/// Predictive `∫ p(f_* | u) q(u) du` at points with cross-covariance `k_su`.
pub fn dense_svgp_predict<T: Scalar>(
    q: &DenseSvgp<T>,
    kuu: &DMatrix<T>,
    ksu: &DMatrix<T>,
    kss_diag: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let luu = CholeskyFactor::new(kuu, "K_uu")?;
    let a = luu.solve(&ksu.transpose());
    let mean = a.transpose() * &q.mean_u;
    let sa = &q.cov_u * &a;
    let var = DVector::from_fn(ksu.nrows(), |i, _| {
        kss_diag[i] - ksu.row(i).dot(&a.column(i).transpose()) + a.column(i).dot(&sa.column(i))
    });
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_bayes() {
        let k = DMatrix::from_element(1, 1, 1.0);
        let r = dense_regression(&k, &DVector::from_element(1, 2.0), &DMatrix::identity(1, 1), &[true]).unwrap();
        assert_relative_eq!(r.mean[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.cov[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn no_data_is_prior() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let r = dense_regression(&k, &DVector::zeros(2), &DMatrix::identity(2, 2), &[false, false]).unwrap();
        assert_eq!(r.cov, k);
        assert_eq!(r.log_marginal, 0.0);
    }

    #[test]
    fn svgp_with_inducing_at_data_is_exact() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.4, 0.2, 0.4, 1.0]);
        let y = DVector::from_vec(vec![0.3, -1.0, 0.8]);
        let s = dense_svgp(&k.diagonal(), &k, &k, &y, 0.1).unwrap();
        let r = dense_regression(&k, &y, &(DMatrix::identity(3, 3) * 0.1), &[true; 3]).unwrap();
        assert_relative_eq!(s.elbo, r.log_marginal, epsilon = 1e-10);
        assert_relative_eq!(s.mean_u, r.mean, epsilon = 1e-10);
        assert_relative_eq!(s.cov_u, r.cov, epsilon = 1e-10);
        let single = dense_svgp(&k.diagonal(), &k.columns(0, 1).clone_owned(), &k.view((0, 0), (1, 1)).clone_owned(), &y, 0.1).unwrap();
        assert!(single.elbo <= r.log_marginal);
    }

    #[test]
    fn natgrad_conjugate_step_is_exact() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.5]);
        let y = DVector::from_vec(vec![0.4, -0.2]);
        let lik = Likelihood::gaussian(0.3).unwrap();
        let q0 = DenseNatural::prior(&k).unwrap();
        let same = dense_vgp_natgrad_step(&q0, &k, &y, &[true, true], &lik, 0.0, 20).unwrap();
        assert_relative_eq!(same.eta2, q0.eta2, epsilon = 1e-14);
        let q1 = dense_vgp_natgrad_step(&q0, &k, &y, &[true, true], &lik, 1.0, 20).unwrap();
        let (m, p) = q1.moments().unwrap();
        let r = dense_regression(&k, &y, &(DMatrix::identity(2, 2) * 0.3), &[true, true]).unwrap();
        assert_relative_eq!(m, r.mean, epsilon = 1e-12);
        assert_relative_eq!(p, r.cov, epsilon = 1e-12);
    }

    #[test]
    fn oracle_size_cap() {
        let k = DMatrix::<f64>::identity(257, 257);
        assert!(matches!(
            dense_regression(&k, &DVector::zeros(257), &k, &[true; 257]),
            Err(Error::Capacity { .. })
        ));
    }
}
