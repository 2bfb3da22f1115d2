//! Matérn kernels: temporal factors in state-space (SDE) form, spatial factors
//! as plain covariance functions, and assembly of the discrete Kronecker
//! state-space model of their separable product.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_algebra::{kron_dense, symmetrize};
use crate::scalar::{lit, Scalar};

/// Half-integer Matérn smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaternOrder {
    #[serde(rename = "matern12")]
    Matern12,
    #[serde(rename = "matern32")]
    Matern32,
    #[serde(rename = "matern52")]
    Matern52,
}

pub type TemporalFamily = MaternOrder;
pub type SpatialFamily = MaternOrder;

impl MaternOrder {
    /// Dimension of the SDE state of the temporal kernel.
    pub fn state_dim(self) -> usize {
        match self {
            MaternOrder::Matern12 => 1,
            MaternOrder::Matern32 => 2,
            MaternOrder::Matern52 => 3,
        }
    }

    /// Unit-variance correlation at scaled distance `r = |x − x′| / ℓ`.
    pub fn correlation<T: Scalar>(self, r: T) -> T {
        let r = r.abs();
        match self {
            MaternOrder::Matern12 => (-r).exp(),
            MaternOrder::Matern32 => {
                let a = lit::<T>(3f64.sqrt()) * r;
                (T::one() + a) * (-a).exp()
            }
            MaternOrder::Matern52 => {
                let a = lit::<T>(5f64.sqrt()) * r;
                (T::one() + a + a * a / lit::<T>(3.0)) * (-a).exp()
            }
        }
    }
}

impl FromStr for MaternOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "matern12" | "exponential" => Ok(MaternOrder::Matern12),
            "matern32" => Ok(MaternOrder::Matern32),
            "matern52" => Ok(MaternOrder::Matern52),
            _ => Err(Error::UnsupportedKernel(s.to_string())),
        }
    }
}

impl fmt::Display for MaternOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaternOrder::Matern12 => "matern12",
            MaternOrder::Matern32 => "matern32",
            MaternOrder::Matern52 => "matern52",
        })
    }
}

/// Continuous-time state-space form of a temporal Matérn kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovKernelSS<T: Scalar> {
    pub family: TemporalFamily,
    pub variance: T,
    pub lengthscale: T,
    /// F, d_t × d_t
    pub feedback: DMatrix<T>,
    /// L, d_t × 1
    pub noise_effect: DMatrix<T>,
    /// Q_c
    pub spectral_density: T,
    /// H, 1 × d_t
    pub measurement: DMatrix<T>,
    /// P∞, d_t × d_t
    pub stationary_cov: DMatrix<T>,
}

/// Builds the companion-form SDE of a Matérn kernel.
pub fn build_temporal_ss<T: Scalar>(
    family: TemporalFamily,
    variance: T,
    lengthscale: T,
) -> Result<MarkovKernelSS<T>> {
    if !(variance > T::zero()) || !variance.is_finite() {
        return Err(Error::Domain(format!("kernel variance must be positive, got {variance:?}")));
    }
    if !(lengthscale > T::zero()) || !lengthscale.is_finite() {
        return Err(Error::Domain(format!(
            "kernel lengthscale must be positive, got {lengthscale:?}"
        )));
    }
    let s2 = variance;
    let (feedback, noise_effect, spectral_density, stationary_cov) = match family {
        MaternOrder::Matern12 => {
            let lam = T::one() / lengthscale;
            (
                DMatrix::from_element(1, 1, -lam),
                DMatrix::from_element(1, 1, T::one()),
                lit::<T>(2.0) * s2 * lam,
                DMatrix::from_element(1, 1, s2),
            )
        }
        MaternOrder::Matern32 => {
            let lam = lit::<T>(3f64.sqrt()) / lengthscale;
            let f = DMatrix::from_row_slice(2, 2, &[T::zero(), T::one(), -lam * lam, lit::<T>(-2.0) * lam]);
            let l = DMatrix::from_row_slice(2, 1, &[T::zero(), T::one()]);
            let qc = lit::<T>(4.0) * lam.powi(3) * s2;
            let pinf = DMatrix::from_diagonal(&DVector::from_vec(vec![s2, lam * lam * s2]));
            (f, l, qc, pinf)
        }
        MaternOrder::Matern52 => {
            let lam = lit::<T>(5f64.sqrt()) / lengthscale;
            let z = T::zero();
            let f = DMatrix::from_row_slice(
                3,
                3,
                &[
                    z,
                    T::one(),
                    z,
                    z,
                    z,
                    T::one(),
                    -lam.powi(3),
                    lit::<T>(-3.0) * lam * lam,
                    lit::<T>(-3.0) * lam,
                ],
            );
            let l = DMatrix::from_row_slice(3, 1, &[z, z, T::one()]);
            let qc = lit::<T>(16.0 / 3.0) * s2 * lam.powi(5);
            let kappa = lam * lam * s2 / lit::<T>(3.0);
            let pinf = DMatrix::from_row_slice(
                3,
                3,
                &[s2, z, -kappa, z, kappa, z, -kappa, z, lam.powi(4) * s2],
            );
            (f, l, qc, pinf)
        }
    };
    let d = family.state_dim();
    let mut measurement = DMatrix::zeros(1, d);
    measurement[(0, 0)] = T::one();
    Ok(MarkovKernelSS {
        family,
        variance,
        lengthscale,
        feedback,
        noise_effect,
        spectral_density,
        measurement,
        stationary_cov,
    })
}

impl<T: Scalar> MarkovKernelSS<T> {
    pub fn state_dim(&self) -> usize {
        self.feedback.nrows()
    }

    /// κ_t(τ) evaluated directly from the closed form.
    pub fn kernel(&self, tau: T) -> T {
        self.variance * self.family.correlation(tau / self.lengthscale)
    }

    /// F P∞ + P∞ Fᵀ + L Qc Lᵀ; zero for a stationary representation.
    pub fn lyapunov_residual(&self) -> DMatrix<T> {
        &self.feedback * &self.stationary_cov
            + &self.stationary_cov * self.feedback.transpose()
            + &self.noise_effect * self.noise_effect.transpose() * self.spectral_density
    }

    /// Discrete transition `A = expm(FΔ)` and process noise `Q = P∞ − A P∞ Aᵀ`.
    pub fn discretize(&self, delta: T) -> (DMatrix<T>, DMatrix<T>) {
        let d = self.state_dim();
        if delta == T::zero() {
            return (DMatrix::identity(d, d), DMatrix::zeros(d, d));
        }
        let a = match self.family {
            MaternOrder::Matern12 => DMatrix::from_element(1, 1, (-delta / self.lengthscale).exp()),
            MaternOrder::Matern32 => {
                let lam = lit::<T>(3f64.sqrt()) / self.lengthscale;
                let e = (-lam * delta).exp();
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        e * (T::one() + lam * delta),
                        e * delta,
                        -e * lam * lam * delta,
                        e * (T::one() - lam * delta),
                    ],
                )
            }
            MaternOrder::Matern52 => expm(&(&self.feedback * delta)),
        };
        let q = symmetrize(&(&self.stationary_cov - &a * &self.stationary_cov * a.transpose()));
        (a, q)
    }
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// The argument is scaled so its 1-norm is at most ½; 20 Taylor terms then
/// leave a truncation error far below double precision.
pub fn expm<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    let norm = (0..n)
        .map(|j| m.column(j).iter().map(|x| x.abs()).fold(T::zero(), |a, b| a + b))
        .fold(T::zero(), |a, b| if b > a { b } else { a })
        .as_f64();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m * lit::<T>(0.5f64.powi(squarings as i32));
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / lit::<T>(k as f64);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Spatial Matérn kernel with unit variance and per-dimension lengthscales.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKernel<T: Scalar> {
    pub family: SpatialFamily,
    pub lengthscales: Vec<T>,
}

impl<T: Scalar> SpatialKernel<T> {
    pub fn new(family: SpatialFamily, lengthscales: Vec<T>) -> Result<Self> {
        if lengthscales.iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
            return Err(Error::Domain("spatial lengthscales must be positive".into()));
        }
        Ok(Self {
            family,
            lengthscales,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// κ_s between two points given as slices.
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        let mut r2 = T::zero();
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let d = (*x - *y) / *l;
            r2 += d * d;
        }
        self.family.correlation(r2.sqrt())
    }

    /// Gram matrix between the rows of `s` and the rows of `s2`.
    pub fn gram(&self, s: &DMatrix<T>, s2: &DMatrix<T>) -> Result<DMatrix<T>> {
        let dim = self.input_dim();
        if s.ncols() != dim || s2.ncols() != dim {
            return Err(Error::Dimension(format!(
                "spatial inputs have {} and {} columns, kernel expects {dim}",
                s.ncols(),
                s2.ncols()
            )));
        }
        let row = |m: &DMatrix<T>, i: usize| -> Vec<T> { m.row(i).iter().copied().collect() };
        let rows_b: Vec<Vec<T>> = (0..s2.nrows()).map(|j| row(s2, j)).collect();
        Ok(DMatrix::from_fn(s.nrows(), s2.nrows(), |i, j| {
            self.eval(&row(s, i), &rows_b[j])
        }))
    }
}

/// Spatial Gram matrix, `K(S, S′)`.
pub fn spatial_gram<T: Scalar>(
    k: &SpatialKernel<T>,
    s: &DMatrix<T>,
    s2: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    k.gram(s, s2)
}

/// One step of the discrete linear-Gaussian dynamics: `x_n = A x_{n−1} + q`,
/// `q ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T: Scalar> {
    pub transition: DMatrix<T>,
    pub noise: DMatrix<T>,
}

/// Discrete spatio-temporal state-space model.
///
/// `transitions[0]` maps the deterministic initial mean onto the first state
/// (`A = I`, `Q` = initial covariance); `transitions[n]` for `n ≥ 1` maps
/// state `n−1` to state `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSTModel<T: Scalar> {
    pub times: Vec<T>,
    pub initial_mean: DVector<T>,
    pub transitions: Vec<Transition<T>>,
    pub measurement: DMatrix<T>,
    /// Spatial Gram of the points the state is defined over.
    pub spatial_gram: DMatrix<T>,
    pub temporal: MarkovKernelSS<T>,
    pub n_points: usize,
}

impl<T: Scalar> DiscreteSTModel<T> {
    pub fn num_steps(&self) -> usize {
        self.transitions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.initial_mean.len()
    }

    pub fn temporal_dim(&self) -> usize {
        self.temporal.state_dim()
    }

    pub fn initial_cov(&self) -> &DMatrix<T> {
        &self.transitions[0].noise
    }

    /// Δ_n = t_{n+1} − t_n
    pub fn step_sizes(&self) -> Vec<T> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Stationary state covariance `K⁽ˢ⁾ ⊗ P∞⁽ᵗ⁾`.
    pub fn stationary_cov(&self) -> DMatrix<T> {
        kron_dense(&self.spatial_gram, &self.temporal.stationary_cov)
    }
}

fn check_times<T: Scalar>(times: &[T]) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::TimeOrder { index: i + 1 });
        }
    }
    if times.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Assembles the standard-form model from a spatial Gram matrix:
/// `A_n = I ⊗ A⁽ᵗ⁾`, `Q_n = K ⊗ Q⁽ᵗ⁾`, `H = I ⊗ H⁽ᵗ⁾`, initial state
/// `N(0, K ⊗ P∞)`.
pub fn assemble_with_gram<T: Scalar>(
    kt: &MarkovKernelSS<T>,
    gram: DMatrix<T>,
    times: &[T],
) -> Result<DiscreteSTModel<T>> {
    check_times(times)?;
    let g = gram.nrows();
    let dt = kt.state_dim();
    let eye_g = DMatrix::<T>::identity(g, g);
    let mut transitions = Vec::with_capacity(times.len());
    transitions.push(Transition {
        transition: DMatrix::identity(g * dt, g * dt),
        noise: kron_dense(&gram, &kt.stationary_cov),
    });
    for w in times.windows(2) {
        let (a, q) = kt.discretize(w[1] - w[0]);
        transitions.push(Transition {
            transition: kron_dense(&eye_g, &a),
            noise: kron_dense(&gram, &q),
        });
    }
    Ok(DiscreteSTModel {
        times: times.to_vec(),
        initial_mean: DVector::zeros(g * dt),
        transitions,
        measurement: kron_dense(&eye_g, &kt.measurement),
        spatial_gram: gram,
        temporal: kt.clone(),
        n_points: g,
    })
}

/// Full model over the data's spatial points `S`.
pub fn assemble_full<T: Scalar>(
    kt: &MarkovKernelSS<T>,
    ks: &SpatialKernel<T>,
    s: &DMatrix<T>,
    times: &[T],
) -> Result<DiscreteSTModel<T>> {
    let gram = ks.gram(s, s)?;
    assemble_with_gram(kt, gram, times)
}

/// Sparse model over spatial inducing locations `Z_s`.
pub fn assemble_sparse<T: Scalar>(
    kt: &MarkovKernelSS<T>,
    ks: &SpatialKernel<T>,
    z: &DMatrix<T>,
    times: &[T],
) -> Result<DiscreteSTModel<T>> {
    assemble_full(kt, ks, z, times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matern12_state_space() {
        let k = build_temporal_ss(MaternOrder::Matern12, 1.0, 1.0).unwrap();
        assert_eq!(k.feedback[(0, 0)], -1.0);
        assert_eq!(k.stationary_cov[(0, 0)], 1.0);
        assert_eq!(k.spectral_density, 2.0);
        assert_relative_eq!(k.lyapunov_residual()[(0, 0)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn matern32_marginal_variance_and_pinf() {
        let k = build_temporal_ss(MaternOrder::Matern32, 1.0, 1.0).unwrap();
        let v = &k.measurement * &k.stationary_cov * k.measurement.transpose();
        assert_relative_eq!(v[(0, 0)], 1.0, epsilon = 1e-14);
        let k = build_temporal_ss(MaternOrder::Matern32, 2.0, 0.5).unwrap();
        assert_relative_eq!(k.stationary_cov[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(k.stationary_cov[(1, 1)], 24.0, epsilon = 1e-12);
        assert_eq!(k.stationary_cov[(0, 1)], 0.0);
    }

    #[test]
    fn lyapunov_and_stability_all_families() {
        for fam in [MaternOrder::Matern12, MaternOrder::Matern32, MaternOrder::Matern52] {
            for &(s2, l) in &[(1.0, 1.0), (2.5, 0.3), (0.7, 4.0)] {
                let k = build_temporal_ss(fam, s2, l).unwrap();
                let scale: f64 = k.stationary_cov.abs().max();
                assert!(k.lyapunov_residual().abs().max() <= 1e-8 * scale.max(1.0), "{fam}");
                let v = (&k.measurement * &k.stationary_cov * k.measurement.transpose())[(0, 0)];
                assert_relative_eq!(v, s2, epsilon = 1e-10);
                let eig = k.feedback.complex_eigenvalues();
                assert!(eig.iter().all(|e| e.re < 0.0), "{fam}: {eig:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(build_temporal_ss(MaternOrder::Matern32, 0.0, 1.0).is_err());
        assert!(build_temporal_ss(MaternOrder::Matern32, 1.0, -1.0).is_err());
        assert!(matches!("rbf".parse::<MaternOrder>(), Err(Error::UnsupportedKernel(_))));
        assert_eq!("Matern-3/2".parse::<MaternOrder>().unwrap(), MaternOrder::Matern32);
    }

    #[test]
    fn discretize_examples() {
        let k = build_temporal_ss(MaternOrder::Matern32, 1.0, 1.0).unwrap();
        let (a, q) = k.discretize(0.0);
        assert_eq!(a, DMatrix::identity(2, 2));
        assert_eq!(q, DMatrix::zeros(2, 2));

        let k = build_temporal_ss(MaternOrder::Matern12, 1.0, 1.0).unwrap();
        let (a, q) = k.discretize(2f64.ln());
        assert_relative_eq!(a[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(q[(0, 0)], 0.75, epsilon = 1e-15);
    }

    /// Unscaled Taylor series at high order; independent of the
    /// scaling-and-squaring path for small arguments.
    fn taylor_reference(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut out = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..60 {
            term = &term * m / k as f64;
            out += &term;
        }
        out
    }

    #[test]
    fn closed_forms_match_expm() {
        for fam in [MaternOrder::Matern12, MaternOrder::Matern32] {
            let k = build_temporal_ss(fam, 1.3, 0.8).unwrap();
            for &dt in &[0.01, 0.1, 1.0, 3.7] {
                let (a, _) = k.discretize(dt);
                assert_relative_eq!(a, expm(&(&k.feedback * dt)), epsilon = 1e-12);
            }
        }
        let k = build_temporal_ss(MaternOrder::Matern32, 1.0, 1.0).unwrap();
        let (a, _) = k.discretize(0.1);
        assert_relative_eq!(a, taylor_reference(&(&k.feedback * 0.1)), epsilon = 1e-10);
        let k = build_temporal_ss(MaternOrder::Matern52, 1.0, 1.0).unwrap();
        let (a, _) = k.discretize(0.1);
        assert_relative_eq!(a, taylor_reference(&(&k.feedback * 0.1)), epsilon = 1e-10);
    }

    #[test]
    fn semigroup_property() {
        for fam in [MaternOrder::Matern12, MaternOrder::Matern32, MaternOrder::Matern52] {
            let k = build_temporal_ss(fam, 1.0, 0.7).unwrap();
            let (a1, _) = k.discretize(0.3);
            let (a2, _) = k.discretize(0.45);
            let (a12, _) = k.discretize(0.75);
            assert_relative_eq!(a12, &a2 * &a1, epsilon = 1e-10);
        }
    }

    #[test]
    fn state_space_covariance_matches_kernel() {
        for fam in [MaternOrder::Matern12, MaternOrder::Matern32, MaternOrder::Matern52] {
            let k = build_temporal_ss(fam, 1.7, 0.6).unwrap();
            for i in 0..=50 {
                let tau = 5.0 * 0.6 * i as f64 / 50.0;
                let a = expm(&(&k.feedback * tau));
                let c = (&k.measurement * a * &k.stationary_cov * k.measurement.transpose())[(0, 0)];
                assert!((c - k.kernel(tau)).abs() <= 1e-8, "{fam} tau={tau}");
            }
        }
    }

    #[test]
    fn spatial_gram_examples() {
        let k = SpatialKernel::new(MaternOrder::Matern12, vec![1.0]).unwrap();
        let p = DMatrix::from_row_slice(1, 1, &[0.3]);
        assert_eq!(k.gram(&p, &p).unwrap()[(0, 0)], 1.0);
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let b = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert_relative_eq!(k.gram(&a, &b).unwrap()[(0, 0)], (-1f64).exp(), epsilon = 1e-15);
        let k = SpatialKernel::new(MaternOrder::Matern32, vec![1.0]).unwrap();
        let expected = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert_relative_eq!(k.gram(&a, &b).unwrap()[(0, 0)], expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.483_358, epsilon = 1e-6);
        let wrong = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(matches!(k.gram(&a, &wrong), Err(Error::Dimension(_))));
    }

    #[test]
    fn assemble_single_point_is_temporal_model() {
        let kt = build_temporal_ss(MaternOrder::Matern32, 1.0, 1.0).unwrap();
        let ks = SpatialKernel::new(MaternOrder::Matern12, vec![1.0]).unwrap();
        let s = DMatrix::from_row_slice(1, 1, &[0.0]);
        let t = [0.0, 0.5, 1.2];
        let m = assemble_full(&kt, &ks, &s, &t).unwrap();
        assert_eq!(m.measurement, kt.measurement);
        assert_eq!(m.transitions[0].noise, kt.stationary_cov);
        let (a, q) = kt.discretize(0.7);
        assert_eq!(m.transitions[2].transition, a);
        assert_eq!(m.transitions[2].noise, q);
    }

    #[test]
    fn assemble_two_points_process_noise() {
        let kt = build_temporal_ss(MaternOrder::Matern12, 1.0, 1.0).unwrap();
        let ks = SpatialKernel::new(MaternOrder::Matern12, vec![1.0]).unwrap();
        let s = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let m = assemble_full(&kt, &ks, &s, &[0.0, 2f64.ln()]).unwrap();
        let e = (-1f64).exp();
        let expected = DMatrix::from_row_slice(2, 2, &[0.75, 0.75 * e, 0.75 * e, 0.75]);
        assert_relative_eq!(m.transitions[1].noise, expected, epsilon = 1e-14);

        let far = DMatrix::from_row_slice(2, 1, &[0.0, 1e4]);
        let m = assemble_full(&kt, &ks, &far, &[0.0, 2f64.ln()]).unwrap();
        assert_eq!(m.transitions[1].noise[(0, 1)], 0.0);
    }

    #[test]
    fn assemble_sparse_matches_kron() {
        let kt = build_temporal_ss(MaternOrder::Matern32, 1.0, 0.8).unwrap();
        let ks = SpatialKernel::new(MaternOrder::Matern32, vec![0.5, 1.5]).unwrap();
        let z = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.4, 0.9, 1.3, 0.0]);
        let t = [0.0, 0.3, 0.35];
        let m = assemble_sparse(&kt, &ks, &z, &t).unwrap();
        assert_eq!(m.state_dim(), 6);
        let gram = ks.gram(&z, &z).unwrap();
        let (_, q) = kt.discretize(0.05);
        for i in 0..6 {
            for j in 0..6 {
                let expected = gram[(i / 2, j / 2)] * q[(i % 2, j % 2)];
                assert_relative_eq!(m.transitions[2].noise[(i, j)], expected, epsilon = 1e-15);
            }
        }
        assert_eq!(assemble_full(&kt, &ks, &z, &t).unwrap(), m);
    }

    #[test]
    fn rejects_duplicate_times() {
        let kt = build_temporal_ss(MaternOrder::Matern32, 1.0, 0.8).unwrap();
        let ks = SpatialKernel::new(MaternOrder::Matern32, vec![1.0]).unwrap();
        let s = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(matches!(
            assemble_full(&kt, &ks, &s, &[0.0, 1.0, 1.0]),
            Err(Error::TimeOrder { index: 2 })
        ));
    }
}
