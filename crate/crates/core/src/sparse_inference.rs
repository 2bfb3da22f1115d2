//! Spatially sparse inference (ST-SVGP).
//!
//! The state is defined over spatial inducing locations `Z_s` at every time
//! step. Observations at arbitrary locations are linked to it through
//! `f_{n,k} | u_n ~ N(W_k u_n, σ² q̃_k)` with `W = K_SZ K_ZZ⁻¹`, and the
//! approximate likelihood is one dense Gaussian block per time step.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cvi_inference::{
    check_beta, fd_gradient, function_posterior, merge_times, run_loop, ElboTerms, FitConfig,
    FitState, FunctionPosterior, GridData, HyperParams, ModelSpec, Variational, SITE_EPSILON,
};
use crate::error::{Error, Result};
use crate::gaussian_algebra::{symmetrize, CholeskyFactor};
use crate::likelihoods::Likelihood;
use crate::markov_kernels::{assemble_sparse, SpatialKernel};
use crate::scalar::Scalar;
use crate::state_space::{PseudoObservations, PseudoStep};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observations at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteredStep<T: Scalar> {
    /// `n_obs × D_s`.
    pub locations: DMatrix<T>,
    pub values: DVector<T>,
}

/// Observations that need not lie on a spatial grid; one entry per distinct
/// timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteredData<T: Scalar> {
    pub times: Vec<T>,
    pub steps: Vec<ScatteredStep<T>>,
}

impl<T: Scalar> ScatteredData<T> {
    pub fn new(times: Vec<T>, steps: Vec<ScatteredStep<T>>) -> Result<Self> {
        if times.len() != steps.len() {
            return Err(Error::Dimension(format!("{} times but {} steps", times.len(), steps.len())));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::TimeOrder { index: i + 1 });
            }
        }
        let dim = steps.iter().find(|s| s.values.len() > 0).map(|s| s.locations.ncols());
        for (n, s) in steps.iter().enumerate() {
            if s.locations.nrows() != s.values.len() || (s.values.len() > 0 && Some(s.locations.ncols()) != dim) {
                return Err(Error::Dimension(format!("observation step {n} has inconsistent shapes")));
            }
        }
        Ok(Self { times, steps })
    }

    /// Observed grid entries, in grid order.
    pub fn from_grid(grid: &GridData<T>) -> Self {
        let steps = (0..grid.num_steps())
            .map(|n| {
                let ks: Vec<usize> = (0..grid.num_sites()).filter(|&k| grid.observed[(n, k)]).collect();
                ScatteredStep {
                    locations: grid.locations.select_rows(ks.iter()),
                    values: DVector::from_iterator(ks.len(), ks.iter().map(|&k| grid.values[(n, k)])),
                }
            })
            .collect();
        Self {
            times: grid.times.clone(),
            steps,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.times.len()
    }

    pub fn num_observations(&self) -> usize {
        self.steps.iter().map(|s| s.values.len()).sum()
    }

    /// All observation locations stacked.
    pub fn all_locations(&self) -> DMatrix<T> {
        let dim = self.steps.iter().map(|s| s.locations.ncols()).max().unwrap_or(0);
        let rows: Vec<_> = self
            .steps
            .iter()
            .flat_map(|s| s.locations.row_iter().map(|r| r.clone_owned()))
            .collect();
        if rows.is_empty() {
            DMatrix::zeros(0, dim)
        } else {
            DMatrix::from_rows(&rows)
        }
    }
}

/// `W = K_SZ K_ZZ⁻¹` and conditional variances `q̃_k` for a set of locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseProjection<T: Scalar> {
    pub inducing: DMatrix<T>,
    pub w: DMatrix<T>,
    pub qtilde: DVector<T>,
}

pub fn build_projection<T: Scalar>(
    ks: &SpatialKernel<T>,
    s: &DMatrix<T>,
    z: &DMatrix<T>,
) -> Result<SparseProjection<T>> {
    let kzz = ks.gram(z, z)?;
    let chol = CholeskyFactor::new(&kzz, "inducing Gram K_ZZ")?;
    let kzs = ks.gram(z, s)?;
    let w = chol.solve(&kzs).transpose();
    let qtilde = DVector::from_fn(s.nrows(), |k, _| {
        let prior = ks.eval(
            s.row(k).transpose().as_slice(),
            s.row(k).transpose().as_slice(),
        );
        (prior - w.row(k).dot(&kzs.column(k).transpose())).max(T::zero())
    });
    Ok(SparseProjection {
        inducing: z.clone(),
        w,
        qtilde,
    })
}

/// `(W_k m_u, W_k P_u W_kᵀ + σ² q̃_k)` for site `k`.
pub fn sparse_marginal<T: Scalar>(
    proj: &SparseProjection<T>,
    temporal_variance: T,
    mean_u: &DVector<T>,
    cov_u: &DMatrix<T>,
    k: usize,
) -> Result<(T, T)> {
    if k >= proj.w.nrows() {
        return Err(Error::Index(format!("site {k} of {}", proj.w.nrows())));
    }
    if mean_u.len() != proj.w.ncols() || cov_u.shape() != (proj.w.ncols(), proj.w.ncols()) {
        return Err(Error::Dimension("inducing posterior does not match the projection".into()));
    }
    let wk = proj.w.row(k);
    let m = wk.dot(&mean_u.transpose());
    let p = (wk * cov_u * wk.transpose())[(0, 0)] + temporal_variance * proj.qtilde[k];
    Ok((m, p))
}

/// Per-step block natural parameters over the inducing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize + Scalar", deserialize = "T: serde::de::DeserializeOwned + Scalar"))]
pub struct BlockApproxLikelihood<T: Scalar> {
    pub lambda1: Vec<DVector<T>>,
    pub lambda2: Vec<DMatrix<T>>,
    /// Steps that have received at least one update.
    pub informative: Vec<bool>,
}

impl<T: Scalar> BlockApproxLikelihood<T> {
    pub fn zero_information(num_steps: usize, num_inducing: usize) -> Self {
        Self {
            lambda1: vec![DVector::zeros(num_inducing); num_steps],
            lambda2: vec![DMatrix::zeros(num_inducing, num_inducing); num_steps],
            informative: vec![false; num_steps],
        }
    }

    pub fn num_steps(&self) -> usize {
        self.informative.len()
    }

    /// `(Ỹ_n, Ṽ_n)` of an informative block.
    pub fn block_moments(&self, n: usize) -> Result<Option<(DVector<T>, DMatrix<T>)>> {
        if !self.informative[n] {
            return Ok(None);
        }
        let prec = -(&self.lambda2[n] + &self.lambda2[n]);
        let chol = CholeskyFactor::new(&prec, "block precision −2λ̃²")?;
        let v = chol.inverse();
        Ok(Some((&v * &self.lambda1[n], v)))
    }

    pub fn to_pseudo(&self) -> Result<PseudoObservations<T>> {
        let m = self.lambda1.first().map_or(0, |l| l.len());
        let steps = (0..self.num_steps())
            .map(|n| {
                Ok(match self.block_moments(n)? {
                    Some((y, v)) => PseudoStep::fully_observed(y, v),
                    None => PseudoStep::missing(m),
                })
            })
            .collect::<Result<_>>()?;
        Ok(PseudoObservations { steps })
    }
}

/// Symmetric eigenvalue clamp to `≤ −ε`.
pub fn clamp_negative_definite<T: Scalar>(l2: &DMatrix<T>, eps: T) -> DMatrix<T> {
    let eig = symmetrize(l2).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.min(-eps));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

/// Site marginals of one step.
fn step_marginals<T: Scalar>(
    proj: &SparseProjection<T>,
    sigma2: T,
    mean_u: &DVector<T>,
    cov_u: &DMatrix<T>,
) -> (DVector<T>, DVector<T>) {
    let m = &proj.w * mean_u;
    let wp = &proj.w * cov_u;
    let v = DVector::from_fn(proj.w.nrows(), |k, _| {
        wp.row(k).dot(&proj.w.row(k)) + sigma2 * proj.qtilde[k]
    });
    (m, v)
}

/// Gradients of the expected log-likelihood with respect to the mean
/// parameters of `q(u_n)`: `(Σ W_kᵀ g_m, Σ g_v W_kᵀ W_k)`.
pub fn block_gradients<T: Scalar>(
    proj: &SparseProjection<T>,
    sigma2: T,
    mean_u: &DVector<T>,
    cov_u: &DMatrix<T>,
    values: &DVector<T>,
    lik: &Likelihood<T>,
    quadrature_order: usize,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let (m, v) = step_marginals(proj, sigma2, mean_u, cov_u);
    let mut gm = DVector::zeros(m.len());
    let mut gv = DVector::zeros(m.len());
    for k in 0..m.len() {
        let (a, b) = lik.elik_grads_order(values[k], m[k], v[k], quadrature_order)?;
        gm[k] = a;
        gv[k] = b;
    }
    let g_mean = proj.w.transpose() * gm;
    let scaled = DMatrix::from_fn(proj.w.nrows(), proj.w.ncols(), |k, j| gv[k] * proj.w[(k, j)]);
    let g_cov = symmetrize(&(proj.w.transpose() * scaled));
    Ok((g_mean, g_cov))
}

/// Natural-gradient step on every observed block.
pub fn sparse_cvi_step<T: Scalar>(
    bank: &BlockApproxLikelihood<T>,
    post: &FunctionPosterior<T>,
    data: &ScatteredData<T>,
    projections: &[Arc<SparseProjection<T>>],
    lik: &Likelihood<T>,
    temporal_variance: T,
    beta: f64,
    quadrature_order: usize,
) -> Result<BlockApproxLikelihood<T>> {
    check_beta(beta)?;
    if beta == 0.0 {
        return Ok(bank.clone());
    }
    let b = T::lit(beta);
    let eps = T::lit(SITE_EPSILON);
    let blocks: Vec<(DVector<T>, DMatrix<T>, bool)> = (0..data.num_steps())
        .into_par_iter()
        .map(|n| {
            let step = &data.steps[n];
            if step.values.is_empty() {
                return Ok((bank.lambda1[n].clone(), bank.lambda2[n].clone(), bank.informative[n]));
            }
            let (mu, pu) = (&post.means[n], &post.covs[n]);
            let (gm, gp) = block_gradients(&projections[n], temporal_variance, mu, pu, &step.values, lik, quadrature_order)?;
            let l1 = &bank.lambda1[n] * (T::one() - b) + (gm - (&gp * mu) * T::lit(2.0)) * b;
            let l2 = &bank.lambda2[n] * (T::one() - b) + gp * b;
            Ok((l1, clamp_negative_definite(&l2, eps), true))
        })
        .collect::<Result<_>>()?;
    let mut out = BlockApproxLikelihood::zero_information(0, 0);
    for (l1, l2, inf) in blocks {
        out.lambda1.push(l1);
        out.lambda2.push(l2);
        out.informative.push(inf);
    }
    Ok(out)
}

/// Sparse three-term ELBO given the inducing posterior.
pub fn sparse_elbo_terms<T: Scalar>(
    post: &FunctionPosterior<T>,
    bank: &BlockApproxLikelihood<T>,
    data: &ScatteredData<T>,
    projections: &[Arc<SparseProjection<T>>],
    lik: &Likelihood<T>,
    temporal_variance: T,
    quadrature_order: usize,
) -> Result<ElboTerms<T>> {
    let parts: Vec<(T, T)> = (0..data.num_steps())
        .into_par_iter()
        .map(|n| {
            let step = &data.steps[n];
            let (mu, pu) = (&post.means[n], &post.covs[n]);
            let mut e = T::zero();
            if !step.values.is_empty() {
                let (m, v) = step_marginals(&projections[n], temporal_variance, mu, pu);
                for k in 0..m.len() {
                    e += lik.expected_log_lik_order(step.values[k], m[k], v[k], quadrature_order)?;
                }
            }
            let mut a = T::zero();
            if bank.informative[n] {
                // E_q[log N(Ỹ | u, Ṽ)] with Ṽ⁻¹ = −2λ̃²
                let prec = -(&bank.lambda2[n] + &bank.lambda2[n]);
                let chol = CholeskyFactor::new(&prec, "block precision −2λ̃²")?;
                let ytil = chol.solve_vec(&bank.lambda1[n]);
                let r = ytil - mu;
                let quad = r.dot(&(&prec * &r)) + (&prec * pu).trace();
                let dim = T::lit(mu.len() as f64);
                a = -T::lit(0.5) * (dim * T::lit(LN_2PI) - chol.log_det() + quad);
            }
            Ok((e, a))
        })
        .collect::<Result<_>>()?;
    let (mut e, mut a) = (T::zero(), T::zero());
    for (ei, ai) in parts {
        e += ei;
        a += ai;
    }
    Ok(ElboTerms {
        expected_log_lik: e,
        approx_log_lik: a,
        filter_log_lik: post.log_lik,
        total: e - a + post.log_lik,
    })
}

/// Projections for every step, sharing work between steps with identical
/// location sets.
pub fn step_projections<T: Scalar>(
    ks: &SpatialKernel<T>,
    data: &ScatteredData<T>,
    z: &DMatrix<T>,
) -> Result<Vec<Arc<SparseProjection<T>>>> {
    let mut out: Vec<Arc<SparseProjection<T>>> = Vec::with_capacity(data.num_steps());
    let mut prev: Option<(&DMatrix<T>, Arc<SparseProjection<T>>)> = None;
    for step in &data.steps {
        let proj = match &prev {
            Some((locs, p)) if *locs == &step.locations => p.clone(),
            _ => {
                let locs = if step.values.is_empty() {
                    DMatrix::zeros(0, z.ncols())
                } else {
                    step.locations.clone()
                };
                Arc::new(build_projection(ks, &locs, z)?)
            }
        };
        prev = Some((&step.locations, proj.clone()));
        out.push(proj);
    }
    Ok(out)
}

/// Everything derived from one parameter vector.
struct Built<T: Scalar> {
    post: FunctionPosterior<T>,
    projections: Vec<Arc<SparseProjection<T>>>,
    lik: Likelihood<T>,
    sigma2: T,
}

pub(crate) struct SparseProblem<'a, T: Scalar> {
    pub spec: &'a ModelSpec<T>,
    pub data: &'a ScatteredData<T>,
    /// Inducing locations when they are not part of the parameters.
    pub fixed_inducing: Option<&'a DMatrix<T>>,
    pub num_inducing: usize,
    pub cfg: &'a FitConfig,
}

impl<T: Scalar> SparseProblem<'_, T> {
    fn theta_len(&self) -> usize {
        2 + self.spec.spatial_dim + usize::from(self.spec.has_noise_param())
    }

    fn split(&self, params: &[T]) -> (Vec<T>, DMatrix<T>) {
        let nt = self.theta_len();
        let z = match self.fixed_inducing {
            Some(z) => z.clone(),
            None => DMatrix::from_row_slice(self.num_inducing, self.spec.spatial_dim, &params[nt..]),
        };
        (params[..nt].to_vec(), z)
    }

    fn build(&self, params: &[T], bank: &BlockApproxLikelihood<T>) -> Result<Built<T>> {
        let (theta, z) = self.split(params);
        let hp = self.spec.hyper(&theta)?;
        let (kt, ks) = self.spec.kernels(&hp)?;
        let model = assemble_sparse(&kt, &ks, &z, &self.data.times)?;
        let post = function_posterior(&model, &bank.to_pseudo()?, self.cfg.filter_mode, self.cfg.mean_field)?;
        Ok(Built {
            post,
            projections: step_projections(&ks, self.data, &z)?,
            lik: self.spec.likelihood(&hp)?,
            sigma2: hp.temporal_variance,
        })
    }
}

impl<T: Scalar> Variational<T> for SparseProblem<'_, T> {
    type Bank = BlockApproxLikelihood<T>;

    fn cvi_step(&self, params: &[T], bank: &Self::Bank, beta: f64) -> Result<Self::Bank> {
        if beta == 0.0 {
            return Ok(bank.clone());
        }
        let b = self.build(params, bank)?;
        sparse_cvi_step(bank, &b.post, self.data, &b.projections, &b.lik, b.sigma2, beta, self.cfg.quadrature_order)
    }

    fn elbo(&self, params: &[T], bank: &Self::Bank) -> Result<T> {
        let b = self.build(params, bank)?;
        Ok(sparse_elbo_terms(&b.post, bank, self.data, &b.projections, &b.lik, b.sigma2, self.cfg.quadrature_order)?.total)
    }
}

fn check_inputs<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &ScatteredData<T>,
    hyper: &HyperParams<T>,
    inducing: &DMatrix<T>,
) -> Result<()> {
    if inducing.nrows() == 0 || inducing.ncols() != spec.spatial_dim {
        return Err(Error::Dimension(format!(
            "inducing locations are {}×{}, spatial dimension is {}",
            inducing.nrows(),
            inducing.ncols(),
            spec.spatial_dim
        )));
    }
    if hyper.spatial_lengthscales.len() != spec.spatial_dim {
        return Err(Error::Dimension("spatial lengthscales do not match the spatial dimension".into()));
    }
    if data.steps.iter().any(|s| !s.values.is_empty() && s.locations.ncols() != spec.spatial_dim) {
        return Err(Error::Dimension("observation locations do not match the spatial dimension".into()));
    }
    if spec.has_noise_param() != hyper.noise_variance.is_some() {
        return Err(Error::Config(
            "noise variance must be given exactly when the likelihood is Gaussian".into(),
        ));
    }
    Ok(())
}

fn params_of<T: Scalar>(hyper: &HyperParams<T>, inducing: &DMatrix<T>, optimize: bool) -> Vec<T> {
    let mut p = hyper.to_theta();
    if optimize {
        for i in 0..inducing.nrows() {
            p.extend(inducing.row(i).iter().copied());
        }
    }
    p
}

/// Sparse ELBO at the given hyperparameters and inducing locations.
pub fn sparse_elbo<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &ScatteredData<T>,
    bank: &BlockApproxLikelihood<T>,
    theta: &[T],
    inducing: &DMatrix<T>,
    cfg: &FitConfig,
) -> Result<T> {
    let problem = SparseProblem {
        spec,
        data,
        fixed_inducing: Some(inducing),
        num_inducing: inducing.nrows(),
        cfg,
    };
    problem.elbo(theta, bank)
}

/// ∂ELBO/∂θ by central differences, bank and inducing locations fixed.
pub fn sparse_hyper_grad<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &ScatteredData<T>,
    bank: &BlockApproxLikelihood<T>,
    theta: &[T],
    inducing: &DMatrix<T>,
    cfg: &FitConfig,
) -> Result<Vec<T>> {
    let problem = SparseProblem {
        spec,
        data,
        fixed_inducing: Some(inducing),
        num_inducing: inducing.nrows(),
        cfg,
    };
    fd_gradient(&problem, theta, bank, cfg.fd_step)
}

/// Trains ST-SVGP; with `optimize_inducing` the inducing coordinates join the
/// Adam parameters.
pub fn sparse_fit<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &ScatteredData<T>,
    hyper: &HyperParams<T>,
    inducing: &DMatrix<T>,
    optimize_inducing: bool,
    cfg: &FitConfig,
) -> Result<FitState<T, BlockApproxLikelihood<T>>> {
    check_inputs(spec, data, hyper, inducing)?;
    let problem = SparseProblem {
        spec,
        data,
        fixed_inducing: (!optimize_inducing).then_some(inducing),
        num_inducing: inducing.nrows(),
        cfg,
    };
    let bank = BlockApproxLikelihood::zero_information(data.num_steps(), inducing.nrows());
    let out = run_loop(&problem, params_of(hyper, inducing, optimize_inducing), bank, cfg)?;
    let (theta, z) = problem.split(&out.params);
    Ok(FitState {
        theta,
        inducing: Some(z),
        bank: out.bank,
        optimizer: out.optimizer,
        iteration: cfg.iterations,
        elbo_trace: out.elbo_trace,
        iteration_seconds: out.iteration_seconds,
    })
}

/// Inducing posterior `q(u_n)` at every (training ∪ query) time.
pub fn inducing_posterior<T: Scalar>(
    spec: &ModelSpec<T>,
    state: &FitState<T, BlockApproxLikelihood<T>>,
    train_times: &[T],
    query_times: &[T],
    cfg: &FitConfig,
) -> Result<(FunctionPosterior<T>, Vec<usize>)> {
    let z = state
        .inducing
        .as_ref()
        .ok_or_else(|| Error::Config("fit state has no inducing locations".into()))?;
    let hp = spec.hyper(&state.theta)?;
    let (kt, ks) = spec.kernels(&hp)?;
    let (all, train_idx, query_idx) = merge_times(train_times, query_times)?;
    let mut bank = BlockApproxLikelihood::zero_information(all.len(), z.nrows());
    for (n, &j) in train_idx.iter().enumerate() {
        bank.lambda1[j] = state.bank.lambda1[n].clone();
        bank.lambda2[j] = state.bank.lambda2[n].clone();
        bank.informative[j] = state.bank.informative[n];
    }
    let model = assemble_sparse(&kt, &ks, z, &all)?;
    let post = function_posterior(&model, &bank.to_pseudo()?, cfg.filter_mode, cfg.mean_field)?;
    Ok((post, query_idx))
}

/// Latent mean and variance at every `(query time, query location)`,
/// time-major.
pub fn sparse_predict<T: Scalar>(
    spec: &ModelSpec<T>,
    state: &FitState<T, BlockApproxLikelihood<T>>,
    train_times: &[T],
    query_times: &[T],
    query_locations: &DMatrix<T>,
    cfg: &FitConfig,
) -> Result<Vec<(T, T)>> {
    let (post, query_idx) = inducing_posterior(spec, state, train_times, query_times, cfg)?;
    let hp = spec.hyper(&state.theta)?;
    let (_, ks) = spec.kernels(&hp)?;
    let z = state.inducing.as_ref().expect("checked above");
    let proj = build_projection(&ks, query_locations, z)?;
    let mut out = Vec::with_capacity(query_idx.len() * query_locations.nrows());
    for &j in &query_idx {
        let (m, v) = step_marginals(&proj, hp.temporal_variance, &post.means[j], &post.covs[j]);
        out.extend(m.iter().copied().zip(v.iter().copied()));
    }
    Ok(out)
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans_inducing<T: Scalar>(points: &DMatrix<T>, m: usize, seed: u64) -> Result<DMatrix<T>> {
    let n = points.nrows();
    if m == 0 || m > n {
        return Err(Error::Config(format!("cannot place {m} inducing points among {n} locations")));
    }
    let dist2 = |i: usize, c: &DMatrix<T>, j: usize| -> f64 {
        (0..points.ncols())
            .map(|d| {
                let x = (points[(i, d)] - c[(j, d)]).as_f64();
                x * x
            })
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = DMatrix::<T>::zeros(m, points.ncols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&points.row(first));
    let mut best = vec![f64::INFINITY; n];
    for c in 1..m {
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(dist2(i, &centers, c - 1));
        }
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, b) in best.iter().enumerate() {
                if u < *b {
                    idx = i;
                    break;
                }
                u -= b;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&points.row(pick));
    }
    for _ in 0..100 {
        let assign: Vec<usize> = (0..n)
            .map(|i| {
                (0..m)
                    .min_by(|&a, &b| dist2(i, &centers, a).total_cmp(&dist2(i, &centers, b)))
                    .expect("m > 0")
            })
            .collect();
        let mut next = DMatrix::<T>::zeros(m, points.ncols());
        let mut counts = vec![0usize; m];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            let row = next.row(a) + points.row(i);
            next.row_mut(a).copy_from(&row);
        }
        for c in 0..m {
            if counts[c] == 0 {
                let row = centers.row(c).clone_owned();
                next.row_mut(c).copy_from(&row);
            } else {
                let row = next.row(c) / T::lit(counts[c] as f64);
                next.row_mut(c).copy_from(&row);
            }
        }
        if next == centers {
            break;
        }
        centers = next;
    }
    Ok(centers)
}
