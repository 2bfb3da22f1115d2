//! Full-grid variational inference (ST-VGP): per-site Gaussian approximate
//! likelihoods updated by conjugate-computation natural-gradient steps, the
//! three-term ELBO, and the training loop.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihoods::{Likelihood, TRAIN_QUADRATURE_ORDER};
use crate::markov_kernels::{
    assemble_full, build_temporal_ss, DiscreteSTModel, MarkovKernelSS, SpatialFamily,
    SpatialKernel, TemporalFamily,
};
use crate::mean_field;
use crate::scalar::Scalar;
use crate::state_space::{filter_smoother, FilterMode, PseudoObservations, PseudoStep};

/// Upper bound `−ε` on approximate-likelihood precisions `λ̃²`.
pub const SITE_EPSILON: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observations on a space-time grid. Entry `(n, k)` is time `n`, spatial
/// point `k`; flattening is time-major (`n · N_s + k`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridData<T: Scalar> {
    pub times: Vec<T>,
    /// `N_s × D_s` spatial coordinates.
    pub locations: DMatrix<T>,
    /// `N_t × N_s` values; masked entries are ignored.
    pub values: DMatrix<T>,
    pub observed: DMatrix<bool>,
}

impl<T: Scalar> GridData<T> {
    pub fn new(
        times: Vec<T>,
        locations: DMatrix<T>,
        values: DMatrix<T>,
        observed: DMatrix<bool>,
    ) -> Result<Self> {
        let shape = (times.len(), locations.nrows());
        if values.shape() != shape || observed.shape() != shape {
            return Err(Error::Dimension(format!(
                "grid values {:?} / mask {:?} do not match {} times × {} locations",
                values.shape(),
                observed.shape(),
                shape.0,
                shape.1
            )));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::TimeOrder { index: i + 1 });
            }
        }
        Ok(Self {
            times,
            locations,
            values,
            observed,
        })
    }

    /// Fully observed grid.
    pub fn dense(times: Vec<T>, locations: DMatrix<T>, values: DMatrix<T>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(times, locations, values, mask)
    }

    pub fn num_steps(&self) -> usize {
        self.times.len()
    }

    pub fn num_sites(&self) -> usize {
        self.locations.nrows()
    }

    pub fn num_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn value(&self, n: usize, k: usize) -> Option<T> {
        self.observed[(n, k)].then(|| self.values[(n, k)])
    }

    /// Time-major flattening of the values (masked entries included).
    pub fn vec(&self) -> DVector<T> {
        let (nt, ns) = self.values.shape();
        DVector::from_fn(nt * ns, |i, _| self.values[(i / ns, i % ns)])
    }
}

/// Kernel and likelihood hyperparameters in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct HyperParams<T> {
    pub temporal_variance: T,
    pub temporal_lengthscale: T,
    pub spatial_lengthscales: Vec<T>,
    /// Gaussian observation noise; `None` for other likelihoods.
    pub noise_variance: Option<T>,
}

impl<T: Scalar> HyperParams<T> {
    /// Log-domain vector `[log σ², log ℓ_t, log ℓ_s…, (log σ_n²)]`.
    pub fn to_theta(&self) -> Vec<T> {
        let mut th = vec![self.temporal_variance.ln(), self.temporal_lengthscale.ln()];
        th.extend(self.spatial_lengthscales.iter().map(|l| l.ln()));
        if let Some(v) = self.noise_variance {
            th.push(v.ln());
        }
        th
    }

    pub fn from_theta(theta: &[T], spatial_dim: usize, has_noise: bool) -> Result<Self> {
        let expected = 2 + spatial_dim + usize::from(has_noise);
        if theta.len() != expected {
            return Err(Error::Dimension(format!(
                "hyperparameter vector has {} entries, expected {expected}",
                theta.len()
            )));
        }
        Ok(Self {
            temporal_variance: theta[0].exp(),
            temporal_lengthscale: theta[1].exp(),
            spatial_lengthscales: theta[2..2 + spatial_dim].iter().map(|t| t.exp()).collect(),
            noise_variance: has_noise.then(|| theta[2 + spatial_dim].exp()),
        })
    }
}

/// Kernel families and the likelihood family. For a Gaussian likelihood the
/// noise variance is taken from [`HyperParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T: Scalar> {
    pub temporal: TemporalFamily,
    pub spatial: SpatialFamily,
    pub likelihood: Likelihood<T>,
    pub spatial_dim: usize,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn has_noise_param(&self) -> bool {
        self.likelihood.is_conjugate()
    }

    pub fn hyper(&self, theta: &[T]) -> Result<HyperParams<T>> {
        HyperParams::from_theta(theta, self.spatial_dim, self.has_noise_param())
    }

    pub fn kernels(&self, hp: &HyperParams<T>) -> Result<(MarkovKernelSS<T>, SpatialKernel<T>)> {
        let kt = build_temporal_ss(self.temporal, hp.temporal_variance, hp.temporal_lengthscale)?;
        let ks = SpatialKernel::new(self.spatial, hp.spatial_lengthscales.clone())?;
        Ok((kt, ks))
    }

    pub fn likelihood(&self, hp: &HyperParams<T>) -> Result<Likelihood<T>> {
        match (self.likelihood, hp.noise_variance) {
            (Likelihood::Gaussian { .. }, Some(v)) => Likelihood::gaussian(v),
            (Likelihood::Gaussian { variance }, None) => Likelihood::gaussian(variance),
            (other, _) => Ok(other),
        }
    }
}

/// Per-site natural parameters `(λ̃¹, λ̃²)` in time-major order. A site with
/// `λ̃² = 0` carries no information and is treated as missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ApproxLikelihoodBank<T> {
    pub num_sites: usize,
    pub lambda1: Vec<T>,
    pub lambda2: Vec<T>,
}

impl<T: Scalar> ApproxLikelihoodBank<T> {
    pub fn zero_information(num_steps: usize, num_sites: usize) -> Self {
        Self {
            num_sites,
            lambda1: vec![T::zero(); num_steps * num_sites],
            lambda2: vec![T::zero(); num_steps * num_sites],
        }
    }

    pub fn num_steps(&self) -> usize {
        self.lambda1.len().checked_div(self.num_sites).unwrap_or(0)
    }

    pub fn is_informative(&self, i: usize) -> bool {
        self.lambda2[i] < T::zero()
    }

    /// `(Ỹ, Ṽ)` of site `i`, if informative.
    pub fn site_moments(&self, i: usize) -> Option<(T, T)> {
        self.is_informative(i).then(|| {
            let v = T::one() / (-(self.lambda2[i] + self.lambda2[i]));
            (v * self.lambda1[i], v)
        })
    }
}

/// `Ṽ = (−2λ̃²)⁻¹`, `Ỹ = Ṽλ̃¹` per site; uninformative sites are missing.
pub fn bank_to_pseudo<T: Scalar>(bank: &ApproxLikelihoodBank<T>) -> PseudoObservations<T> {
    let ns = bank.num_sites;
    let steps = (0..bank.num_steps())
        .map(|n| {
            let mut step = PseudoStep::missing(ns);
            for k in 0..ns {
                if let Some((y, v)) = bank.site_moments(n * ns + k) {
                    step.mean[k] = y;
                    step.noise[(k, k)] = v;
                    step.observed[k] = true;
                }
            }
            step
        })
        .collect();
    PseudoObservations { steps }
}

/// Per-step function-space posterior: means and covariances of the values
/// at the model's spatial points, plus the filter log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionPosterior<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
    pub log_lik: T,
}

impl<T: Scalar> FunctionPosterior<T> {
    /// Time-major per-site means and variances.
    pub fn site_marginals(&self) -> (Vec<T>, Vec<T>) {
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for (m, p) in self.means.iter().zip(&self.covs) {
            means.extend(m.iter().copied());
            vars.extend(p.diagonal().iter().copied());
        }
        (means, vars)
    }
}

/// Runs filter + smoother and maps states to function values. With
/// `mean_field` the model is reformulated and state covariances are kept
/// block-diagonal.
pub fn function_posterior<T: Scalar>(
    model: &DiscreteSTModel<T>,
    pseudo: &PseudoObservations<T>,
    mode: FilterMode,
    mean_field: bool,
) -> Result<FunctionPosterior<T>> {
    if mean_field {
        return mean_field::mf_function_posterior(model, pseudo, mode);
    }
    let (states, log_lik) = filter_smoother(model, pseudo, mode)?;
    let (means, covs) = states.function_marginals(&model.measurement);
    Ok(FunctionPosterior {
        means,
        covs,
        log_lik,
    })
}

/// `q(f)` under the current bank for a standard-form model.
pub fn posterior<T: Scalar>(
    model: &DiscreteSTModel<T>,
    bank: &ApproxLikelihoodBank<T>,
    mode: FilterMode,
) -> Result<FunctionPosterior<T>> {
    function_posterior(model, &bank_to_pseudo(bank), mode, false)
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Config(format!("natural-gradient rate must lie in [0, 1], got {beta}")))
    }
}

/// One natural-gradient step on every observed site:
/// `λ̃ ← (1−β)λ̃ + β[g_m − 2g_v·m, g_v]`, then `λ̃² ≤ −ε`.
pub fn cvi_step<T: Scalar>(
    bank: &ApproxLikelihoodBank<T>,
    means: &[T],
    vars: &[T],
    data: &GridData<T>,
    lik: &Likelihood<T>,
    beta: f64,
    quadrature_order: usize,
) -> Result<ApproxLikelihoodBank<T>> {
    check_beta(beta)?;
    let total = data.num_steps() * data.num_sites();
    if bank.lambda1.len() != total || means.len() != total || vars.len() != total {
        return Err(Error::Dimension("bank, marginals and data disagree in size".into()));
    }
    if beta == 0.0 {
        return Ok(bank.clone());
    }
    let b = T::lit(beta);
    let ns = data.num_sites();
    let eps = T::lit(SITE_EPSILON);
    let updated: Vec<(T, T)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let Some(y) = data.value(i / ns, i % ns) else {
                return Ok((bank.lambda1[i], bank.lambda2[i]));
            };
            let (m, v) = (means[i], vars[i]);
            let (gm, gv) = lik.elik_grads_order(y, m, v, quadrature_order)?;
            let l1 = (T::one() - b) * bank.lambda1[i] + b * (gm - (gv + gv) * m);
            let l2 = (T::one() - b) * bank.lambda2[i] + b * gv;
            Ok((l1, l2.min(-eps)))
        })
        .collect::<Result<_>>()?;
    let (lambda1, lambda2) = updated.into_iter().unzip();
    Ok(ApproxLikelihoodBank {
        num_sites: ns,
        lambda1,
        lambda2,
    })
}

/// ELBO split into its three terms; `total = expected − approx + filter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms<T> {
    pub expected_log_lik: T,
    pub approx_log_lik: T,
    pub filter_log_lik: T,
    pub total: T,
}

pub fn elbo_terms<T: Scalar>(
    post: &FunctionPosterior<T>,
    bank: &ApproxLikelihoodBank<T>,
    data: &GridData<T>,
    lik: &Likelihood<T>,
    quadrature_order: usize,
) -> Result<ElboTerms<T>> {
    let (means, vars) = post.site_marginals();
    let ns = data.num_sites();
    let terms: Vec<(T, T)> = (0..means.len())
        .into_par_iter()
        .map(|i| {
            let Some(y) = data.value(i / ns, i % ns) else {
                return Ok((T::zero(), T::zero()));
            };
            let (m, v) = (means[i], vars[i]);
            let e = lik.expected_log_lik_order(y, m, v, quadrature_order)?;
            let a = match bank.site_moments(i) {
                Some((yt, vt)) => {
                    let r = yt - m;
                    -T::lit(0.5) * (T::lit(LN_2PI) + vt.ln()) - (r * r + v) / (vt + vt)
                }
                None => T::zero(),
            };
            Ok((e, a))
        })
        .collect::<Result<_>>()?;
    let (mut e, mut a) = (T::zero(), T::zero());
    for (ei, ai) in terms {
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

/// Three-term ELBO of the current bank.
pub fn elbo<T: Scalar>(
    model: &DiscreteSTModel<T>,
    bank: &ApproxLikelihoodBank<T>,
    data: &GridData<T>,
    lik: &Likelihood<T>,
    mode: FilterMode,
) -> Result<T> {
    let post = posterior(model, bank, mode)?;
    Ok(elbo_terms(&post, bank, data, lik, TRAIN_QUADRATURE_ORDER)?.total)
}

/// Training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Natural-gradient rate β.
    pub beta: f64,
    /// Adam learning rate ρ; 0 freezes hyperparameters.
    pub rho: f64,
    pub iterations: usize,
    pub filter_mode: FilterMode,
    pub mean_field: bool,
    pub quadrature_order: usize,
    /// Relative central-difference step for hyperparameter gradients.
    pub fd_step: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            rho: 0.01,
            iterations: 100,
            filter_mode: FilterMode::Sequential,
            mean_field: false,
            quadrature_order: TRAIN_QUADRATURE_ORDER,
            fd_step: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl FitConfig {
    /// Defaults with β = 1 for a Gaussian likelihood and 0.1 otherwise.
    pub fn for_likelihood<T: Scalar>(lik: &Likelihood<T>) -> Self {
        Self {
            beta: if lik.is_conjugate() { 1.0 } else { 0.1 },
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("Adam rate must be non-negative, got {}", self.rho)));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("finite-difference step must be positive".into()));
        }
        if self.quadrature_order == 0 {
            return Err(Error::Config("quadrature order must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct AdamState<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub steps: usize,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            first: vec![T::zero(); n],
            second: vec![T::zero(); n],
            steps: 0,
        }
    }

    /// Ascent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], cfg: &FitConfig) {
        self.steps += 1;
        let (b1, b2) = (T::lit(cfg.adam_beta1), T::lit(cfg.adam_beta2));
        let c1 = T::one() - b1.powi(self.steps as i32);
        let c2 = T::one() - b2.powi(self.steps as i32);
        for i in 0..params.len() {
            self.first[i] = b1 * self.first[i] + (T::one() - b1) * grad[i];
            self.second[i] = b2 * self.second[i] + (T::one() - b2) * grad[i] * grad[i];
            let mh = self.first[i] / c1;
            let vh = self.second[i] / c2;
            params[i] += T::lit(cfg.rho) * mh / (vh.sqrt() + T::lit(cfg.adam_eps));
        }
    }
}

/// Result of training: hyperparameters, variational state, optimizer
/// moments and the ELBO trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Serialize + Scalar, B: Serialize",
    deserialize = "T: DeserializeOwned + Scalar, B: DeserializeOwned"
))]
pub struct FitState<T: Scalar, B = ApproxLikelihoodBank<T>> {
    /// Log-domain hyperparameters, see [`HyperParams::to_theta`].
    pub theta: Vec<T>,
    /// Spatial inducing locations (sparse variants only).
    pub inducing: Option<DMatrix<T>>,
    pub bank: B,
    pub optimizer: AdamState<T>,
    pub iteration: usize,
    pub elbo_trace: Vec<T>,
    pub iteration_seconds: Vec<f64>,
}

/// A variational problem the generic training loop can drive.
pub(crate) trait Variational<T: Scalar>: Sync {
    type Bank: Clone + Send + Sync;

    /// One natural-gradient step at the given parameters.
    fn cvi_step(&self, params: &[T], bank: &Self::Bank, beta: f64) -> Result<Self::Bank>;

    fn elbo(&self, params: &[T], bank: &Self::Bank) -> Result<T>;
}

/// Central finite differences of the ELBO in each parameter, bank fixed.
pub(crate) fn fd_gradient<T: Scalar, P: Variational<T>>(
    problem: &P,
    params: &[T],
    bank: &P::Bank,
    rel_step: f64,
) -> Result<Vec<T>> {
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let h = T::lit(rel_step) * params[i].abs().max(T::one());
            let mut plus = params.to_vec();
            let mut minus = params.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fp = problem.elbo(&plus, bank);
            let fm = problem.elbo(&minus, bank);
            match (fp, fm) {
                (Ok(a), Ok(b)) if a.as_f64().is_finite() && b.as_f64().is_finite() => {
                    Ok((a - b) / (h + h))
                }
                _ => Err(Error::Gradient { coordinate: i }),
            }
        })
        .collect()
}

pub(crate) struct LoopOutput<T: Scalar, B> {
    pub params: Vec<T>,
    pub bank: B,
    pub optimizer: AdamState<T>,
    pub elbo_trace: Vec<T>,
    pub iteration_seconds: Vec<f64>,
}

/// CVI step, ELBO record, then an Adam step on the parameters.
pub(crate) fn run_loop<T: Scalar, P: Variational<T>>(
    problem: &P,
    mut params: Vec<T>,
    mut bank: P::Bank,
    cfg: &FitConfig,
) -> Result<LoopOutput<T, P::Bank>> {
    cfg.validate()?;
    let mut optimizer = AdamState::new(params.len());
    let mut elbo_trace = Vec::with_capacity(cfg.iterations);
    let mut iteration_seconds = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let start = Instant::now();
        let diag = |trace: &[T], params: &[T]| Error::NonFiniteElbo {
            iteration: it,
            theta: params.iter().map(|p| p.as_f64()).collect(),
            trace: trace.iter().map(|e| e.as_f64()).collect(),
        };
        bank = problem.cvi_step(&params, &bank, cfg.beta)?;
        let value = problem.elbo(&params, &bank)?;
        if !value.as_f64().is_finite() {
            return Err(diag(&elbo_trace, &params));
        }
        elbo_trace.push(value);
        if cfg.rho > 0.0 {
            let grad = fd_gradient(problem, &params, &bank, cfg.fd_step)?;
            optimizer.step(&mut params, &grad, cfg);
            if params.iter().any(|p| !p.as_f64().is_finite()) {
                return Err(diag(&elbo_trace, &params));
            }
        }
        iteration_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(LoopOutput {
        params,
        bank,
        optimizer,
        elbo_trace,
        iteration_seconds,
    })
}

/// Full-grid problem with log-domain hyperparameters as its parameters.
pub(crate) struct GridProblem<'a, T: Scalar> {
    pub spec: &'a ModelSpec<T>,
    pub data: &'a GridData<T>,
    pub mode: FilterMode,
    pub mean_field: bool,
    pub order: usize,
}

impl<T: Scalar> GridProblem<'_, T> {
    fn build(&self, theta: &[T]) -> Result<(DiscreteSTModel<T>, Likelihood<T>)> {
        let hp = self.spec.hyper(theta)?;
        let (kt, ks) = self.spec.kernels(&hp)?;
        let model = assemble_full(&kt, &ks, &self.data.locations, &self.data.times)?;
        Ok((model, self.spec.likelihood(&hp)?))
    }

    fn posterior(&self, theta: &[T], bank: &ApproxLikelihoodBank<T>) -> Result<(FunctionPosterior<T>, Likelihood<T>)> {
        let (model, lik) = self.build(theta)?;
        let post = function_posterior(&model, &bank_to_pseudo(bank), self.mode, self.mean_field)?;
        Ok((post, lik))
    }
}

impl<T: Scalar> Variational<T> for GridProblem<'_, T> {
    type Bank = ApproxLikelihoodBank<T>;

    fn cvi_step(&self, theta: &[T], bank: &Self::Bank, beta: f64) -> Result<Self::Bank> {
        if beta == 0.0 {
            return Ok(bank.clone());
        }
        let (post, lik) = self.posterior(theta, bank)?;
        let (m, v) = post.site_marginals();
        cvi_step(bank, &m, &v, self.data, &lik, beta, self.order)
    }

    fn elbo(&self, theta: &[T], bank: &Self::Bank) -> Result<T> {
        let (post, lik) = self.posterior(theta, bank)?;
        Ok(elbo_terms(&post, bank, self.data, &lik, self.order)?.total)
    }
}

fn check_spec<T: Scalar>(spec: &ModelSpec<T>, data: &GridData<T>, hyper: &HyperParams<T>) -> Result<()> {
    if data.locations.ncols() != spec.spatial_dim || hyper.spatial_lengthscales.len() != spec.spatial_dim {
        return Err(Error::Dimension(format!(
            "spatial dimension {} does not match data ({}) or lengthscales ({})",
            spec.spatial_dim,
            data.locations.ncols(),
            hyper.spatial_lengthscales.len()
        )));
    }
    if spec.has_noise_param() != hyper.noise_variance.is_some() {
        return Err(Error::Config(
            "noise variance must be given exactly when the likelihood is Gaussian".into(),
        ));
    }
    Ok(())
}

/// ∂ELBO/∂θ by central differences with the bank held fixed.
pub fn hyper_grad<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &GridData<T>,
    bank: &ApproxLikelihoodBank<T>,
    theta: &[T],
    cfg: &FitConfig,
) -> Result<Vec<T>> {
    let problem = GridProblem {
        spec,
        data,
        mode: cfg.filter_mode,
        mean_field: cfg.mean_field,
        order: cfg.quadrature_order,
    };
    fd_gradient(&problem, theta, bank, cfg.fd_step)
}

/// ELBO at log-domain hyperparameters `theta`.
pub fn elbo_at<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &GridData<T>,
    bank: &ApproxLikelihoodBank<T>,
    theta: &[T],
    cfg: &FitConfig,
) -> Result<T> {
    let problem = GridProblem {
        spec,
        data,
        mode: cfg.filter_mode,
        mean_field: cfg.mean_field,
        order: cfg.quadrature_order,
    };
    problem.elbo(theta, bank)
}

/// Trains ST-VGP (or its mean-field variant when `cfg.mean_field`).
pub fn fit<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &GridData<T>,
    hyper: &HyperParams<T>,
    cfg: &FitConfig,
) -> Result<FitState<T>> {
    check_spec(spec, data, hyper)?;
    let bank = ApproxLikelihoodBank::zero_information(data.num_steps(), data.num_sites());
    fit_from(spec, data, hyper.to_theta(), bank, cfg)
}

/// Continues training from explicit parameters and bank.
pub fn fit_from<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &GridData<T>,
    theta: Vec<T>,
    bank: ApproxLikelihoodBank<T>,
    cfg: &FitConfig,
) -> Result<FitState<T>> {
    let problem = GridProblem {
        spec,
        data,
        mode: cfg.filter_mode,
        mean_field: cfg.mean_field,
        order: cfg.quadrature_order,
    };
    let out = run_loop(&problem, theta, bank, cfg)?;
    Ok(FitState {
        theta: out.params,
        inducing: None,
        bank: out.bank,
        optimizer: out.optimizer,
        iteration: cfg.iterations,
        elbo_trace: out.elbo_trace,
        iteration_seconds: out.iteration_seconds,
    })
}

/// Union of training and query times, with the index of every query time
/// and of every training time in the merged sequence.
pub(crate) fn merge_times<T: Scalar>(train: &[T], query: &[T]) -> Result<(Vec<T>, Vec<usize>, Vec<usize>)> {
    if query.iter().any(|q| !q.as_f64().is_finite()) {
        return Err(Error::Domain("query times must be finite".into()));
    }
    let mut all: Vec<T> = train.iter().chain(query).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    all.dedup();
    let pos = |t: &T| all.partition_point(|x| x < t);
    let q = query.iter().map(pos).collect();
    let tr = train.iter().map(pos).collect();
    Ok((all, tr, q))
}

/// Posterior mean and variance of `f` at every `(query time, training
/// location)`, time-major. Query times between or beyond training times are
/// handled by inserting uninformative steps.
pub fn predict<T: Scalar>(
    spec: &ModelSpec<T>,
    state: &FitState<T>,
    data: &GridData<T>,
    query_times: &[T],
    cfg: &FitConfig,
) -> Result<Vec<(T, T)>> {
    let hp = spec.hyper(&state.theta)?;
    let (kt, ks) = spec.kernels(&hp)?;
    let (all, train_idx, query_idx) = merge_times(&data.times, query_times)?;
    let ns = data.num_sites();
    let mut bank = ApproxLikelihoodBank::zero_information(all.len(), ns);
    for (n, &j) in train_idx.iter().enumerate() {
        for k in 0..ns {
            bank.lambda1[j * ns + k] = state.bank.lambda1[n * ns + k];
            bank.lambda2[j * ns + k] = state.bank.lambda2[n * ns + k];
        }
    }
    let model = assemble_full(&kt, &ks, &data.locations, &all)?;
    let post = function_posterior(&model, &bank_to_pseudo(&bank), cfg.filter_mode, cfg.mean_field)?;
    let mut out = Vec::with_capacity(query_idx.len() * ns);
    for &j in &query_idx {
        for k in 0..ns {
            out.push((post.means[j][k], post.covs[j][(k, k)]));
        }
    }
    Ok(out)
}
