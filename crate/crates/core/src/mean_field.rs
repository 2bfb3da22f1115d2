//! Spatial mean-field inference.
//!
//! The state is rewritten as `x̃ = (C⁻¹ ⊗ I) x` with `K⁽ˢ⁾ = CCᵀ`, which gives
//! independent per-point dynamics (`I ⊗ A⁽ᵗ⁾`, `I ⊗ Q⁽ᵗ⁾`) and moves the
//! spatial mixing into the measurement `C ⊗ H⁽ᵗ⁾`. Posterior state
//! covariances are then restricted to one `d_t × d_t` block per point.

use nalgebra::{DMatrix, DVector};

use crate::cvi_inference::{self, FitConfig, FitState, FunctionPosterior, GridData, HyperParams, ModelSpec};
use crate::error::Result;
use crate::gaussian_algebra::{kron_dense, mvn_logpdf_chol, symmetrize, CholeskyFactor};
use crate::markov_kernels::{DiscreteSTModel, MarkovKernelSS, Transition};
use crate::scalar::Scalar;
use crate::error::Error;
use crate::sparse_inference::{self, BlockApproxLikelihood, ScatteredData};
use crate::state_space::{
    filter_structured, smoother_structured, CovStructure, FilterMode, PseudoObservations,
    StateMarginals,
};

/// Reformulated model. `model` holds the independent-block dynamics and the
/// `C ⊗ H⁽ᵗ⁾` measurement; `spatial_gram` is the original `K⁽ˢ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct MFModel<T: Scalar> {
    pub model: DiscreteSTModel<T>,
    pub spatial_gram: DMatrix<T>,
    pub spatial_cholesky: DMatrix<T>,
}

impl<T: Scalar> MFModel<T> {
    pub fn block_size(&self) -> usize {
        self.model.temporal_dim()
    }

    pub fn num_blocks(&self) -> usize {
        self.model.n_points
    }

    pub fn structure(&self) -> CovStructure {
        CovStructure::BlockDiagonal(self.block_size())
    }
}

fn temporal_steps<T: Scalar>(kt: &MarkovKernelSS<T>, times: &[T]) -> Vec<(DMatrix<T>, DMatrix<T>)> {
    let d = kt.state_dim();
    let mut steps = Vec::with_capacity(times.len());
    steps.push((DMatrix::identity(d, d), kt.stationary_cov.clone()));
    for w in times.windows(2) {
        steps.push(kt.discretize(w[1] - w[0]));
    }
    steps
}

/// Exact algebraic rewrite of a standard-form model.
pub fn reformulate<T: Scalar>(model: &DiscreteSTModel<T>) -> Result<MFModel<T>> {
    let g = model.n_points;
    let c = CholeskyFactor::new(&model.spatial_gram, "spatial Gram matrix")?.into_lower();
    let eye = DMatrix::<T>::identity(g, g);
    let transitions = temporal_steps(&model.temporal, &model.times)
        .into_iter()
        .map(|(a, q)| Transition {
            transition: kron_dense(&eye, &a),
            noise: kron_dense(&eye, &q),
        })
        .collect();
    Ok(MFModel {
        model: DiscreteSTModel {
            times: model.times.clone(),
            initial_mean: DVector::zeros(model.state_dim()),
            transitions,
            measurement: kron_dense(&c, &model.temporal.measurement),
            spatial_gram: eye,
            temporal: model.temporal.clone(),
            n_points: g,
        },
        spatial_gram: model.spatial_gram.clone(),
        spatial_cholesky: c,
    })
}

/// Drops every entry outside the diagonal `block × block` blocks.
pub fn project_block_diagonal<T: Scalar>(p: DMatrix<T>, block: usize) -> DMatrix<T> {
    CovStructure::BlockDiagonal(block).apply(p)
}

/// Smoothed block means/covariances of the blockwise recursion.
struct BlockSmoothed<T: Scalar> {
    means: Vec<Vec<DVector<T>>>,
    covs: Vec<Vec<DMatrix<T>>>,
    log_lik: T,
}

/// Sequential filter and smoother operating on the blocks directly.
fn blockwise_filter_smoother<T: Scalar>(
    kt: &MarkovKernelSS<T>,
    times: &[T],
    c: &DMatrix<T>,
    pseudo: &PseudoObservations<T>,
) -> Result<BlockSmoothed<T>> {
    let g = c.nrows();
    let d = kt.state_dim();
    let ht = kt.measurement.row(0).transpose();
    if pseudo.len() != times.len() {
        return Err(Error::Dimension(format!(
            "{} pseudo-observation steps for {} time steps",
            pseudo.len(),
            times.len()
        )));
    }
    let steps = temporal_steps(kt, times);
    let mut m = vec![DVector::<T>::zeros(d); g];
    let mut p = vec![DMatrix::<T>::zeros(d, d); g];
    let mut fm = Vec::with_capacity(times.len());
    let mut fp = Vec::with_capacity(times.len());
    let mut log_lik = T::zero();
    for (n, ((a, q), step)) in steps.iter().zip(&pseudo.steps).enumerate() {
        if step.mean.len() != g {
            return Err(Error::Dimension(format!("pseudo-observation step {n} has wrong size")));
        }
        for b in 0..g {
            m[b] = a * &m[b];
            p[b] = symmetrize(&(a * &p[b] * a.transpose() + q));
        }
        let idx: Vec<usize> = (0..g).filter(|&i| step.observed[i]).collect();
        if !idx.is_empty() {
            let o = idx.len();
            let co = c.select_rows(idx.iter());
            let u: Vec<DVector<T>> = p.iter().map(|pb| pb * &ht).collect();
            let s: Vec<T> = u.iter().map(|ub| ht.dot(ub)).collect();
            let f = DVector::from_fn(g, |b, _| ht.dot(&m[b]));
            let mut cov = DMatrix::from_fn(o, o, |i, j| step.noise[(idx[i], idx[j])]);
            for b in 0..g {
                for i in 0..o {
                    for j in 0..o {
                        cov[(i, j)] += co[(i, b)] * co[(j, b)] * s[b];
                    }
                }
            }
            let chol = CholeskyFactor::new(&symmetrize(&cov), "innovation covariance")
                .map_err(|_| Error::Innovation { step: n })?;
            let y = DVector::from_fn(o, |i, _| step.mean[idx[i]]);
            let r = y - &co * f;
            log_lik += mvn_logpdf_chol(&r, &chol);
            let alpha = chol.solve_vec(&r);
            let sinv_c = chol.solve(&co);
            for b in 0..g {
                let cb = co.column(b);
                m[b] += &u[b] * cb.dot(&alpha);
                let k = cb.dot(&sinv_c.column(b));
                p[b] = symmetrize(&(&p[b] - &u[b] * u[b].transpose() * k));
            }
        }
        fm.push(m.clone());
        fp.push(p.clone());
    }

    let mut sm = fm.clone();
    let mut sp = fp.clone();
    for n in (0..times.len().saturating_sub(1)).rev() {
        let (a, q) = &steps[n + 1];
        for b in 0..g {
            let (mf, pf) = (&fm[n][b], &fp[n][b]);
            let a_pf = a * pf;
            let r = symmetrize(&(&a_pf * a.transpose() + q));
            let chol = CholeskyFactor::new(&r, &format!("predicted covariance at step {}", n + 1))?;
            let gain = chol.solve(&a_pf).transpose();
            sm[n][b] = mf + &gain * (&sm[n + 1][b] - a * mf);
            sp[n][b] = symmetrize(&(pf + &gain * (&sp[n + 1][b] - r) * gain.transpose()));
        }
    }
    Ok(BlockSmoothed {
        means: sm,
        covs: sp,
        log_lik,
    })
}

fn assemble_blocks<T: Scalar>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let d = blocks.first().map_or(0, |b| b.nrows());
    let mut out = DMatrix::zeros(d * blocks.len(), d * blocks.len());
    for (b, blk) in blocks.iter().enumerate() {
        out.view_mut((b * d, b * d), (d, d)).copy_from(blk);
    }
    out
}

/// Filter and smoother with block-diagonal state covariances. Returns state
/// marginals in the reformulated coordinates and the filter log-likelihood.
pub fn mf_filter_smoother<T: Scalar>(
    mf: &MFModel<T>,
    pseudo: &PseudoObservations<T>,
    mode: FilterMode,
) -> Result<(StateMarginals<T>, T)> {
    match mode {
        FilterMode::Sequential => {
            let bs = blockwise_filter_smoother(&mf.model.temporal, &mf.model.times, &mf.spatial_cholesky, pseudo)?;
            let means = bs
                .means
                .iter()
                .map(|ms| DVector::from_iterator(ms.len() * ms[0].len(), ms.iter().flat_map(|v| v.iter().copied())))
                .collect();
            let covs = bs.covs.iter().map(|ps| assemble_blocks(ps)).collect();
            Ok((StateMarginals { means, covs }, bs.log_lik))
        }
        FilterMode::Parallel => {
            let f = filter_structured(&mf.model, pseudo, mode, mf.structure())?;
            let s = smoother_structured(&mf.model, &f, mode, mf.structure())?;
            Ok((s, f.log_lik))
        }
    }
}

/// Mean-field function-space posterior for a standard-form model.
pub fn mf_function_posterior<T: Scalar>(
    model: &DiscreteSTModel<T>,
    pseudo: &PseudoObservations<T>,
    mode: FilterMode,
) -> Result<FunctionPosterior<T>> {
    match mode {
        FilterMode::Sequential => {
            let c = CholeskyFactor::new(&model.spatial_gram, "spatial Gram matrix")?.into_lower();
            let bs = blockwise_filter_smoother(&model.temporal, &model.times, &c, pseudo)?;
            let ht = model.temporal.measurement.row(0).transpose();
            let g = c.nrows();
            let mut means = Vec::with_capacity(bs.means.len());
            let mut covs = Vec::with_capacity(bs.means.len());
            for (ms, ps) in bs.means.iter().zip(&bs.covs) {
                let f = DVector::from_fn(g, |b, _| ht.dot(&ms[b]));
                let s = DVector::from_fn(g, |b, _| ht.dot(&(&ps[b] * &ht)));
                means.push(&c * f);
                let cs = DMatrix::from_fn(g, g, |i, b| c[(i, b)] * s[b]);
                covs.push(symmetrize(&(cs * c.transpose())));
            }
            Ok(FunctionPosterior {
                means,
                covs,
                log_lik: bs.log_lik,
            })
        }
        FilterMode::Parallel => {
            let mf = reformulate(model)?;
            let (s, log_lik) = mf_filter_smoother(&mf, pseudo, mode)?;
            let (means, covs) = s.function_marginals(&mf.model.measurement);
            Ok(FunctionPosterior { means, covs, log_lik })
        }
    }
}

/// Mean-field ST-VGP training.
pub fn mf_fit<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &GridData<T>,
    hyper: &HyperParams<T>,
    cfg: &FitConfig,
) -> Result<FitState<T>> {
    let cfg = FitConfig {
        mean_field: true,
        ..cfg.clone()
    };
    cvi_inference::fit(spec, data, hyper, &cfg)
}

/// Mean-field ST-SVGP training (measurement `C_ZZ ⊗ H⁽ᵗ⁾` on the inducing
/// state).
pub fn mf_sparse_fit<T: Scalar>(
    spec: &ModelSpec<T>,
    data: &ScatteredData<T>,
    hyper: &HyperParams<T>,
    inducing: &DMatrix<T>,
    optimize_inducing: bool,
    cfg: &FitConfig,
) -> Result<FitState<T, BlockApproxLikelihood<T>>> {
    let cfg = FitConfig {
        mean_field: true,
        ..cfg.clone()
    };
    sparse_inference::sparse_fit(spec, data, hyper, inducing, optimize_inducing, &cfg)
}
