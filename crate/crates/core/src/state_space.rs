//! Kalman filtering and RTS smoothing over a [`DiscreteSTModel`], both as the
//! classic sequential recursion and as an associative scan whose combine
//! steps can run in parallel.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_algebra::{mvn_logpdf_chol, symmetrize, CholeskyFactor};
use crate::markov_kernels::DiscreteSTModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    #[default]
    Sequential,
    Parallel,
}

/// Gaussian pseudo-observations `Ỹ_n ~ N(H x_n, Ṽ_n)` for one time step.
/// Entries with `observed[i] == false` carry no information.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoStep<T: Scalar> {
    pub mean: DVector<T>,
    pub noise: DMatrix<T>,
    pub observed: Vec<bool>,
}

impl<T: Scalar> PseudoStep<T> {
    pub fn missing(rows: usize) -> Self {
        Self {
            mean: DVector::zeros(rows),
            noise: DMatrix::identity(rows, rows),
            observed: vec![false; rows],
        }
    }

    pub fn fully_observed(mean: DVector<T>, noise: DMatrix<T>) -> Self {
        let n = mean.len();
        Self {
            mean,
            noise,
            observed: vec![true; n],
        }
    }

    pub fn any_observed(&self) -> bool {
        self.observed.iter().any(|&o| o)
    }

    /// Observed sub-vector, noise sub-block and measurement rows.
    pub(crate) fn restrict(
        &self,
        h: &DMatrix<T>,
    ) -> Option<(DVector<T>, DMatrix<T>, DMatrix<T>)> {
        let idx: Vec<usize> = (0..self.observed.len()).filter(|&i| self.observed[i]).collect();
        if idx.is_empty() {
            return None;
        }
        if idx.len() == self.observed.len() {
            return Some((self.mean.clone(), self.noise.clone(), h.clone()));
        }
        let y = DVector::from_fn(idx.len(), |i, _| self.mean[idx[i]]);
        let v = DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.noise[(idx[i], idx[j])]);
        let ho = h.select_rows(idx.iter());
        Some((y, v, ho))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations<T: Scalar> {
    pub steps: Vec<PseudoStep<T>>,
}

impl<T: Scalar> PseudoObservations<T> {
    pub fn all_missing(num_steps: usize, rows: usize) -> Self {
        Self {
            steps: vec![PseudoStep::missing(rows); num_steps],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Filtered state means/covariances and the log marginal likelihood of the
/// pseudo-observations.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
    pub step_log_liks: Vec<T>,
    pub log_lik: T,
}

/// Per-step (smoothed) state marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMarginals<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
}

impl<T: Scalar> StateMarginals<T> {
    /// `(H m̄_n, H P̄_n Hᵀ)` for every step.
    pub fn function_marginals(&self, h: &DMatrix<T>) -> (Vec<DVector<T>>, Vec<DMatrix<T>>) {
        let means = self.means.iter().map(|m| h * m).collect();
        let covs = self
            .covs
            .iter()
            .map(|p| symmetrize(&(h * p * h.transpose())))
            .collect();
        (means, covs)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Structure imposed on every propagated state covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovStructure {
    #[default]
    Dense,
    /// Keep only the diagonal blocks of the given size.
    BlockDiagonal(usize),
}

impl CovStructure {
    pub fn apply<T: Scalar>(self, mut p: DMatrix<T>) -> DMatrix<T> {
        if let CovStructure::BlockDiagonal(b) = self {
            let n = p.nrows();
            for i in 0..n {
                for j in 0..n {
                    if i / b != j / b {
                        p[(i, j)] = T::zero();
                    }
                }
            }
        }
        p
    }
}

fn check_lengths<T: Scalar>(model: &DiscreteSTModel<T>, obs: &PseudoObservations<T>) -> Result<()> {
    if obs.len() != model.num_steps() {
        return Err(Error::Dimension(format!(
            "{} pseudo-observation steps for a model with {} steps",
            obs.len(),
            model.num_steps()
        )));
    }
    let rows = model.measurement.nrows();
    for (n, s) in obs.steps.iter().enumerate() {
        if s.mean.len() != rows || s.observed.len() != rows || s.noise.shape() != (rows, rows) {
            return Err(Error::Dimension(format!(
                "pseudo-observation step {n} does not match {rows} measurement rows"
            )));
        }
    }
    Ok(())
}

/// Sequential Kalman filter.
pub fn sequential_filter<T: Scalar>(
    model: &DiscreteSTModel<T>,
    obs: &PseudoObservations<T>,
) -> Result<FilterOutput<T>> {
    sequential_filter_structured(model, obs, CovStructure::Dense)
}

pub(crate) fn sequential_filter_structured<T: Scalar>(
    model: &DiscreteSTModel<T>,
    obs: &PseudoObservations<T>,
    structure: CovStructure,
) -> Result<FilterOutput<T>> {
    check_lengths(model, obs)?;
    let d = model.state_dim();
    let h = &model.measurement;
    let mut m = model.initial_mean.clone();
    let mut p = DMatrix::<T>::zeros(d, d);
    let n_steps = model.num_steps();
    let mut means = Vec::with_capacity(n_steps);
    let mut covs = Vec::with_capacity(n_steps);
    let mut step_log_liks = Vec::with_capacity(n_steps);
    let mut log_lik = T::zero();
    for (n, (tr, step)) in model.transitions.iter().zip(&obs.steps).enumerate() {
        m = &tr.transition * m;
        p = structure.apply(symmetrize(&(&tr.transition * &p * tr.transition.transpose() + &tr.noise)));
        let mut ll = T::zero();
        if let Some((y, v, ho)) = step.restrict(h) {
            let pht = &p * ho.transpose();
            let s = symmetrize(&(&ho * &pht + v));
            let chol = CholeskyFactor::new(&s, "innovation covariance")
                .map_err(|_| Error::Innovation { step: n })?;
            let resid = y - &ho * &m;
            ll = mvn_logpdf_chol(&resid, &chol);
            let gain = chol.solve(&pht.transpose()).transpose();
            m += &gain * resid;
            p = structure.apply(symmetrize(&(&p - &gain * pht.transpose())));
        }
        log_lik += ll;
        step_log_liks.push(ll);
        means.push(m.clone());
        covs.push(p.clone());
    }
    Ok(FilterOutput {
        means,
        covs,
        step_log_liks,
        log_lik,
    })
}

/// Rauch–Tung–Striebel smoother on top of a filter pass of the same model.
pub fn rts_smoother<T: Scalar>(
    model: &DiscreteSTModel<T>,
    filtered: &FilterOutput<T>,
) -> Result<StateMarginals<T>> {
    rts_smoother_structured(model, filtered, CovStructure::Dense)
}

pub(crate) fn rts_smoother_structured<T: Scalar>(
    model: &DiscreteSTModel<T>,
    filtered: &FilterOutput<T>,
    structure: CovStructure,
) -> Result<StateMarginals<T>> {
    let n_steps = filtered.means.len();
    let mut means = filtered.means.clone();
    let mut covs = filtered.covs.clone();
    for n in (0..n_steps.saturating_sub(1)).rev() {
        let tr = &model.transitions[n + 1];
        let (mf, pf) = (&filtered.means[n], &filtered.covs[n]);
        let m_pred = &tr.transition * mf;
        let a_pf = &tr.transition * pf;
        let r = symmetrize(&(&a_pf * tr.transition.transpose() + &tr.noise));
        let chol = CholeskyFactor::new(&r, &format!("predicted covariance R at step {}", n + 1))?;
        let gain = chol.solve(&a_pf).transpose();
        let m_s = mf + &gain * (&means[n + 1] - m_pred);
        let p_s = pf + &gain * (&covs[n + 1] - r) * gain.transpose();
        means[n] = m_s;
        covs[n] = structure.apply(symmetrize(&p_s));
    }
    Ok(StateMarginals { means, covs })
}

/// Element of the associative filtering scan; parameterizes
/// `p(x_n | x_{n−1}, y_n) = N(B x_{n−1} + m̂, P̂)` and the information form
/// `(φ, J)` of `p(y_n | x_{n−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterElement<T: Scalar> {
    pub b: DMatrix<T>,
    pub m: DVector<T>,
    pub p: DMatrix<T>,
    pub phi: DVector<T>,
    pub j: DMatrix<T>,
}

impl<T: Scalar> FilterElement<T> {
    /// Right-neutral element (B = I, everything else zero).
    pub fn neutral(d: usize) -> Self {
        Self {
            b: DMatrix::identity(d, d),
            m: DVector::zeros(d),
            p: DMatrix::zeros(d, d),
            phi: DVector::zeros(d),
            j: DMatrix::zeros(d, d),
        }
    }
}

/// Associative filtering operator `e_i ∗ e_j` (i earlier than j).
///
/// Uses `W = (I + P̂_i J_j)⁻¹`, which equals `(P̂_i⁻¹ + J_j)⁻¹ P̂_i⁻¹` but does
/// not require `P̂_i` to be invertible.
pub fn combine_filter_elements<T: Scalar>(
    ei: &FilterElement<T>,
    ej: &FilterElement<T>,
) -> Result<FilterElement<T>> {
    combine_filter_structured(ei, ej, CovStructure::Dense)
}

pub(crate) fn combine_filter_structured<T: Scalar>(
    ei: &FilterElement<T>,
    ej: &FilterElement<T>,
    structure: CovStructure,
) -> Result<FilterElement<T>> {
    let d = ei.m.len();
    if ej.m.len() != d {
        return Err(Error::Dimension("filter elements have different state sizes".into()));
    }
    let eye = DMatrix::<T>::identity(d, d);
    let w = (&eye + &ei.p * &ej.j)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::not_pd("I + P̂ᵢJⱼ", 0))?;
    let bj_w = &ej.b * &w;
    let bit_wt = ei.b.transpose() * w.transpose();
    Ok(FilterElement {
        b: &bj_w * &ei.b,
        m: &bj_w * (&ei.m + &ei.p * &ej.phi) + &ej.m,
        p: structure.apply(symmetrize(&(&bj_w * &ei.p * ej.b.transpose() + &ej.p))),
        phi: &bit_wt * (&ej.phi - &ej.j * &ei.m) + &ei.phi,
        j: symmetrize(&(&bit_wt * &ej.j * &ei.b + &ei.j)),
    })
}

/// Element of the associative smoothing scan: `x_n = E x_{n+1} + g`,
/// `g ~ N(m̄, P̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherElement<T: Scalar> {
    pub e: DMatrix<T>,
    pub m: DVector<T>,
    pub p: DMatrix<T>,
}

/// Associative smoothing operator `e_i ∗ e_j` (i earlier than j).
pub fn combine_smoother_elements<T: Scalar>(
    ei: &SmootherElement<T>,
    ej: &SmootherElement<T>,
) -> SmootherElement<T> {
    SmootherElement {
        e: &ei.e * &ej.e,
        m: &ei.e * &ej.m + &ei.m,
        p: symmetrize(&(&ei.e * &ej.p * ei.e.transpose() + &ei.p)),
    }
}

/// Inclusive prefix scan `[e0, e0∗e1, e0∗e1∗e2, …]` under an associative `op`.
///
/// Pairs are combined level by level (odd/even recursion), with every level's
/// combines running on the rayon pool.
pub fn associative_scan<E, F>(elems: Vec<E>, op: &F) -> Result<Vec<E>>
where
    E: Send + Sync + Clone,
    F: Fn(&E, &E) -> Result<E> + Sync,
{
    let n = elems.len();
    if n < 2 {
        return Ok(elems);
    }
    let pairs: Vec<E> = (0..n / 2)
        .into_par_iter()
        .map(|i| op(&elems[2 * i], &elems[2 * i + 1]))
        .collect::<Result<_>>()?;
    let odd = associative_scan(pairs, op)?;
    let evens: Vec<E> = (1..(n + 1) / 2)
        .into_par_iter()
        .map(|i| op(&odd[i - 1], &elems[2 * i]))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n);
    out.push(elems[0].clone());
    let mut odd_it = odd.into_iter();
    let mut even_it = evens.into_iter();
    for k in 1..n {
        if k % 2 == 1 {
            out.push(odd_it.next().expect("odd prefix"));
        } else {
            out.push(even_it.next().expect("even prefix"));
        }
    }
    Ok(out)
}

/// Suffix scan `[e0∗…∗e_{n−1}, …, e_{n−1}]`.
pub fn associative_scan_reverse<E, F>(mut elems: Vec<E>, op: &F) -> Result<Vec<E>>
where
    E: Send + Sync + Clone,
    F: Fn(&E, &E) -> Result<E> + Sync,
{
    elems.reverse();
    let flipped = |a: &E, b: &E| op(b, a);
    let mut out = associative_scan(elems, &flipped)?;
    out.reverse();
    Ok(out)
}

/// Builds the per-step filtering elements.
pub fn filter_elements<T: Scalar>(
    model: &DiscreteSTModel<T>,
    obs: &PseudoObservations<T>,
) -> Result<Vec<FilterElement<T>>> {
    check_lengths(model, obs)?;
    let h = &model.measurement;
    (0..model.num_steps())
        .into_par_iter()
        .map(|n| {
            let tr = &model.transitions[n];
            let (a, q) = (&tr.transition, &tr.noise);
            let d = a.nrows();
            let mut el = match obs.steps[n].restrict(h) {
                None => FilterElement {
                    b: a.clone(),
                    m: DVector::zeros(d),
                    p: q.clone(),
                    phi: DVector::zeros(d),
                    j: DMatrix::zeros(d, d),
                },
                Some((y, v, ho)) => {
                    let qht = q * ho.transpose();
                    let t = symmetrize(&(&ho * &qht + v));
                    let chol = CholeskyFactor::new(&t, "innovation covariance")
                        .map_err(|_| Error::Innovation { step: n })?;
                    let gain = chol.solve(&qht.transpose()).transpose();
                    let ha = &ho * a;
                    let tinv_y = chol.solve_vec(&y);
                    let tinv_ha = chol.solve(&ha);
                    FilterElement {
                        b: a - &gain * &ha,
                        m: &gain * &y,
                        p: symmetrize(&(q - &gain * qht.transpose())),
                        phi: ha.transpose() * tinv_y,
                        j: symmetrize(&(ha.transpose() * tinv_ha)),
                    }
                }
            };
            if n == 0 {
                // condition on the deterministic initial mean
                let m0 = a * &model.initial_mean;
                el.m = match obs.steps[0].restrict(h) {
                    None => m0,
                    Some((y, v, ho)) => {
                        let qht = q * ho.transpose();
                        let t = symmetrize(&(&ho * &qht + v));
                        let chol = CholeskyFactor::new(&t, "innovation covariance")
                            .map_err(|_| Error::Innovation { step: 0 })?;
                        let resid = y - &ho * &m0;
                        &m0 + qht * chol.solve_vec(&resid)
                    }
                };
            }
            Ok(el)
        })
        .collect()
}

/// Parallel (associative-scan) Kalman filter.
pub fn parallel_filter<T: Scalar>(
    model: &DiscreteSTModel<T>,
    obs: &PseudoObservations<T>,
) -> Result<FilterOutput<T>> {
    parallel_filter_structured(model, obs, CovStructure::Dense)
}

pub(crate) fn parallel_filter_structured<T: Scalar>(
    model: &DiscreteSTModel<T>,
    obs: &PseudoObservations<T>,
    structure: CovStructure,
) -> Result<FilterOutput<T>> {
    let mut elements = filter_elements(model, obs)?;
    for el in elements.iter_mut() {
        el.p = structure.apply(el.p.clone());
    }
    let op = |a: &FilterElement<T>, b: &FilterElement<T>| combine_filter_structured(a, b, structure);
    let scanned = associative_scan(elements, &op)?;
    let means: Vec<DVector<T>> = scanned.iter().map(|e| e.m.clone()).collect();
    let covs: Vec<DMatrix<T>> = scanned.into_iter().map(|e| e.p).collect();

    let h = &model.measurement;
    let d = model.state_dim();
    let step_log_liks: Vec<T> = (0..model.num_steps())
        .into_par_iter()
        .map(|n| {
            let tr = &model.transitions[n];
            let Some((y, v, ho)) = obs.steps[n].restrict(h) else {
                return Ok(T::zero());
            };
            let (m_prev, p_prev) = if n == 0 {
                (model.initial_mean.clone(), DMatrix::zeros(d, d))
            } else {
                (means[n - 1].clone(), covs[n - 1].clone())
            };
            let m_pred = &tr.transition * m_prev;
            let p_pred = structure.apply(symmetrize(
                &(&tr.transition * p_prev * tr.transition.transpose() + &tr.noise),
            ));
            let s = symmetrize(&(&ho * p_pred * ho.transpose() + v));
            let chol = CholeskyFactor::new(&s, "innovation covariance")
                .map_err(|_| Error::Innovation { step: n })?;
            Ok(mvn_logpdf_chol(&(y - &ho * m_pred), &chol))
        })
        .collect::<Result<_>>()?;
    let log_lik = step_log_liks.iter().fold(T::zero(), |a, &b| a + b);
    Ok(FilterOutput {
        means,
        covs,
        step_log_liks,
        log_lik,
    })
}

/// Parallel (associative-scan) RTS smoother.
pub fn parallel_smoother<T: Scalar>(
    model: &DiscreteSTModel<T>,
    filtered: &FilterOutput<T>,
) -> Result<StateMarginals<T>> {
    parallel_smoother_structured(model, filtered, CovStructure::Dense)
}

pub(crate) fn parallel_smoother_structured<T: Scalar>(
    model: &DiscreteSTModel<T>,
    filtered: &FilterOutput<T>,
    structure: CovStructure,
) -> Result<StateMarginals<T>> {
    let n_steps = filtered.means.len();
    let elements: Vec<SmootherElement<T>> = (0..n_steps)
        .into_par_iter()
        .map(|n| {
            let (mf, pf) = (&filtered.means[n], &filtered.covs[n]);
            let d = mf.len();
            if n + 1 == n_steps {
                return Ok(SmootherElement {
                    e: DMatrix::zeros(d, d),
                    m: mf.clone(),
                    p: pf.clone(),
                });
            }
            let tr = &model.transitions[n + 1];
            let a_pf = &tr.transition * pf;
            let r = symmetrize(&(&a_pf * tr.transition.transpose() + &tr.noise));
            let chol = CholeskyFactor::new(&r, &format!("predicted covariance at step {}", n + 1))?;
            let e = chol.solve(&a_pf).transpose();
            let ea = &e * &tr.transition;
            Ok(SmootherElement {
                m: mf - &ea * mf,
                p: structure.apply(symmetrize(&(pf - &ea * pf))),
                e,
            })
        })
        .collect::<Result<_>>()?;
    let op = |a: &SmootherElement<T>, b: &SmootherElement<T>| {
        let mut c = combine_smoother_elements(a, b);
        c.p = structure.apply(c.p);
        Ok(c)
    };
    let scanned = associative_scan_reverse(elements, &op)?;
    Ok(StateMarginals {
        means: scanned.iter().map(|e| e.m.clone()).collect(),
        covs: scanned.into_iter().map(|e| e.p).collect(),
    })
}

pub fn filter<T: Scalar>(
    model: &DiscreteSTModel<T>,
    obs: &PseudoObservations<T>,
    mode: FilterMode,
) -> Result<FilterOutput<T>> {
    filter_structured(model, obs, mode, CovStructure::Dense)
}

pub fn smoother<T: Scalar>(
    model: &DiscreteSTModel<T>,
    filtered: &FilterOutput<T>,
    mode: FilterMode,
) -> Result<StateMarginals<T>> {
    smoother_structured(model, filtered, mode, CovStructure::Dense)
}

pub(crate) fn filter_structured<T: Scalar>(
    model: &DiscreteSTModel<T>,
    obs: &PseudoObservations<T>,
    mode: FilterMode,
    structure: CovStructure,
) -> Result<FilterOutput<T>> {
    match mode {
        FilterMode::Sequential => sequential_filter_structured(model, obs, structure),
        FilterMode::Parallel => parallel_filter_structured(model, obs, structure),
    }
}

pub(crate) fn smoother_structured<T: Scalar>(
    model: &DiscreteSTModel<T>,
    filtered: &FilterOutput<T>,
    mode: FilterMode,
    structure: CovStructure,
) -> Result<StateMarginals<T>> {
    match mode {
        FilterMode::Sequential => rts_smoother_structured(model, filtered, structure),
        FilterMode::Parallel => parallel_smoother_structured(model, filtered, structure),
    }
}

/// Filter then smooth; returns smoothed marginals and the filter log-likelihood.
pub fn filter_smoother<T: Scalar>(
    model: &DiscreteSTModel<T>,
    obs: &PseudoObservations<T>,
    mode: FilterMode,
) -> Result<(StateMarginals<T>, T)> {
    let f = filter(model, obs, mode)?;
    let s = smoother(model, &f, mode)?;
    Ok((s, f.log_lik))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_kernels::{build_temporal_ss, MaternOrder, Transition};
    use approx::assert_relative_eq;

    fn scalar_model(steps: usize) -> DiscreteSTModel<f64> {
        let kt = build_temporal_ss(MaternOrder::Matern12, 1.0, 1.0).unwrap();
        let mut transitions = vec![Transition {
            transition: DMatrix::identity(1, 1),
            noise: DMatrix::identity(1, 1),
        }];
        for _ in 1..steps {
            transitions.push(Transition {
                transition: DMatrix::identity(1, 1),
                noise: DMatrix::zeros(1, 1),
            });
        }
        DiscreteSTModel {
            times: (0..steps).map(|i| i as f64).collect(),
            initial_mean: DVector::zeros(1),
            transitions,
            measurement: DMatrix::identity(1, 1),
            spatial_gram: DMatrix::identity(1, 1),
            temporal: kt,
            n_points: 1,
        }
    }

    #[test]
    fn scalar_conjugate_update() {
        let model = scalar_model(1);
        let obs = PseudoObservations {
            steps: vec![PseudoStep::fully_observed(DVector::from_element(1, 2.0), DMatrix::identity(1, 1))],
        };
        for mode in [FilterMode::Sequential, FilterMode::Parallel] {
            let f = filter(&model, &obs, mode).unwrap();
            assert_relative_eq!(f.means[0][0], 1.0, epsilon = 1e-14);
            assert_relative_eq!(f.covs[0][(0, 0)], 0.5, epsilon = 1e-14);
            let expected = -0.5 * (4.0 / 2.0 + (2.0 * std::f64::consts::PI * 2.0).ln());
            assert_relative_eq!(f.log_lik, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn all_missing_returns_prior() {
        let model = scalar_model(4);
        let obs = PseudoObservations::all_missing(4, 1);
        for mode in [FilterMode::Sequential, FilterMode::Parallel] {
            let f = filter(&model, &obs, mode).unwrap();
            assert_eq!(f.log_lik, 0.0);
            assert!(f.covs.iter().all(|p| (p[(0, 0)] - 1.0).abs() < 1e-14));
            let s = smoother(&model, &f, mode).unwrap();
            assert!(s.covs.iter().all(|p| (p[(0, 0)] - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn single_step_smoothed_equals_filtered() {
        let model = scalar_model(1);
        let obs = PseudoObservations {
            steps: vec![PseudoStep::fully_observed(DVector::from_element(1, 0.3), DMatrix::identity(1, 1) * 0.2)],
        };
        for mode in [FilterMode::Sequential, FilterMode::Parallel] {
            let f = filter(&model, &obs, mode).unwrap();
            let s = smoother(&model, &f, mode).unwrap();
            assert_eq!(s.means, f.means);
            assert_eq!(s.covs, f.covs);
        }
    }

    #[test]
    fn neutral_element_is_right_identity() {
        let e = FilterElement {
            b: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.9]),
            m: DVector::from_vec(vec![0.3, -1.0]),
            p: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            phi: DVector::from_vec(vec![0.1, 0.4]),
            j: DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
        };
        let c = combine_filter_elements(&e, &FilterElement::neutral(2)).unwrap();
        assert_relative_eq!(c.b, e.b, epsilon = 1e-15);
        assert_relative_eq!(c.m, e.m, epsilon = 1e-15);
        assert_relative_eq!(c.p, e.p, epsilon = 1e-15);
        assert_relative_eq!(c.phi, e.phi, epsilon = 1e-15);
        assert_relative_eq!(c.j, e.j, epsilon = 1e-15);
    }

    #[test]
    fn zero_gain_smoother_element_projects() {
        let ei = SmootherElement {
            e: DMatrix::zeros(2, 2),
            m: DVector::from_vec(vec![1.0, 2.0]),
            p: DMatrix::identity(2, 2) * 3.0,
        };
        let ej = SmootherElement {
            e: DMatrix::identity(2, 2),
            m: DVector::from_vec(vec![-5.0, 7.0]),
            p: DMatrix::identity(2, 2) * 0.1,
        };
        let c = combine_smoother_elements(&ei, &ej);
        assert_eq!(c.m, ei.m);
        assert_eq!(c.p, ei.p);
        assert_eq!(c.e, DMatrix::zeros(2, 2));
    }

    #[test]
    fn scan_matches_fold_for_matrix_products() {
        let elems: Vec<DMatrix<f64>> = (0..13)
            .map(|i| DMatrix::from_row_slice(2, 2, &[1.0, i as f64 * 0.1, 0.05, 1.0 - 0.01 * i as f64]))
            .collect();
        let op = |a: &DMatrix<f64>, b: &DMatrix<f64>| Ok(a * b);
        let scanned = associative_scan(elems.clone(), &op).unwrap();
        let mut acc = elems[0].clone();
        assert_eq!(scanned[0], acc);
        for k in 1..elems.len() {
            acc = &acc * &elems[k];
            assert_relative_eq!(scanned[k], acc, epsilon = 1e-12);
        }
        let rev = associative_scan_reverse(elems.clone(), &op).unwrap();
        let mut acc = elems[12].clone();
        assert_eq!(rev[12], acc);
        for k in (0..12).rev() {
            acc = &elems[k] * &acc;
            assert_relative_eq!(rev[k], acc, epsilon = 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let model = scalar_model(3);
        let obs = PseudoObservations::all_missing(2, 1);
        assert!(matches!(sequential_filter(&model, &obs), Err(Error::Dimension(_))));
    }

    #[test]
    fn block_projection_idempotent() {
        let p = DMatrix::from_fn(6, 6, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let once = CovStructure::BlockDiagonal(2).apply(p);
        let twice = CovStructure::BlockDiagonal(2).apply(once.clone());
        assert_eq!(once, twice);
        assert_eq!(once[(0, 2)], 0.0);
        assert!(once[(0, 1)] != 0.0);
    }
}
