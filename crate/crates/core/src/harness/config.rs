//! JSON run configuration and input normalization.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::GridDataset;
use crate::cvi_inference::{FitConfig, HyperParams, ModelSpec};
use crate::error::{Error, Result};
use crate::likelihoods::{Likelihood, EVAL_QUADRATURE_ORDER, TRAIN_QUADRATURE_ORDER};
use crate::markov_kernels::MaternOrder;
use crate::state_space::FilterMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    StVgp,
    StSvgp,
    MfStVgp,
    MfStSvgp,
}

impl Variant {
    pub fn is_sparse(self) -> bool {
        matches!(self, Variant::StSvgp | Variant::MfStSvgp)
    }

    pub fn is_mean_field(self) -> bool {
        matches!(self, Variant::MfStVgp | Variant::MfStSvgp)
    }
}

/// Spatial inducing locations: a k-means `count`, or explicit `points`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InducingConfig {
    pub count: Option<usize>,
    pub points: Option<Vec<Vec<f64>>>,
    /// Learn the locations jointly with the hyperparameters.
    pub optimize: bool,
}

/// Everything needed to train one model. Missing fields take the defaults of
/// [`RunConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    /// `matern12`, `matern32` or `matern52`.
    pub temporal_kernel: String,
    pub spatial_kernel: String,
    pub temporal_variance: f64,
    pub temporal_lengthscale: f64,
    /// One entry per spatial dimension, or a single value for all.
    pub spatial_lengthscales: Vec<f64>,
    pub likelihood: Likelihood<f64>,
    pub inducing: Option<InducingConfig>,
    /// Natural-gradient rate; defaults to 1 for Gaussian data, 0.1 otherwise.
    pub beta: Option<f64>,
    /// Adam rate for hyperparameters; 0 keeps them fixed.
    pub rho: f64,
    pub iterations: usize,
    pub filter_mode: FilterMode,
    pub train_quadrature_order: usize,
    pub eval_quadrature_order: usize,
    pub fd_step: f64,
    pub seed: u64,
    /// z-score coordinates and rescale time to unit median step.
    pub normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::StVgp,
            temporal_kernel: "matern32".into(),
            spatial_kernel: "matern32".into(),
            temporal_variance: 1.0,
            temporal_lengthscale: 1.0,
            spatial_lengthscales: vec![1.0],
            likelihood: Likelihood::Gaussian { variance: 0.1 },
            inducing: None,
            beta: None,
            rho: 0.01,
            iterations: 100,
            filter_mode: FilterMode::Sequential,
            train_quadrature_order: TRAIN_QUADRATURE_ORDER,
            eval_quadrature_order: EVAL_QUADRATURE_ORDER,
            fd_step: 1e-4,
            seed: 0,
            normalize: false,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn kernels(&self) -> Result<(MaternOrder, MaternOrder)> {
        Ok((self.temporal_kernel.parse()?, self.spatial_kernel.parse()?))
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(if self.likelihood.is_conjugate() { 1.0 } else { 0.1 })
    }

    /// Checks the settings against a dataset of the given spatial dimension.
    pub fn validate(&self, spatial_dim: usize) -> Result<()> {
        self.kernels()?;
        let beta = self.beta();
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("`beta` must lie in (0, 1], got {beta}")));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("`rho` must be non-negative, got {}", self.rho)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("`iterations` must be at least 1".into()));
        }
        if self.train_quadrature_order == 0 || self.eval_quadrature_order == 0 {
            return Err(Error::Config("quadrature orders must be positive".into()));
        }
        positive("fd_step", self.fd_step)?;
        positive("temporal_variance", self.temporal_variance)?;
        positive("temporal_lengthscale", self.temporal_lengthscale)?;
        let ls = &self.spatial_lengthscales;
        if !(ls.len() == 1 || ls.len() == spatial_dim) {
            return Err(Error::Config(format!(
                "{} spatial lengthscales for {spatial_dim} spatial dimensions",
                ls.len()
            )));
        }
        for &l in ls {
            positive("spatial_lengthscales", l)?;
        }
        match self.likelihood {
            Likelihood::Gaussian { variance } => positive("likelihood.variance", variance)?,
            Likelihood::Poisson { area } => positive("likelihood.area", area)?,
            Likelihood::Bernoulli => {}
        }
        match (&self.inducing, self.variant.is_sparse()) {
            (None, true) => Err(Error::Config("sparse variants need an `inducing` section".into())),
            (Some(_), false) => Err(Error::Config("`inducing` is only valid for st-svgp and mf-st-svgp".into())),
            (None, false) => Ok(()),
            (Some(ind), true) => match (ind.count, &ind.points) {
                (Some(0), None) => Err(Error::Config("`inducing.count` must be positive".into())),
                (Some(_), None) => Ok(()),
                (None, Some(p)) if p.is_empty() => Err(Error::Config("`inducing.points` is empty".into())),
                (None, Some(p)) if p.iter().any(|r| r.len() != spatial_dim) => Err(Error::Config(format!(
                    "inducing points must have {spatial_dim} coordinates"
                ))),
                (None, Some(_)) => Ok(()),
                _ => Err(Error::Config("give exactly one of `inducing.count` and `inducing.points`".into())),
            },
        }
    }

    pub fn model_spec(&self, spatial_dim: usize) -> Result<ModelSpec<f64>> {
        let (temporal, spatial) = self.kernels()?;
        Ok(ModelSpec {
            temporal,
            spatial,
            likelihood: self.likelihood,
            spatial_dim,
        })
    }

    /// Initial hyperparameters in the (possibly normalized) model units.
    pub fn hyper(&self, spatial_dim: usize, norm: &Normalization) -> HyperParams<f64> {
        let ls = |d: usize| self.spatial_lengthscales[if self.spatial_lengthscales.len() == 1 { 0 } else { d }];
        HyperParams {
            temporal_variance: self.temporal_variance,
            temporal_lengthscale: self.temporal_lengthscale / norm.time_scale,
            spatial_lengthscales: (0..spatial_dim).map(|d| ls(d) / norm.space_scale[d]).collect(),
            noise_variance: match self.likelihood {
                Likelihood::Gaussian { variance } => Some(variance),
                _ => None,
            },
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            beta: self.beta(),
            rho: self.rho,
            iterations: self.iterations,
            filter_mode: self.filter_mode,
            mean_field: self.variant.is_mean_field(),
            quadrature_order: self.train_quadrature_order,
            fd_step: self.fd_step,
            ..FitConfig::default()
        }
    }
}

/// Affine maps `t ↦ (t − t₀)/τ` and `s_d ↦ (s_d − μ_d)/σ_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub time_offset: f64,
    pub time_scale: f64,
    pub space_offset: Vec<f64>,
    pub space_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(spatial_dim: usize) -> Self {
        Self {
            time_offset: 0.0,
            time_scale: 1.0,
            space_offset: vec![0.0; spatial_dim],
            space_scale: vec![1.0; spatial_dim],
        }
    }

    /// Unit median time step and per-dimension z-scores of the coordinates.
    pub fn fit(data: &GridDataset) -> Self {
        let mut steps: Vec<f64> = data.times.windows(2).map(|w| w[1] - w[0]).collect();
        steps.sort_by(f64::total_cmp);
        let median = match steps.len() {
            0 => 1.0,
            n if n % 2 == 1 => steps[n / 2],
            n => 0.5 * (steps[n / 2 - 1] + steps[n / 2]),
        };
        let n = data.num_rows() as f64;
        let (mut off, mut scale) = (Vec::new(), Vec::new());
        for col in data.coords.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            off.push(mean);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self {
            time_offset: data.times[0],
            time_scale: median,
            space_offset: off,
            space_scale: scale,
        }
    }

    pub fn time(&self, t: f64) -> f64 {
        (t - self.time_offset) / self.time_scale
    }

    pub fn coords(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(s.nrows(), s.ncols(), |i, d| (s[(i, d)] - self.space_offset[d]) / self.space_scale[d])
    }

    pub fn apply(&self, data: &GridDataset) -> GridDataset {
        let mut out = data.clone();
        out.times = data.times.iter().map(|&t| self.time(t)).collect();
        out.coords = self.coords(&data.coords);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_parsing() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate(2).unwrap();
        let c = RunConfig::from_json(
            r#"{"variant":"mf-st-svgp","likelihood":{"family":"poisson","area":1.0},
                "inducing":{"count":4},"filter_mode":"parallel"}"#,
        )
        .unwrap();
        assert_eq!(c.beta(), 0.1);
        assert!(c.fit_config().mean_field);
        c.validate(1).unwrap();
        assert!(matches!(RunConfig::from_json(r#"{"bogus":1}"#), Err(Error::Json(_))));
    }

    #[test]
    fn rejects_inconsistent_settings() {
        let bad = [
            r#"{"variant":"st-svgp"}"#,
            r#"{"inducing":{"count":3}}"#,
            r#"{"variant":"st-svgp","inducing":{"count":3,"points":[[0.0]]}}"#,
            r#"{"variant":"st-svgp","inducing":{"points":[[0.0, 1.0]]}}"#,
            r#"{"beta":0.0}"#,
            r#"{"rho":-1.0}"#,
            r#"{"spatial_lengthscales":[1.0, 2.0, 3.0]}"#,
            r#"{"temporal_lengthscale":0.0}"#,
        ];
        for b in bad {
            let e = RunConfig::from_json(b).unwrap().validate(1).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{b}");
        }
        let e = RunConfig::from_json(r#"{"temporal_kernel":"rbf"}"#).unwrap().validate(1).unwrap_err();
        assert!(matches!(e, Error::UnsupportedKernel(_)));
    }

    #[test]
    fn normalization_maps_median_step_to_one() {
        let d = GridDataset::from_reader("t,s1,y\n2,1,0\n3,3,0\n5,1,0\n6,3,0\n".as_bytes()).unwrap();
        let n = Normalization::fit(&d);
        assert_eq!(n.time_scale, 1.0);
        let a = n.apply(&d);
        assert_eq!(a.times, vec![0.0, 1.0, 3.0, 4.0]);
        assert_eq!(a.coords.column(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0, -1.0, 1.0]);
    }
}
