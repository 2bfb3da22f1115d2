//! Training, prediction, splitting and timing sweeps over tabular data.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Normalization, RunConfig, Variant};
use super::dataset::GridDataset;
use super::metrics::{self, Prediction};
use super::synth::{synthesize, SynthKind, SynthSpec};
use crate::cvi_inference::{self, FitState, GridData};
use crate::error::{Error, Result};
use crate::sparse_inference::{self, kmeans_inducing, BlockApproxLikelihood};
use crate::state_space::FilterMode;

/// Variational state of either model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedState {
    Grid(FitState<f64>),
    Sparse(FitState<f64, BlockApproxLikelihood<f64>>),
}

impl TrainedState {
    pub fn theta(&self) -> &[f64] {
        match self {
            TrainedState::Grid(s) => &s.theta,
            TrainedState::Sparse(s) => &s.theta,
        }
    }

    pub fn elbo_trace(&self) -> &[f64] {
        match self {
            TrainedState::Grid(s) => &s.elbo_trace,
            TrainedState::Sparse(s) => &s.elbo_trace,
        }
    }

    pub fn iteration_seconds(&self) -> &[f64] {
        match self {
            TrainedState::Grid(s) => &s.iteration_seconds,
            TrainedState::Sparse(s) => &s.iteration_seconds,
        }
    }

    /// Mean iteration time, excluding the first (warm-up) iteration when
    /// there is more than one.
    pub fn seconds_per_iter(&self) -> f64 {
        let s = self.iteration_seconds();
        let timed = if s.len() > 1 { &s[1..] } else { s };
        if timed.is_empty() {
            0.0
        } else {
            timed.iter().sum::<f64>() / timed.len() as f64
        }
    }
}

/// A trained model with everything prediction needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub config: RunConfig,
    pub normalization: Normalization,
    pub spatial_dim: usize,
    /// Training timestamps in model units.
    pub train_times: Vec<f64>,
    /// Grid locations in model units (grid variants).
    pub train_sites: Option<DMatrix<f64>>,
    pub state: TrainedState,
}

impl FittedModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    /// Likelihood with any learned noise variance substituted.
    pub fn likelihood(&self) -> Result<crate::likelihoods::Likelihood<f64>> {
        let spec = self.config.model_spec(self.spatial_dim)?;
        spec.likelihood(&spec.hyper(self.state.theta())?)
    }
}

/// Summary written next to predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rmse: f64,
    pub nlpd: f64,
    pub elbo_final: f64,
    pub iters: usize,
    pub seconds_per_iter: f64,
}

pub fn fit_dataset(cfg: &RunConfig, data: &GridDataset) -> Result<FittedModel> {
    let dim = data.spatial_dim();
    cfg.validate(dim)?;
    let norm = if cfg.normalize {
        Normalization::fit(data)
    } else {
        Normalization::identity(dim)
    };
    let nd = norm.apply(data);
    let spec = cfg.model_spec(dim)?;
    let hyper = cfg.hyper(dim, &norm);
    let fc = cfg.fit_config();
    let (state, train_sites) = if cfg.variant.is_sparse() {
        let ind = cfg.inducing.as_ref().expect("validated");
        let z = match (&ind.points, ind.count) {
            (Some(p), _) => norm.coords(&DMatrix::from_fn(p.len(), dim, |i, d| p[i][d])),
            (None, Some(m)) => kmeans_inducing(&nd.unique_sites(), m, cfg.seed)?,
            (None, None) => unreachable!("validated"),
        };
        let scattered = nd.to_scattered()?;
        let st = sparse_inference::sparse_fit(&spec, &scattered, &hyper, &z, ind.optimize, &fc)?;
        (TrainedState::Sparse(st), None)
    } else {
        let grid = nd.to_grid()?;
        let st = cvi_inference::fit(&spec, &grid, &hyper, &fc)?;
        (TrainedState::Grid(st), Some(grid.locations))
    };
    Ok(FittedModel {
        config: cfg.clone(),
        normalization: norm,
        spatial_dim: dim,
        train_times: nd.times,
        train_sites,
        state,
    })
}

/// Latent predictive moments at every row of `query`, in its row order.
pub fn predict_dataset(model: &FittedModel, query: &GridDataset) -> Result<Vec<Prediction>> {
    if query.spatial_dim() != model.spatial_dim {
        return Err(Error::Dimension(format!(
            "query has {} spatial dimensions, model {}",
            query.spatial_dim(),
            model.spatial_dim
        )));
    }
    let nq = model.normalization.apply(query);
    let spec = model.config.model_spec(model.spatial_dim)?;
    let fc = model.config.fit_config();
    let tidx = nq.time_index();
    match (&model.state, &model.train_sites) {
        (TrainedState::Grid(st), Some(sites)) => {
            let ns = sites.nrows();
            let train = GridData::new(
                model.train_times.clone(),
                sites.clone(),
                DMatrix::zeros(model.train_times.len(), ns),
                DMatrix::from_element(model.train_times.len(), ns, false),
            )?;
            let mut sorted = sites.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>();
            sorted.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
            let lookup = DMatrix::from_fn(ns, model.spatial_dim, |i, d| sorted[i][d]);
            if lookup != *sites {
                return Err(Error::Index("stored training sites are not sorted".into()));
            }
            let site = nq.site_index(sites);
            if let Some(i) = site.iter().position(Option::is_none) {
                let r = query.row(i);
                return Err(Error::Index(format!(
                    "query location {:?} at t={} is not a training site; grid variants predict at training sites only",
                    r.coords, r.t
                )));
            }
            let out = cvi_inference::predict(&spec, st, &train, &nq.times, &fc)?;
            Ok(tidx
                .iter()
                .zip(site)
                .map(|(&n, k)| {
                    let (mean, var) = out[n * ns + k.expect("checked")];
                    Prediction { mean, var }
                })
                .collect())
        }
        (TrainedState::Sparse(st), _) => {
            let sites = nq.unique_sites();
            let site = nq.site_index(&sites);
            let out = sparse_inference::sparse_predict(&spec, st, &model.train_times, &nq.times, &sites, &fc)?;
            let ns = sites.nrows();
            Ok(tidx
                .iter()
                .zip(site)
                .map(|(&n, k)| {
                    let (mean, var) = out[n * ns + k.expect("own site")];
                    Prediction { mean, var }
                })
                .collect())
        }
        (TrainedState::Grid(_), None) => Err(Error::Config("grid model without training sites".into())),
    }
}

/// Scores on the observed rows of `query`.
pub fn evaluate(model: &FittedModel, query: &GridDataset, preds: &[Prediction]) -> Result<RunMetrics> {
    let lik = model.likelihood()?;
    let (p, y): (Vec<Prediction>, Vec<f64>) = preds
        .iter()
        .zip(query.values.iter().zip(&query.observed))
        .filter(|(_, (_, &o))| o)
        .map(|(p, (&y, _))| (*p, y))
        .unzip();
    let rmse = metrics::rmse(&p, &y, &lik)?;
    let nlpd = {
        let pts: Vec<f64> = p
            .iter()
            .zip(&y)
            .map(|(p, &y)| lik.nlpd_order(y, p.mean, p.var, model.config.eval_quadrature_order))
            .collect::<Result<_>>()?;
        pts.iter().sum::<f64>() / pts.len() as f64
    };
    Ok(RunMetrics {
        rmse,
        nlpd,
        elbo_final: model.state.elbo_trace().last().copied().unwrap_or(f64::NAN),
        iters: model.state.elbo_trace().len(),
        seconds_per_iter: model.state.seconds_per_iter(),
    })
}

/// Row indices of fold `fold` (test) and the rest (train) for a seeded
/// shuffle of `0..n` cut into `k` near-equal folds.
pub fn kfold_split(n: usize, k: usize, fold: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if k < 2 || fold >= k || n < k {
        return Err(Error::Config(format!("cannot take fold {fold} of {k} from {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (lo, hi) = (fold * n / k, (fold + 1) * n / k);
    let mut test = idx[lo..hi].to_vec();
    let mut train: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Train/test datasets for one fold over the observed rows.
pub fn split_dataset(data: &GridDataset, k: usize, fold: usize, seed: u64) -> Result<(GridDataset, GridDataset)> {
    let obs: Vec<usize> = (0..data.num_rows()).filter(|&i| data.observed[i]).collect();
    let (tr, te) = kfold_split(obs.len(), k, fold, seed)?;
    let pick = |ix: &[usize]| data.subset(&ix.iter().map(|&i| obs[i]).collect::<Vec<_>>());
    Ok((pick(&tr)?, pick(&te)?))
}

/// One line of a timing sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub nt: usize,
    pub ns: usize,
    pub variant: Variant,
    pub filter_mode: FilterMode,
    pub iterations: usize,
    pub seconds_per_iter: f64,
    pub total_seconds: f64,
}

/// Fits `cfg` on pseudo-periodic data of each size in turn, one
/// configuration at a time.
pub fn bench(cfg: &RunConfig, nts: &[usize], ns: usize, modes: &[FilterMode]) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &nt in nts {
        let data = synthesize(&SynthSpec {
            kind: SynthKind::PseudoPeriodic,
            nt,
            ns,
            seed: cfg.seed,
            t_max: nt as f64 * 0.01,
        })?;
        for &mode in modes {
            let run = RunConfig {
                filter_mode: mode,
                ..cfg.clone()
            };
            let start = Instant::now();
            let model = fit_dataset(&run, &data.dataset)?;
            rows.push(BenchRow {
                nt,
                ns,
                variant: run.variant,
                filter_mode: mode,
                iterations: run.iterations,
                seconds_per_iter: model.state.seconds_per_iter(),
                total_seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["nt", "ns", "variant", "filter_mode", "iterations", "seconds_per_iter", "total_seconds"])?;
    for r in rows {
        let variant = serde_json::to_value(r.variant)?;
        let mode = serde_json::to_value(r.filter_mode)?;
        w.write_record([
            r.nt.to_string(),
            r.ns.to_string(),
            variant.as_str().unwrap_or_default().to_string(),
            mode.as_str().unwrap_or_default().to_string(),
            r.iterations.to_string(),
            format!("{:.6e}", r.seconds_per_iter),
            format!("{:.6e}", r.total_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,s…,mean,var[,nlpd]`; the `nlpd` column is present when any query row
/// is observed and is empty for missing rows.
pub fn write_predictions(
    query: &GridDataset,
    preds: &[Prediction],
    model: &FittedModel,
    writer: impl std::io::Write,
) -> Result<()> {
    let lik = model.likelihood()?;
    let with_nlpd = query.observed.iter().any(|&o| o);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(query.coord_names.iter().cloned());
    header.extend(["mean".into(), "var".into()]);
    if with_nlpd {
        header.push("nlpd".into());
    }
    w.write_record(&header)?;
    for (i, p) in preds.iter().enumerate() {
        let r = query.row(i);
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.coords.iter().map(f64::to_string));
        rec.push(p.mean.to_string());
        rec.push(p.var.to_string());
        if with_nlpd {
            rec.push(match r.y {
                Some(y) => lik.nlpd_order(y, p.mean, p.var, model.config.eval_quadrature_order)?.to_string(),
                None => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::InducingConfig;

    fn smooth(nt: usize, ns: usize) -> GridDataset {
        let rows = (0..nt)
            .flat_map(|n| (0..ns).map(move |k| (n, k)))
            .map(|(n, k)| {
                let (t, s) = (n as f64 * 0.1, k as f64 * 0.5);
                super::super::dataset::Row {
                    t,
                    coords: vec![s],
                    y: Some((2.0 * t).sin() + 0.3 * s),
                }
            })
            .collect();
        GridDataset::from_rows(rows, None).unwrap()
    }

    #[test]
    fn kfold_partitions() {
        let mut seen = vec![0; 23];
        for f in 0..5 {
            let (tr, te) = kfold_split(23, 5, f, 9).unwrap();
            assert_eq!(tr.len() + te.len(), 23);
            assert!(te.len() == 4 || te.len() == 5);
            for i in te {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(kfold_split(23, 5, 2, 9).unwrap(), kfold_split(23, 5, 2, 9).unwrap());
        assert!(kfold_split(3, 5, 0, 0).is_err());
    }

    #[test]
    fn grid_and_sparse_round_trip() {
        let data = smooth(12, 4);
        let base = RunConfig {
            iterations: 3,
            temporal_lengthscale: 0.5,
            ..RunConfig::default()
        };
        let grid = fit_dataset(&base, &data).unwrap();
        let preds = predict_dataset(&grid, &data).unwrap();
        let m = evaluate(&grid, &data, &preds).unwrap();
        assert!(m.rmse < 0.3, "{m:?}");
        assert_eq!(m.iters, 3);

        let sparse_cfg = RunConfig {
            variant: Variant::StSvgp,
            inducing: Some(InducingConfig {
                count: Some(3),
                ..InducingConfig::default()
            }),
            ..base
        };
        let sparse = fit_dataset(&sparse_cfg, &data).unwrap();
        let off_grid = GridDataset::from_reader("t,s1,y\n0.05,0.25,\n".as_bytes()).unwrap();
        assert_eq!(predict_dataset(&sparse, &off_grid).unwrap().len(), 1);
        assert!(matches!(predict_dataset(&grid, &off_grid), Err(Error::Index(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        sparse.save(&path).unwrap();
        assert_eq!(FittedModel::load(&path).unwrap(), sparse);
    }

    #[test]
    fn normalized_fit_predicts_in_original_units() {
        let data = smooth(10, 3);
        let cfg = RunConfig {
            iterations: 2,
            normalize: true,
            temporal_lengthscale: 0.5,
            ..RunConfig::default()
        };
        let m = fit_dataset(&cfg, &data).unwrap();
        assert!((m.normalization.time_scale - 0.1).abs() < 1e-12);
        let p = predict_dataset(&m, &data).unwrap();
        assert!(evaluate(&m, &data, &p).unwrap().rmse < 0.3);
    }
}
