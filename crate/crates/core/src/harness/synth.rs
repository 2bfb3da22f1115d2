//! Synthetic space-time datasets.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{GridDataset, Row};
use crate::error::{Error, Result};
use crate::gaussian_algebra::CholeskyFactor;
use crate::markov_kernels::{assemble_full, build_temporal_ss, MaternOrder, SpatialKernel};

/// Noise variance of the pseudo-periodic generator.
pub const PSEUDO_PERIODIC_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    PseudoPeriodic,
    LgcpCounts,
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo_periodic" => Ok(SynthKind::PseudoPeriodic),
            "lgcp_counts" => Ok(SynthKind::LgcpCounts),
            other => Err(Error::Config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub nt: usize,
    pub ns: usize,
    pub seed: u64,
    /// Time grid spans `[0, t_max]`; space spans `[0, 1]`.
    pub t_max: f64,
}

/// A sampled dataset with the latent function at every row (vec order).
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub dataset: GridDataset,
    pub truth: Vec<f64>,
}

/// `φ(t, c) = Σ_{i=3..7} 2⁻ⁱ sin(2π(2^{2+i} + s_i) t c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPeriodic {
    pub shifts: [f64; 5],
}

impl PseudoPeriodic {
    /// Draws `s_i ~ U(0, 2ⁱ)`.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let mut shifts = [0.0; 5];
        for (j, s) in shifts.iter_mut().enumerate() {
            *s = rng.random::<f64>() * (1u32 << (j + 3)) as f64;
        }
        Self { shifts }
    }

    pub fn phi(&self, t: f64, c: f64) -> f64 {
        (3..=7)
            .zip(self.shifts)
            .map(|(i, s)| (2.0 * PI * ((1u64 << (2 + i)) as f64 + s) * t * c).sin() / (1u64 << i) as f64)
            .sum()
    }

    /// `50 φ(t, 3) sin(4πr)`.
    pub fn f(&self, t: f64, r: f64) -> f64 {
        50.0 * self.phi(t, 3.0) * (4.0 * PI * r).sin()
    }
}

fn linspace(n: usize, hi: f64) -> Vec<f64> {
    match n {
        1 => vec![0.0],
        _ => (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect(),
    }
}

fn build(times: &[f64], space: &[f64], f: &[f64], y: &[f64]) -> Result<Synthetic> {
    let mut rows = Vec::with_capacity(f.len());
    for (n, &t) in times.iter().enumerate() {
        for (k, &r) in space.iter().enumerate() {
            rows.push(Row {
                t,
                coords: vec![r],
                y: Some(y[n * space.len() + k]),
            });
        }
    }
    Ok(Synthetic {
        dataset: GridDataset::from_rows(rows, None)?,
        truth: f.to_vec(),
    })
}

/// Latent sample from a Matérn-3/2 ⊗ Matérn-3/2 prior, simulated through
/// its state-space form.
fn gp_sample(times: &[f64], space: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let kt = build_temporal_ss(MaternOrder::Matern32, 1.0, 0.2 * times.last().copied().unwrap_or(1.0).max(1e-3))?;
    let ks = SpatialKernel::new(MaternOrder::Matern32, vec![0.3])?;
    let locs = DMatrix::from_column_slice(space.len(), 1, space);
    let model = assemble_full(&kt, &ks, &locs, times)?;
    let mut draw = |n: usize| DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let d = model.state_dim();
    let mut x = CholeskyFactor::new(model.initial_cov(), "initial covariance")?.lower() * draw(d);
    let h = &model.measurement;
    let mut f = Vec::with_capacity(times.len() * space.len());
    for n in 0..times.len() {
        if n > 0 {
            let tr = &model.transitions[n];
            x = &tr.transition * x + CholeskyFactor::new(&tr.noise, "process noise")?.lower() * draw(d);
        }
        f.extend((h * &x).iter());
    }
    Ok(f)
}

pub fn synthesize(spec: &SynthSpec) -> Result<Synthetic> {
    if spec.nt == 0 || spec.ns == 0 {
        return Err(Error::Config("dataset sizes must be positive".into()));
    }
    if !(spec.t_max > 0.0 && spec.t_max.is_finite()) {
        return Err(Error::Config("t_max must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let times = linspace(spec.nt, spec.t_max);
    let space = linspace(spec.ns, 1.0);
    match spec.kind {
        SynthKind::PseudoPeriodic => {
            let g = PseudoPeriodic::sample(&mut rng);
            let noise = Normal::new(0.0, PSEUDO_PERIODIC_NOISE.sqrt()).expect("valid normal");
            let f: Vec<f64> = times.iter().flat_map(|&t| space.iter().map(move |&r| (t, r))).map(|(t, r)| g.f(t, r)).collect();
            let y: Vec<f64> = f.iter().map(|v| v + noise.sample(&mut rng)).collect();
            build(&times, &space, &f, &y)
        }
        SynthKind::LgcpCounts => {
            let f = gp_sample(&times, &space, &mut rng)?;
            let y = f
                .iter()
                .map(|v| {
                    let rate = v.exp();
                    Poisson::new(rate).map(|p| p.sample(&mut rng)).map_err(|e| Error::Domain(format!("Poisson rate {rate}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            build(&times, &space, &f, &y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SynthKind, seed: u64) -> SynthSpec {
        SynthSpec {
            kind,
            nt: 40,
            ns: 5,
            seed,
            t_max: 1.0,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in [SynthKind::PseudoPeriodic, SynthKind::LgcpCounts] {
            let (a, b) = (synthesize(&spec(kind, 7)).unwrap(), synthesize(&spec(kind, 7)).unwrap());
            let (mut ba, mut bb) = (Vec::new(), Vec::new());
            a.dataset.write_to(&mut ba).unwrap();
            b.dataset.write_to(&mut bb).unwrap();
            assert_eq!(ba, bb);
            assert_ne!(a.truth, synthesize(&spec(kind, 8)).unwrap().truth);
        }
    }

    #[test]
    fn pseudo_periodic_shape() {
        let s = synthesize(&spec(SynthKind::PseudoPeriodic, 1)).unwrap();
        assert_eq!(s.dataset.num_rows(), 200);
        assert_eq!(s.dataset.grid_sites, Some(5));
        let bound = 50.0 * (3..=7).map(|i| 0.5f64.powi(i)).sum::<f64>();
        assert!((bound - 12.109_375).abs() < 1e-12);
        for (i, &f) in s.truth.iter().enumerate() {
            assert!(f.abs() <= bound);
            if i % 5 == 0 {
                assert_eq!(f, 0.0);
            }
        }
    }

    #[test]
    fn counts_are_non_negative_integers() {
        let s = synthesize(&spec(SynthKind::LgcpCounts, 3)).unwrap();
        assert!(s.dataset.values.iter().all(|&y| y >= 0.0 && y.fract() == 0.0));
    }

    #[test]
    fn rejects_zero_sizes() {
        let mut sp = spec(SynthKind::PseudoPeriodic, 0);
        sp.nt = 0;
        assert!(synthesize(&sp).is_err());
    }
}
