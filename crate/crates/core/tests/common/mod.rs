//! Random problem generators shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stvgp::cvi_inference::{ApproxLikelihoodBank, GridData, HyperParams, ModelSpec};
use stvgp::dense_oracle::st_gram;
use stvgp::markov_kernels::{build_temporal_ss, MarkovKernelSS, MaternOrder, SpatialKernel};
use stvgp::state_space::{PseudoObservations, PseudoStep};
use stvgp::Likelihood;

pub const FAMILIES: [MaternOrder; 3] = [MaternOrder::Matern12, MaternOrder::Matern32, MaternOrder::Matern52];

pub fn family(rng: &mut ChaCha8Rng) -> MaternOrder {
    FAMILIES[rng.random_range(0..3)]
}

/// Strictly increasing times with gaps in `[0.05, 0.5]`.
pub fn times(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut t = rng.random_range(-1.0..1.0);
    (0..n)
        .map(|_| {
            let out = t;
            t += rng.random_range(0.05..0.5);
            out
        })
        .collect()
}

/// Well-separated random locations in `[0, 3]^dim`.
pub fn locations(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DMatrix<f64> {
    loop {
        let s: DMatrix<f64> = DMatrix::from_fn(n, dim, |_, _| rng.random_range(0.0..3.0));
        let ok = (0..n).all(|i| {
            (0..i).all(|j| (0..dim).map(|d| (s[(i, d)] - s[(j, d)]).powi(2)).sum::<f64>() > 0.04)
        });
        if ok {
            return s;
        }
    }
}

pub struct Problem {
    pub spec: ModelSpec<f64>,
    pub hyper: HyperParams<f64>,
    pub data: GridData<f64>,
}

impl Problem {
    pub fn kernels(&self) -> (MarkovKernelSS<f64>, SpatialKernel<f64>) {
        self.spec.kernels(&self.hyper).unwrap()
    }

    pub fn likelihood(&self) -> Likelihood<f64> {
        self.spec.likelihood(&self.hyper).unwrap()
    }

    pub fn theta(&self) -> Vec<f64> {
        self.hyper.to_theta()
    }

    /// Dense prior covariance over all grid cells, time-major.
    pub fn dense_prior(&self) -> DMatrix<f64> {
        let (kt, ks) = self.kernels();
        let d = &self.data;
        st_gram(&kt, &ks, &d.times, &d.locations, &d.times, &d.locations).unwrap()
    }

    pub fn observed_flags(&self) -> Vec<bool> {
        let (nt, ns) = (self.data.num_steps(), self.data.num_sites());
        (0..nt * ns).map(|i| self.data.observed[(i / ns, i % ns)]).collect()
    }
}

/// Random grid problem. `lik` decides the values: Gaussian values are
/// smooth-plus-noise, Poisson values are small counts.
pub fn problem(rng: &mut ChaCha8Rng, nt: usize, ns: usize, dim: usize, lik: Likelihood<f64>, missing: f64) -> Problem {
    let t = times(rng, nt);
    let s = locations(rng, ns, dim);
    let mut values = DMatrix::zeros(nt, ns);
    let mut mask = DMatrix::from_element(nt, ns, true);
    for n in 0..nt {
        for k in 0..ns {
            let f = (1.3 * t[n]).sin() + 0.4 * s[(k, 0)];
            values[(n, k)] = match lik {
                Likelihood::Gaussian { .. } => f + rng.random_range(-0.3..0.3),
                _ => (f.exp() * rng.random_range(0.0..2.0)).floor(),
            };
            mask[(n, k)] = rng.random::<f64>() >= missing;
        }
    }
    let hyper = HyperParams {
        temporal_variance: rng.random_range(0.5..2.0),
        temporal_lengthscale: rng.random_range(0.3..2.0),
        spatial_lengthscales: (0..dim).map(|_| rng.random_range(0.5..2.0)).collect(),
        noise_variance: match lik {
            Likelihood::Gaussian { .. } => Some(rng.random_range(0.05..0.5)),
            _ => None,
        },
    };
    Problem {
        spec: ModelSpec {
            temporal: family(rng),
            spatial: family(rng),
            likelihood: lik,
            spatial_dim: dim,
        },
        hyper,
        data: GridData::new(t, s, values, mask).unwrap(),
    }
}

/// Random pseudo-observations with diagonal noise and a missing pattern.
pub fn pseudo(rng: &mut ChaCha8Rng, steps: usize, rows: usize, missing: f64) -> PseudoObservations<f64> {
    PseudoObservations {
        steps: (0..steps)
            .map(|_| PseudoStep {
                mean: DVector::from_fn(rows, |_, _| rng.random_range(-2.0..2.0)),
                noise: DMatrix::from_diagonal(&DVector::from_fn(rows, |_, _| rng.random_range(0.05..1.0))),
                observed: (0..rows).map(|_| rng.random::<f64>() >= missing).collect(),
            })
            .collect(),
    }
}

/// Random informative bank (λ̃² < 0) with some uninformative sites.
pub fn bank(rng: &mut ChaCha8Rng, steps: usize, sites: usize) -> ApproxLikelihoodBank<f64> {
    let mut b = ApproxLikelihoodBank::zero_information(steps, sites);
    for i in 0..steps * sites {
        if rng.random::<f64>() < 0.8 {
            b.lambda2[i] = -rng.random_range(0.5..10.0);
            b.lambda1[i] = rng.random_range(-5.0..5.0);
        }
    }
    b
}

pub fn temporal(rng: &mut ChaCha8Rng) -> MarkovKernelSS<f64> {
    build_temporal_ss(family(rng), rng.random_range(0.5..2.0), rng.random_range(0.3..2.0)).unwrap()
}

pub fn max_abs_vec(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

pub fn max_abs_mat(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}
