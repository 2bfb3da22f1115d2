//! Randomised invariants checked against the dense oracles.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stvgp::cvi_inference::{
    cvi_step, fit, hyper_grad, posterior, ApproxLikelihoodBank, FitConfig, HyperParams,
};
use stvgp::dense_oracle::{dense_regression, dense_svgp, dense_vgp_natgrad_step, st_gram, DenseNatural};
use stvgp::harness::GridDataset;
use stvgp::markov_kernels::{assemble_full, SpatialKernel};
use stvgp::mean_field::reformulate;
use stvgp::sparse_inference::{sparse_fit, ScatteredData};
use stvgp::state_space::{
    combine_filter_elements, filter_elements, parallel_filter, parallel_smoother, rts_smoother, sequential_filter,
    FilterMode,
};
use stvgp::Likelihood;

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian() -> Likelihood<f64> {
    Likelihood::Gaussian { variance: 1.0 }
}

fn poisson() -> Likelihood<f64> {
    Likelihood::Poisson { area: 1.0 }
}

fn dense_log_marginal(p: &Problem, theta: &[f64]) -> f64 {
    let hyper = HyperParams::from_theta(theta, p.spec.spatial_dim, true).unwrap();
    let (kt, ks) = p.spec.kernels(&hyper).unwrap();
    let d = &p.data;
    let k = st_gram(&kt, &ks, &d.times, &d.locations, &d.times, &d.locations).unwrap();
    let n = k.nrows();
    let noise = DMatrix::identity(n, n) * hyper.noise_variance.unwrap();
    dense_regression(&k, &d.vec(), &noise, &p.observed_flags()).unwrap().log_marginal
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parallel_matches_sequential(seed in any::<u64>(), nt in 1usize..25, ns in 1usize..4) {
        let mut r = rng(seed);
        let kt = temporal(&mut r);
        let ks = SpatialKernel::new(family(&mut r), vec![r.random_range(0.5..2.0)]).unwrap();
        let model = assemble_full(&kt, &ks, &locations(&mut r, ns, 1), &times(&mut r, nt)).unwrap();
        let obs = pseudo(&mut r, nt, ns, 0.3);
        let (a, b) = (sequential_filter(&model, &obs).unwrap(), parallel_filter(&model, &obs).unwrap());
        prop_assert!((a.log_lik - b.log_lik).abs() < 1e-8);
        prop_assert!(max_abs_vec(&a.means, &b.means) < 1e-8);
        prop_assert!(max_abs_mat(&a.covs, &b.covs) < 1e-8);
        let (sa, sb) = (rts_smoother(&model, &a).unwrap(), parallel_smoother(&model, &b).unwrap());
        prop_assert!(max_abs_vec(&sa.means, &sb.means) < 1e-8);
        prop_assert!(max_abs_mat(&sa.covs, &sb.covs) < 1e-8);
    }

    #[test]
    fn filter_combination_is_associative(seed in any::<u64>(), nt in 3usize..10, ns in 1usize..3) {
        let mut r = rng(seed);
        let kt = temporal(&mut r);
        let ks = SpatialKernel::new(family(&mut r), vec![1.0]).unwrap();
        let model = assemble_full(&kt, &ks, &locations(&mut r, ns, 1), &times(&mut r, nt)).unwrap();
        let el = filter_elements(&model, &pseudo(&mut r, nt, ns, 0.3)).unwrap();
        let (a, b, c) = (&el[r.random_range(0..nt)], &el[r.random_range(0..nt)], &el[r.random_range(0..nt)]);
        let left = combine_filter_elements(&combine_filter_elements(a, b).unwrap(), c).unwrap();
        let right = combine_filter_elements(a, &combine_filter_elements(b, c).unwrap()).unwrap();
        for (x, y) in [(&left.b, &right.b), (&left.p, &right.p), (&left.j, &right.j)] {
            prop_assert!((x - y).amax() < 1e-8);
        }
        prop_assert!((&left.m - &right.m).amax() < 1e-8);
        prop_assert!((&left.phi - &right.phi).amax() < 1e-8);
    }

    #[test]
    fn one_full_step_is_exact_for_gaussian(seed in any::<u64>(), nt in 1usize..20, ns in 1usize..4) {
        let mut r = rng(seed);
        let p = problem(&mut r, nt, ns, 1, gaussian(), 0.2);
        let (kt, ks) = p.kernels();
        let model = assemble_full(&kt, &ks, &p.data.locations, &p.data.times).unwrap();
        let n = nt * ns;
        let noise = DMatrix::identity(n, n) * p.hyper.noise_variance.unwrap();
        let exact = dense_regression(&p.dense_prior(), &p.data.vec(), &noise, &p.observed_flags()).unwrap();
        let empty = ApproxLikelihoodBank::zero_information(nt, ns);
        let (m0, v0) = posterior(&model, &empty, FilterMode::Sequential).unwrap().site_marginals();
        let bank = cvi_step(&empty, &m0, &v0, &p.data, &p.likelihood(), 1.0, 20).unwrap();
        let post = posterior(&model, &bank, FilterMode::Parallel).unwrap();
        let (m, v) = post.site_marginals();
        for i in 0..n {
            prop_assert!((m[i] - exact.mean[i]).abs() < 1e-8);
            prop_assert!((v[i] - exact.cov[(i, i)]).abs() < 1e-8);
        }
        prop_assert!((post.log_lik - exact.log_marginal).abs() < 1e-8);
    }

    #[test]
    fn cvi_follows_dense_natural_gradient(seed in any::<u64>(), nt in 1usize..6, ns in 1usize..3, beta in 0.1f64..1.0) {
        let mut r = rng(seed);
        let p = problem(&mut r, nt, ns, 1, poisson(), 0.2);
        let (kt, ks) = p.kernels();
        let lik = p.likelihood();
        let model = assemble_full(&kt, &ks, &p.data.locations, &p.data.times).unwrap();
        let k = p.dense_prior();
        let mut bank = ApproxLikelihoodBank::zero_information(nt, ns);
        let mut q = DenseNatural::prior(&k).unwrap();
        for _ in 0..3 {
            let (m, v) = posterior(&model, &bank, FilterMode::Sequential).unwrap().site_marginals();
            bank = cvi_step(&bank, &m, &v, &p.data, &lik, beta, 20).unwrap();
            q = dense_vgp_natgrad_step(&q, &k, &p.data.vec(), &p.observed_flags(), &lik, beta, 20).unwrap();
        }
        let (m, v) = posterior(&model, &bank, FilterMode::Sequential).unwrap().site_marginals();
        let (dm, dp) = q.moments().unwrap();
        for i in 0..nt * ns {
            prop_assert!((m[i] - dm[i]).abs() < 1e-7, "mean {} vs {}", m[i], dm[i]);
            prop_assert!((v[i] - dp[(i, i)]).abs() < 1e-7);
        }
    }

    #[test]
    fn sites_stay_negative_definite(seed in any::<u64>(), nt in 1usize..15, ns in 1usize..4) {
        let mut r = rng(seed);
        let p = problem(&mut r, nt, ns, 1, poisson(), 0.3);
        let cfg = FitConfig { beta: 0.5, rho: 0.0, iterations: 5, ..FitConfig::default() };
        let state = fit(&p.spec, &p.data, &p.hyper, &cfg).unwrap();
        for (i, &l2) in state.bank.lambda2.iter().enumerate() {
            let observed = p.data.observed[(i / ns, i % ns)];
            if observed {
                prop_assert!(l2 <= -1e-8);
            } else {
                prop_assert_eq!(l2, 0.0);
                prop_assert_eq!(state.bank.lambda1[i], 0.0);
            }
        }
    }

    #[test]
    fn mean_field_rewrite_is_exact(seed in any::<u64>(), nt in 1usize..15, ns in 1usize..4, dim in 1usize..3) {
        let mut r = rng(seed);
        let kt = temporal(&mut r);
        let ks = SpatialKernel::new(family(&mut r), (0..dim).map(|_| r.random_range(0.5..2.0)).collect()).unwrap();
        let model = assemble_full(&kt, &ks, &locations(&mut r, ns, dim), &times(&mut r, nt)).unwrap();
        let obs = pseudo(&mut r, nt, ns, 0.3);
        let mf = reformulate(&model).unwrap();
        let (a, b) = (sequential_filter(&model, &obs).unwrap(), sequential_filter(&mf.model, &obs).unwrap());
        prop_assert!((a.log_lik - b.log_lik).abs() < 1e-8);
        let (sa, sb) = (rts_smoother(&model, &a).unwrap(), rts_smoother(&mf.model, &b).unwrap());
        let (ha, hb) = (&model.measurement, &mf.model.measurement);
        for n in 0..nt {
            prop_assert!((ha * &sa.means[n] - hb * &sb.means[n]).amax() < 1e-8);
            let pa = ha * &sa.covs[n] * ha.transpose();
            let pb = hb * &sb.covs[n] * hb.transpose();
            prop_assert!((pa - pb).amax() < 1e-8);
        }
    }

    #[test]
    fn sparse_elbo_matches_collapsed_bound(seed in any::<u64>(), nt in 2usize..15, ms in 1usize..3) {
        let mut r = rng(seed);
        let ns = ms + r.random_range(1..3);
        let p = problem(&mut r, nt, ns, 1, gaussian(), 0.0);
        let z = locations(&mut r, ms, 1);
        let cfg = FitConfig { beta: 1.0, rho: 0.0, iterations: 2, ..FitConfig::default() };
        let state = sparse_fit(&p.spec, &ScatteredData::from_grid(&p.data), &p.hyper, &z, false, &cfg).unwrap();
        let (kt, ks) = p.kernels();
        let (t, s) = (&p.data.times, &p.data.locations);
        let kfu = st_gram(&kt, &ks, t, s, t, &z).unwrap();
        let kuu = st_gram(&kt, &ks, t, &z, t, &z).unwrap();
        let kff = DVector::from_element(nt * ns, p.hyper.temporal_variance);
        let oracle = dense_svgp(&kff, &kfu, &kuu, &p.data.vec(), p.hyper.noise_variance.unwrap()).unwrap();
        let e = *state.elbo_trace.last().unwrap();
        prop_assert!((e - oracle.elbo).abs() < 1e-7, "{} vs {}", e, oracle.elbo);
    }

    #[test]
    fn gaussian_gradient_matches_marginal_likelihood(seed in any::<u64>(), nt in 2usize..10, ns in 1usize..3) {
        // At the optimal sites the ELBO touches log p(y | θ), so their
        // gradients coincide.
        let mut r = rng(seed);
        let p = problem(&mut r, nt, ns, 1, gaussian(), 0.1);
        let cfg = FitConfig { beta: 1.0, rho: 0.0, iterations: 1, ..FitConfig::default() };
        let bank = fit(&p.spec, &p.data, &p.hyper, &cfg).unwrap().bank;
        let theta = p.theta();
        let g = hyper_grad(&p.spec, &p.data, &bank, &theta, &cfg).unwrap();
        let h = 1e-5;
        let scale = g.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        for i in 0..theta.len() {
            let (mut a, mut b) = (theta.clone(), theta.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (dense_log_marginal(&p, &a) - dense_log_marginal(&p, &b)) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() / scale < 1e-4, "coordinate {}: {} vs {}", i, g[i], fd);
        }
    }

    #[test]
    fn frozen_poisson_training_is_monotone(seed in any::<u64>(), nt in 2usize..20, ns in 1usize..4) {
        let mut r = rng(seed);
        let p = problem(&mut r, nt, ns, 1, poisson(), 0.2);
        let cfg = FitConfig { beta: 0.1, rho: 0.0, iterations: 30, ..FitConfig::default() };
        let trace = fit(&p.spec, &p.data, &p.hyper, &cfg).unwrap().elbo_trace;
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>(), nt in 2usize..10) {
        let mut r = rng(seed);
        let p = problem(&mut r, nt, 2, 1, poisson(), 0.1);
        let cfg = FitConfig { beta: 0.3, rho: 0.05, iterations: 4, ..FitConfig::default() };
        let a = fit(&p.spec, &p.data, &p.hyper, &cfg).unwrap();
        let b = fit(&p.spec, &p.data, &p.hyper, &cfg).unwrap();
        prop_assert_eq!(a.elbo_trace, b.elbo_trace);
        prop_assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn dataset_vec_round_trips(seed in any::<u64>(), nt in 1usize..12, ns in 1usize..5, dim in 1usize..3) {
        let mut r = rng(seed);
        let p = problem(&mut r, nt, ns, dim, gaussian(), 0.3);
        let ds = GridDataset::from_grid(&p.data).unwrap();
        let back = ds.unvec(&ds.vec()).unwrap();
        prop_assert_eq!(back.vec().as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        ds.vec().as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let grid = back.to_grid().unwrap();
        prop_assert_eq!(&grid.times, &p.data.times);
        for k in 0..ns {
            let row = (0..grid.num_sites()).find(|&j| grid.locations.row(j) == p.data.locations.row(k));
            let Some(row) = row else {
                prop_assert!((0..nt).all(|n| !p.data.observed[(n, k)]));
                continue;
            };
            for n in 0..nt {
                prop_assert_eq!(grid.observed[(n, row)], p.data.observed[(n, k)]);
                if p.data.observed[(n, k)] {
                    prop_assert_eq!(grid.values[(n, row)], p.data.values[(n, k)]);
                }
            }
        }
    }
}
