use std::sync::Arc;

use ada_core::aem::{
    approx1_log_post, approx2_log_post, approx3_log_post, approx4_log_post, approx5_log_post, AemState,
    Approximation, MeanMode, Scheme,
};
use ada_core::diagnostics::{iact, speedup_factor};
use ada_core::kernel::stage_one_log_ratio;
use ada_core::linalg::{Cholesky, Matrix};
use ada_core::models::analytic::AnalyticSpec;
use ada_core::oracle::{check_stationarity, enumerate_da_kernel, enumerate_da_kernel_with};
use ada_core::models::toy::discrete_toy;
use ada_core::proposal::{propose_rw, GroupPartition, ProposalAdaptState, AdaptConfig};
use ada_core::rng::chain_stream;
use ada_core::target::{ForwardPair, Posterior};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn analytic_posterior(eps: f64) -> Posterior {
    let spec = AnalyticSpec {
        epsilon: eps,
        ..AnalyticSpec::default()
    };
    spec.posterior(vec![1.3, 0.8, 0.4]).unwrap()
}

/// Posterior whose coarse model is the fine model itself.
fn collapsed_posterior(eps: f64) -> Posterior {
    let spec = AnalyticSpec {
        epsilon: eps,
        ..AnalyticSpec::default()
    };
    Posterior::new(
        ForwardPair::exact(Arc::new(spec.fine())),
        spec.noise(),
        spec.prior(),
        vec![1.3, 0.8, 0.4],
    )
    .unwrap()
}

fn zero_aem(post: &Posterior, mode: MeanMode) -> AemState {
    AemState::with_jitter(post.noise().covariance(), mode, 0.0).unwrap()
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 2)
}

fn gaussian_density(x: &[f64], mean: &[f64], chol: &Cholesky) -> f64 {
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    (-0.5 * chol.quad_form(&r).unwrap()).exp()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_scheme_collapses_to_exact_posterior(x in point(), eps in 0.0f64..0.5) {
        let post = collapsed_posterior(eps);
        let exact = post.log_posterior(&x).unwrap().log_posterior();
        let f = post.pair().eval_fine(&x).unwrap();
        let free = zero_aem(&post, MeanMode::Free);
        let pinned = zero_aem(&post, MeanMode::PinnedToZero);
        let values = [
            approx1_log_post(&post, &x).unwrap().log_density(),
            approx2_log_post(&post, &x, &free).unwrap().log_density(),
            approx3_log_post(&post, &x, &free).unwrap().log_density(),
            approx4_log_post(&post, &x, &f, &f).unwrap().log_density(),
            approx5_log_post(&post, &x, &f, &f, &pinned).unwrap().log_density(),
        ];
        for v in values {
            prop_assert!((v - exact).abs() <= 1e-12 * exact.abs().max(1.0), "{v} vs {exact}");
        }
    }

    #[test]
    fn anchored_schemes_have_unit_ratio_at_the_current_state(
        x in point(),
        noise in prop::collection::vec(-1.0f64..1.0, 3),
        scale in 0.0f64..2.0,
    ) {
        let post = analytic_posterior(0.1);
        let f = post.pair().eval_fine(&x).unwrap();
        let c = post.pair().eval_coarse(&x).unwrap();
        let lp = post.log_prior(&x);
        let mut a5 = Approximation::fresh(Scheme::Approx5, post.noise().covariance()).unwrap();
        for k in 0..4 {
            let shifted: Vec<f64> = f.iter().zip(&noise).map(|(v, e)| v + scale * e * k as f64).collect();
            a5.observe(&shifted, &c).unwrap();
        }
        let a4 = Approximation::fresh(Scheme::Approx4, post.noise().covariance()).unwrap();
        for approx in [&a4, &a5] {
            let r = stage_one_log_ratio(approx, &post, (lp, Some(&f), &c), (lp, &c)).unwrap();
            prop_assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn posterior_aem_recursion_matches_batch_moments(
        stream in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..60),
    ) {
        let post = analytic_posterior(0.1);
        let mut aem = zero_aem(&post, MeanMode::Free);
        for b in &stream {
            aem.update_posterior_aem(b).unwrap();
        }
        let n = stream.len() as f64;
        let mean: Vec<f64> = (0..3).map(|i| stream.iter().map(|b| b[i]).sum::<f64>() / n).collect();
        for i in 0..3 {
            prop_assert!((aem.mean()[i] - mean[i]).abs() <= 1e-9 * mean[i].abs().max(1.0));
            for j in 0..3 {
                let c = stream.iter().map(|b| (b[i] - mean[i]) * (b[j] - mean[j])).sum::<f64>() / (n - 1.0);
                let got = aem.covariance()[(i, j)];
                prop_assert!((got - c).abs() <= 1e-9 * c.abs().max(1.0), "{got} vs {c}");
            }
        }
    }

    #[test]
    fn increment_recursion_matches_batch_second_moment(
        stream in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..60),
    ) {
        let post = analytic_posterior(0.1);
        let mut aem = zero_aem(&post, MeanMode::PinnedToZero);
        for b in &stream {
            aem.update_statedep_cov(b).unwrap();
        }
        let n = stream.len() as f64;
        for i in 0..3 {
            prop_assert_eq!(aem.mean()[i], 0.0);
            for j in 0..3 {
                let c = stream.iter().map(|b| b[i] * b[j]).sum::<f64>() / n;
                let got = aem.covariance()[(i, j)];
                prop_assert!((got - c).abs() <= 1e-9 * c.abs().max(1.0), "{got} vs {c}");
            }
        }
    }

    #[test]
    fn iact_is_affine_invariant(seed in any::<u64>(), a in 0.01f64..100.0, b in -1e3f64..1e3, neg in any::<bool>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut v = 0.0;
        let series: Vec<f64> = (0..2000)
            .map(|_| {
                v = 0.7 * v + rng.sample::<f64, _>(StandardNormal);
                v
            })
            .collect();
        let a = if neg { -a } else { a };
        let moved: Vec<f64> = series.iter().map(|s| a * s + b).collect();
        let t0 = iact(&series).unwrap();
        let t1 = iact(&moved).unwrap();
        prop_assert_eq!(t0.window, t1.window);
        prop_assert!((t0.tau - t1.tau).abs() <= 1e-8 * t0.tau);
    }

    #[test]
    fn speedup_is_monotone(
        tau_ref in 1.0f64..500.0,
        tau_da in 1.0f64..500.0,
        alpha in 0.01f64..1.0,
        cost in 0.0f64..1.0,
        bump in 1.01f64..3.0,
    ) {
        let base = speedup_factor(tau_ref, tau_da, alpha, cost).unwrap();
        prop_assert!(speedup_factor(tau_ref * bump, tau_da, alpha, cost).unwrap() > base);
        prop_assert!(speedup_factor(tau_ref, tau_da, alpha * bump, cost).unwrap() < base);
        prop_assert!(speedup_factor(tau_ref, tau_da, alpha, cost * bump + 0.01).unwrap() < base);
    }

    #[test]
    fn random_walk_proposals_are_symmetric(
        x in prop::collection::vec(-2.0f64..2.0, 3),
        seed in any::<u64>(),
        scale in 0.1f64..3.0,
    ) {
        let cov = Matrix::from_rows(&[&[1.0, 0.3, 0.0], &[0.3, 2.0, -0.4], &[0.0, -0.4, 0.5]]).unwrap();
        let chol = Cholesky::new(&cov.scaled(scale * scale)).unwrap();
        let mut rng = chain_stream(seed, 0);
        let y = propose_rw(&x, &cov, scale, &mut rng).unwrap();
        let fwd = gaussian_density(&y, &x, &chol);
        let back = gaussian_density(&x, &y, &chol);
        prop_assert!((fwd - back).abs() <= 1e-14 * fwd.max(1e-300));

        // same for a late-phase GCAM block covariance
        let mut st = ProposalAdaptState::gcam(GroupPartition::contiguous(&[2, 1]).unwrap(), AdaptConfig::default()).unwrap();
        let mut r2 = ChaCha20Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let z: Vec<f64> = (0..3).map(|_| r2.sample(StandardNormal)).collect();
            st.update_running_cov(&z).unwrap();
        }
        let c = st.gcam_block_covariance(0).unwrap().unwrap();
        let ch = Cholesky::new(&c).unwrap();
        let y2 = st.propose_block(&x, 0, &mut rng).unwrap();
        prop_assert_eq!(y2[2], x[2]);
        let f2 = gaussian_density(&y2[..2], &x[..2], &ch);
        let b2 = gaussian_density(&x[..2], &y2[..2], &ch);
        prop_assert!((f2 - b2).abs() <= 1e-14 * f2.max(1e-300));
    }

    #[test]
    fn da_kernel_is_stationary_for_any_surrogate(table in prop::collection::vec(0.1f64..10.0, 7)) {
        let toy = discrete_toy();
        let q = toy.proposal.clone();
        let pi_star: Vec<f64> = toy.target.iter().zip(&table).map(|(p, t)| p * t).collect();
        let rep = check_stationarity(&enumerate_da_kernel(&toy.target, &pi_star, &q).unwrap());
        prop_assert!(rep.stationarity < 1e-12);
        prop_assert!(rep.detailed_balance < 1e-12);
    }

    #[test]
    fn da_kernel_is_stationary_for_state_dependent_surrogates(
        table in prop::collection::vec(0.1f64..10.0, 49),
    ) {
        let toy = discrete_toy();
        let n = toy.target.len();
        let q = toy.proposal.clone();
        let k = enumerate_da_kernel_with(&toy.target, |x, y| toy.target[y] * table[x * n + y], &q).unwrap();
        let rep = check_stationarity(&k);
        prop_assert!(rep.stationarity < 1e-12);
    }
}
