mod common;

use common::*;
use streamsparse_core::{
    engine::lambda_floor, fit_batch, offline_iht, BatchData, GlmFamily, IhtConfig, StepRule,
    SummaryState,
};

fn stream(family: &GlmFamily, seed: u64, p: usize, n: usize, batches: usize) -> Vec<BatchData> {
    let mut r = rng(seed);
    let truth = sparse_truth(p, 3, 1.0);
    (1..=batches).map(|b| batch(&mut r, family, n, &truth, b)).collect()
}

/// Streams the batches through the engine and returns the final fit.
fn streaming_fit(family: &GlmFamily, data: &[BatchData], cfg: &IhtConfig) -> Vec<f64> {
    let mut state = SummaryState::new(data[0].p()).unwrap();
    let mut last = Vec::new();
    for b in data {
        let fit = fit_batch(&state, family, b, cfg, None).unwrap();
        state.absorb_batch(family, b.clone(), &fit.beta_hat).unwrap();
        last = fit.beta_hat;
    }
    last
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn single_batch_matches_offline_bit_for_bit() {
    for (k, family) in families().iter().enumerate() {
        for rule in [StepRule::Fixed, IhtConfig::default().step_rule] {
            let cfg = IhtConfig {
                step_rule: rule,
                ..IhtConfig::default()
            };
            let data = stream(family, 70 + k as u64, 15, 60, 1);
            let online = fit_batch(&SummaryState::new(15).unwrap(), family, &data[0], &cfg, None);
            let offline = offline_iht(family, &data, &cfg);
            // Debug output of f64 round-trips exactly, and also covers errors
            assert_eq!(format!("{online:?}"), format!("{offline:?}"), "{}", family.kind.name());
        }
    }
}

#[test]
fn overflowing_gradient_is_reported_as_divergence() {
    let family = GlmFamily::poisson();
    let data = stream(&family, 72, 15, 60, 1);
    let cfg = IhtConfig {
        step_rule: StepRule::Fixed,
        ..IhtConfig::default()
    };
    let err = offline_iht(&family, &data, &cfg).unwrap_err();
    assert!(matches!(err, streamsparse_core::Error::Divergence { .. }), "{err:?}");
}

#[test]
fn gaussian_stream_matches_offline() {
    let family = GlmFamily::gaussian(1.0);
    for seed in 0..5 {
        let data = stream(&family, 80 + seed, 20, 40, 6);
        let cfg = IhtConfig::default();
        let online = streaming_fit(&family, &data, &cfg);
        let offline = offline_iht(&family, &data, &cfg).unwrap().beta_hat;
        let gap = l2(&online, &offline);
        assert!(gap <= 1e-8, "seed {seed}: gap {gap:e}");
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn logistic_gap_to_offline_shrinks_with_batch_size() {
    let family = GlmFamily::logistic();
    let cfg = IhtConfig::default();
    let gap_at = |n: usize| {
        median(
            (0..10)
                .map(|seed| {
                    let data = stream(&family, 90 + seed, 20, n, 5);
                    let online = streaming_fit(&family, &data, &cfg);
                    let offline = offline_iht(&family, &data, &cfg).unwrap().beta_hat;
                    l2(&online, &offline)
                })
                .collect(),
        )
    };
    let small = gap_at(50);
    let large = gap_at(400);
    assert!(large < small, "gap at n=400 {large} not below gap at n=50 {small}");
}

#[test]
fn calibrated_rule_divides_floor_by_root_curvature() {
    let family = GlmFamily::gaussian(1.0);
    let p = 12;
    let data = stream(&family, 95, p, 50, 1);
    let cfg = IhtConfig {
        step_rule: StepRule::Calibrated {
            coords: p,
            power_iters: 2000,
        },
        ..IhtConfig::default()
    };
    let fit = offline_iht(&family, &data, &cfg).unwrap();
    let n = data[0].n() as f64;
    let xtx = to_nalgebra(data[0].design()).transpose() * to_nalgebra(data[0].design());
    let curvature = xtx.symmetric_eigenvalues().max() / n;
    let base = lambda_floor(&cfg, 1, p, data[0].n());
    assert!((fit.lambda_floor - base / curvature.sqrt()).abs() <= 1e-8 * base);
    assert!((fit.eta - cfg.eta_const / (curvature * n)).abs() <= 1e-8 * fit.eta);

    let fixed = IhtConfig {
        step_rule: StepRule::Fixed,
        ..cfg
    };
    let fit = offline_iht(&family, &data, &fixed).unwrap();
    assert_eq!(fit.lambda_floor, base);
    assert_eq!(fit.eta, fixed.eta_const / n);
}
