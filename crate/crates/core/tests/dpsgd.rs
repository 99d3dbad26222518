use dpcandle::accountant::dpsgd_guarantee;
use dpcandle::dpsgd::{
    clip_gradient, dp_sgd_train, noisy_mean, poisson_sample, write_run_csv, DpSgdConfig,
};
use dpcandle::gaf::{encode_set, EncodedSet, Normalization};
use dpcandle::market::{build_dataset, GeneratorConfig};
use dpcandle::nn::{init_params, train_baseline, Architecture, TrainConfig};
use dpcandle::par::Exec;
use dpcandle::rng;
use proptest::prelude::*;

fn small_sets(per_class: usize, seed: u64) -> (EncodedSet, EncodedSet) {
    let d = build_dataset(per_class, 2, seed, &GeneratorConfig::default()).unwrap();
    (
        encode_set(&d.train, Normalization::Joint).unwrap(),
        encode_set(&d.test, Normalization::Joint).unwrap(),
    )
}

fn norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn clipping_bounds_the_norm(
        g in prop::collection::vec(-100f64..100.0, 1..64),
        c in 1e-3f64..50.0,
    ) {
        let out = clip_gradient(&g, c).unwrap();
        prop_assert!(norm(&out) <= c + 1e-9);
        if norm(&g) <= c {
            prop_assert_eq!(out, g);
        } else {
            // direction is preserved
            let k = out[0] / g[0];
            for (a, b) in out.iter().zip(&g) {
                prop_assert!((a - k * b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }
}

#[test]
fn non_finite_gradients_are_rejected() {
    assert!(clip_gradient(&[1.0, f64::NAN], 1.0).is_err());
    assert!(clip_gradient(&[f64::INFINITY], 1.0).is_err());
}

#[test]
fn poisson_sampling_rate() {
    let (n, l, draws) = (1000, 100, 10_000);
    let mut r = rng::seeded(3);
    let mut total = 0usize;
    let mut first = 0usize;
    for _ in 0..draws {
        let s = poisson_sample(n, l, &mut r);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        total += s.len();
        first += usize::from(s.first() == Some(&0));
    }
    let q = l as f64 / n as f64;
    let mean = total as f64 / draws as f64;
    let se = (n as f64 * q * (1.0 - q) / draws as f64).sqrt();
    assert!((mean - 100.0).abs() < 3.0 * se, "mean group size {mean}");
    let rate = first as f64 / draws as f64;
    let se1 = (q * (1.0 - q) / draws as f64).sqrt();
    assert!((rate - q).abs() < 3.0 * se1, "inclusion rate {rate}");
}

#[test]
fn full_rate_sampling_takes_everything() {
    let mut r = rng::seeded(0);
    assert_eq!(poisson_sample(7, 7, &mut r), (0..7).collect::<Vec<_>>());
}

#[test]
fn noise_std_matches_calibration() {
    for (sigma, clip, l) in [(1.0, 1.5, 50), (0.5, 1.0, 100), (2.0, 0.1, 10)] {
        let mut r = rng::seeded(9);
        let dims = 4;
        let draws = 100_000;
        let mut sums = vec![(0.0f64, 0.0f64); dims];
        for _ in 0..draws {
            let v = noisy_mean(&vec![0.0; dims], sigma, clip, l, &mut r);
            for (acc, x) in sums.iter_mut().zip(v) {
                acc.0 += x;
                acc.1 += x * x;
            }
        }
        let want = sigma * clip / l as f64;
        for (s, s2) in sums {
            let mean = s / draws as f64;
            let std = (s2 / draws as f64 - mean * mean).sqrt();
            assert!((std / want - 1.0).abs() < 0.02, "std {std} vs {want}");
        }
    }
}

#[test]
fn zero_steps_release_nothing() {
    let (train, test) = small_sets(3, 1);
    let cfg = DpSgdConfig {
        group_size: 8,
        steps: Some(0),
        seed: 4,
        ..DpSgdConfig::default()
    };
    let (params, rec) = dp_sgd_train(&train, Some(&test), &cfg, Exec::Sequential).unwrap();
    assert_eq!(rec.guarantee.epsilon, 0.0);
    assert!(rec.steps.is_empty());
    assert!(rec.final_accuracy.is_some());
    let init = init_params(Architecture::with_window(train.window()), 4);
    assert_eq!(params.flat(), init.flat());
}

#[test]
fn zero_noise_has_no_guarantee() {
    let (train, _) = small_sets(2, 1);
    let cfg = DpSgdConfig {
        group_size: 4,
        noise_multiplier: 0.0,
        steps: Some(3),
        ..DpSgdConfig::default()
    };
    let (_, rec) = dp_sgd_train(&train, None, &cfg, Exec::Sequential).unwrap();
    assert!(rec.guarantee.epsilon.is_infinite());
    assert!(!rec.guarantee.is_private());
}

#[test]
fn reported_epsilon_matches_the_accountant() {
    let (train, _) = small_sets(2, 2);
    let cfg = DpSgdConfig {
        group_size: 4,
        noise_multiplier: 1.1,
        steps: Some(6),
        ..DpSgdConfig::default()
    };
    let (_, rec) = dp_sgd_train(&train, None, &cfg, Exec::Sequential).unwrap();
    let q = 4.0 / train.len() as f64;
    assert_eq!(rec.sampling_rate, q);
    for s in &rec.steps {
        let want = dpsgd_guarantee(q, 1.1, s.step, 1e-5).unwrap().epsilon;
        assert!((s.epsilon_so_far - want).abs() <= 1e-9 * want);
    }
    assert!(rec.steps.windows(2).all(|w| w[0].epsilon_so_far <= w[1].epsilon_so_far));
}

#[test]
fn runs_are_deterministic_across_executors() {
    let (train, test) = small_sets(3, 5);
    let cfg = DpSgdConfig {
        group_size: 6,
        epochs: 2,
        seed: 8,
        ..DpSgdConfig::default()
    };
    let (pa, ra) = dp_sgd_train(&train, Some(&test), &cfg, Exec::Sequential).unwrap();
    let (pb, rb) = dp_sgd_train(&train, Some(&test), &cfg, Exec::Parallel).unwrap();
    assert_eq!(pa.flat(), pb.flat());
    assert_eq!(ra, rb);
    assert_eq!(ra.step_count, 2 * 4);
    assert_eq!(ra.steps.iter().filter(|s| s.test_accuracy.is_some()).count(), 2);
}

#[test]
fn degenerate_settings_match_full_batch_descent() {
    let (train, _) = small_sets(3, 6);
    let n = train.len();
    let dp = DpSgdConfig {
        group_size: n,
        noise_multiplier: 0.0,
        clip_bound: f64::INFINITY,
        learning_rate: 0.05,
        steps: Some(20),
        seed: 12,
        ..DpSgdConfig::default()
    };
    let base = TrainConfig {
        learning_rate: 0.05,
        momentum: 0.0,
        batch_size: n,
        epochs: 20,
        seed: 12,
    };
    let (p_dp, rec) = dp_sgd_train(&train, None, &dp, Exec::Sequential).unwrap();
    let (p_base, hist) = train_baseline(&train, &base, None, Exec::Sequential).unwrap();
    for (s, b) in rec.steps.iter().zip(&hist.step_losses) {
        assert!((s.loss.unwrap() - b).abs() <= 1e-9, "step {}", s.step);
    }
    for (a, b) in p_dp.flat().iter().zip(p_base.flat()) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let (train, _) = small_sets(1, 1);
    let ok = DpSgdConfig {
        group_size: 4,
        steps: Some(1),
        ..DpSgdConfig::default()
    };
    assert!(dp_sgd_train(&train, None, &ok, Exec::Sequential).is_ok());
    let bad = [
        DpSgdConfig {
            clip_bound: f64::INFINITY,
            ..ok.clone()
        },
        DpSgdConfig {
            group_size: train.len() + 1,
            ..ok.clone()
        },
        DpSgdConfig {
            noise_multiplier: -1.0,
            ..ok.clone()
        },
        DpSgdConfig {
            delta: 0.0,
            ..ok.clone()
        },
    ];
    for cfg in bad {
        assert!(dp_sgd_train(&train, None, &cfg, Exec::Sequential).is_err());
    }
}

#[test]
fn run_csv_has_one_row_per_step() {
    let (train, test) = small_sets(2, 3);
    let cfg = DpSgdConfig {
        group_size: 4,
        steps: Some(5),
        ..DpSgdConfig::default()
    };
    let (_, rec) = dp_sgd_train(&train, Some(&test), &cfg, Exec::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    write_run_csv(&path, &rec).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,loss,epoch,test_accuracy,epsilon_so_far"));
    assert_eq!(lines.count(), 5);
}
