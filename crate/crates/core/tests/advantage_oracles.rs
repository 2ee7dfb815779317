use std::time::Instant;

use agent_core::tuning::{action_gae, masked_nll, ppo_objective, GaeParams, TokenStream, ValueSeries};
use agent_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds a stream from per-action token counts, optionally with
/// environment tokens between actions.
fn stream_from_counts(counts: &[usize], rng: &mut ChaCha8Rng) -> TokenStream {
    let mut s = TokenStream::default();
    for (j, &c) in counts.iter().enumerate() {
        let env_tokens = rng.random_range(0..3);
        for _ in 0..env_tokens {
            s.token_to_action.push(j);
            s.loss_mask.push(false);
            s.action_last_token.push(false);
        }
        for i in 0..c {
            s.token_to_action.push(j);
            s.loss_mask.push(true);
            s.action_last_token.push(i + 1 == c);
        }
    }
    let n = s.token_to_action.len();
    s.token_ids = (0..n as u32).collect();
    s.logprobs = (0..n).map(|_| -rng.random_range(0.0..3.0)).collect();
    s
}

/// The advantage as a literal sum over token positions `n >= t` that end an
/// action, weighted by `(lambda gamma)^(sigma(n) - sigma(t))`.
fn double_sum(stream: &TokenStream, series: &ValueSeries, gamma: f64, lambda: f64) -> Vec<f64> {
    let k = series.values.len();
    let v = |j: usize| if j < k { series.values[j] } else { series.bootstrap() };
    (0..stream.len())
        .map(|t| {
            let mut total = 0.0;
            for n in t..stream.len() {
                if !stream.action_last_token[n] {
                    continue;
                }
                let j = stream.token_to_action[n];
                let power = (j - stream.token_to_action[t]) as i32;
                let delta = series.rewards[j] + gamma * v(j + 1) - v(j);
                total += (lambda * gamma).powi(power) * delta;
            }
            total
        })
        .collect()
}

/// Textbook action-level GAE: forward sums of discounted TD errors.
fn action_level(series: &ValueSeries, gamma: f64, lambda: f64) -> Vec<f64> {
    let k = series.values.len();
    let v = |j: usize| if j < k { series.values[j] } else { series.bootstrap() };
    (0..k)
        .map(|j| {
            (j..k)
                .map(|l| (gamma * lambda).powi((l - j) as i32) * (series.rewards[l] + gamma * v(l + 1) - v(l)))
                .sum()
        })
        .collect()
}

#[test]
fn randomized_instances_match_both_oracles() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        let k = rng.random_range(1..=6);
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..=4)).collect();
        let stream = stream_from_counts(&counts, &mut rng);
        let series = ValueSeries {
            values: (0..k).map(|_| rng.random_range(-2.0..=2.0)).collect(),
            rewards: (0..k).map(|_| rng.random_range(-2.0..=2.0)).collect(),
            final_value: rng.random_range(-2.0..=2.0),
            terminated: rng.random_bool(0.5),
        };
        let params = GaeParams {
            gamma: rng.random_range(0.5..1.0),
            lambda: rng.random_range(0.0..=1.0),
        };
        let got = action_gae(&stream, &series, &params).unwrap();
        let literal = double_sum(&stream, &series, params.gamma, params.lambda);
        let per_action = action_level(&series, params.gamma, params.lambda);
        for t in 0..stream.len() {
            assert!((got[t] - literal[t]).abs() < 1e-10, "trial {trial} token {t}");
            let broadcast = per_action[stream.token_to_action[t]];
            assert!((got[t] - broadcast).abs() < 1e-10, "trial {trial} token {t}");
        }
        for j in 0..k {
            let shared: Vec<f64> = (0..stream.len())
                .filter(|&t| stream.token_to_action[t] == j)
                .map(|t| got[t])
                .collect();
            assert!(shared.iter().all(|a| a.to_bits() == shared[0].to_bits()), "trial {trial} action {j}");
        }
    }
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

fn two_action_fixture() -> (TokenStream, ValueSeries) {
    let stream = TokenStream {
        token_ids: vec![10, 11, 12],
        logprobs: vec![-0.1, -0.2, -0.3],
        loss_mask: vec![true; 3],
        action_last_token: vec![false, true, true],
        token_to_action: vec![0, 0, 1],
    };
    let series = ValueSeries {
        values: vec![0.5, 0.6],
        rewards: vec![0.0, 1.0],
        final_value: 123.0,
        terminated: true,
    };
    (stream, series)
}

#[test]
fn worked_two_action_example() {
    let (stream, series) = two_action_fixture();
    let got = action_gae(&stream, &series, &GaeParams { gamma: 0.9, lambda: 0.95 }).unwrap();
    let literal = double_sum(&stream, &series, 0.9, 0.95);
    let first = 0.04 + 0.855 * 0.4;
    for (t, want) in [first, first, 0.4].into_iter().enumerate() {
        assert!((got[t] - want).abs() < 1e-12, "token {t}: {} vs {want}", got[t]);
        assert!((literal[t] - want).abs() < 1e-12);
    }
}

#[test]
fn lambda_zero_truncates_to_td_error() {
    let (stream, series) = two_action_fixture();
    let got = action_gae(&stream, &series, &GaeParams { gamma: 0.9, lambda: 0.0 }).unwrap();
    let deltas = series.td_errors(0.9).unwrap();
    for t in 0..3 {
        assert_eq!(got[t], deltas[stream.token_to_action[t]]);
    }
}

#[test]
fn truncated_episode_bootstraps_from_final_value() {
    let (stream, mut series) = two_action_fixture();
    series.terminated = false;
    series.final_value = 2.0;
    let got = action_gae(&stream, &series, &GaeParams { gamma: 0.9, lambda: 0.95 }).unwrap();
    assert!((got[2] - (1.0 + 0.9 * 2.0 - 0.6)).abs() < 1e-12);
}

#[test]
fn lambda_one_with_zero_values_is_discounted_reward_to_go() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stream = stream_from_counts(&[2, 1, 3], &mut rng);
    let series = ValueSeries {
        values: vec![0.0; 3],
        rewards: vec![1.0, -2.0, 0.5],
        final_value: 0.0,
        terminated: true,
    };
    let g = 0.99;
    let got = action_gae(&stream, &series, &GaeParams { gamma: g, lambda: 1.0 }).unwrap();
    let to_go = [1.0 - 2.0 * g + 0.5 * g * g, -2.0 + 0.5 * g, 0.5];
    for t in 0..stream.len() {
        assert!((got[t] - to_go[stream.token_to_action[t]]).abs() < 1e-12);
    }
}

#[test]
fn inconsistent_boundaries_are_invariant_errors() {
    let (mut stream, series) = two_action_fixture();
    stream.token_to_action = vec![0, 1, 1];
    let err = action_gae(&stream, &series, &GaeParams { gamma: 0.9, lambda: 0.95 }).unwrap_err();
    assert!(matches!(err, Error::Invariant(_)), "{err}");
    let (stream, mut series) = two_action_fixture();
    series.values.push(0.0);
    series.rewards.push(0.0);
    assert!(matches!(
        action_gae(&stream, &series, &GaeParams { gamma: 0.9, lambda: 0.95 }),
        Err(Error::Invariant(_))
    ));
}

fn loop_nll(logprobs: &[f64], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut m = 0.0;
    for i in 0..logprobs.len() {
        if mask[i] {
            sum -= logprobs[i];
            m += 1.0;
        }
    }
    sum / m
}

#[test]
fn masked_nll_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let k = rng.random_range(1..=5);
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..=6)).collect();
        let s = stream_from_counts(&counts, &mut rng);
        let got = masked_nll(&s).unwrap();
        assert!((got - loop_nll(&s.logprobs, &s.loss_mask)).abs() < 1e-12);
    }
    let fixture = TokenStream {
        token_ids: vec![1, 2, 3],
        logprobs: vec![-0.5, -1.0, -2.0],
        loss_mask: vec![false, true, true],
        action_last_token: vec![false, false, true],
        token_to_action: vec![0, 0, 0],
    };
    assert_eq!(masked_nll(&fixture).unwrap(), 1.5);
}

#[test]
fn all_masked_uniform_logprob() {
    let s = TokenStream {
        token_ids: vec![1, 2, 3, 4],
        logprobs: vec![-0.7; 4],
        loss_mask: vec![true; 4],
        action_last_token: vec![false, true, false, true],
        token_to_action: vec![0, 0, 1, 1],
    };
    assert!((masked_nll(&s).unwrap() - 0.7).abs() < 1e-15);
}

#[test]
fn ppo_matches_loop_oracle() {
    let (old, series) = two_action_fixture();
    let new = vec![-0.05, -0.6, -0.3];
    let adv = vec![1.0, 1.0, -0.5];
    let eps = 0.2;
    let got = ppo_objective(&old, &new, &adv, &series, 0.9, eps).unwrap();
    let mut total = 0.0;
    let mut clipped = 0.0;
    for t in 0..3 {
        let rho = f64::exp(new[t] - old.logprobs[t]);
        let unclipped = rho * adv[t];
        let clip = rho.max(1.0 - eps).min(1.0 + eps) * adv[t];
        total += if unclipped < clip { unclipped } else { clip };
        if rho > 1.0 + eps || rho < 1.0 - eps {
            clipped += 1.0;
        }
    }
    assert!((got.policy_loss + total / 3.0).abs() < 1e-12);
    assert!((got.clip_fraction - clipped / 3.0).abs() < 1e-12);
    assert!((got.value_loss - (0.04f64.powi(2) + 0.4f64.powi(2)) / 2.0).abs() < 1e-12);

    let same = ppo_objective(&old, &old.logprobs, &adv, &series, 0.9, eps).unwrap();
    assert!((same.policy_loss + (1.0 + 1.0 - 0.5) / 3.0).abs() < 1e-12);
    let zero = ppo_objective(&old, &new, &[0.0; 3], &series, 0.9, eps).unwrap();
    assert_eq!(zero.policy_loss, 0.0);
}

#[test]
fn ppo_names_non_finite_token() {
    let (old, series) = two_action_fixture();
    let err = ppo_objective(&old, &[-0.1, 1e6, -0.3], &[1.0; 3], &series, 0.9, 0.2).unwrap_err();
    assert!(err.to_string().contains("token 1"), "{err}");
}
