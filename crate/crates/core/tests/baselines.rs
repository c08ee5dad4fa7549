mod common;

use abr_vtrace::baselines::{
    bb_select, bola_select, harmonic_mean_throughput, mpc_plan_value, mpc_select, rb_select,
    BaselineConfig,
};
use abr_vtrace::qoe::{QoeConfig, QoeVariant};
use abr_vtrace::stream_env::{StreamState, VideoSpec, DEFAULT_BITRATES_KBPS, HISTORY_LEN};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn state_with(buffer: f64, history: &[f64]) -> StreamState {
    let mut throughput = [0.0; HISTORY_LEN];
    throughput[..history.len()].copy_from_slice(history);
    StreamState {
        last_level: 0,
        buffer,
        throughput_history: throughput,
        download_time_history: [0.0; HISTORY_LEN],
        next_chunk_sizes: VideoSpec::default().sizes_of_chunk(1),
        remaining_fraction: 0.5,
        chunk_index: 1,
    }
}

#[test]
fn bb_sweep_is_monotone_and_hits_fixtures() {
    let cfg = BaselineConfig::default();
    let mut prev = 0;
    for i in 0..=600 {
        let level = bb_select(&state_with(i as f64 * 0.1, &[]), &cfg);
        assert!(level >= prev, "buffer {}", i as f64 * 0.1);
        prev = level;
    }
    assert_eq!(bb_select(&state_with(4.9, &[]), &cfg), 0);
    assert_eq!(bb_select(&state_with(10.0, &[]), &cfg), 2);
    assert_eq!(bb_select(&state_with(15.0, &[]), &cfg), 5);
    assert_eq!(prev, 5);
}

#[test]
fn rb_uses_harmonic_mean_of_recent_samples() {
    let cfg = BaselineConfig::default();
    // 3 / (1/2 + 1/4 + 1/4) = 3 Mbps → 2850 kbps
    let s = state_with(0.0, &[2.0, 4.0, 4.0]);
    assert_eq!(harmonic_mean_throughput(&s, 5), Some(3.0));
    assert_eq!(rb_select(&s, &cfg, &DEFAULT_BITRATES_KBPS), 4);
    // only the newest five count: 5 / (5 × 1/1.0) = 1.0 Mbps → 750 kbps
    let s = state_with(0.0, &[1.0, 1.0, 1.0, 1.0, 1.0, 9.0, 9.0]);
    assert_eq!(harmonic_mean_throughput(&s, 5), Some(1.0));
    assert_eq!(rb_select(&s, &cfg, &DEFAULT_BITRATES_KBPS), 1);
    // 2 / (1/0.5 + 1/8) = 0.941... → 750 kbps
    let s = state_with(0.0, &[0.5, 8.0]);
    assert!((harmonic_mean_throughput(&s, 5).unwrap() - 2.0 / 2.125).abs() < 1e-15);
    assert_eq!(rb_select(&s, &cfg, &DEFAULT_BITRATES_KBPS), 1);
    // below the lowest rung and cold start both pick level 0
    assert_eq!(
        rb_select(&state_with(0.0, &[0.1]), &cfg, &DEFAULT_BITRATES_KBPS),
        0
    );
    assert_eq!(
        rb_select(&state_with(0.0, &[]), &cfg, &DEFAULT_BITRATES_KBPS),
        0
    );
}

#[test]
fn rb_matches_independent_harmonic_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = BaselineConfig::default();
    for _ in 0..500 {
        let s = random_state(&mut rng, 6);
        let expected = harmonic_mean(&s.throughput_history, cfg.rb_window);
        assert_eq!(
            harmonic_mean_throughput(&s, cfg.rb_window).is_some(),
            expected.is_some()
        );
        let level = match expected {
            Some(mbps) => DEFAULT_BITRATES_KBPS
                .iter()
                .rposition(|&b| b <= mbps * 1000.0)
                .unwrap_or(0),
            None => 0,
        };
        assert_eq!(rb_select(&s, &cfg, &DEFAULT_BITRATES_KBPS), level);
    }
}

#[test]
fn bola_boundary_conditions() {
    for (seed, capacity) in [(0, 60.0), (4, 30.0), (9, 120.0)] {
        let video =
            VideoSpec::generate(DEFAULT_BITRATES_KBPS.to_vec(), 4.0, 48, capacity, seed).unwrap();
        let cfg = BaselineConfig::default();
        assert_eq!(bola_select(&state_with(0.0, &[3.0]), &cfg, &video), 0);
        assert_eq!(bola_select(&state_with(capacity, &[3.0]), &cfg, &video), 5);
    }
}

#[test]
fn mpc_matches_exhaustive_enumerator() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let video = VideoSpec::default();
    let mut checked = 0;
    for i in 0..300 {
        let horizon = 1 + i % 3;
        let cfg = BaselineConfig {
            mpc_horizon: horizon,
            ..BaselineConfig::default()
        };
        let variant = QoeVariant::ALL[i % 3];
        let qoe = QoeConfig::new(variant, video.bitrate_levels()).unwrap();
        let state = random_state(&mut rng, 6);
        let errors: Vec<f64> = (0..rng.random_range(0..8))
            .map(|_| rng.random_range(0.0..0.6))
            .collect();
        let chosen = mpc_select(&state, &cfg, &video, &qoe, &errors);
        let Some(hm) = harmonic_mean(&state.throughput_history, cfg.rb_window) else {
            assert_eq!(chosen, 0);
            continue;
        };
        let worst = errors
            .iter()
            .rev()
            .take(cfg.mpc_error_window)
            .fold(0.0f64, |a, &b| a.max(b));
        let rate = hm / (1.0 + worst);
        let depth = horizon.min(video.num_chunks() - state.chunk_index);
        let values = mpc_first_level_values(
            &state,
            &video,
            &|l| qoe.quality(l),
            qoe.rebuffer_penalty(),
            rate,
            depth,
        );
        let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expected = values.iter().position(|&v| v == best).unwrap();
        let tol = 1e-9 * best.abs().max(1.0);
        assert!(
            chosen == expected || (values[chosen] - best).abs() <= tol,
            "state {i}: chose {chosen} ({}) but best is {expected} ({best})",
            values[chosen]
        );
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} warm states");
}

#[test]
fn mpc_plan_value_hand_example() {
    // constant 2 Mbps, uniform sizes: level 1 chunk = 3 Mb → 1.5 s download
    let video = VideoSpec::uniform(DEFAULT_BITRATES_KBPS.to_vec(), 4.0, 10, 60.0).unwrap();
    let qoe = QoeConfig::linear();
    let mut s = state_with(1.0, &[2.0]);
    s.last_level = 3;
    // chunk 1: 0.75 − 4.3 × 0.5 − |0.75 − 1.85|; buffer 0 + 4 = 4
    // chunk 2: 0.75 − 0 − 0
    let v = mpc_plan_value(&s, &[1, 1], 2.0, &video, &qoe);
    let expected = (0.75 - 4.3 * 0.5 - 1.1) + 0.75;
    assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
}
