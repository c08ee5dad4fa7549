use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use abr_vtrace::baselines::BaselineConfig;
use abr_vtrace::harness::{
    evaluate, train, train_observed, Algorithm, ControllerSpec, EvalSettings, Summary, TrainConfig,
    TrainMode, TrainOutcome,
};
use abr_vtrace::neural::{Checkpoint, ParamSet};
use abr_vtrace::qoe::QoeConfig;
use abr_vtrace::stream_env::VideoSpec;
use abr_vtrace::trace_store::{generate_synthetic, LossModel, NetworkTrace, SyntheticTraceSpec};
use abr_vtrace::vtrace_agent::EntropySchedule;
use abr_vtrace::Error;

fn traces(n: usize, seed: u64) -> Vec<NetworkTrace> {
    generate_synthetic(&SyntheticTraceSpec {
        num_traces: n,
        duration: 250.0,
        seed,
        ..SyntheticTraceSpec::default()
    })
    .unwrap()
}

fn small_config(epochs: usize, actors: usize, sync: usize) -> TrainConfig {
    let mut all = traces(6, 40);
    let val = all.split_off(4);
    let mut cfg = TrainConfig::new(all, val);
    cfg.hidden = vec![16];
    cfg.hp.epochs = epochs;
    cfg.hp.actors = actors;
    cfg.hp.sync_interval = sync;
    cfg.val_interval = 10;
    cfg
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.flat().iter().map(|x| x.to_bits()).collect()
}

fn same_checkpoint(a: &Checkpoint, b: &Checkpoint) -> bool {
    bits(&a.actor) == bits(&b.actor) && bits(&a.critic) == bits(&b.critic)
}

/// Hash of the parameters after every update.
fn trajectory(cfg: &TrainConfig, mode: TrainMode) -> (Vec<u64>, TrainOutcome) {
    let mut hashes = Vec::new();
    let outcome = train_observed(cfg, mode, |epoch, theta, w| {
        let mut h = DefaultHasher::new();
        epoch.hash(&mut h);
        bits(theta).hash(&mut h);
        bits(w).hash(&mut h);
        hashes.push(h.finish());
    })
    .unwrap();
    (hashes, outcome)
}

#[test]
fn zero_epochs_keeps_the_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(0, 1, 1);
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    let out = train(&cfg, TrainMode::Alisa).unwrap();
    assert!(out.report.epochs.is_empty());
    assert!(out.report.validations.is_empty());
    assert_eq!(out.report.best_checkpoint, "init");
    assert_eq!(out.report.best_validation_qoe, None);
    assert!(same_checkpoint(&out.best, &out.last));
    // uniform initial policy, zero initial value
    assert!(out
        .last
        .actor
        .layers()
        .last()
        .unwrap()
        .weights
        .iter()
        .all(|&x| x == 0.0));
    assert!(out
        .last
        .critic
        .layers()
        .last()
        .unwrap()
        .biases
        .iter()
        .all(|&x| x == 0.0));
    let loaded = Checkpoint::load(dir.path().join("best.ckpt")).unwrap();
    assert!(same_checkpoint(&loaded, &out.best));
    assert!(dir.path().join("final.ckpt").exists());
}

#[test]
fn same_seed_gives_bitwise_identical_runs() {
    for mode in [TrainMode::Alisa, TrainMode::Vanilla] {
        let cfg = small_config(40, 1, 1);
        let a = train(&cfg, mode).unwrap();
        let b = train(&cfg, mode).unwrap();
        assert_eq!(a.report, b.report);
        assert!(same_checkpoint(&a.best, &b.best));
        assert!(same_checkpoint(&a.last, &b.last));
        let mut other = cfg.clone();
        other.seed = 1;
        let c = train(&other, mode).unwrap();
        assert!(!same_checkpoint(&a.last, &c.last));
    }
}

#[test]
fn multi_actor_rounds_are_deterministic() {
    let cfg = small_config(30, 3, 4);
    let a = train(&cfg, TrainMode::Alisa).unwrap();
    let b = train(&cfg, TrainMode::Alisa).unwrap();
    assert_eq!(a.report, b.report);
    assert!(same_checkpoint(&a.last, &b.last));
}

#[test]
fn policy_lag_respects_sync_interval() {
    for (actors, sync) in [(1, 1), (2, 4), (3, 4), (4, 2)] {
        let out = train(&small_config(40, actors, sync), TrainMode::Alisa).unwrap();
        let epochs = &out.report.epochs;
        assert_eq!(epochs.len(), 40);
        for (i, e) in epochs.iter().enumerate() {
            assert_eq!(e.epoch, i);
            let version = e.epoch as u64 - e.policy_lag;
            assert_eq!(version % sync as u64, 0);
            assert!(version <= (e.epoch / sync * sync) as u64);
            assert!(e.actor < actors);
        }
        let max_lag = epochs.iter().map(|e| e.policy_lag).max().unwrap();
        if actors == 1 && sync == 1 {
            assert_eq!(max_lag, 0);
        } else {
            assert!(max_lag > 0);
        }
    }
}

#[test]
fn forced_unit_weights_match_the_on_policy_trajectory() {
    let cfg = small_config(100, 1, 1);
    let (natural, a) = trajectory(&cfg, TrainMode::Alisa);
    let mut forced_cfg = cfg.clone();
    forced_cfg.force_unit_weights = true;
    let (forced, b) = trajectory(&forced_cfg, TrainMode::Alisa);
    assert_eq!(natural.len(), 100);
    assert_eq!(natural, forced);
    assert!(same_checkpoint(&a.last, &b.last));

    // off-policy data: forcing the weights must change the result
    let mut lagged = small_config(40, 2, 4);
    let (plain, _) = trajectory(&lagged, TrainMode::Alisa);
    lagged.force_unit_weights = true;
    let (forced, _) = trajectory(&lagged, TrainMode::Alisa);
    assert_ne!(plain, forced);
}

#[test]
fn threaded_actors_complete_the_requested_epochs() {
    let mut cfg = small_config(60, 3, 4);
    cfg.threaded = true;
    let out = train(&cfg, TrainMode::Alisa).unwrap();
    assert_eq!(out.report.epochs.len(), 60);
    assert_eq!(out.timings.epoch_seconds.len(), 60);
    assert!(out.last.actor.is_finite() && out.last.critic.is_finite());
    for e in &out.report.epochs {
        assert!(e.policy_lag <= e.epoch as u64);
    }
}

#[test]
fn reports_track_running_maxima_and_entropy_phases() {
    let mut cfg = small_config(50, 2, 4);
    cfg.hp.entropy = EntropySchedule::new(vec![2.0, 1.0]).unwrap();
    let out = train(&cfg, TrainMode::Vanilla).unwrap();
    let r = &out.report;
    for pair in r.epochs.windows(2) {
        assert!(pair[1].max_reward_so_far >= pair[0].max_reward_so_far);
    }
    for e in &r.epochs {
        assert!(e.max_reward_so_far >= e.episode_reward);
        assert_eq!(e.beta, if e.epoch < 25 { 2.0 } else { 1.0 });
    }
    let epochs: Vec<usize> = r.validations.iter().map(|v| v.epoch).collect();
    assert_eq!(epochs, [10, 20, 30, 40, 50]);
    for pair in r.validations.windows(2) {
        assert!(pair[1].best_so_far >= pair[0].best_so_far);
    }
    let best = r
        .validations
        .iter()
        .map(|v| v.mean_qoe)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.best_validation_qoe, Some(best));
    let first_best = r.validations.iter().find(|v| v.mean_qoe == best).unwrap();
    assert_eq!(r.best_checkpoint, format!("epoch-{}", first_best.epoch));
    assert_eq!(r.epochs_to_reach(best), Some(first_best.epoch));
    assert_eq!(r.epochs_to_reach(best + 1.0), None);

    // the best checkpoint reproduces its validation score
    let settings = EvalSettings {
        video: &cfg.video,
        qoe: &cfg.qoe,
        loss: cfg.loss,
        seed: cfg.eval_seed,
        threads: 1,
    };
    let again = evaluate(
        "best",
        &ControllerSpec::Learned(out.best.actor.clone()),
        &cfg.val_traces,
        &settings,
    )
    .unwrap();
    assert_eq!(again.summary.mean, best);
}

#[test]
fn evaluation_is_deterministic_and_thread_independent() {
    let video = VideoSpec::default();
    let qoe = QoeConfig::linear();
    let set = traces(7, 41);
    let spec = ControllerSpec::Baseline(Algorithm::Mpc, BaselineConfig::default());
    let run = |threads, seed| {
        let settings = EvalSettings {
            video: &video,
            qoe: &qoe,
            loss: LossModel::new(0.01).unwrap(),
            seed,
            threads,
        };
        evaluate("mpc", &spec, &set, &settings).unwrap()
    };
    let one = run(1, 5);
    assert_eq!(one.per_trace.len(), 7);
    assert_eq!(one, run(1, 5));
    assert_eq!(one, run(3, 5));
    assert_eq!(one, run(16, 5));
    let ids: Vec<&str> = one.per_trace.iter().map(|t| t.trace_id.as_str()).collect();
    let expected: Vec<&str> = set.iter().map(|t| t.id()).collect();
    assert_eq!(ids, expected);
    let totals = one.totals();
    assert_eq!(one.summary, Summary::of(&totals).unwrap());
    assert_eq!(one.summary.mean, totals.iter().sum::<f64>() / 7.0);
}

#[test]
fn summary_of_three_values() {
    let s = Summary::of(&[10.0, 20.0, 30.0]).unwrap();
    assert_eq!((s.count, s.mean, s.median), (3, 20.0, 20.0));
}

/// Greedy policy that always picks `level`.
fn constant_policy(level: usize) -> ParamSet {
    let mut p = ParamSet::zeros(&[25, 4, 6]).unwrap();
    p.layers_mut().last_mut().unwrap().biases[level] = 1.0;
    p
}

#[test]
fn loss_grid_never_raises_mean_qoe_of_fixed_level_policies() {
    let video = VideoSpec::default();
    let qoe = QoeConfig::linear();
    let set = traces(6, 42);
    for level in 0..6 {
        let spec = ControllerSpec::Learned(constant_policy(level));
        let mut prev = f64::INFINITY;
        for p in [0.0, 0.001, 0.005, 0.01, 0.02] {
            let settings = EvalSettings {
                video: &video,
                qoe: &qoe,
                loss: LossModel::new(p).unwrap(),
                seed: 0,
                threads: 2,
            };
            let result = evaluate("x", &spec, &set, &settings).unwrap();
            assert!(result
                .per_trace
                .iter()
                .all(|t| (t.breakdown.quality_sum - 48.0 * qoe.quality(level)).abs() < 1e-9));
            let mean = result.summary.mean;
            assert!(
                mean <= prev + 1e-9 * prev.abs().max(1.0),
                "level {level}, loss {p}: {mean} > {prev}"
            );
            prev = mean;
        }
    }
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let base = small_config(5, 1, 1);
    let mut overlap = base.clone();
    overlap.val_traces.push(overlap.train_traces[0].clone());
    assert!(matches!(
        train(&overlap, TrainMode::Alisa),
        Err(Error::InvalidArgument(_))
    ));
    let mut no_val = base.clone();
    no_val.val_traces.clear();
    assert!(train(&no_val, TrainMode::Alisa).is_err());
    let mut interval = base.clone();
    interval.val_interval = 0;
    assert!(train(&interval, TrainMode::Alisa).is_err());
    let mut actors = base.clone();
    actors.hp.actors = 0;
    assert!(train(&actors, TrainMode::Alisa).is_err());
}

#[test]
fn training_errors_carry_the_epoch() {
    let mut cfg = small_config(5, 1, 1);
    cfg.train_traces = vec![NetworkTrace::new("stub", vec![(0.0, 2.0), (1.0, 2.0)]).unwrap()];
    match train(&cfg, TrainMode::Alisa) {
        Err(Error::Training { epoch, source }) => {
            assert_eq!(epoch, 0);
            assert_eq!(source.kind(), "trace-too-short");
        }
        other => panic!("expected a training error, got {other:?}"),
    }

    let mut cfg = small_config(30, 1, 1);
    cfg.hp.actor_lr = 1e300;
    cfg.hp.critic_lr = 1e300;
    match train(&cfg, TrainMode::Vanilla) {
        Err(e @ Error::Training { .. }) => assert_eq!(e.kind(), "non-finite"),
        other => panic!("expected divergence, got {other:?}"),
    }
}
