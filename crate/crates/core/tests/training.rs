use deep_eprop::eprop::TraceMode;
use deep_eprop::linalg::ActivationKind::Tanh;
use deep_eprop::network::{init_params, Network, NetworkSpec};
use deep_eprop::trainer::{
    trailing_mean_loss, train, Algorithm, TaskKind, TaskParams, TaskStream, TrainConfig, UpdateTiming,
};

fn xor_net() -> Network {
    Network::from_chain(&NetworkSpec::chain(2, &[(8, Tanh), (8, Tanh)], 1))
        .unwrap()
        .with_all_tracked()
        .with_trace_mode(TraceMode::DiagHomeDenseAbove)
        .unwrap()
}

fn run(
    alg: Algorithm,
    timing: UpdateTiming,
    episodes: usize,
    seed: u64,
) -> deep_eprop::trainer::TrainOutcome {
    let net = xor_net();
    let stream = TaskStream::new(TaskKind::TemporalXor, TaskParams::default(), seed);
    let mut cfg = TrainConfig::new(alg, 0.05, episodes);
    cfg.trace_mode = TraceMode::DiagHomeDenseAbove;
    cfg.update_timing = timing;
    cfg.seed = seed;
    train(&net, init_params(&net, seed), &cfg, |e| stream.instance(e)).unwrap()
}

#[test]
fn online_updates_reduce_xor_loss() {
    for alg in [Algorithm::DeepEprop, Algorithm::DeepRtrl] {
        let out = run(alg, UpdateTiming::Online, 1500, 2);
        assert!(out.metrics.iter().all(|r| r.loss.is_finite()));
        let means = trailing_mean_loss(&out.metrics, 100);
        let (early, late) = (means[99], means[means.len() - 1]);
        assert!(late < 0.5 * early, "{alg}: {early} -> {late}");
    }
}

#[test]
fn online_equals_episode_end_when_only_the_final_step_is_scored() {
    let a = run(Algorithm::DeepEprop, UpdateTiming::Online, 50, 4);
    let b = run(Algorithm::DeepEprop, UpdateTiming::EpisodeEnd, 50, 4);
    assert_eq!(a.params, b.params);
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let a = run(Algorithm::DeepEprop, UpdateTiming::EpisodeEnd, 200, 9);
    let b = run(Algorithm::DeepEprop, UpdateTiming::EpisodeEnd, 200, 9);
    let c = run(Algorithm::DeepEprop, UpdateTiming::EpisodeEnd, 200, 10);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
}

#[test]
fn deep_rtrl_and_bptt_train_identically() {
    let a = run(Algorithm::DeepRtrl, UpdateTiming::EpisodeEnd, 100, 5);
    let b = run(Algorithm::Bptt, UpdateTiming::EpisodeEnd, 100, 5);
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert!(
            (x.loss - y.loss).abs() <= 1e-9 * y.loss.max(1e-6),
            "episode {}",
            x.episode
        );
    }
}
