//! Gradient identities that hold for every engine, checked against the
//! BPTT and path-enumeration oracles.

use deep_eprop::linalg::ActivationKind::{Linear, Sigmoid, Tanh};
use deep_eprop::linalg::OpCounter;
use deep_eprop::network::{LossTimesteps, Network, NetworkSpec, ParamGroupId, ParamKind, Params};
use deep_eprop::oracles::{bptt_gradient, enumerate_gradient_paths, relative_l2, GradientSet};
use deep_eprop::trainer::{episode_gradient, sgd_step, Algorithm};
use deep_eprop::verify::{random_episode, random_params};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn net(loss: LossTimesteps) -> Network {
    Network::from_chain(&NetworkSpec::chain(2, &[(3, Tanh), (4, Sigmoid), (3, Linear)], 2))
        .unwrap()
        .with_all_tracked()
        .with_loss_timesteps(loss)
}

fn grad(alg: Algorithm, net: &Network, p: &Params, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> GradientSet {
    episode_gradient(alg, net.trace_mode, net, p, xs, ys, &mut OpCounter::new()).unwrap()
}

const DEEP: [Algorithm; 3] = [Algorithm::Bptt, Algorithm::DeepRtrl, Algorithm::DeepEprop];

#[test]
fn every_step_gradient_is_the_sum_of_final_only_prefix_gradients() {
    let every = net(LossTimesteps::EveryStep);
    let last = net(LossTimesteps::FinalOnly);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&every, &mut rng, 1.0).unwrap();
        let (xs, ys) = random_episode(&every, &mut rng, 6);
        for alg in DEEP {
            let whole = grad(alg, &every, &p, &xs, &ys);
            let mut sum = GradientSet::zeros_for(&last, last.tracked());
            for k in 1..=xs.len() {
                sum.add_assign(&grad(alg, &last, &p, &xs[..k], &ys[k - 1..k]))
                    .unwrap();
            }
            let err = relative_l2(&sum, &whole).unwrap();
            assert!(err <= 1e-12, "{alg} seed {seed}: {err:e}");
        }
    }
}

/// Scaling readout and targets by √c scales the loss by c, the readout
/// gradient by √c and every other gradient by c.
#[test]
fn gradients_scale_with_readout_and_targets() {
    let n = net(LossTimesteps::EveryStep);
    let c: f64 = 2.5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_params(&n, &mut rng, 1.0).unwrap();
    let (xs, ys) = random_episode(&n, &mut rng, 5);
    let mut q = p.clone();
    let readout = q.get_mut(&ParamGroupId::Readout).unwrap();
    for w in readout.as_mut_slice() {
        *w *= c.sqrt();
    }
    let ys_scaled: Vec<Vec<f64>> = ys
        .iter()
        .map(|y| y.iter().map(|v| v * c.sqrt()).collect())
        .collect();

    let l0 = n.loss(&p, &xs, &ys).unwrap();
    let l1 = n.loss(&q, &xs, &ys_scaled).unwrap();
    assert!((l1 - c * l0).abs() <= 1e-12 * l1.abs().max(1.0));

    for alg in DEEP {
        let g0 = grad(alg, &n, &p, &xs, &ys);
        let g1 = grad(alg, &n, &q, &xs, &ys_scaled);
        for (id, m0) in g0.iter() {
            let factor = if id.kind() == ParamKind::ReadoutWeights {
                c.sqrt()
            } else {
                c
            };
            let m1 = g1.get(id).unwrap();
            for (a, b) in m0.as_slice().iter().zip(m1.as_slice()) {
                assert!((a * factor - b).abs() <= 1e-12 * b.abs().max(1e-3), "{alg} {id}");
            }
        }
    }
}

type Episode = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn descend(
    mut p: Params,
    episodes: &[Episode],
    mut g: impl FnMut(&Params, &[Vec<f64>], &[Vec<f64>]) -> GradientSet,
) -> Vec<Params> {
    let mut history = Vec::new();
    for (xs, ys) in episodes {
        let d = g(&p, xs, ys);
        sgd_step(&mut p, &d, 0.1).unwrap();
        history.push(p.clone());
    }
    history
}

fn max_rel(a: &Params, b: &Params) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
        for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
            diff += (u - v) * (u - v);
            norm += v * v;
        }
    }
    diff.sqrt() / norm.sqrt()
}

#[test]
fn deep_rtrl_bptt_and_path_trajectories_coincide() {
    let n = Network::from_chain(&NetworkSpec::chain(1, &[(2, Tanh), (2, Tanh)], 1))
        .unwrap()
        .with_all_tracked();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p0 = random_params(&n, &mut rng, 1.0).unwrap();
    let episodes: Vec<_> = (0..10).map(|_| random_episode(&n, &mut rng, 3)).collect();

    let bptt = descend(p0.clone(), &episodes, |p, x, y| {
        bptt_gradient(&n, p, x, y, &mut OpCounter::new()).unwrap()
    });
    let rtrl = descend(p0.clone(), &episodes, |p, x, y| {
        grad(Algorithm::DeepRtrl, &n, p, x, y)
    });
    let paths = descend(p0, &episodes, |p, x, y| {
        enumerate_gradient_paths(&n, p, x, y, 1 << 20).unwrap().gradient
    });

    for (e, (a, b)) in rtrl.iter().zip(&bptt).enumerate() {
        assert!(max_rel(a, b) <= 1e-9, "episode {e}");
    }
    assert!(max_rel(&paths[9], &bptt[9]) <= 1e-8);
    assert!(max_rel(&rtrl[9], &paths[9]) <= 1e-8);
}
