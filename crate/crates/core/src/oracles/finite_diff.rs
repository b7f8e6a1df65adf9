use crate::error::{Error, Result};
use crate::network::{Network, Params};
use crate::oracles::GradientSet;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central differences `(L(θ+h) − L(θ−h)) / 2h` for every scalar of every
/// tracked group.
pub fn finite_diff_gradient(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    step: f64,
) -> Result<GradientSet> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Argument(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    net.check_episode(inputs, targets)?;
    let mut work = params.clone();
    let mut set = GradientSet::zeros_for(net, net.tracked());
    for &g in net.tracked() {
        let id = net.group(g).id.clone();
        let n = params.at(g).len();
        let mut grad = vec![0.0; n];
        for (k, slot) in grad.iter_mut().enumerate() {
            let orig = params.at(g).as_slice()[k];
            work.at_mut(g).as_mut_slice()[k] = orig + step;
            let plus = net.loss(&work, inputs, targets)?;
            work.at_mut(g).as_mut_slice()[k] = orig - step;
            let minus = net.loss(&work, inputs, targets)?;
            work.at_mut(g).as_mut_slice()[k] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        set.get_mut(&id).unwrap().as_mut_slice().copy_from_slice(&grad);
    }
    Ok(set)
}
