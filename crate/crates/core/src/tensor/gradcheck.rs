use rand::seq::index::sample;
use rand::Rng;

use crate::tensor::ParamSet;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Compares the gradients stored in `params` against central differences of
/// `loss` on up to `max_coords` randomly chosen scalars.
///
/// Returns the largest `|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`.
pub fn gradient_check<F, R>(params: &ParamSet, loss: F, max_coords: usize, rng: &mut R) -> f64
where
    F: Fn(&ParamSet) -> f64,
    R: Rng + ?Sized,
{
    check(params, loss, |_| (), max_coords, rng).max_rel_error
}

/// Outcome of [`gradient_check_piecewise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiecewiseCheck {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Sampled coordinates skipped because a probe crossed a kink.
    pub kinks: usize,
}

/// [`gradient_check`] for piecewise-smooth losses such as max pooling.
/// `regime` names the active piece (e.g. the pooling argmax); a coordinate
/// whose `±FD_STEP` probes land on another piece is skipped, because a
/// central difference across a kink estimates neither one-sided derivative.
pub fn gradient_check_piecewise<F, G, K, R>(
    params: &ParamSet,
    loss: F,
    regime: G,
    max_coords: usize,
    rng: &mut R,
) -> PiecewiseCheck
where
    F: Fn(&ParamSet) -> f64,
    G: Fn(&ParamSet) -> K,
    K: PartialEq,
    R: Rng + ?Sized,
{
    check(params, loss, regime, max_coords, rng)
}

fn check<F, G, K, R>(params: &ParamSet, loss: F, regime: G, max_coords: usize, rng: &mut R) -> PiecewiseCheck
where
    F: Fn(&ParamSet) -> f64,
    G: Fn(&ParamSet) -> K,
    K: PartialEq,
    R: Rng + ?Sized,
{
    let mut coords = Vec::new();
    for (pi, (_, p)) in params.iter().enumerate() {
        coords.extend((0..p.value.len()).map(|j| (pi, j)));
    }
    let picks = sample(rng, coords.len(), max_coords.min(coords.len()));

    let base = regime(params);
    let mut probe = params.clone();
    let mut out = PiecewiseCheck {
        max_rel_error: 0.0,
        checked: 0,
        kinks: 0,
    };
    for k in picks.iter() {
        let (pi, j) = coords[k];
        let analytic = params.iter().nth(pi).unwrap().1.grad.data()[j];
        let original = params.iter().nth(pi).unwrap().1.value.data()[j];

        let slot = |ps: &mut ParamSet, v: f64| {
            ps.entries_mut()[pi].1.value.data_mut()[j] = v;
        };
        slot(&mut probe, original + FD_STEP);
        let up = loss(&probe);
        let up_same = regime(&probe) == base;
        slot(&mut probe, original - FD_STEP);
        let down = loss(&probe);
        let down_same = regime(&probe) == base;
        slot(&mut probe, original);
        if !(up_same && down_same) {
            out.kinks += 1;
            continue;
        }

        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        out.max_rel_error = out.max_rel_error.max((analytic - numeric).abs() / denom);
        out.checked += 1;
    }
    out
}
