//! Central finite-difference verification of backward passes.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mode, Var};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Perturbation relative to `max(1, |value|)`. Small enough that ReLU kinks are
/// rarely crossed, large enough that round-off stays well below 1e-6.
pub const DEFAULT_STEP: f64 = 1e-5;
pub const MIN_COORDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

#[derive(Clone, Copy)]
enum Coord {
    Param(usize, usize),
    Input(usize, usize),
}

/// Compare the backward pass of `fragment` against central differences on a
/// seeded sample of at least `n_coords` parameter and input coordinates (all
/// of them when there are fewer). `fragment` must build a scalar loss.
pub fn grad_check<F>(store: &ParamStore, inputs: &[Tensor], mode: Mode, n_coords: usize, seed: u64, fragment: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let run = |s: &ParamStore, xs: &[Tensor]| -> Result<(f64, bool)> {
        let mut g = Graph::new(s, mode, Some(ChaCha8Rng::seed_from_u64(seed)));
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let loss = fragment(&mut g, &vars)?;
        Ok((g.value(loss).data()[0], g.is_stochastic()))
    };

    let mut g = Graph::new(store, mode, Some(ChaCha8Rng::seed_from_u64(seed)));
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = fragment(&mut g, &vars)?;
    if g.is_stochastic() {
        return Err(Error::NonDeterministicFragment("dropout is active; use eval mode or p = 0".into()));
    }
    let back = g.backward(loss)?;

    let mut coords = Vec::new();
    for (i, p) in store.params().iter().enumerate() {
        coords.extend((0..p.numel()).map(|j| Coord::Param(i, j)));
    }
    for (i, t) in inputs.iter().enumerate() {
        coords.extend((0..t.numel()).map(|j| Coord::Input(i, j)));
    }
    let chosen: Vec<usize> = if coords.len() <= n_coords {
        (0..coords.len()).collect()
    } else {
        let mut picked = index::sample(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37), coords.len(), n_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut work_store = store.clone();
    let mut work_inputs = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for &c in &chosen {
        let (analytic, base) = match coords[c] {
            Coord::Param(i, j) => (back.param_grad(ParamId(i)).data()[j], store.params()[i].data()[j]),
            Coord::Input(i, j) => (back.input_grad(vars[i]).map_or(0.0, |t| t.data()[j]), inputs[i].data()[j]),
        };
        let h = DEFAULT_STEP * base.abs().max(1.0);
        let mut eval_at = |value: f64| -> Result<f64> {
            match coords[c] {
                Coord::Param(i, j) => work_store.param_mut(ParamId(i)).data_mut()[j] = value,
                Coord::Input(i, j) => work_inputs[i].data_mut()[j] = value,
            }
            run(&work_store, &work_inputs).map(|(v, _)| v)
        };
        let plus = eval_at(base + h)?;
        let minus = eval_at(base - h)?;
        eval_at(base)?;
        worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * h)));
    }
    Ok(GradCheckReport { max_rel_error: worst, coords_checked: chosen.len() })
}
