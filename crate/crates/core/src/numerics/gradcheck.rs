use crate::error::{NcdError, Result};
use crate::numerics::{Param, Rng};

/// Upper bound on probed coordinates before sampling kicks in.
pub const DEFAULT_MAX_COORDS: usize = 512;

/// Compares analytic gradients with central differences.
///
/// `loss_fn` evaluates the loss at the current parameter values and adds
/// its analytic gradient into each `Param::grad`. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|)` over the probed coordinates.
/// When the parameters hold more than `DEFAULT_MAX_COORDS` scalars a
/// deterministic random subset is probed.
pub fn check_gradients<F>(loss_fn: F, params: &mut [Param], step: f64) -> Result<f64>
where
    F: FnMut(&mut [Param]) -> Result<f64>,
{
    check_gradients_sampled(loss_fn, params, step, DEFAULT_MAX_COORDS, &mut Rng::new(0))
}

pub fn check_gradients_sampled<F>(
    mut loss_fn: F,
    params: &mut [Param],
    step: f64,
    max_coords: usize,
    rng: &mut Rng,
) -> Result<f64>
where
    F: FnMut(&mut [Param]) -> Result<f64>,
{
    if !(1e-6..=1e-4).contains(&step) {
        return Err(NcdError::Config(format!(
            "finite-difference step {step} outside [1e-6, 1e-4]"
        )));
    }
    params.iter_mut().for_each(Param::zero_grad);
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(NcdError::Numeric(format!("loss is {base}")));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, param)| (0..param.len()).map(move |i| (p, i)))
        .collect();
    if coords.len() > max_coords {
        rng.shuffle(&mut coords);
        coords.truncate(max_coords);
    }

    let mut eval = |params: &mut [Param]| -> Result<f64> {
        params.iter_mut().for_each(Param::zero_grad);
        let v = loss_fn(params)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NcdError::Numeric(format!("loss is {v}")))
        }
    };

    let mut worst = 0.0f64;
    for (p, i) in coords {
        let orig = params[p].value.data()[i];
        params[p].value.data_mut()[i] = orig + step;
        let plus = eval(params)?;
        params[p].value.data_mut()[i] = orig - step;
        let minus = eval(params)?;
        params[p].value.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[p][i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    params.iter_mut().for_each(Param::zero_grad);
    Ok(worst)
}
