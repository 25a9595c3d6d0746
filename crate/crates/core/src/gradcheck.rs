//! Central-finite-difference gradient checker.

use crate::error::{Error, Result};
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// Default perturbation step.
pub const DEFAULT_H: f64 = 1e-6;

/// Compare reverse-mode gradients against central finite differences.
///
/// `forward` must deterministically rebuild the same scalar-loss graph from
/// the given parameter values on every call (dropout in inference mode or
/// with a fixed mask). Returns the maximum over all parameter coordinates of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn grad_check<F>(forward: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grad_check step must be positive and finite, got {h}"
        )));
    }

    let mut tape = GradTape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::NonScalarLoss(tape.value(loss).shape().to_vec()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| match grads.get(*v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(p.shape()), // parameter unused by the loss
        })
        .collect();

    let eval = |work: &[Tensor]| -> Result<f64> {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = work.iter().map(|p| tape.param(p.clone())).collect();
        let loss = forward(&mut tape, &vars)?;
        Ok(tape.scalar_value(loss))
    };

    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let orig = p.data()[j];
            work[pi].data_mut()[j] = orig + h;
            let f_plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let f_minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / f64::max(1e-12, a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
