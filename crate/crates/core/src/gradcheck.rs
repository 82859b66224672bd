//! Central finite differences, the independent oracle for every gradient
//! produced by the graph engine.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// Component-wise central-difference gradient of `f` at `point`:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_difference_grad<F>(mut f: F, point: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let base = point.data().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    let mut probe = point.clone();
    for (i, &x) in base.iter().enumerate() {
        probe.data_mut()[i] = x + step;
        let up = eval(&mut f, &probe)?;
        probe.data_mut()[i] = x - step;
        let down = eval(&mut f, &probe)?;
        probe.data_mut()[i] = x;
        grad.push((up - down) / (2.0 * step));
    }
    Tensor::new(point.shape().to_vec(), grad)
}

fn eval<F: FnMut(&Tensor) -> Result<f64>>(f: &mut F, x: &Tensor) -> Result<f64> {
    let v = f(x)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("finite-difference probe".into()));
    }
    Ok(v)
}

/// `|a - b| / max(|a|, |b|, floor)`: relative error that degrades to an
/// absolute error of `floor` scale near zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
