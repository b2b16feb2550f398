//! Central-difference validation of backward passes.

use crate::error::TensorError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Maximum relative error between the tape gradient of `op` at `x` and a
/// central finite difference with step `h`.
///
/// The per-coordinate error is
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
/// `op` must return a single-element tensor.
pub fn grad_check<F, E>(op: F, x: &Tensor, h: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(op, x, h, &coords)
}

/// [`grad_check`] restricted to the listed flat coordinates of `x`.
pub fn grad_check_coords<F, E>(op: F, x: &Tensor, h: f64, coords: &[usize]) -> Result<f64, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            detail: format!("step {h} outside [1e-7, 1e-3]"),
        }
        .into());
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = op(&mut tape, xv)?;
    let analytic = tape
        .backward(out)?
        .take(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let eval = |point: Tensor| -> Result<f64, E> {
        let mut tape = Tape::new();
        let v = tape.param(point);
        let out = op(&mut tape, v)?;
        let value = tape.value(out);
        if value.numel() != 1 {
            return Err(TensorError::NonScalarOutput(value.shape().to_vec()).into());
        }
        Ok(value.data()[0])
    };

    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
