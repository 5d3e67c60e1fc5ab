use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Value and exact reverse-mode gradient of `loss` over a flat parameter
/// vector. `loss` receives the parameters as an `n × 1` tape variable.
pub fn grad_params<T, F>(params: &[T], loss: F) -> Result<(T, Vec<T>)>
where
    T: Scalar,
    F: FnOnce(&mut Tape<T>, Var) -> Var,
{
    let mut tape = Tape::new();
    let p = tape.param(Array2::from_shape_vec((params.len(), 1), params.to_vec()).expect("column"));
    let out = loss(&mut tape, p);
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    let g = tape.backward(out).get(p);
    Ok((value, g.iter().copied().collect()))
}
