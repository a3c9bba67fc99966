use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::nn::tape::{softmax_xent, Tape};

/// Mean squared error over the nodes selected by `mask` (all when `None`).
/// Rows of `pred` are grouped into samples of `n` nodes.
pub fn loss_mse(
    pred: &DMatrix<f64>,
    target: &DMatrix<f64>,
    n: usize,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.input(pred.clone());
    let l = tape.mse(p, target.clone(), n, mask)?;
    Ok(tape.value(l)[(0, 0)])
}

/// `-log softmax(logits)[label]`.
pub fn loss_cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    Ok(softmax_xent(logits, label).0)
}
