use crate::error::{Error, Result};
use crate::tensor::SeqTensor;

/// Sum over channels of the per-channel MSE; each channel's mean runs over
/// all `K · nodes` elements. Returns the total and the per-channel terms.
pub fn composite_loss(pred: &SeqTensor, target: &SeqTensor) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != target.shape() || pred.shape().len() != 3 {
        return Err(Error::dims("composite_loss", pred.shape(), target.shape()));
    }
    let ch = pred.shape()[2];
    let per = pred.len() / ch;
    let mut terms = vec![0.0; ch];
    for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        terms[i % ch] += (p - t) * (p - t);
    }
    terms.iter_mut().for_each(|s| *s /= per as f64);
    Ok((terms.iter().sum(), terms))
}

/// Gradient of [`composite_loss`] with respect to `pred`.
pub fn composite_loss_grad(pred: &SeqTensor, target: &SeqTensor) -> Result<SeqTensor> {
    if pred.shape() != target.shape() || pred.shape().len() != 3 {
        return Err(Error::dims("composite_loss_grad", pred.shape(), target.shape()));
    }
    let per = (pred.len() / pred.shape()[2]) as f64;
    let mut g = pred.sub(target)?;
    g.data_mut().iter_mut().for_each(|v| *v *= 2.0 / per);
    Ok(g)
}
