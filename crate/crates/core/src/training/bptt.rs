use crate::error::{Error, Result};
use crate::model::{RolloutTrace, Seq2SeqParams};
use crate::nn::{linear_backward_acc, lstm_backward_acc};
use crate::tensor::SeqTensor;

/// Parameter gradients of a loss whose gradient on the rollout's predictions
/// is `grad_pred` (`[K, nodes, targets]`).
///
/// Gradients run backwards through the decoder steps, into earlier
/// predictions wherever a step consumed the model's own output, and then
/// through the encoder. Externally supplied decoder inputs (ground truth or
/// the frozen intermediate model) are constants and receive no gradient.
pub fn bptt(p: &Seq2SeqParams, trace: &RolloutTrace, grad_pred: &SeqTensor) -> Result<Seq2SeqParams> {
    let mut grads = p.zeros_like();
    bptt_acc(p, trace, grad_pred, &mut grads)?;
    Ok(grads)
}

pub(crate) fn bptt_acc(
    p: &Seq2SeqParams,
    trace: &RolloutTrace,
    grad_pred: &SeqTensor,
    grads: &mut Seq2SeqParams,
) -> Result<()> {
    let dims = &p.dims;
    let k = trace.decoder.len();
    let f_out = dims.output_size();
    let c = dims.hidden;
    if k == 0 || trace.encoder.is_empty() {
        return Err(Error::Internal("rollout trace has no cached steps".into()));
    }
    if trace.own_feedback.len() != k {
        return Err(Error::Internal(format!(
            "feedback flags ({}) do not match decoder steps ({k})",
            trace.own_feedback.len()
        )));
    }
    if grad_pred.len() != k * f_out {
        return Err(Error::dims(
            "bptt",
            grad_pred.shape(),
            &[k, dims.nodes, dims.targets.len()],
        ));
    }
    let nt = dims.targets.len();
    let mut gp = grad_pred.data().to_vec();
    let mut dh = vec![0.0; c];
    let mut dc = vec![0.0; c];
    let mut dx = vec![0.0; dims.input_size()];

    for s in (0..k).rev() {
        let cache = &trace.decoder[s];
        let mut dh_total = dh;
        linear_backward_acc(
            &gp[s * f_out..(s + 1) * f_out],
            &cache.h,
            &p.projection,
            &mut grads.projection,
            &mut dh_total,
        );
        let own = trace.own_feedback[s];
        let gx = if own {
            dx.fill(0.0);
            Some(dx.as_mut_slice())
        } else {
            None
        };
        let (dh_prev, dc_prev) = lstm_backward_acc(&dh_total, &dc, cache, &p.decoder, &mut grads.decoder, gx);
        if own {
            let prev = &mut gp[(s - 1) * f_out..s * f_out];
            for n in 0..dims.nodes {
                for (j, &ch) in dims.targets.iter().enumerate() {
                    prev[n * nt + j] += dx[n * dims.channels + ch];
                }
            }
        }
        dh = dh_prev;
        dc = dc_prev;
    }
    for cache in trace.encoder.iter().rev() {
        let (dh_prev, dc_prev) = lstm_backward_acc(&dh, &dc, cache, &p.encoder, &mut grads.encoder, None);
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rollout_traced, DecoderInput, ForecastRequest, ModelDims};
    use crate::rng::RngState;

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let dims = ModelDims {
            hidden: 4,
            nodes: 2,
            channels: 2,
            targets: vec![1],
        };
        let p = Seq2SeqParams::init(dims, 0.5, &mut RngState::new(1)).unwrap();
        let ctx = SeqTensor::randn(&[3, 2, 2], 1.0, &mut RngState::new(2)).unwrap();
        let req = ForecastRequest::new(ctx, 3).unwrap();
        let r = rollout_traced(&req, &p, |_, _| Ok(DecoderInput::Own)).unwrap();
        let g = bptt(&p, &r.trace, &SeqTensor::zeros(&[3, 2, 1])).unwrap();
        assert!(g.tensors().iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn missing_cache_is_internal_error() {
        let dims = ModelDims {
            hidden: 2,
            nodes: 1,
            channels: 1,
            targets: vec![0],
        };
        let p = Seq2SeqParams::zeros(dims);
        let trace = RolloutTrace {
            encoder: vec![],
            decoder: vec![],
            own_feedback: vec![],
        };
        assert!(matches!(
            bptt(&p, &trace, &SeqTensor::zeros(&[1, 1, 1])),
            Err(Error::Internal(_))
        ));
    }
}
