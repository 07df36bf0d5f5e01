use crate::error::{Error, Result};
use crate::model::{Seq2SeqParams, PARAM_NAMES};

use super::{TrainConfig, TrainState};

/// First and second moment buffers shaped like the parameters, plus the
/// number of updates applied so far (for bias correction).
#[derive(Debug, Clone)]
pub struct AdamMoments {
    pub m: Seq2SeqParams,
    pub v: Seq2SeqParams,
    pub steps: u64,
}

impl AdamMoments {
    pub fn new(params: &Seq2SeqParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            steps: 0,
        }
    }
}

/// One Adam update with bias correction. Increments `state.moments.steps`;
/// the global batch counter `state.iter` is owned by the caller.
pub fn adam_step(
    params: &mut Seq2SeqParams,
    grads: &Seq2SeqParams,
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in PARAM_NAMES.iter().zip(grads.tensors()) {
        if !g.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {name} at iteration {}",
                state.iter
            )));
        }
    }
    let mo = &mut state.moments;
    if mo.m.dims != params.dims || grads.dims != params.dims {
        return Err(Error::Internal("moment buffers do not mirror parameter shapes".into()));
    }
    mo.steps += 1;
    let t = mo.steps as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate;
    let eps = cfg.eps_adam;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(mo.m.tensors_mut())
        .zip(mo.v.tensors_mut())
    {
        for (((p, g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &Seq2SeqParams) -> f64 {
    grads.tensors().iter().map(|t| t.sum_squares()).sum::<f64>().sqrt()
}

/// Rescale so the global L2 norm is at most `clip_norm`. Returns the norm
/// before clipping.
pub fn clip_gradients(grads: &mut Seq2SeqParams, clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm {
        let s = clip_norm / norm;
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::rng::RngState;
    use crate::tensor::SeqTensor;
    use crate::training::Stage;
    use proptest::prelude::*;

    fn tiny() -> Seq2SeqParams {
        let dims = ModelDims {
            hidden: 1,
            nodes: 1,
            channels: 1,
            targets: vec![0],
        };
        Seq2SeqParams::zeros(dims)
    }

    fn only_bias(p: &mut Seq2SeqParams) -> &mut f64 {
        &mut p.projection.b.data_mut()[0]
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Seq2SeqParams::init(tiny().dims, 0.3, &mut RngState::new(1)).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = TrainState::new(&p, Stage::M2Solo, 0);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = tiny();
        let mut g = p.zeros_like();
        *only_bias(&mut g) = 1.0;
        let mut st = TrainState::new(&p, Stage::M2Solo, 0);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert!((*only_bias(&mut p) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn three_steps_on_a_quadratic() {
        // f(p) = (p - 3)², g = 2(p - 3); oracle is an independent scalar Adam
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let mut p = tiny();
        *only_bias(&mut p) = 0.5;
        let mut st = TrainState::new(&p, Stage::M2Solo, 0);
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let mut g = p.zeros_like();
            *only_bias(&mut g) = 2.0 * (*only_bias(&mut p) - 3.0);
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();

            let gx = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * gx;
            v = 0.999 * v + 0.001 * gx * gx;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((*only_bias(&mut p) - x).abs() < 1e-10);
        }
        assert_eq!(st.moments.steps, 3);
    }

    #[test]
    fn nan_gradient_names_tensor() {
        let mut p = tiny();
        let mut g = p.zeros_like();
        g.decoder.w_h.data_mut()[0] = f64::NAN;
        let mut st = TrainState::new(&p, Stage::M2Solo, 0);
        let msg = adam_step(&mut p, &g, &mut st, &TrainConfig::default())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("decoder.w_h"), "{msg}");
    }

    #[test]
    fn clipping() {
        let mut g = tiny();
        g.projection.w = SeqTensor::new(&[1, 1], vec![3.0]).unwrap();
        *only_bias(&mut g) = 4.0;
        let untouched = g.clone();
        clip_gradients(&mut g, 10.0);
        assert_eq!(g, untouched);
        let norm = clip_gradients(&mut g, 2.5);
        assert_eq!(norm, 5.0);
        assert_eq!(g.projection.w.data(), &[1.5]);
        assert_eq!(g.projection.b.data(), &[2.0]);
        let mut z = tiny();
        clip_gradients(&mut z, 1.0);
        assert_eq!(z, tiny());
    }

    proptest! {
        #[test]
        fn first_update_sign_is_scale_invariant(seed in any::<u64>(), scale in 1e-3f64..1e3) {
            let p0 = Seq2SeqParams::init(tiny().dims, 0.5, &mut RngState::new(seed)).unwrap();
            let g = Seq2SeqParams::init(tiny().dims, 1.0, &mut RngState::new(seed ^ 9)).unwrap();
            let mut gs = g.clone();
            for t in gs.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            let cfg = TrainConfig::default();
            let (mut a, mut b) = (p0.clone(), p0.clone());
            adam_step(&mut a, &g, &mut TrainState::new(&p0, Stage::M2Solo, 0), &cfg).unwrap();
            adam_step(&mut b, &gs, &mut TrainState::new(&p0, Stage::M2Solo, 0), &cfg).unwrap();
            for ((x, y), z) in a.tensors().iter().zip(b.tensors()).zip(p0.tensors()) {
                for ((u, w), o) in x.data().iter().zip(y.data()).zip(z.data()) {
                    prop_assert_eq!((u - o).signum(), (w - o).signum());
                }
            }
        }
    }
}
