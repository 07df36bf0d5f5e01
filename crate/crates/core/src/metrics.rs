//! Error measures: RMSE, MAE, per-frame MSE and per-frame SSIM.

use crate::error::{Error, Result};
use crate::tensor::SeqTensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range of normalized frames.
pub const SSIM_RANGE: f64 = 1.0;

fn check(pred: &SeqTensor, target: &SeqTensor, op: &'static str) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::dims(op, pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

pub fn mse(pred: &SeqTensor, target: &SeqTensor) -> Result<f64> {
    check(pred, target, "mse")?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / pred.len() as f64)
}

pub fn rmse(pred: &SeqTensor, target: &SeqTensor) -> Result<f64> {
    mse(pred, target).map(f64::sqrt)
}

pub fn mae(pred: &SeqTensor, target: &SeqTensor) -> Result<f64> {
    check(pred, target, "mae")?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// One MSE per time step (frame) of `[T, ...]` tensors.
pub fn mse_per_frame(pred: &SeqTensor, target: &SeqTensor) -> Result<Vec<f64>> {
    check(pred, target, "mse_per_frame")?;
    let fl = pred.frame_len();
    Ok(pred
        .data()
        .chunks(fl)
        .zip(target.data().chunks(fl))
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / fl as f64)
        .collect())
}

/// Per-channel and aggregate RMSE/MAE of `[K, nodes, channels]` forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    pub rmse_all: f64,
    pub mae_all: f64,
    /// Elements per channel: prediction steps × locations.
    pub n: usize,
}

impl MetricReport {
    /// Pools every `(pred, target)` pair; each must be `[K, nodes, channels]`.
    pub fn compute(pairs: &[(&SeqTensor, &SeqTensor)]) -> Result<Self> {
        let Some((p0, _)) = pairs.first() else {
            return Err(Error::EmptySequence);
        };
        let ch = *p0.shape().last().unwrap();
        let mut sq = vec![0.0; ch];
        let mut ab = vec![0.0; ch];
        let mut n = 0;
        for (p, t) in pairs {
            check(p, t, "MetricReport")?;
            if *p.shape().last().unwrap() != ch {
                return Err(Error::dims("MetricReport", p.shape(), p0.shape()));
            }
            for (i, (a, b)) in p.data().iter().zip(t.data()).enumerate() {
                let d = a - b;
                sq[i % ch] += d * d;
                ab[i % ch] += d.abs();
            }
            n += p.len() / ch;
        }
        let nf = n as f64;
        Ok(Self {
            rmse: sq.iter().map(|s| (s / nf).sqrt()).collect(),
            mae: ab.iter().map(|s| s / nf).collect(),
            rmse_all: (sq.iter().sum::<f64>() / (nf * ch as f64)).sqrt(),
            mae_all: ab.iter().sum::<f64>() / (nf * ch as f64),
            n,
        })
    }
}

/// Normalized 1-D Gaussian taps of length [`SSIM_WINDOW`].
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM of two `H×W` frames (row-major, any tensor shape of `H·W`
/// elements). An 11×11 Gaussian window (σ = 1.5) slides over every pixel
/// with reflected borders. Frames smaller than the window in either
/// dimension fall back to one global window with uniform weights.
pub fn ssim_per_frame(pred: &SeqTensor, target: &SeqTensor, grid: (usize, usize)) -> Result<f64> {
    let (h, w) = grid;
    if pred.len() != h * w || target.len() != h * w {
        return Err(Error::dims("ssim_per_frame", pred.shape(), &[h, w]));
    }
    let (x, y) = (pred.data(), target.data());
    if h == 0 || w == 0 {
        return Err(Error::EmptySequence);
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = (h * w) as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / n;
        let vy = y.iter().map(|b| (b - my) * (b - my)).sum::<f64>() / n;
        let cxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        return Ok(ssim_formula(mx, my, vx, vy, cxy));
    }
    let taps = gaussian_taps();
    let r = (SSIM_WINDOW / 2) as isize;
    let blur = |img: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                tmp[i * w + j] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * img[i * w + reflect(j as isize + k as isize - r, w)])
                    .sum();
            }
        }
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                out[i * w + j] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * tmp[reflect(i as isize + k as isize - r, h) * w + j])
                    .sum();
            }
        }
        out
    };
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = blur(x);
    let my = blur(y);
    let mxx = blur(&sq(x, x));
    let myy = blur(&sq(y, y));
    let mxy = blur(&sq(x, y));
    let total: f64 = (0..h * w)
        .map(|k| {
            let vx = mxx[k] - mx[k] * mx[k];
            let vy = myy[k] - my[k] * my[k];
            let cxy = mxy[k] - mx[k] * my[k];
            ssim_formula(mx[k], my[k], vx, vy, cxy)
        })
        .sum();
    Ok(total / (h * w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn t(v: &[f64]) -> SeqTensor {
        SeqTensor::from_vec(v.to_vec())
    }

    #[test]
    fn rmse_mae_fixtures() {
        let a = t(&[1.0, 2.0, 3.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(rmse(&t(&[3.0, 3.0]), &t(&[0.0, 0.0])).unwrap(), 3.0);
        assert_eq!(rmse(&t(&[3.0, 4.0]), &t(&[0.0, 0.0])).unwrap(), (25.0f64 / 2.0).sqrt());
        assert_eq!(mae(&t(&[-1.0, 3.0]), &t(&[0.0, 0.0])).unwrap(), 2.0);
        assert!(rmse(&a, &t(&[1.0])).is_err());
    }

    #[test]
    fn mae_never_exceeds_rmse() {
        let mut rng = RngState::new(1);
        for _ in 0..50 {
            let a = SeqTensor::randn(&[20], 1.0, &mut rng).unwrap();
            let b = SeqTensor::randn(&[20], 2.0, &mut rng).unwrap();
            assert!(mae(&a, &b).unwrap() <= rmse(&a, &b).unwrap() + 1e-15);
        }
    }

    #[test]
    fn per_frame_mse() {
        let a = SeqTensor::zeros(&[3, 4, 1]);
        assert_eq!(mse_per_frame(&a, &a).unwrap(), vec![0.0; 3]);
        let mut b = a.clone();
        b.data_mut()[4..8].fill(0.5);
        assert_eq!(mse_per_frame(&b, &a).unwrap(), vec![0.0, 0.25, 0.0]);
        let mut rng = RngState::new(2);
        let p = SeqTensor::randn(&[5, 6, 1], 1.0, &mut rng).unwrap();
        let q = SeqTensor::randn(&[5, 6, 1], 1.0, &mut rng).unwrap();
        let per = mse_per_frame(&p, &q).unwrap();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert!((mean - mse(&p, &q).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn report_pools_channels() {
        let p = SeqTensor::new(&[2, 1, 2], vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let z = SeqTensor::zeros(&[2, 1, 2]);
        let r = MetricReport::compute(&[(&p, &z)]).unwrap();
        assert_eq!(r.rmse, vec![1.0, 2.0]);
        assert_eq!(r.mae, vec![1.0, 2.0]);
        assert_eq!(r.n, 2);
        assert!((r.rmse_all - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = RngState::new(3);
        let x: Vec<f64> = (0..256).map(|_| rng.uniform()).collect();
        let f = t(&x);
        assert!((ssim_per_frame(&f, &f, (16, 16)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_closed_form() {
        let (a, b) = (0.3, 0.7);
        let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
        let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
        for grid in [(16, 16), (5, 7)] {
            let n = grid.0 * grid.1;
            let got = ssim_per_frame(&t(&vec![a; n]), &t(&vec![b; n]), grid).unwrap();
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }
}
