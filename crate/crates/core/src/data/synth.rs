use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::SeqTensor;

/// Periods (in time steps) of the shared sinusoidal components.
pub const PERIODS: [f64; 4] = [24.0, 12.0, 8.0, 17.5];
/// AR(1) coefficient of the additive noise process.
pub const AR_COEFFICIENT: f64 = 0.8;

/// Multi-node, multi-channel sensor-network analog.
///
/// With per-channel amplitudes `a[f][m]`, offsets `o[f]`, scales `s[f]` and
/// per-node phase draws `δ[n][m] ∈ [−π, π)` (all drawn from `seed`), and
/// coupling `κ`:
///
/// ```text
/// u[n][f](t) = Σ_m a[f][m] · sin(2π t / P_m + (1 − κ) δ[n][m] + ψ[f][m])
/// x[n][f](t) = o[f] + s[f] · (u[n][f](t) + κ/2 · u[n][(f+1) mod F](t) + e[n][f](t))
/// e(t)       = ρ e(t−1) + σ ξ_t,   e(−1) = 0,   ξ ~ N(0, 1)
/// ```
///
/// `κ` aligns node phases (raising cross-node correlation) and mixes
/// neighbouring channels; `σ` is the noise level and `ρ` is [`AR_COEFFICIENT`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultinodeConfig {
    pub nodes: usize,
    pub channels: usize,
    pub length: usize,
    pub coupling: f64,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct MultinodeDraws {
    amp: Vec<Vec<f64>>,
    chan_phase: Vec<Vec<f64>>,
    node_phase: Vec<Vec<f64>>,
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl MultinodeConfig {
    fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.channels == 0 || self.length == 0 {
            return Err(Error::config("nodes, channels and length must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::config(format!(
                "coupling must lie in [0, 1], got {}",
                self.coupling
            )));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::config(format!("noise must be non-negative, got {}", self.noise)));
        }
        Ok(())
    }

    fn draws(&self, rng: &mut RngState) -> MultinodeDraws {
        let m = PERIODS.len();
        let mut grid = |rows: usize, lo: f64, hi: f64| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..m).map(|_| lo + (hi - lo) * rng.uniform()).collect())
                .collect()
        };
        let amp = grid(self.channels, 0.2, 1.0);
        let chan_phase = grid(self.channels, -PI, PI);
        let node_phase = grid(self.nodes, -PI, PI);
        let offset = (0..self.channels).map(|_| -5.0 + 10.0 * rng.uniform()).collect();
        let scale = (0..self.channels).map(|_| 0.5 + 2.5 * rng.uniform()).collect();
        MultinodeDraws {
            amp,
            chan_phase,
            node_phase,
            offset,
            scale,
        }
    }
}

impl MultinodeDraws {
    fn clean(&self, n: usize, f: usize, t: usize, coupling: f64) -> f64 {
        PERIODS
            .iter()
            .enumerate()
            .map(|(m, p)| {
                let phase = (1.0 - coupling) * self.node_phase[n][m] + self.chan_phase[f][m];
                self.amp[f][m] * (2.0 * PI * t as f64 / p + phase).sin()
            })
            .sum()
    }
}

/// `[length, nodes, channels]` series; a pure function of the config.
pub fn gen_multinode_series(cfg: &MultinodeConfig) -> Result<SeqTensor> {
    cfg.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let d = cfg.draws(&mut rng);
    let (nn, ff) = (cfg.nodes, cfg.channels);
    let mut noise = vec![0.0; nn * ff];
    let mut data = Vec::with_capacity(cfg.length * nn * ff);
    for t in 0..cfg.length {
        for n in 0..nn {
            for f in 0..ff {
                let e = &mut noise[n * ff + f];
                if cfg.noise > 0.0 {
                    *e = AR_COEFFICIENT * *e + cfg.noise * rng.normal();
                }
                let u = d.clean(n, f, t, cfg.coupling);
                let mix = 0.5 * cfg.coupling * d.clean(n, (f + 1) % ff, t, cfg.coupling);
                data.push(d.offset[f] + d.scale[f] * (u + mix + *e));
            }
        }
    }
    SeqTensor::new(&[cfg.length, nn, ff], data)
}

/// Moving-sprites analog of bouncing-digit videos.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteConfig {
    pub height: usize,
    pub width: usize,
    pub sprites: usize,
    pub sprite_size: usize,
    /// Per-axis speed magnitudes are drawn uniformly from this inclusive range.
    pub speed_min: usize,
    pub speed_max: usize,
    pub length: usize,
    pub seed: u64,
}

impl SpriteConfig {
    fn validate(&self, size: usize) -> Result<()> {
        if size == 0 || size > self.height || size > self.width {
            return Err(Error::config(format!(
                "sprite of size {size} does not fit a {}x{} grid",
                self.height, self.width
            )));
        }
        if self.speed_min > self.speed_max {
            return Err(Error::config("speed_min must not exceed speed_max"));
        }
        let room = (self.height - size).min(self.width - size);
        if self.speed_max > room.max(1) && self.speed_max > 0 {
            return Err(Error::config(format!(
                "speed_max {} exceeds free room {room}",
                self.speed_max
            )));
        }
        if self.length == 0 {
            return Err(Error::config("sequence length must be at least 1"));
        }
        Ok(())
    }
}

/// Move one coordinate by `vel` inside `[0, limit]`, reflecting elastically
/// off either wall. Returns the new position and velocity.
pub fn advance_axis(pos: i64, vel: i64, limit: i64) -> (i64, i64) {
    let mut p = pos + vel;
    let mut v = vel;
    if p < 0 {
        p = -p;
        v = -v;
    } else if p > limit {
        p = 2 * limit - p;
        v = -v;
    }
    (p.clamp(0, limit), v)
}

/// `[length, H·W, 1]` frames of square sprites moving at constant velocity,
/// composited by per-pixel max. `patterns` (e.g. from an IDX file) replace the
/// default random textures; each must be `[size, size]` with values in [0, 1].
pub fn gen_moving_sprites(cfg: &SpriteConfig, patterns: Option<&[SeqTensor]>) -> Result<SeqTensor> {
    let mut rng = RngState::new(cfg.seed);
    let size = match patterns {
        Some([first, ..]) => first.shape()[0],
        Some([]) => return Err(Error::config("empty sprite bank")),
        None => cfg.sprite_size,
    };
    cfg.validate(size)?;
    let (h, w) = (cfg.height, cfg.width);
    let lim_r = (h - size) as i64;
    let lim_c = (w - size) as i64;

    struct Mover {
        r: i64,
        c: i64,
        vr: i64,
        vc: i64,
        tex: Vec<f64>,
    }
    let mut movers = Vec::with_capacity(cfg.sprites);
    for _ in 0..cfg.sprites {
        let tex = match patterns {
            Some(bank) => {
                let p = &bank[rng.below(bank.len())];
                if p.len() != size * size {
                    return Err(Error::config("sprite bank images must share one square size"));
                }
                p.data().to_vec()
            }
            None => (0..size * size).map(|_| 0.5 + 0.5 * rng.uniform()).collect(),
        };
        let r = rng.below(lim_r as usize + 1) as i64;
        let c = rng.below(lim_c as usize + 1) as i64;
        let mut speed = || -> i64 {
            let mag = (cfg.speed_min + rng.below(cfg.speed_max - cfg.speed_min + 1)) as i64;
            if rng.bernoulli(0.5) {
                mag
            } else {
                -mag
            }
        };
        let (vr, vc) = (speed(), speed());
        movers.push(Mover { r, c, vr, vc, tex });
    }

    let mut data = vec![0.0f64; cfg.length * h * w];
    for t in 0..cfg.length {
        let frame = &mut data[t * h * w..(t + 1) * h * w];
        for m in &movers {
            for i in 0..size {
                for j in 0..size {
                    let px = &mut frame[(m.r as usize + i) * w + m.c as usize + j];
                    *px = px.max(m.tex[i * size + j]);
                }
            }
        }
        for m in &mut movers {
            (m.r, m.vr) = advance_axis(m.r, m.vr, lim_r);
            (m.c, m.vc) = advance_axis(m.c, m.vc, lim_c);
        }
    }
    SeqTensor::new(&[cfg.length, h * w, 1], data)
}

/// `count` independent sprite sequences; sequence `k` uses seed `seed ^ (k + 1)`-derived streams.
pub fn sprite_sequences(cfg: &SpriteConfig, count: usize, patterns: Option<&[SeqTensor]>) -> Result<Vec<SeqTensor>> {
    let root = RngState::new(cfg.seed);
    (0..count)
        .map(|k| {
            let c = SpriteConfig {
                seed: root.split(k as u64 + 1).seed(),
                ..cfg.clone()
            };
            gen_moving_sprites(&c, patterns)
        })
        .collect()
}
