//! Seq2Seq encoder-decoder with a per-step decoder-input hook.
//!
//! Each time step of a `[time, nodes, channels]` sequence is flattened
//! node-major into one LSTM input vector of length `nodes · channels`. The
//! decoder predicts only the target channels of every node; its next input
//! is the previous input frame with the target channels overwritten and the
//! remaining channels carried forward from the last observed context frame.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{linear_raw, lstm_forward_raw, LinearParams, LstmParams, LstmState, StepCache};
use crate::rng::RngState;
use crate::tensor::SeqTensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TPGFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub hidden: usize,
    pub nodes: usize,
    pub channels: usize,
    /// Indices of the predicted channels within `0..channels`.
    pub targets: Vec<usize>,
}

impl ModelDims {
    pub fn input_size(&self) -> usize {
        self.nodes * self.channels
    }

    pub fn output_size(&self) -> usize {
        self.nodes * self.targets.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.nodes == 0 || self.channels == 0 || self.targets.is_empty() {
            return Err(Error::config(format!("model dimensions must be positive: {self:?}")));
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= self.channels) {
            return Err(Error::config(format!(
                "target channel {t} out of range for {} channels",
                self.channels
            )));
        }
        let mut sorted = self.targets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.targets.len() {
            return Err(Error::config("target channels must be distinct"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqParams {
    pub dims: ModelDims,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    pub projection: LinearParams,
}

pub const PARAM_NAMES: [&str; 8] = [
    "encoder.w_x",
    "encoder.w_h",
    "encoder.b",
    "decoder.w_x",
    "decoder.w_h",
    "decoder.b",
    "projection.w",
    "projection.b",
];

impl Seq2SeqParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let (f_in, c, f_out) = (dims.input_size(), dims.hidden, dims.output_size());
        Self {
            encoder: LstmParams::zeros(f_in, c),
            decoder: LstmParams::zeros(f_in, c),
            projection: LinearParams::zeros(c, f_out),
            dims,
        }
    }

    /// All weights `scale · N(0,1)`, all biases zero.
    pub fn init(dims: ModelDims, scale: f64, rng: &mut RngState) -> Result<Self> {
        dims.validate()?;
        let (f_in, c, f_out) = (dims.input_size(), dims.hidden, dims.output_size());
        Ok(Self {
            encoder: LstmParams::init(f_in, c, scale, rng)?,
            decoder: LstmParams::init(f_in, c, scale, rng)?,
            projection: LinearParams::init(c, f_out, scale, rng)?,
            dims,
        })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims.clone())
    }

    /// Parameter tensors in checkpoint order, see [`PARAM_NAMES`].
    pub fn tensors(&self) -> [&SeqTensor; 8] {
        let [a, b, c] = self.encoder.tensors();
        let [d, e, f] = self.decoder.tensors();
        let [g, h] = self.projection.tensors();
        [a, b, c, d, e, f, g, h]
    }

    pub fn tensors_mut(&mut self) -> [&mut SeqTensor; 8] {
        let [a, b, c] = self.encoder.tensors_mut();
        let [d, e, f] = self.decoder.tensors_mut();
        let [g, h] = self.projection.tensors_mut();
        [a, b, c, d, e, f, g, h]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha · other` over every tensor.
    pub fn add_scaled(&mut self, alpha: f64, other: &Seq2SeqParams) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(alpha, b)?;
        }
        Ok(())
    }

    fn check_frame(&self, frame: &SeqTensor, op: &'static str) -> Result<()> {
        if frame.len() != self.dims.input_size() {
            return Err(Error::dims(op, frame.shape(), &[self.dims.nodes, self.dims.channels]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForecastRequest {
    /// `[T_in, nodes, channels]`
    pub context: SeqTensor,
    pub horizon: usize,
}

impl ForecastRequest {
    pub fn new(context: SeqTensor, horizon: usize) -> Result<Self> {
        if context.shape().len() != 3 || context.time_len() == 0 {
            return Err(Error::config(format!(
                "context must be a non-empty [time, nodes, channels] tensor, got {:?}",
                context.shape()
            )));
        }
        if horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        Ok(Self { context, horizon })
    }
}

/// What the decoder consumes at the next step.
#[derive(Debug, Clone, PartialEq)]
pub enum DecoderInput {
    /// Its own previous prediction, embedded into a full input frame.
    Own,
    /// An externally supplied `[nodes, channels]` frame (ground truth or the
    /// intermediate model's output). Treated as a constant by backprop.
    External(SeqTensor),
}

/// Forward caches of one rollout, consumed by backprop through time.
#[derive(Debug, Clone)]
pub struct RolloutTrace {
    pub encoder: Vec<StepCache>,
    pub decoder: Vec<StepCache>,
    /// `own_feedback[s]` is true when the input of decoder step `s` (0-based)
    /// was the model's own prediction from step `s − 1`. Always false at 0.
    pub own_feedback: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// `[K, nodes, targets]`
    pub predictions: SeqTensor,
    pub trace: RolloutTrace,
}

/// Overwrite the target channels of `base` (`[nodes, channels]`) with `pred`
/// (`[nodes, targets]`).
pub fn embed_feedback(base: &[f64], pred: &[f64], dims: &ModelDims) -> Vec<f64> {
    let mut out = base.to_vec();
    let nt = dims.targets.len();
    for n in 0..dims.nodes {
        for (k, &ch) in dims.targets.iter().enumerate() {
            out[n * dims.channels + ch] = pred[n * nt + k];
        }
    }
    out
}

/// Extract the target channels of a `[nodes, channels]` frame.
pub fn target_channels(frame: &[f64], dims: &ModelDims) -> Vec<f64> {
    let mut out = Vec::with_capacity(dims.output_size());
    for n in 0..dims.nodes {
        for &ch in &dims.targets {
            out.push(frame[n * dims.channels + ch]);
        }
    }
    out
}

fn encode_traced(context: &SeqTensor, p: &Seq2SeqParams) -> Result<(LstmState, Vec<StepCache>)> {
    let f_in = p.dims.input_size();
    if context.frame_len() != f_in || context.time_len() == 0 {
        return Err(Error::dims(
            "encode",
            context.shape(),
            &[context.time_len(), p.dims.nodes, p.dims.channels],
        ));
    }
    let c = p.dims.hidden;
    let mut h = vec![0.0; c];
    let mut cell = vec![0.0; c];
    let mut caches = Vec::with_capacity(context.time_len());
    for t in 0..context.time_len() {
        let cache = lstm_forward_raw(context.frame_slice(t), &h, &cell, &p.encoder);
        cell = next_cell(&cache);
        h.clone_from(&cache.h);
        caches.push(cache);
    }
    Ok((
        LstmState {
            h: SeqTensor::from_vec(h),
            c: SeqTensor::from_vec(cell),
        },
        caches,
    ))
}

fn next_cell(cache: &StepCache) -> Vec<f64> {
    let c = cache.h.len();
    let g = &cache.gates;
    (0..c)
        .map(|j| g[c + j] * cache.c_prev[j] + g[j] * g[2 * c + j])
        .collect()
}

/// Final encoder state after consuming the context in time order.
pub fn encode(context: &SeqTensor, p: &Seq2SeqParams) -> Result<LstmState> {
    encode_traced(context, p).map(|(s, _)| s)
}

/// One decoder LSTM step followed by the output projection.
pub fn decode_step(
    prev_input: &SeqTensor,
    state: &LstmState,
    p: &Seq2SeqParams,
) -> Result<(SeqTensor, LstmState, StepCache)> {
    p.check_frame(prev_input, "decode_step")?;
    let c = p.dims.hidden;
    if state.h.len() != c || state.c.len() != c {
        return Err(Error::dims("decode_step state", state.h.shape(), &[c]));
    }
    let cache = lstm_forward_raw(prev_input.data(), state.h.data(), state.c.data(), &p.decoder);
    let pred = linear_raw(&cache.h, &p.projection);
    let next = LstmState {
        h: SeqTensor::from_vec(cache.h.clone()),
        c: SeqTensor::from_vec(next_cell(&cache)),
    };
    let pred = SeqTensor::new(&[p.dims.nodes, p.dims.targets.len()], pred)?;
    Ok((pred, next, cache))
}

/// Run `K` decoder steps. The first decoder input is the last context frame;
/// after step `s` (1-based, `s < K`) the selector receives `s` and the own
/// prediction embedded as a full frame, and chooses the next input.
pub fn rollout<S>(req: &ForecastRequest, p: &Seq2SeqParams, selector: S) -> Result<SeqTensor>
where
    S: FnMut(usize, &SeqTensor) -> Result<DecoderInput>,
{
    rollout_traced(req, p, selector).map(|r| r.predictions)
}

pub fn rollout_traced<S>(req: &ForecastRequest, p: &Seq2SeqParams, mut selector: S) -> Result<Rollout>
where
    S: FnMut(usize, &SeqTensor) -> Result<DecoderInput>,
{
    let dims = &p.dims;
    let (state, enc_caches) = encode_traced(&req.context, p)?;
    let last = req.context.frame_slice(req.context.time_len() - 1).to_vec();
    let k = req.horizon;
    let frame_shape = [dims.nodes, dims.channels];

    let mut h = state.h.into_data();
    let mut cell = state.c.into_data();
    let mut input = last.clone();
    let mut preds = Vec::with_capacity(k * dims.output_size());
    let mut dec_caches = Vec::with_capacity(k);
    let mut own_feedback = Vec::with_capacity(k);
    own_feedback.push(false);

    for s in 1..=k {
        let cache = lstm_forward_raw(&input, &h, &cell, &p.decoder);
        let pred = linear_raw(&cache.h, &p.projection);
        cell = next_cell(&cache);
        h.clone_from(&cache.h);
        dec_caches.push(cache);
        if s < k {
            let own = SeqTensor::new(&frame_shape, embed_feedback(&last, &pred, dims))?;
            match selector(s, &own)? {
                DecoderInput::Own => {
                    input = own.into_data();
                    own_feedback.push(true);
                }
                DecoderInput::External(frame) => {
                    if frame.len() != dims.input_size() {
                        return Err(Error::dims("rollout selector", frame.shape(), &frame_shape));
                    }
                    input = frame.into_data();
                    own_feedback.push(false);
                }
            }
        }
        preds.extend_from_slice(&pred);
    }
    Ok(Rollout {
        predictions: SeqTensor::new(&[k, dims.nodes, dims.targets.len()], preds)?,
        trace: RolloutTrace {
            encoder: enc_caches,
            decoder: dec_caches,
            own_feedback,
        },
    })
}

/// Forecast where every decoder input is the model's own previous prediction.
pub fn closed_loop(req: &ForecastRequest, p: &Seq2SeqParams) -> Result<SeqTensor> {
    rollout(req, p, |_, _| Ok(DecoderInput::Own))
}

/// Write parameters in the checkpoint layout:
///
/// ```text
/// magic    8 bytes  "TPGFCKPT"
/// version  u32 LE   1
/// C        u64 LE   hidden size
/// F_in     u64 LE   nodes · channels
/// F_out    u64 LE   nodes · targets
/// nodes    u64 LE
/// targets  u64 LE count, then that many u64 LE channel indices
/// tensors  f64 LE, in PARAM_NAMES order, row-major
/// ```
pub fn write_checkpoint<W: Write>(p: &Seq2SeqParams, mut w: W) -> Result<()> {
    let d = &p.dims;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [d.hidden, d.input_size(), d.output_size(), d.nodes, d.targets.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for &t in &d.targets {
        w.write_all(&(t as u64).to_le_bytes())?;
    }
    for t in p.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Seq2SeqParams> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut r, &mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut u = || -> Result<usize> {
        let mut b = [0u8; 8];
        read_exact(&mut r, &mut b)?;
        usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("header field overflows usize".into()))
    };
    let (hidden, f_in, f_out, nodes, nt) = (u()?, u()?, u()?, u()?, u()?);
    if nodes == 0 || nt == 0 || f_in % nodes != 0 || nt > f_in || nodes * nt != f_out {
        return Err(Error::Format(format!(
            "inconsistent checkpoint header: C={hidden} F_in={f_in} F_out={f_out} nodes={nodes} targets={nt}"
        )));
    }
    let targets = (0..nt).map(|_| u()).collect::<Result<Vec<_>>>()?;
    let dims = ModelDims {
        hidden,
        nodes,
        channels: f_in / nodes,
        targets,
    };
    dims.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut p = Seq2SeqParams::zeros(dims);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b)?;
            *v = f64::from_le_bytes(b);
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
    }
    Ok(p)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })
}
