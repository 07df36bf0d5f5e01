//! IDX image files (the MNIST container format).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::SeqTensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;

/// Read unsigned-byte images as `[rows, cols]` tensors scaled to [0, 1].
pub fn load_idx_images(path: &Path) -> Result<Vec<SeqTensor>> {
    parse_idx(&std::fs::read(path)?)
}

fn parse_idx(bytes: &[u8]) -> Result<Vec<SeqTensor>> {
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| Error::Format("truncated IDX header".into()))
    };
    let magic = word(0)? as u32;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let (count, rows, cols) = (word(1)?, word(2)?, word(3)?);
    let body = &bytes[16..];
    let need = count * rows * cols;
    if body.len() < need {
        return Err(Error::Format(format!(
            "IDX file holds {} pixel bytes, header promises {need}",
            body.len()
        )));
    }
    body[..need]
        .chunks_exact((rows * cols).max(1))
        .take(count)
        .map(|img| SeqTensor::new(&[rows, cols], img.iter().map(|&p| p as f64 / 255.0).collect()))
        .collect()
}
