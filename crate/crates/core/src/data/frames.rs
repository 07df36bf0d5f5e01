//! Binary container for frame sequences.
//!
//! ```text
//! magic    8 bytes  "TPGFFRMS"
//! version  u32 LE   1
//! T        u64 LE   frames per sequence
//! H, W     u64 LE   grid size
//! count    u64 LE   number of sequences
//! planes   count·T·H·W f64 LE, sequence-major then time then row-major pixels
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::SeqTensor;

pub const FRAMES_MAGIC: &[u8; 8] = b"TPGFFRMS";
pub const FRAMES_VERSION: u32 = 1;

/// Each sequence must be `[T, H·W, 1]` with one shared `T`.
pub fn write_frames(sequences: &[SeqTensor], grid: (usize, usize), path: &Path) -> Result<()> {
    let (h, w) = grid;
    let t = sequences.first().map_or(0, |s| s.time_len());
    for s in sequences {
        if s.shape() != [t, h * w, 1] {
            return Err(Error::dims("write_frames", s.shape(), &[t, h * w, 1]));
        }
    }
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(FRAMES_MAGIC)?;
    out.write_all(&FRAMES_VERSION.to_le_bytes())?;
    for v in [t, h, w, sequences.len()] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    for s in sequences {
        for v in s.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Returns the sequences and the grid size.
pub fn read_frames(path: &Path) -> Result<(Vec<SeqTensor>, (usize, usize))> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let trunc = |e: std::io::Error| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated frame file".into()),
        _ => Error::Io(e),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != FRAMES_MAGIC {
        return Err(Error::Format("bad frame file magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(trunc)?;
    if u32::from_le_bytes(b4) != FRAMES_VERSION {
        return Err(Error::Format(format!(
            "unsupported frame file version {}",
            u32::from_le_bytes(b4)
        )));
    }
    let mut hdr = [0usize; 4];
    for v in &mut hdr {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(trunc)?;
        *v = u64::from_le_bytes(b) as usize;
    }
    let [t, h, w, count] = hdr;
    let mut seqs = Vec::with_capacity(count);
    let mut buf = vec![0u8; t * h * w * 8];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(trunc)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        seqs.push(SeqTensor::new(&[t, h * w, 1], data)?);
    }
    Ok((seqs, (h, w)))
}
