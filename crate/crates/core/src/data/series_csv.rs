//! `time,node,channel,value` series files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::SeqTensor;

/// Write a `[time, nodes, channels]` series in time-major order. Values use
/// 17 significant digits so loading reproduces every float exactly.
pub fn write_csv(series: &SeqTensor, path: &Path) -> Result<()> {
    if series.shape().len() != 3 {
        return Err(Error::config(format!(
            "series must be rank 3, got {:?}",
            series.shape()
        )));
    }
    let (t_len, nodes, channels) = (series.shape()[0], series.shape()[1], series.shape()[2]);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["time", "node", "channel", "value"]).map_err(csv_err)?;
    let mut it = series.data().iter();
    for t in 0..t_len {
        for n in 0..nodes {
            for c in 0..channels {
                let v = it.next().expect("shape covers data");
                w.write_record([t.to_string(), n.to_string(), c.to_string(), format!("{v:.16e}")])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a dense series; rows may come in any order.
pub fn load_csv(path: &Path) -> Result<SeqTensor> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != ["time", "node", "channel", "value"] {
        return Err(Error::Ingestion(format!(
            "expected header time,node,channel,value, got {}",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let idx = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|_| Error::Ingestion(format!("row {}: bad index `{}`", line + 2, field(i))))
        };
        let value = field(3)
            .parse::<f64>()
            .map_err(|_| Error::Ingestion(format!("row {}: bad value `{}`", line + 2, field(3))))?;
        rows.push((idx(0)?, idx(1)?, idx(2)?, value));
    }
    if rows.is_empty() {
        return Err(Error::Ingestion("no data rows".into()));
    }
    let t_len = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let nodes = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let channels = rows.iter().map(|r| r.2).max().unwrap() + 1;
    let mut data = vec![f64::NAN; t_len * nodes * channels];
    let mut seen = vec![false; data.len()];
    for (t, n, c, v) in rows {
        let i = (t * nodes + n) * channels + c;
        if seen[i] {
            return Err(Error::Ingestion(format!(
                "duplicate entry at (time {t}, node {n}, channel {c})"
            )));
        }
        seen[i] = true;
        data[i] = v;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let (t, n, c) = (i / (nodes * channels), (i / channels) % nodes, i % channels);
        return Err(Error::Ingestion(format!(
            "missing entry at (time {t}, node {n}, channel {c})"
        )));
    }
    SeqTensor::new(&[t_len, nodes, channels], data)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Ingestion(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn small_grid_in_time_major_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(
            &path,
            "time,node,channel,value\n0,0,0,1\n0,1,0,2\n1,0,0,3\n1,1,0,4\n2,0,0,5\n2,1,0,6\n",
        )
        .unwrap();
        let s = load_csv(&path).unwrap();
        assert_eq!(s.shape(), &[3, 2, 1]);
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = SeqTensor::randn(&[5, 3, 2], 1e3, &mut RngState::new(1)).unwrap();
        write_csv(&s, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert!(s
            .data()
            .iter()
            .zip(back.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn gap_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "time,node,channel,value\n0,0,0,1\n0,1,0,2\n1,1,0,4\n").unwrap();
        let msg = load_csv(&path).unwrap_err().to_string();
        assert!(msg.contains("(time 1, node 0, channel 0)"), "{msg}");
    }
}
