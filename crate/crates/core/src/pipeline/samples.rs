//! Binary joint-sample files: gzip over the magic `JSMP`, a little-endian
//! `u16` version, `u32` sample count `n`, `u32` dimension `p`, then the
//! `n × p` values column by column as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::copula::JointSample;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"JSMP";
const VERSION: u16 = 1;

pub fn encode_samples(sample: &JointSample) -> Result<Vec<u8>> {
    let (n, p) = (sample.n(), sample.p());
    let mut raw = Vec::with_capacity(14 + 8 * n * p);
    raw.extend_from_slice(MAGIC);
    raw.extend_from_slice(&VERSION.to_le_bytes());
    raw.extend_from_slice(&(n as u32).to_le_bytes());
    raw.extend_from_slice(&(p as u32).to_le_bytes());
    for j in 0..p {
        for row in sample.rows() {
            raw.extend_from_slice(&row[j].to_le_bytes());
        }
    }
    let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
    enc.write_all(&raw)
        .and_then(|_| enc.finish())
        .map_err(|e| Error::io("<memory>", e))
}

pub fn decode_samples(bytes: &[u8]) -> Result<JointSample> {
    let mut raw = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut raw)
        .map_err(|e| Error::Schema(format!("sample file is not gzip: {e}")))?;
    if raw.len() < 14 || &raw[..4] != MAGIC {
        return Err(Error::Schema("sample file has a bad header".into()));
    }
    let version = u16::from_le_bytes([raw[4], raw[5]]);
    if version != VERSION {
        return Err(Error::Schema(format!("unsupported sample file version {version}")));
    }
    let n = u32::from_le_bytes(raw[6..10].try_into().unwrap()) as usize;
    let p = u32::from_le_bytes(raw[10..14].try_into().unwrap()) as usize;
    let body = &raw[14..];
    if body.len() != 8 * n * p {
        return Err(Error::Schema(format!(
            "sample file holds {} bytes of data, expected {}",
            body.len(),
            8 * n * p
        )));
    }
    let mut values = vec![0.0; n * p];
    for (idx, chunk) in body.chunks_exact(8).enumerate() {
        let (j, i) = (idx / n, idx % n);
        values[i * p + j] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    JointSample::new(p, values)
}

pub fn write_samples(sample: &JointSample, path: &Path) -> Result<()> {
    fs::write(path, encode_samples(sample)?).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<JointSample> {
    let bytes = fs::read(path).map_err(|e| Error::Dependency {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    decode_samples(&bytes)
}
