//! Binary checkpoint format.
//!
//! ```text
//! magic      4 bytes  "FRVS"
//! version    u32
//! variant    u32      0 = full, 1 = no_depth, 2 = encdec
//! max_disp   f64
//! records    until end of file, in lexicographic name order:
//!   name_len u32, name bytes (UTF-8), rank u32, extents u32 × rank,
//!   payload  f32 × product(extents)
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ModelParams, Variant};
use crate::autodiff::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FRVS";
pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn write_records<'a, W: Write>(
    out: &mut W,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> std::io::Result<()> {
    for (name, tensor) in records {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &e in tensor.shape() {
            out.write_all(&(e as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Cursor over a byte slice with typed little-endian reads.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            path,
        }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated: wanted {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub(crate) fn read_records(r: &mut ByteReader<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::new();
    while !r.is_empty() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(r.path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Serialise parameters to the checkpoint byte layout.
pub fn write_checkpoint(params: &ModelParams<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(4 * params.num_parameters() + 1024);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&params.variant.tag().to_le_bytes());
    buf.extend_from_slice(&params.max_disp.to_le_bytes());
    write_records(
        &mut buf,
        params.store.iter().map(|(n, node)| (n, node.value())),
    )
    .expect("writing to a Vec cannot fail");
    buf
}

/// Parse a checkpoint; `path` only labels errors.
pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams<f32>> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let tag = r.u32()?;
    let variant = Variant::from_tag(tag)
        .ok_or_else(|| Error::format(path, format!("unknown variant tag {tag}")))?;
    let max_disp = r.f64()?;
    let mut store = ParameterStore::new();
    for (name, tensor) in read_records(&mut r)? {
        store.insert(name, tensor)?;
    }
    let params = ModelParams {
        variant,
        max_disp,
        store,
    };
    params
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&write_checkpoint(params))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in Variant::ALL {
            let p = init_model(variant, 11, 2.5).unwrap();
            let bytes = write_checkpoint(&p);
            let q = read_checkpoint(&bytes, Path::new("mem")).unwrap();
            assert_eq!(q.variant, variant);
            assert_eq!(q.max_disp.to_bits(), p.max_disp.to_bits());
            assert_eq!(write_checkpoint(&q), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let p = init_model(Variant::NoDepth, 0, 2.0).unwrap();
        let bytes = write_checkpoint(&p);
        assert_eq!(&bytes[..4], b"FRVS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2.0);
        // First record is the lexicographically smallest name.
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 7);
        assert_eq!(&bytes[24..31], b"D1.bias");
    }

    #[test]
    fn rejects_corruption() {
        let p = init_model(Variant::Full, 0, 2.0).unwrap();
        let mut bytes = write_checkpoint(&p);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        bytes[0] = b'X';
        assert!(read_checkpoint(&bytes, Path::new("x")).is_err());
    }
}
