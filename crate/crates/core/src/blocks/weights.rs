//! Binary weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   6 bytes  "XCAMW1"
//! digest  32 bytes SHA-256 of the network spec's JSON encoding
//! count   u32      number of records
//! record  u32 name length, UTF-8 name, u32 dim count, u64 per dim,
//!         f64 per value in row-major order
//! ```
//!
//! Records hold every trainable parameter followed by batch-norm running
//! statistics (`<layer>.running_mean`, `<layer>.running_var`). Values are
//! always stored as 64-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

use super::network::Model;

pub const WEIGHTS_MAGIC: &[u8; 6] = b"XCAMW1";

#[derive(Clone, Debug, PartialEq)]
pub struct WeightFile {
    pub digest: [u8; 32],
    pub records: Vec<(String, Tensor4)>,
}

pub fn write_weights<W: Write>(out: &mut W, model: &Model) -> std::io::Result<()> {
    let records = model.records();
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&model.spec().digest())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in &records {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        let d = t.dims();
        let dims: Vec<usize> = if d.n() == 1 && d.h() == 1 && d.w() == 1 {
            vec![d.c()]
        } else {
            d.0.to_vec()
        };
        out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for v in dims {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&(*v as f64).to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read, what: &str) -> std::result::Result<[u8; N], String> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| format!("truncated while reading {what}: {e}"))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> std::result::Result<usize, String> {
    Ok(u32::from_le_bytes(take::<4>(r, what)?) as usize)
}

fn parse(r: &mut impl Read) -> std::result::Result<WeightFile, String> {
    if &take::<6>(r, "magic")? != WEIGHTS_MAGIC {
        return Err("bad magic; not an XCAMW1 weight file".into());
    }
    let digest = take::<32>(r, "spec digest")?;
    let count = read_u32(r, "record count")?;
    let mut records = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let len = read_u32(r, "name length")?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| format!("record {i}: truncated name: {e}"))?;
        let name = String::from_utf8(name).map_err(|_| format!("record {i}: name is not UTF-8"))?;
        let ndim = read_u32(r, "dim count")?;
        if !(1..=4).contains(&ndim) {
            return Err(format!("record {name}: unsupported dim count {ndim}"));
        }
        let mut dims = [1usize; 4];
        for slot in dims.iter_mut().skip(4 - ndim) {
            *slot = u64::from_le_bytes(take::<8>(r, "dims")?) as usize;
        }
        // A single stored dim is a channel vector.
        if ndim == 1 {
            dims = [1, dims[3], 1, 1];
        }
        let dims = Dims(dims);
        if dims.is_empty() {
            return Err(format!("record {name}: zero-sized dims"));
        }
        let mut data = Vec::with_capacity(dims.len().min(1 << 24));
        for _ in 0..dims.len() {
            let v = f64::from_le_bytes(take::<8>(r, "values")?);
            data.push(v as Real);
        }
        let t = Tensor4::new(dims, data).map_err(|e| e.to_string())?;
        records.push((name, t));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| e.to_string())? != 0 {
        return Err("trailing bytes after last record".into());
    }
    Ok(WeightFile { digest, records })
}

pub fn read_weights<R: Read>(input: &mut R) -> Result<WeightFile> {
    parse(input).map_err(|reason| Error::format("<stream>", reason))
}

pub fn save_weights(path: &Path, model: &Model) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_weights(&mut w, model)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Loads a weight file into `model`, refusing files written for a different
/// network spec.
pub fn load_weights(path: &Path, model: &mut Model) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let wf = parse(&mut BufReader::new(file)).map_err(|reason| Error::format(path, reason))?;
    if wf.digest != model.spec().digest() {
        return Err(Error::Validation(format!(
            "{} was written for a different network spec (family, scale, input size or head)",
            path.display()
        )));
    }
    model.assign(&wf.records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{build_network, Family, NetworkConfig};

    #[test]
    fn round_trip_preserves_every_record() {
        let mut cfg = NetworkConfig::new(Family::SeResnet, 16, 3);
        cfg.scale.width_multiplier = 0.25;
        let model = build_network(&cfg).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &model).unwrap();
        let wf = read_weights(&mut buf.as_slice()).unwrap();
        assert_eq!(wf.digest, model.spec().digest());
        assert_eq!(wf.records, model.records());

        let mut other = build_network(&NetworkConfig { seed: 9, ..cfg }).unwrap();
        other.assign(&wf.records).unwrap();
        assert_eq!(other.records(), model.records());
    }

    #[test]
    fn corrupt_streams_rejected() {
        assert!(read_weights(&mut &b"NOTAWF"[..]).is_err());
        let mut cfg = NetworkConfig::new(Family::Vgg, 16, 3);
        cfg.scale.width_multiplier = 0.25;
        let model = build_network(&cfg).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &model).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_weights(&mut buf.as_slice()), Err(Error::Format { .. })));
    }
}
