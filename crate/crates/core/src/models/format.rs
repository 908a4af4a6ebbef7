//! `.mdl` model container.
//!
//! Little-endian layout:
//!
//! ```text
//! offset  size      field
//! 0       8         magic "KDMODEL\0"
//! 8       2         format version (u16)
//! 10      4         input_dim (u32)
//! 14      4         number of trunk layers n (u32)
//! 18      4·n       trunk widths (u32 each)
//! ..      4         num_slots (u32)
//! ..      4         num_beams (u32)
//! ..      4         feature_tap (u32)
//! ..      8         parameter count (u64)
//! ..      4         CRC-32 of all preceding header bytes
//! ..      4·count   parameters as f32, canonical order
//! ```

use std::path::Path;

use super::model::Model;
use super::spec::{count_params, ModelSpec};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"KDMODEL\0";
pub const MODEL_VERSION: u16 = 1;

/// Header length for a spec: fixed fields plus four bytes per trunk layer.
pub fn header_len(spec: &ModelSpec) -> usize {
    8 + 2 + 4 + 4 + 4 * spec.trunk_dims.len() + 4 + 4 + 4 + 8 + 4
}

/// Exact byte length of `serialize` for any model with this spec.
pub fn serialized_len(spec: &ModelSpec) -> usize {
    header_len(spec) + 4 * count_params(spec)
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn serialize(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut buf = Vec::with_capacity(serialized_len(spec));
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut buf, spec.input_dim);
    put_u32(&mut buf, spec.trunk_dims.len());
    for &d in &spec.trunk_dims {
        put_u32(&mut buf, d);
    }
    put_u32(&mut buf, spec.num_slots);
    put_u32(&mut buf, spec.num_beams);
    put_u32(&mut buf, spec.feature_tap);
    buf.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    for p in model.params() {
        for &v in p.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Format {
                offset: self.bytes.len(),
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MODEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::Format {
            offset: 8,
            reason: format!("unsupported version {version}"),
        });
    }
    let input_dim = r.u32("input_dim")?;
    let depth = r.u32("trunk depth")?;
    if depth > (bytes.len() / 4) {
        return Err(Error::Format {
            offset: 14,
            reason: format!("trunk depth {depth} exceeds payload"),
        });
    }
    let trunk_dims = (0..depth).map(|_| r.u32("trunk width")).collect::<Result<Vec<_>>>()?;
    let num_slots = r.u32("num_slots")?;
    let num_beams = r.u32("num_beams")?;
    let feature_tap = r.u32("feature_tap")?;
    let count = u64::from_le_bytes(r.take(8, "parameter count")?.try_into().unwrap()) as usize;
    let crc_offset = r.pos;
    let stored = u32::from_le_bytes(r.take(4, "header checksum")?.try_into().unwrap());
    if crc32fast::hash(&bytes[..crc_offset]) != stored {
        return Err(Error::Format {
            offset: crc_offset,
            reason: "header checksum mismatch".into(),
        });
    }
    let spec = ModelSpec {
        input_dim,
        trunk_dims,
        num_slots,
        num_beams,
        feature_tap,
    };
    spec.validate().map_err(|e| Error::Format {
        offset: 10,
        reason: format!("invalid spec: {e}"),
    })?;
    if count != count_params(&spec) {
        return Err(Error::Format {
            offset: crc_offset - 8,
            reason: format!("parameter count {count} does not match spec ({})", count_params(&spec)),
        });
    }
    let expected = r.pos + 4 * count;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected),
            reason: format!("payload is {} bytes, expected {expected}", bytes.len()),
        });
    }
    let mut params = Vec::new();
    for (inp, out) in spec.layer_shapes() {
        for shape in [vec![out, inp], vec![out]] {
            let n: usize = shape.iter().product();
            let raw = r.take(4 * n, "parameters")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format {
                offset: r.pos,
                reason: e.to_string(),
            })?;
            params.push(t);
        }
    }
    Model::from_params(spec, params)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serialize(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    deserialize(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_model;
    use crate::numerics::Rng;

    fn model() -> Model {
        init_model(&ModelSpec::new(3, vec![4], 1, 2), &mut Rng::new(1, 0)).unwrap()
    }

    #[test]
    fn length_is_header_plus_four_per_param() {
        let m = model();
        let bytes = serialize(&m);
        assert_eq!(bytes.len(), header_len(m.spec()) + 104);
        assert_eq!(bytes.len(), serialized_len(m.spec()));
    }

    #[test]
    fn round_trip_preserves_spec_and_f32_params() {
        let m = model();
        let back = deserialize(&serialize(&m)).unwrap();
        assert_eq!(back.spec(), m.spec());
        for (a, b) in back.params().iter().zip(m.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
    }

    #[test]
    fn every_header_byte_is_guarded() {
        let m = model();
        let bytes = serialize(&m);
        for i in 0..header_len(m.spec()) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(matches!(deserialize(&bad), Err(Error::Format { .. })), "byte {i} corruption accepted");
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = serialize(&model());
        match deserialize(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() - 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(deserialize(&bytes[..5]).is_err());
    }
}
