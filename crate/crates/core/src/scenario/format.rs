//! `.scn` scenario container.
//!
//! Little-endian layout:
//!
//! ```text
//! 8   magic "KDSCENE\0"
//! 2   format version (u16)
//! 8   generation seed (u64)
//! 4   config length m (u32)
//! m   config echo, JSON (UTF-8)
//! 4   number of sets (u32): server, one per node, hold-out
//! per set:
//!   4   rows n, 4 width d, 4 slots h, 2 beams (u16)
//!   per row: d × f32 features, h × u16 labels, u16 origin, h × f64 angles
//! 4   CRC-32 of everything before it
//! ```
//!
//! Features are stored at 32-bit precision; labels, origins and the
//! ground-truth angles are exact.

use std::path::Path;

use super::config::ScenarioConfig;
use super::dataset::{Dataset, FeatureLayout};
use super::generate::{distribution_params, Scenario};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const SCENARIO_MAGIC: &[u8; 8] = b"KDSCENE\0";
pub const SCENARIO_VERSION: u16 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_set(buf: &mut Vec<u8>, d: &Dataset) {
    let (n, w, h) = (d.len(), d.input_dim(), d.num_slots());
    put_u32(buf, n);
    put_u32(buf, w);
    put_u32(buf, h);
    buf.extend_from_slice(&(d.num_beams() as u16).to_le_bytes());
    for i in 0..n {
        for &v in d.features().row(i) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for s in 0..h {
            buf.extend_from_slice(&(d.labels(s)[i] as u16).to_le_bytes());
        }
        buf.extend_from_slice(&d.origins()[i].to_le_bytes());
        for s in 0..h {
            buf.extend_from_slice(&d.angle(i, s).unwrap_or(f64::NAN).to_le_bytes());
        }
    }
}

pub fn dump(scenario: &Scenario) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SCENARIO_MAGIC);
    buf.extend_from_slice(&SCENARIO_VERSION.to_le_bytes());
    buf.extend_from_slice(&scenario.seed.to_le_bytes());
    let json = serde_json::to_vec(&scenario.config).expect("config serializes");
    put_u32(&mut buf, json.len());
    buf.extend_from_slice(&json);
    let sets: Vec<&Dataset> = std::iter::once(&scenario.server_set)
        .chain(&scenario.node_sets)
        .chain(std::iter::once(&scenario.holdout))
        .collect();
    put_u32(&mut buf, sets.len());
    for d in sets {
        put_set(&mut buf, d);
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len(),
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.array(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        self.array(what).map(|b| u32::from_le_bytes(b) as usize)
    }

    fn set(&mut self, cfg: &ScenarioConfig, layout: &FeatureLayout) -> Result<Dataset> {
        let start = self.pos;
        let n = self.u32("set rows")?;
        let w = self.u32("set width")?;
        let h = self.u32("set slots")?;
        let beams = usize::from(self.u16("set beams")?);
        if w != cfg.input_dim() || h != cfg.num_slots || beams != cfg.num_beams || n == 0 {
            return Err(Error::Format {
                offset: start,
                reason: format!("set shape {n}×{w}, {h} slots, {beams} beams disagrees with config"),
            });
        }
        let row_bytes = 4 * w + 2 * h + 2 + 8 * h;
        if (self.bytes.len() - self.pos) / row_bytes < n {
            return Err(Error::Format {
                offset: self.bytes.len(),
                reason: "truncated while reading set rows".into(),
            });
        }
        let mut feats = Vec::with_capacity(n * w);
        let mut labels = vec![Vec::with_capacity(n); h];
        let mut origin = Vec::with_capacity(n);
        let mut angles = Vec::with_capacity(n * h);
        for _ in 0..n {
            for _ in 0..w {
                let v = f32::from_le_bytes(self.array("feature")?);
                if !v.is_finite() {
                    return Err(self.err("non-finite feature"));
                }
                feats.push(f64::from(v));
            }
            for slot in labels.iter_mut() {
                let l = usize::from(self.u16("label")?);
                if l >= beams {
                    return Err(self.err(format!("label {l} out of range")));
                }
                slot.push(l);
            }
            origin.push(self.u16("origin")?);
            for _ in 0..h {
                angles.push(f64::from_le_bytes(self.array("angle")?));
            }
        }
        if angles.iter().any(|a| a.is_nan()) {
            angles.clear();
        }
        let features = Tensor::from_parts(vec![n, w], feats);
        Ok(Dataset::new(features, labels, beams)?.with_meta(angles, origin, Some(layout.clone())))
    }
}

pub fn load(bytes: &[u8]) -> Result<Scenario> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: bytes.len(),
            reason: "truncated before checksum".into(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(8, "magic")? != SCENARIO_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = r.u16("version")?;
    if version != SCENARIO_VERSION {
        return Err(Error::Format {
            offset: 8,
            reason: format!("unsupported version {version}"),
        });
    }
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Format {
            offset: body.len(),
            reason: "checksum mismatch".into(),
        });
    }
    let seed = u64::from_le_bytes(r.array("seed")?);
    let m = r.u32("config length")?;
    let cfg_at = r.pos;
    let config: ScenarioConfig = serde_json::from_slice(r.take(m, "config")?).map_err(|e| Error::Format {
        offset: cfg_at,
        reason: format!("config echo: {e}"),
    })?;
    config.validate().map_err(|e| Error::Format {
        offset: cfg_at,
        reason: e.to_string(),
    })?;
    let count_at = r.pos;
    let count = r.u32("set count")?;
    if count != config.num_nodes + 2 {
        return Err(Error::Format {
            offset: count_at,
            reason: format!("expected {} sets, found {count}", config.num_nodes + 2),
        });
    }
    let layout = FeatureLayout {
        history_len: config.history_len,
        blocks: config
            .canonical_modalities()
            .into_iter()
            .map(|m| (m, config.modality_dim(m)))
            .collect(),
    };
    let mut sets = (0..count).map(|_| r.set(&config, &layout)).collect::<Result<Vec<_>>>()?;
    if r.pos != body.len() {
        return Err(r.err("trailing bytes"));
    }
    let holdout = sets.pop().unwrap();
    let server_set = sets.remove(0);
    let (server_params, node_params) = distribution_params(&config, seed);
    Ok(Scenario {
        config,
        seed,
        server_set,
        node_sets: sets,
        holdout,
        server_params,
        node_params,
    })
}

pub fn write_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dump(scenario))?;
    Ok(())
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    load(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::generate::generate_scenario;
    use super::*;

    fn scenario() -> Scenario {
        let cfg = ScenarioConfig {
            num_nodes: 2,
            samples_per_node: 20,
            samples_server: 25,
            samples_holdout: 10,
            ..ScenarioConfig::default()
        };
        generate_scenario(&cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_lossless_at_f32() {
        let s = scenario();
        let back = load(&dump(&s)).unwrap();
        assert_eq!(back.config, s.config);
        assert_eq!(back.seed, s.seed);
        assert_eq!(back.node_params, s.node_params);
        for (a, b) in [(&s.server_set, &back.server_set), (&s.holdout, &back.holdout)] {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.features().data().iter().zip(b.features().data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
            assert_eq!(a.labels(0), b.labels(0));
            assert_eq!(a.origins(), b.origins());
            assert_eq!(a.angles_raw(), b.angles_raw());
        }
        // Second trip is exact.
        assert_eq!(load(&dump(&back)).unwrap(), back);
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = dump(&scenario());
        for i in [0, 9, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(matches!(load(&bad), Err(Error::Format { .. })), "byte {i}");
        }
        assert!(matches!(load(&bytes[..bytes.len() - 7]), Err(Error::Format { .. })));
    }
}
