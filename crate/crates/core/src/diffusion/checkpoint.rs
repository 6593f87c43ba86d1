//! HDDM checkpoint files.
//!
//! Layout, little-endian: magic `HDDM`, version u16, channels u32,
//! conditioning channels u32, width u32, sigma_data f64, parameter count u64,
//! parameters as f32, metadata length u32, metadata JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::toy::{ToyArch, ToyDenoiser};
use crate::error::{invalid, ParseError, Result};
use crate::grid::Reader;

pub const HDDM_MAGIC: [u8; 4] = *b"HDDM";
pub const HDDM_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ToyArch,
    pub sigma_data: f64,
    /// Stored at f32 precision.
    pub params: Vec<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_model(model: &ToyDenoiser, meta: CheckpointMeta) -> Result<Self> {
        let mut params = Vec::with_capacity(model.params().len());
        for (i, p) in model.params().iter().enumerate() {
            let v = *p as f32;
            if !v.is_finite() {
                return Err(invalid(format!("parameter {i} ({p}) does not fit in f32")));
            }
            params.push(v);
        }
        Ok(Self {
            arch: model.arch(),
            sigma_data: model.sigma_data(),
            params,
            meta,
        })
    }

    pub fn model(&self) -> Result<ToyDenoiser> {
        ToyDenoiser::from_params(
            self.arch,
            self.sigma_data,
            self.params.iter().map(|p| *p as f64).collect(),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| invalid(e.to_string()))?;
        let mut out = Vec::with_capacity(40 + 4 * self.params.len() + meta.len());
        out.extend_from_slice(&HDDM_MAGIC);
        out.extend_from_slice(&HDDM_VERSION.to_le_bytes());
        for v in [self.arch.channels, self.arch.cond_channels, self.arch.width] {
            let v = u32::try_from(v).map_err(|_| invalid("architecture dimension exceeds u32"))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.sigma_data.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParseError> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != HDDM_MAGIC {
            return Err(ParseError::BadMagic {
                expected: HDDM_MAGIC,
                found: magic.to_vec(),
            });
        }
        let version = r.u16()?;
        if version != HDDM_VERSION {
            return Err(ParseError::UnsupportedVersion {
                expected: HDDM_VERSION,
                found: version,
            });
        }
        let (c, cc, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let arch = ToyArch::new(c, cc, w).map_err(|e| ParseError::InvalidHeader(e.to_string()))?;
        let sigma_data = r.f64()?;
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(ParseError::InvalidHeader(format!(
                "sigma_data {sigma_data} is not positive"
            )));
        }
        let count = r.u64()?;
        // compare before multiplying so huge headers cannot overflow
        let expected = channels_param_count(c, cc, w)
            .ok_or_else(|| ParseError::InvalidHeader("architecture is too large".into()))?;
        if count != expected as u64 {
            return Err(ParseError::InvalidHeader(format!(
                "parameter count {count} does not match architecture ({expected})"
            )));
        }
        let raw = r.take(
            expected
                .checked_mul(4)
                .ok_or_else(|| ParseError::InvalidHeader("architecture is too large".into()))?,
        )?;
        let mut params = Vec::with_capacity(expected);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(ParseError::NonFinite { index: i });
            }
            params.push(v);
        }
        let len = r.u32()? as usize;
        let meta_bytes = r.take(len)?;
        let meta: CheckpointMeta =
            serde_json::from_slice(meta_bytes).map_err(|e| ParseError::InvalidHeader(format!("metadata: {e}")))?;
        if r.remaining() != 0 {
            return Err(ParseError::TrailingBytes(r.remaining()));
        }
        Ok(Self {
            arch,
            sigma_data,
            params,
            meta,
        })
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_bytes(&std::fs::read(path)?)?)
    }
}

fn channels_param_count(c: usize, cc: usize, w: usize) -> Option<usize> {
    let cin = c.checked_add(cc)?.checked_add(super::toy::SCALAR_CHANNELS)?;
    let l1 = cin.checked_mul(w)?.checked_mul(9)?.checked_add(w)?;
    let l2 = w.checked_mul(w)?.checked_mul(9)?.checked_add(w)?;
    let l3 = w.checked_mul(c)?.checked_mul(9)?.checked_add(c)?;
    l1.checked_add(l2)?.checked_add(l3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let m = ToyDenoiser::init(ToyArch::new(1, 2, 3).unwrap(), 0.5, 4).unwrap();
        Checkpoint::from_model(
            &m,
            CheckpointMeta {
                seed: 4,
                epochs: 7,
                config_hash: "abc".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let c = ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model().unwrap().params().len(), c.arch.param_count());
    }

    #[test]
    fn count_helper_agrees() {
        let a = ToyArch::new(2, 3, 5).unwrap();
        assert_eq!(channels_param_count(2, 3, 5), Some(a.param_count()));
        assert_eq!(channels_param_count(usize::MAX, 1, 1), None);
    }

    #[test]
    fn parse_errors() {
        let good = ckpt().to_bytes().unwrap();
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(ParseError::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(ParseError::UnsupportedVersion { .. })
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&good[..good.len() - 3]),
            Err(ParseError::Truncated { .. })
        ));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(ParseError::TrailingBytes(1))
        ));
        let mut bad = good.clone();
        bad[26] ^= 1; // parameter count
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(ParseError::InvalidHeader(_))
        ));
        let mut bad = good.clone();
        bad[34..38].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(ParseError::NonFinite { index: 0 })
        ));
    }
}
