//! Binary checkpoint files.
//!
//! Layout: the 8 bytes `MARICKPT`, a little-endian `u64` byte length, that
//! many bytes of UTF-8 JSON `{arch, rng_seed, step}`, then every parameter as
//! a little-endian `f64` in layout order (embeddings, hidden weights, hidden
//! bias, output weights, output bias).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{Arch, ModelCheckpoint};

pub const MAGIC: &[u8; 8] = b"MARICKPT";

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    rng_seed: u64,
    step: u64,
}

pub fn to_bytes(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        arch: ckpt.arch,
        rng_seed: ckpt.rng_seed,
        step: ckpt.step,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 8 * ckpt.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in &ckpt.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing MARICKPT magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let rest = &bytes[16 + hlen..];
    let n = header.arch.param_count();
    if rest.len() != 8 * n {
        return Err(bad(&format!(
            "expected {n} parameters ({} bytes), found {} bytes",
            8 * n,
            rest.len()
        )));
    }
    let params = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelCheckpoint::from_params(header.arch, params, header.rng_seed, header.step)
}

pub fn save(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let bytes = to_bytes(ckpt)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let arch = Arch::new(3, 4, 5, 7);
        let mut ckpt = ModelCheckpoint::init(arch, 99).unwrap();
        ckpt.params[0] = -0.0;
        ckpt.params[1] = f64::MIN_POSITIVE / 2.0;
        ckpt.step = 12;
        let bytes = to_bytes(&ckpt).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.arch, ckpt.arch);
        assert_eq!(back.step, 12);
        assert_eq!(back.rng_seed, 99);
        for (a, b) in back.params.iter().zip(&ckpt.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let ckpt = ModelCheckpoint::init(Arch::new(2, 2, 2, 3), 1).unwrap();
        let bytes = to_bytes(&ckpt).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(from_bytes(&wrong).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(from_bytes(&nan), Err(Error::NonFinite(_))));
    }
}
