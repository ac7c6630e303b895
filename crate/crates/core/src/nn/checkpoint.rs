//! Single-file checkpoints: an 8-byte magic, a little-endian u64 manifest
//! length, the JSON manifest, then every parameter followed by every buffer
//! as raw little-endian f64 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamLayout, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STOCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Model configuration, opaque to this module.
    pub model: serde_json::Value,
    pub layout: ParamLayout,
    pub seed: u64,
    pub step: u64,
}

pub fn encode(store: &ParamStore, model: serde_json::Value, seed: u64, step: u64) -> Result<Vec<u8>> {
    let manifest = Manifest { model, layout: store.layout().clone(), seed, step };
    let json = serde_json::to_vec(&manifest)?;
    let n_values: usize = store.params().iter().chain(store.buffers()).map(Tensor::numel).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * n_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in store.params().iter().chain(store.buffers()) {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, Manifest)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
    if json_len > body.len() {
        return Err(bad("manifest length exceeds file"));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..json_len])?;
    let mut raw = body[json_len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected: usize = manifest
        .layout
        .params
        .iter()
        .map(|p| &p.shape)
        .chain(manifest.layout.buffers.iter().map(|b| &b.shape))
        .map(|s| s.iter().product::<usize>())
        .sum();
    if body.len() - json_len != 8 * expected {
        return Err(Error::Checkpoint(format!("expected {expected} values, found {} bytes", body.len() - json_len)));
    }
    let mut take = |shape: &Vec<usize>| -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::new(shape.clone(), raw.by_ref().take(n).collect())
    };
    let params = manifest.layout.params.iter().map(|p| take(&p.shape)).collect::<Result<Vec<_>>>()?;
    let buffers = manifest.layout.buffers.iter().map(|b| take(&b.shape)).collect::<Result<Vec<_>>>()?;
    let store = ParamStore::from_parts(manifest.layout.clone(), params, buffers)?;
    Ok((store, manifest))
}

pub fn save(path: &Path, store: &ParamStore, model: serde_json::Value, seed: u64, step: u64) -> Result<()> {
    std::fs::write(path, encode(store, model, seed, step)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, Manifest)> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{BatchNorm, Dense};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ParamStore {
        let mut layout = ParamLayout::new();
        Dense::new(&mut layout, "fc", 5, 3);
        BatchNorm::new(&mut layout, "bn", 3);
        ParamStore::init(&layout, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn round_trip_is_exact() {
        let store = sample();
        let bytes = encode(&store, serde_json::json!({"variant": "toy"}), 7, 42).unwrap();
        let (back, manifest) = decode(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!((manifest.seed, manifest.step), (7, 42));
        assert_eq!(manifest.layout.n_params(), store.n_params());
        assert_eq!(manifest.layout.n_params_from_layers(), store.n_params());
    }

    #[test]
    fn corrupt_inputs_are_errors() {
        let bytes = encode(&sample(), serde_json::Value::Null, 0, 0).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(&bytes[..10]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode(&wrong), Err(Error::Checkpoint(_))));
        let mut huge = bytes;
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&huge).is_err());
    }
}
