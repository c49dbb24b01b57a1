//! Parameter checkpoints.
//!
//! Layout (JSON):
//!
//! ```text
//! {
//!   "format": "flavornet.checkpoint",
//!   "version": 1,
//!   "params": [
//!     { "name": "enc.0.w", "shape": [1, 16], "data": "<base64>" },
//!     ...
//!   ]
//! }
//! ```
//!
//! `data` is the base64 (standard alphabet, padded) encoding of the row-major
//! values as little-endian IEEE-754 binary64, so a round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "flavornet.checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: Vec<Entry>,
}

pub fn to_json(store: &ParamStore) -> Result<String> {
    let params = store
        .names()
        .iter()
        .zip(store.tensors())
        .map(|(name, t)| {
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: STANDARD.encode(bytes),
            }
        })
        .collect();
    let ck = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        params,
    };
    Ok(serde_json::to_string_pretty(&ck)?)
}

pub fn from_json(s: &str) -> Result<ParamStore> {
    let ck: Checkpoint = serde_json::from_str(s)?;
    if ck.format != FORMAT || ck.version != VERSION {
        return Err(Error::Contract(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    let mut store = ParamStore::new();
    for e in ck.params {
        let bytes = STANDARD
            .decode(e.data.as_bytes())
            .map_err(|err| Error::Contract(format!("parameter {}: {err}", e.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Contract(format!("parameter {}: truncated data", e.name)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(e.name, Tensor::new(e.shape, data)?);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(store)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut store = ParamStore::new();
            let n = vals.len();
            store.add("a", Tensor::new(vec![n], vals.clone()).unwrap());
            store.add("b", Tensor::new(vec![1, n], vals.iter().map(|v| -v).collect()).unwrap());
            let back = from_json(&to_json(&store).unwrap()).unwrap();
            prop_assert_eq!(back.names(), store.names());
            for (x, y) in back.tensors().iter().zip(store.tensors()) {
                prop_assert_eq!(x.shape(), y.shape());
                let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
    }

    #[test]
    fn rejects_foreign_format() {
        let s = r#"{"format":"other","version":1,"params":[]}"#;
        assert!(from_json(s).is_err());
    }
}
