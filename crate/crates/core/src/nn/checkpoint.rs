//! Parameter checkpoints: a little-endian `f64` payload (`<stem>.bin`) plus
//! a JSON manifest (`<stem>.json`) naming each tensor and its byte range.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the payload in `f64` elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
}

const FORMAT: &str = "f64-le";

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn save(store: &ParamStore, stem: &Path) -> Result<()> {
    let (bin, json) = paths(stem);
    let mut payload = Vec::with_capacity(store.n_scalars() * 8);
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (name, m) in store.names().iter().zip(store.values()) {
        for v in m.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: [m.rows(), m.cols()],
            offset,
            len: m.data().len(),
        });
        offset += m.data().len();
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        tensors,
    };
    if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))?;
    fs::write(&json, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

/// Loads values into `store`; names and shapes must match exactly.
pub fn load(store: &mut ParamStore, stem: &Path) -> Result<()> {
    let (bin, json) = paths(stem);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let payload = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if manifest.format != FORMAT {
        return Err(Error::Shape(format!("unknown checkpoint format {}", manifest.format)));
    }
    if manifest.tensors.len() != store.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} tensors, model has {}",
            manifest.tensors.len(),
            store.len()
        )));
    }
    let mut values = Vec::with_capacity(store.len());
    for (entry, (name, cur)) in manifest.tensors.iter().zip(store.names().iter().zip(store.values())) {
        if &entry.name != name || entry.shape != [cur.rows(), cur.cols()] {
            return Err(Error::Shape(format!(
                "checkpoint tensor {} {:?} does not match {} {:?}",
                entry.name,
                entry.shape,
                name,
                cur.shape()
            )));
        }
        let (start, end) = (entry.offset * 8, (entry.offset + entry.len) * 8);
        let bytes = payload
            .get(start..end)
            .ok_or_else(|| Error::Shape(format!("payload truncated at {}", entry.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        values.push(Mat::from_vec(entry.shape[0], entry.shape[1], data));
    }
    store.load_values(values);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        a.insert_uniform("w", 3, 2, 3, &mut rng);
        a.insert_uniform("b", 1, 2, 3, &mut rng);
        let stem = dir.path().join("ckpt/ep_0001");
        save(&a, &stem).unwrap();
        let mut b = ParamStore::new();
        b.insert("w", Mat::zeros(3, 2));
        b.insert("b", Mat::zeros(1, 2));
        load(&mut b, &stem).unwrap();
        assert_eq!(a.values(), b.values());

        let mut c = ParamStore::new();
        c.insert("w", Mat::zeros(2, 3));
        c.insert("b", Mat::zeros(1, 2));
        assert!(load(&mut c, &stem).is_err());
    }
}
