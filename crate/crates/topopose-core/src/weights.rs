//! Weight container: magic `TSMW`, version, then name/rank/extents/f32 data
//! per entry, little-endian throughout. Entries are written in name order,
//! so serialization is deterministic; loaders upcast to the active precision.

use crate::tensor::{Bindings, Real, Tensor};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"TSMW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("weight container: {0}")]
    Format(String),
}

pub fn to_bytes(params: &Bindings) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.shape().len() as u8);
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Bindings, WeightsError> {
    let fail = |msg: &str| WeightsError::Format(msg.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], WeightsError> {
        if pos + n > bytes.len() {
            return Err(fail("truncated"));
        }
        let slice = &bytes[pos..pos + n];
        pos += n;
        Ok(slice)
    };

    if take(4)? != MAGIC {
        return Err(fail("bad magic (expected TSMW)"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(WeightsError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut params = Bindings::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| fail("entry name is not UTF-8"))?
            .to_string();
        let rank = take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f32::from_le_bytes(take(4)?.try_into().unwrap()) as Real);
        }
        if params.insert(name.clone(), Tensor::from_vec(&shape, data)).is_some() {
            return Err(WeightsError::Format(format!("duplicate entry `{name}`")));
        }
    }
    Ok(params)
}

pub fn save(path: &Path, params: &Bindings) -> Result<(), WeightsError> {
    fs::write(path, to_bytes(params))
        .map_err(|e| WeightsError::Io { path: path.display().to_string(), source: e })
}

pub fn load(path: &Path) -> Result<Bindings, WeightsError> {
    let bytes = fs::read(path)
        .map_err(|e| WeightsError::Io { path: path.display().to_string(), source: e })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bindings {
        let mut params = Bindings::new();
        params.insert("alpha.w".into(), Tensor::from_vec(&[2, 3], vec![0.5, -1.25, 3.0, 0.0, 7.5, -0.125]));
        params.insert("beta".into(), Tensor::scalar(2.5));
        params.insert("gamma.bias".into(), Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]));
        params
    }

    #[test]
    fn round_trip_preserves_shapes_and_f32_values() {
        let params = sample();
        let back = from_bytes(&to_bytes(&params)).unwrap();
        assert_eq!(back.len(), params.len());
        for (name, tensor) in &params {
            let loaded = &back[name];
            assert_eq!(loaded.shape(), tensor.shape());
            for (a, b) in loaded.data().iter().zip(tensor.data()) {
                assert_eq!(*a, *b as f32 as Real);
            }
        }
    }

    #[test]
    fn serialization_is_deterministic() {
        let params = sample();
        assert_eq!(to_bytes(&params), to_bytes(&params.clone()));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(from_bytes(b"nope"), Err(WeightsError::Format(_))));
        let mut bytes = to_bytes(&sample());
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(from_bytes(&bytes), Err(WeightsError::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(WeightsError::Format(_))));
    }
}
