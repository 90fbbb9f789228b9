//! Binary model files.
//!
//! Layout, all little-endian: the magic `CSRV`, a u32 format version, a u32
//! layer-dimension count followed by that many u32 dims, an f64 angle scale,
//! the f64 input means and sds, then for each layer its row-major `out × in`
//! weight matrix followed by its biases.

use std::path::Path;

use super::mlp::{Layer, MlpModel};
use super::{EstimatorError, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CSRV";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn model_to_bytes(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (model.parameter_count() + 2 * model.input_dim()));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dims().len() as u32).to_le_bytes());
    for d in model.dims() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    let mut put = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    put(&[model.angle_scale()]);
    put(model.input_mean());
    put(model.input_sd());
    for l in model.layers() {
        put(&l.weights);
        put(&l.biases);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            EstimatorError::Format(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| EstimatorError::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(EstimatorError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(EstimatorError::Format(format!("unsupported version {version}")));
    }
    let n_dims = r.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(EstimatorError::Format(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    if dims.iter().any(|d| *d == 0 || *d > 1 << 20) {
        return Err(EstimatorError::Format(format!("implausible dims {dims:?}")));
    }
    let angle_scale = r.f64s(1)?[0];
    let mean = r.f64s(dims[0])?;
    let sd = r.f64s(dims[0])?;
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let weights = r.f64s(w[0] * w[1])?;
        let biases = r.f64s(w[1])?;
        layers.push(Layer { in_dim: w[0], out_dim: w[1], weights, biases });
    }
    if r.pos != bytes.len() {
        return Err(EstimatorError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    MlpModel::from_parts(dims, layers, mean, sd, angle_scale)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    crate::io::write_file(path, &model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn model() -> MlpModel {
        let mut m = MlpModel::he_uniform(&[6, 5, 4], 10.0, &mut substream(1, "init", 0)).unwrap();
        m.set_normalization(vec![0.5; 6], vec![2.0; 6]).unwrap();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = model_to_bytes(&m);
        assert_eq!(&bytes[..4], b"CSRV");
        assert_eq!(model_from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn layout_matches_description() {
        let bytes = model_to_bytes(&model());
        let expected = 4 + 4 + 4 + 3 * 4 + 8 * (1 + 6 + 6 + 6 * 5 + 5 + 5 * 4 + 4);
        assert_eq!(bytes.len(), expected);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 10.0);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = model_to_bytes(&model());
        assert!(model_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(model_from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(model_from_bytes(&bad).is_err());
        let mut ver = bytes;
        ver[4] = 2;
        assert!(model_from_bytes(&ver).is_err());
    }
}
