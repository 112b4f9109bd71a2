//! `SERMLP01` model checkpoints.
//!
//! Layout, little-endian: magic, `u32` dim count, that many `u32` layer dims,
//! then per layer the `fan_in × fan_out` weights row-major followed by the
//! biases, all as `f32`.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{ClassifierError, Mlp, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SERMLP01";

impl<F: Real> Mlp<F> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let dims = self.layer_dims();
        let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * self.num_parameters());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter().chain(b.iter()) {
                out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take4(&mut self) -> Result<[u8; 4], ClassifierError> {
        let chunk = self
            .bytes
            .get(self.at..self.at + 4)
            .ok_or_else(|| ClassifierError::Checkpoint(format!("truncated at byte {}", self.at)))?;
        self.at += 4;
        Ok(chunk.try_into().expect("four bytes"))
    }

    fn u32(&mut self) -> Result<usize, ClassifierError> {
        Ok(u32::from_le_bytes(self.take4()?) as usize)
    }

    fn f32(&mut self) -> Result<f32, ClassifierError> {
        Ok(f32::from_le_bytes(self.take4()?))
    }
}

pub fn model_from_checkpoint_bytes(bytes: &[u8]) -> Result<Mlp<f32>, ClassifierError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ClassifierError::Checkpoint("missing SERMLP01 magic".into()));
    }
    let mut cur = Cursor { bytes, at: 8 };
    let count = cur.u32()?;
    if count < 2 || count > (bytes.len() - 12) / 4 {
        return Err(ClassifierError::Checkpoint(format!("implausible layer count {count}")));
    }
    let dims: Vec<usize> = (0..count).map(|_| cur.u32()).collect::<Result<_, _>>()?;
    let params: usize = dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    if bytes.len() - cur.at != 4 * params {
        return Err(ClassifierError::Checkpoint(format!(
            "expected {} parameter bytes for dims {dims:?}, found {}",
            4 * params,
            bytes.len() - cur.at
        )));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for p in dims.windows(2) {
        let w: Vec<f32> = (0..p[0] * p[1]).map(|_| cur.f32()).collect::<Result<_, _>>()?;
        let b: Vec<f32> = (0..p[1]).map(|_| cur.f32()).collect::<Result<_, _>>()?;
        weights.push(Array2::from_shape_vec((p[0], p[1]), w).expect("sized above"));
        biases.push(Array1::from(b));
    }
    Mlp::from_parameters(weights, biases).map_err(|e| ClassifierError::Checkpoint(e.to_string()))
}

pub fn write_checkpoint<F: Real>(model: &Mlp<F>, path: &Path) -> Result<(), ClassifierError> {
    std::fs::write(path, model.to_checkpoint_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Mlp<f32>, ClassifierError> {
    model_from_checkpoint_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let m = Mlp::<f32>::new(&[7, 5, 3, 2], 9).unwrap();
        let bytes = m.to_checkpoint_bytes();
        assert_eq!(&bytes[..8], b"SERMLP01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 12 + 16 + 4 * m.num_parameters());
        assert_eq!(model_from_checkpoint_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn first_weight_is_row_major() {
        let mut m = Mlp::<f32>::zeros(&[2, 3]).unwrap();
        m.set_parameter(1, 1.5);
        let bytes = m.to_checkpoint_bytes();
        let at = 8 + 4 + 8 + 4;
        assert_eq!(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()), 1.5);
        assert_eq!(m.weights()[0][[0, 1]], 1.5);
    }

    #[test]
    fn corrupt_inputs() {
        let m = Mlp::<f32>::new(&[3, 2], 1).unwrap();
        let mut bytes = m.to_checkpoint_bytes();
        assert!(model_from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(model_from_checkpoint_bytes(b"SERMLP0").is_err());
        bytes[0] = b'X';
        assert!(model_from_checkpoint_bytes(&bytes).is_err());
        let mut nan = m.to_checkpoint_bytes();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(model_from_checkpoint_bytes(&nan).is_err());
    }
}
