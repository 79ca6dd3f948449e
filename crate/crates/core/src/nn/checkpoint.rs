//! Versioned binary weight checkpoint.
//!
//! Layout: `b"RIVCWGT\0"`, `u32` version, `u32` layer count, then per layer
//! the weight dims and row-major `f64` values, a `u8` bias flag and the bias
//! values when present. All integers and floats are little-endian; floats are
//! stored by bit pattern so a round trip is exact.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::network::{LayerParams, LayerWeights};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::format::{Reader, Writer};

const MAGIC: &[u8; 8] = b"RIVCWGT\0";
const VERSION: u32 = 1;

fn write_tensor(w: &mut Writer, t: &Tensor) {
    w.dims(t.shape());
    for &v in t.data() {
        w.f64(v);
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    let dims = r.dims()?;
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
    r.check_len(n, 8)?;
    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Tensor::new(dims, data)
}

pub fn checkpoint_bytes(weights: &LayerWeights) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(weights.layers.len() as u32);
    for p in &weights.layers {
        write_tensor(&mut w, &p.weight);
        match &p.bias {
            Some(b) => {
                w.u8(1);
                write_tensor(&mut w, b);
            }
            None => w.u8(0),
        }
    }
    w.finish()
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<LayerWeights> {
    let (mut r, version) = Reader::open(bytes, MAGIC)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..n {
        let weight = read_tensor(&mut r)?;
        let bias = match r.u8()? {
            0 => None,
            1 => Some(read_tensor(&mut r)?),
            f => return Err(Error::Format(format!("bad bias flag {f}"))),
        };
        layers.push(LayerParams { weight, bias });
    }
    r.finish()?;
    Ok(LayerWeights { layers })
}

pub fn save_checkpoint(weights: &LayerWeights, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(weights))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LayerWeights> {
    checkpoint_from_bytes(&fs::read(path)?)
}

/// Git-style content address: SHA-256 over `"blob <len>\0"` followed by the checkpoint bytes.
pub fn content_hash(weights: &LayerWeights) -> String {
    let bytes = checkpoint_bytes(weights);
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_weights, Activation, NetworkSpec};
    use proptest::prelude::*;

    #[test]
    fn roundtrip_with_bias() {
        let mut spec = NetworkSpec::mlp(&[3, 4, 2], Activation::Relu);
        spec.layers[0] = spec.layers[0].with_bias();
        let mut w = init_weights(&spec, 5);
        w.layers[0].bias = Some(Tensor::from_vec(vec![f64::MIN_POSITIVE, -0.0, 1e300, -3.5]));
        let back = checkpoint_from_bytes(&checkpoint_bytes(&w)).unwrap();
        assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&w));
    }

    #[test]
    fn corrupted_files_rejected() {
        let spec = NetworkSpec::mlp(&[3, 4, 2], Activation::Relu);
        let bytes = checkpoint_bytes(&init_weights(&spec, 5));
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint_from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(checkpoint_from_bytes(&extra).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let spec = NetworkSpec::mlp(&[3, 4, 2], Activation::Relu);
        let a = init_weights(&spec, 1);
        assert_eq!(content_hash(&a), content_hash(&a.clone()));
        assert_ne!(content_hash(&a), content_hash(&init_weights(&spec, 2)));
        assert_eq!(content_hash(&a).len(), 64);
    }

    proptest! {
        #[test]
        fn arbitrary_bits_roundtrip(values in prop::collection::vec(any::<u64>(), 1..40)) {
            let data: Vec<f64> = values.iter().map(|b| f64::from_bits(*b)).collect();
            let w = LayerWeights { layers: vec![LayerParams {
                weight: Tensor::new(vec![data.len(), 1], data).unwrap(), bias: None }] };
            let back = checkpoint_from_bytes(&checkpoint_bytes(&w)).unwrap();
            let before: Vec<u64> = w.layers[0].weight.data().iter().map(|v| v.to_bits()).collect();
            let after: Vec<u64> = back.layers[0].weight.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(before, after);
        }
    }
}
