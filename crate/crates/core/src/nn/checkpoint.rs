//! `VTAC1` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VTAC1"                       5-byte magic
//! u32 entry count
//! per entry (manifest):
//!     u16 name length, name bytes (UTF-8)
//!     u8  dtype (0 = f32)
//!     u8  rank
//!     u32 dims[rank]
//! payloads: for each entry in manifest order, numel raw f32 values
//! ```
//!
//! The same container carries model checkpoints (optionally with Adam
//! state) and dataset payloads.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{DType, NnError, ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 5] = b"VTAC1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, tensor: Tensor<f32>) {
        assert!(self.get(name).is_none(), "duplicate checkpoint entry {name}");
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload: usize = self.entries.iter().map(|(_, t)| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(64 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let bytes = name.as_bytes();
            assert!(bytes.len() <= u16::MAX as usize, "entry name too long: {name}");
            assert!(t.shape().len() <= u8::MAX as usize, "rank too large for {name}");
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
            out.push(DType::F32.code());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for (_, t) in &self.entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".to_string()));
        }
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = core::str::from_utf8(r.take(len)?)
                .map_err(|_| NnError::Checkpoint("entry name is not UTF-8".to_string()))?
                .to_string();
            let dtype = r.u8()?;
            if DType::from_code(dtype) != Some(DType::F32) {
                return Err(NnError::Checkpoint(format!("unsupported dtype code {dtype} for {name}")));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            manifest.push((name, shape));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n = super::numel(&shape);
            let raw = r.take(n.checked_mul(4).ok_or_else(|| NnError::Checkpoint("size overflow".to_string()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.push((name, Tensor::new(&shape, data)));
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    /// Appends every parameter of `store` as `{prefix}/{name}`; with
    /// `with_adam`, also the moment estimates and the step counter.
    pub fn add_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>, with_adam: bool) {
        for p in store.params() {
            self.push(&format!("{prefix}/{}", p.name), p.value.cast());
            if with_adam {
                self.push(&format!("{prefix}/{}@adam.m", p.name), Tensor::new(p.value.shape(), to_f32(&p.m)));
                self.push(&format!("{prefix}/{}@adam.v", p.name), Tensor::new(p.value.shape(), to_f32(&p.v)));
            }
        }
        if with_adam {
            assert!(store.adam_steps() < (1 << 24), "adam step counter exceeds f32 integer range");
            self.push(&format!("{prefix}@adam.t"), Tensor::scalar(store.adam_steps() as f32));
        }
    }

    /// Restores values (and Adam state when `with_adam`) into a store with
    /// the same manifest.
    pub fn load_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>, with_adam: bool) -> Result<(), NnError> {
        for p in store.params_mut() {
            let key = format!("{prefix}/{}", p.name);
            let t = self.get(&key).ok_or_else(|| NnError::MissingParam(key.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(NnError::ShapeMismatch { name: key, expected: p.value.shape().to_vec(), found: t.shape().to_vec() });
            }
            copy_into(p.value.data_mut(), t.data());
            if with_adam {
                let m = self.get(&format!("{key}@adam.m")).ok_or_else(|| NnError::MissingParam(format!("{key}@adam.m")))?;
                let v = self.get(&format!("{key}@adam.v")).ok_or_else(|| NnError::MissingParam(format!("{key}@adam.v")))?;
                copy_into(&mut p.m, m.data());
                copy_into(&mut p.v, v.data());
            }
        }
        if with_adam {
            let t = self.get(&format!("{prefix}@adam.t")).ok_or_else(|| NnError::MissingParam(format!("{prefix}@adam.t")))?;
            store.set_adam_steps(t.data()[0] as u64);
        }
        Ok(())
    }
}

fn to_f32<T: Scalar>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.to_f64() as f32).collect()
}

fn copy_into<T: Scalar>(dst: &mut [T], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = T::from_f64(*s as f64);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::Checkpoint("unexpected end of data".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut c = Checkpoint::new();
        c.push("w", Tensor::new(&[2], alloc::vec![1.0f32, -2.0]));
        let bytes = c.encode();
        let mut expected = b"VTAC1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.push(b'w');
        expected.push(0);
        expected.push(1);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_truncated_and_trailing_data() {
        let mut c = Checkpoint::new();
        c.push("a", Tensor::new(&[3], alloc::vec![1.0f32, 2.0, 3.0]));
        let bytes = c.encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::decode(&longer).is_err());
        assert!(Checkpoint::decode(b"VTAC2\0\0\0\0").is_err());
    }

    #[test]
    fn store_with_adam_state_round_trips() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("layer.weight", Tensor::new(&[2, 2], alloc::vec![0.5, 1.5, -0.25, 2.0]));
        store.param_mut(id).grad.copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        crate::nn::adam_step(&mut store, &crate::nn::AdamConfig::default());
        let mut c = Checkpoint::new();
        c.add_store("net", &store, true);
        let decoded = Checkpoint::decode(&c.encode()).unwrap();
        let mut restored = ParamStore::<f32>::new();
        restored.add("layer.weight", Tensor::zeros(&[2, 2]));
        decoded.load_store("net", &mut restored, true).unwrap();
        assert!(restored.values_equal(&store));
        assert_eq!(restored.adam_steps(), 1);
        assert_eq!(restored.param(id).m, store.param(id).m);
        assert_eq!(restored.param(id).v, store.param(id).v);
    }

    proptest! {
        #[test]
        fn encode_decode_encode_is_byte_identical(
            tensors in proptest::collection::vec(
                (proptest::collection::vec(1usize..5, 0..4), any::<u64>()), 0..6)
        ) {
            let mut c = Checkpoint::new();
            for (i, (shape, seed)) in tensors.iter().enumerate() {
                let n = crate::nn::numel(shape);
                let data = (0..n).map(|k| f32::from_bits((seed.wrapping_mul(k as u64 + 7) >> 7) as u32 & 0x7f7f_ffff)).collect();
                c.push(&alloc::format!("t{i}"), Tensor::new(shape, data));
            }
            let bytes = c.encode();
            let back = Checkpoint::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}
