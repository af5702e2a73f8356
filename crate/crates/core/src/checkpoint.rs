//! Binary tensor containers.
//!
//! `RCK1` (checkpoints), little-endian:
//!
//! ```text
//! "RCK1" u32:count { u16:name_len name:utf8 u8:rank u32:extent*rank f32:payload* }*
//! ```
//!
//! `RSF1` (feature caches) is the same layout without the name fields.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::ParamStore;
use crate::tensor::{numel, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RCK1";
pub const FEATURE_MAGIC: &[u8; 4] = b"RSF1";

/// Ordered list of named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: &ParamStore<f32>) -> Self {
        Checkpoint {
            entries: params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate checkpoint entry `{name}`"
            )));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::Argument(format!(
                "entry name too long: {} bytes",
                name.len()
            )));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) -> Result<()> {
        self.push(name, Tensor::scalar(v as f32))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks `{name}`")))?;
        if t.len() != 1 {
            return Err(Error::Integrity(format!("`{name}` is not a scalar")));
        }
        Ok(t.item() as f64)
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    /// Parameters under `prefix`, with the prefix stripped.
    pub fn params_with_prefix(&self, prefix: &str) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        for (name, t) in &self.entries {
            if let Some(rest) = name.strip_prefix(prefix) {
                store.add(rest, t.clone())?;
            }
        }
        Ok(store)
    }

    pub fn extend_params(&mut self, prefix: &str, params: &ParamStore<f32>) -> Result<()> {
        for p in params.iter() {
            self.push(format!("{prefix}{}", p.name), p.value.clone())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            encode_tensor(&mut out, t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let count = r.u32()? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format {
                    offset: at as u64,
                    msg: "entry name is not UTF-8".into(),
                })?
                .to_owned();
            let t = r.tensor()?;
            ck.push(name, t)?;
        }
        r.finish()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn encode_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.reserve(4 * t.len());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_features(tensors: &[Tensor<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        encode_tensor(&mut out, t);
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Vec<Tensor<f32>>> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURE_MAGIC)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        out.push(r.tensor()?);
    }
    r.finish()?;
    Ok(out)
}

pub fn write_features(path: &Path, tensors: &[Tensor<f32>]) -> Result<()> {
    write_atomic(path, &encode_features(tensors))
}

pub fn read_features(path: &Path) -> Result<Vec<Tensor<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            self.pos = 0;
            return Err(self.err(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u32()? as usize;
            if d == 0 {
                self.pos = at;
                return Err(self.err("zero extent"));
            }
            shape.push(d);
        }
        let n = numel(&shape);
        let raw = self.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(&shape, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn layout_is_exact() {
        let mut ck = Checkpoint::new();
        ck.push("ab", Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap())
            .unwrap();
        let b = ck.to_bytes();
        let mut expected = b"RCK1".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u16.to_le_bytes());
        expected.extend(b"ab");
        expected.push(1);
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(b, expected);

        let f = encode_features(&[Tensor::scalar(0.5)]);
        let mut expected = b"RSF1".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.push(1);
        expected.extend(1u32.to_le_bytes());
        expected.extend(0.5f32.to_le_bytes());
        assert_eq!(f, expected);
    }

    #[test]
    fn truncated_and_bad_magic_are_format_errors() {
        let mut ck = Checkpoint::new();
        ck.push("w", Tensor::zeros(&[3, 2])).unwrap();
        let b = ck.to_bytes();
        for cut in [0, 3, 8, 12, b.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&b[..cut]),
                Err(Error::Format { .. })
            ));
        }
        assert!(matches!(
            Checkpoint::from_bytes(b"XXXX\0\0\0\0"),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(decode_features(&b).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..5),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut ck = Checkpoint::new();
            for (i, s) in shapes.iter().enumerate() {
                ck.push(format!("layer{i}/w"), Tensor::randn(s, &mut rng)).unwrap();
            }
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back.entries().len(), ck.entries().len());
            for ((na, ta), (nb, tb)) in ck.entries().iter().zip(back.entries()) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
