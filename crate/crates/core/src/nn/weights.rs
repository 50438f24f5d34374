//! Versioned little-endian container for named tensors.
//!
//! ```text
//! "LCF1" | version u32 | tensor_count u32 |
//!   per tensor: name_len u32 | name (UTF-8) | rank u32 | dims u32 × rank | f32 × Π dims
//! ```

use super::{NnError, Tensor};

pub const MAGIC: [u8; 4] = *b"LCF1";
pub const VERSION: u32 = 1;

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightFile {
    pub tensors: Vec<(String, Tensor)>,
}

impl WeightFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(NnError::BadMagic {
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(NnError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let count = r.u32("tensor_count")?;
        let mut file = WeightFile::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| NnError::InvalidName)?
                .to_owned();
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(NnError::Truncated("payload"))?;
            let payload = r.take(len.checked_mul(4).ok_or(NnError::Truncated("payload"))?, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            file.push(name, Tensor::from_vec(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(NnError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(file)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).ok_or(NnError::Truncated(what))?;
        if end > self.bytes.len() {
            return Err(NnError::Truncated(what));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, NnError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> WeightFile {
        let mut f = WeightFile::new();
        f.push("a.weight", Tensor::from_vec(&[2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, -7.25, 1e-30]).unwrap());
        f.push("b", Tensor::from_vec(&[1], vec![42.0]).unwrap());
        f
    }

    #[test]
    fn layout_is_exact() {
        let mut f = WeightFile::new();
        f.push("w", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let bytes = f.to_bytes();
        let expected: Vec<u8> = [
            b"LCF1".as_slice(),
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            b"w",
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corrupt_magic_is_named() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        let err = WeightFile::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, NnError::BadMagic { .. }));
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn version_and_truncation_errors_are_distinct() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        assert_eq!(
            WeightFile::from_bytes(&bytes).unwrap_err(),
            NnError::VersionMismatch { found: 2, expected: 1 }
        );
        let bytes = sample().to_bytes();
        let err = WeightFile::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err, NnError::Truncated("payload"));
        let err = WeightFile::from_bytes(&bytes[..6]).unwrap_err();
        assert_eq!(err, NnError::Truncated("version"));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in proptest::collection::vec(
                ("[a-z.0-9]{1,12}", proptest::collection::vec(any::<u32>(), 0..20)),
                0..5,
            )
        ) {
            let mut f = WeightFile::new();
            for (name, bits) in &entries {
                let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
                f.push(name.clone(), Tensor::from_vec(&[data.len()], data).unwrap());
            }
            let bytes = f.to_bytes();
            let back = WeightFile::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            for ((_, a), (_, b)) in f.tensors.iter().zip(&back.tensors) {
                let abits: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }
}
