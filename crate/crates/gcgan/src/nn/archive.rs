//! GCA1 checkpoint format.
//!
//! Layout: magic `GCA1`, u32-le tensor count, then per tensor in
//! lexicographic name order: u16-le name length, UTF-8 name, u8 ndim,
//! ndim x u32-le dims, f32-le row-major payload. Round-trips bit-exactly.

use super::tensor::Tensor;
use super::NnError;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GCA1";

/// Ordered map of named, shape-annotated f32 tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: BTreeMap<String, Tensor<f32>>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<f32>) -> Result<(), NnError> {
        if name.len() > u16::MAX as usize {
            return Err(NnError::Archive(format!("name too long: {}", name.len())));
        }
        if tensor.shape().len() > u8::MAX as usize {
            return Err(NnError::Archive("too many dimensions".into()));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        // BTreeMap iteration is already lexicographic.
        for (name, tensor) in &self.entries {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[tensor.shape().len() as u8])?;
            for &d in tensor.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Archive(format!(
                "bad magic {:?}, expected {:?}",
                magic, MAGIC
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = BTreeMap::new();
        let mut prev_name: Option<String> = None;
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            read_exact(&mut r, &mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| NnError::Archive(format!("bad name: {e}")))?;
            if let Some(prev) = &prev_name {
                if *prev >= name {
                    return Err(NnError::Archive(format!(
                        "names not strictly sorted: {prev:?} then {name:?}"
                    )));
                }
            }
            let mut ndim = [0u8; 1];
            read_exact(&mut r, &mut ndim)?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                shape.push(read_u32(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = vec![0f32; n];
            for v in data.iter_mut() {
                let mut b = [0u8; 4];
                read_exact(&mut r, &mut b)?;
                *v = f32::from_le_bytes(b);
            }
            if entries.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(NnError::Archive(format!("duplicate name {name:?}")));
            }
            prev_name = Some(name);
        }
        Ok(TensorArchive { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), NnError> {
    r.read_exact(buf)
        .map_err(|_| NnError::Archive("truncated payload".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, NnError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_archive_is_header_only() {
        let arch = TensorArchive::new();
        let mut buf = Vec::new();
        arch.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8);
        let back = TensorArchive::read_from(buf.as_slice()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut arch = TensorArchive::new();
        let t = Tensor::new(vec![2, 2], vec![1.5, -0.25, 3.75e-8, -1.0]).unwrap();
        arch.insert("b".into(), t.clone()).unwrap();
        arch.insert("a".into(), Tensor::zeros(vec![3])).unwrap();
        let mut buf = Vec::new();
        arch.write_to(&mut buf).unwrap();
        let back = TensorArchive::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, arch);
        let tb = back.get("b").unwrap();
        for (x, y) in tb.data().iter().zip(t.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn names_stored_lexicographically() {
        let mut arch = TensorArchive::new();
        arch.insert("b".into(), Tensor::zeros(vec![1])).unwrap();
        arch.insert("a".into(), Tensor::zeros(vec![1])).unwrap();
        let mut buf = Vec::new();
        arch.write_to(&mut buf).unwrap();
        // First name after header: len 1 then 'a'.
        assert_eq!(buf[8..10], (1u16).to_le_bytes());
        assert_eq!(buf[10], b'a');
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let err = TensorArchive::read_from(&b"NOPE\x00\x00\x00\x00"[..]).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        let mut arch = TensorArchive::new();
        arch.insert("t".into(), Tensor::zeros(vec![4])).unwrap();
        let mut buf = Vec::new();
        arch.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = TensorArchive::read_from(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn duplicate_names_rejected_on_load() {
        // Hand-build a file with the same name twice.
        let mut buf = Vec::new();
        buf.extend_from_slice(b"GCA1");
        buf.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            buf.extend_from_slice(&1u16.to_le_bytes());
            buf.push(b'x');
            buf.push(1);
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(&1.0f32.to_le_bytes());
        }
        let err = TensorArchive::read_from(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("sorted") || err.to_string().contains("duplicate"));
    }
}
