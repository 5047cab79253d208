//! Named-tensor archive: the binary section shared by model files and
//! checkpoints. Little-endian throughout, version-tagged.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Array4};

use crate::error::{Error, Result};
use crate::FORMAT_VERSION;

const MAGIC: &[u8; 4] = b"MXTA";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn from_array1(name: String, a: &Array1<f32>) -> Self {
        TensorEntry {
            name,
            dims: vec![a.len()],
            data: a.to_vec(),
        }
    }

    pub fn from_array2(name: String, a: &Array2<f32>) -> Self {
        TensorEntry {
            name,
            dims: a.shape().to_vec(),
            data: a.as_slice().expect("contiguous").to_vec(),
        }
    }

    pub fn from_array4(name: String, a: &Array4<f32>) -> Self {
        TensorEntry {
            name,
            dims: a.shape().to_vec(),
            data: a.as_slice().expect("contiguous").to_vec(),
        }
    }

    fn check_dims(&self, expected: &[usize]) -> Result<()> {
        if self.dims != expected {
            return Err(Error::format(format!(
                "tensor `{}` has dims {:?}, expected {:?}",
                self.name, self.dims, expected
            )));
        }
        Ok(())
    }

    pub fn into_array1_like(self, target: &mut Array1<f32>) -> Result<()> {
        self.check_dims(&[target.len()])?;
        target
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&self.data);
        Ok(())
    }

    pub fn into_array2_like(self, target: &mut Array2<f32>) -> Result<()> {
        self.check_dims(target.shape())?;
        target
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&self.data);
        Ok(())
    }

    pub fn into_array4_like(self, target: &mut Array4<f32>) -> Result<()> {
        self.check_dims(target.shape())?;
        target
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&self.data);
        Ok(())
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn write_archive<W: Write>(w: &mut W, entries: &[TensorEntry]) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u64(w, entries.len() as u64)?;
    for e in entries {
        write_u32(w, e.name.len() as u32)?;
        w.write_all(e.name.as_bytes())?;
        write_u32(w, e.dims.len() as u32)?;
        for &d in &e.dims {
            write_u64(w, d as u64)?;
        }
        write_u64(w, e.data.len() as u64)?;
        let expected: usize = e.dims.iter().product();
        if expected != e.data.len() {
            return Err(Error::format(format!(
                "tensor `{}`: dims {:?} disagree with {} values",
                e.name,
                e.dims,
                e.data.len()
            )));
        }
        let mut bytes = Vec::with_capacity(e.data.len() * 4);
        for &v in &e.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_archive<R: Read>(r: &mut R) -> Result<Vec<TensorEntry>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("bad tensor archive magic".to_string()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "tensor archive version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = read_u64(r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format("tensor name not utf-8"))?;
        let ndim = read_u32(r)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u64(r)? as usize);
        }
        let len = read_u64(r)? as usize;
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(TensorEntry { name, dims, data });
    }
    Ok(entries)
}

/// Flat f32 blobs (optimizer state) piggyback on the same entry type.
pub fn entries_from_blobs(prefix: &str, blobs: &[Vec<f32>]) -> Vec<TensorEntry> {
    blobs
        .iter()
        .enumerate()
        .map(|(i, b)| TensorEntry {
            name: format!("{prefix}.{i}"),
            dims: vec![b.len()],
            data: b.clone(),
        })
        .collect()
}

pub fn blobs_from_entries(prefix: &str, entries: &[TensorEntry]) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    let mut i = 0;
    loop {
        let name = format!("{prefix}.{i}");
        match entries.iter().find(|e| e.name == name) {
            Some(e) => out.push(e.data.clone()),
            None => break,
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_is_bit_exact() {
        let entries = vec![
            TensorEntry {
                name: "a.w".into(),
                dims: vec![2, 3],
                data: vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.1, -0.0],
            },
            TensorEntry {
                name: "b".into(),
                dims: vec![1],
                data: vec![42.0],
            },
        ];
        let mut buf = Vec::new();
        write_archive(&mut buf, &entries).unwrap();
        let back = read_archive(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), entries.len());
        for (a, b) in back.iter().zip(entries.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.dims, b.dims);
            let a_bits: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let b_bits: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a_bits, b_bits);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOPE\x01\x00\x00\x00".to_vec();
        assert!(read_archive(&mut buf.as_slice()).is_err());
    }
}
