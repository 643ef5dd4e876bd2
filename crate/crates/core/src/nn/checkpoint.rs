//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CKRW" | version u32 | n_layers u32
//! per layer: tag_len u32, tag utf-8, n_tensors u32, per tensor: ndim u32, dims u64…
//! payload: every tensor's values as f64, in manifest order
//! ext_len u64 | ext bytes (model-specific metadata, may be empty)
//! ```

use std::io::{Read, Write};

use super::tensor::Mat;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"CKRW";
pub const VERSION: u32 = 1;

/// One manifest entry: a layer kind and the shapes of its tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub kind: String,
    pub shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub layers: Vec<LayerEntry>,
    /// Flattened tensors, in manifest order.
    pub tensors: Vec<Mat>,
    pub ext: Vec<u8>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        let n_shapes: usize = self.layers.iter().map(|l| l.shapes.len()).sum();
        if n_shapes != self.tensors.len() {
            return Err(NnError::Checkpoint(format!("manifest lists {n_shapes} tensors, have {}", self.tensors.len())));
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.kind.len() as u32).to_le_bytes())?;
            w.write_all(l.kind.as_bytes())?;
            w.write_all(&(l.shapes.len() as u32).to_le_bytes())?;
            for s in &l.shapes {
                w.write_all(&(s.len() as u32).to_le_bytes())?;
                for &d in s {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
            }
        }
        for t in &self.tensors {
            for v in t.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.ext.len() as u64).to_le_bytes())?;
        w.write_all(&self.ext)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let n_layers = read_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let len = read_u32(&mut r)? as usize;
            let mut tag = vec![0u8; len];
            r.read_exact(&mut tag)?;
            let kind = String::from_utf8(tag).map_err(|_| NnError::Checkpoint("tag is not utf-8".into()))?;
            let n_t = read_u32(&mut r)? as usize;
            let mut shapes = Vec::with_capacity(n_t);
            for _ in 0..n_t {
                let nd = read_u32(&mut r)? as usize;
                let dims = (0..nd).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
                shapes.push(dims);
            }
            layers.push(LayerEntry { kind, shapes });
        }
        let mut tensors = Vec::new();
        for s in layers.iter().flat_map(|l| &l.shapes) {
            let (rows, cols) = match s.as_slice() {
                [] => (1, 1),
                [n] => (1, *n),
                [a, b] => (*a, *b),
                _ => return Err(NnError::Checkpoint(format!("rank {} tensors are not supported", s.len()))),
            };
            let mut data = vec![0.0; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            tensors.push(Mat::from_vec(rows, cols, data));
        }
        let ext_len = read_u64(&mut r)? as usize;
        let mut ext = vec![0u8; ext_len];
        r.read_exact(&mut ext)?;
        Ok(Self { layers, tensors, ext })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NnError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NnError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let ck = Checkpoint {
            layers: vec![
                LayerEntry { kind: "dense".into(), shapes: vec![vec![2, 3], vec![1, 3]] },
                LayerEntry { kind: "scale_bias".into(), shapes: vec![vec![1, 1]] },
            ],
            tensors: vec![
                Mat::from_vec(2, 3, vec![0.1, -2.5, 3.0, f64::MIN_POSITIVE, 1e300, -0.0]),
                Mat::row_vector(&[1.0, 2.0, 3.0]),
                Mat::row_vector(&[std::f64::consts::PI]),
            ],
            ext: b"{\"r\":2}".to_vec(),
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CKRW");
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.layers, ck.layers);
        for (a, b) in back.tensors.iter().zip(&ck.tensors) {
            let ab: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back.ext, ck.ext);
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(Checkpoint::read_from(&b"XXXX\x01\0\0\0"[..]).is_err());
    }
}
