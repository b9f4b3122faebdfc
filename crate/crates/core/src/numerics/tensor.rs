use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit reals.
///
/// All training math runs in f64; f32 is only an on-disk storage option
/// (see [`Tensor::write_to`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the shape/length invariant and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("tensor contains non-finite entries"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &mut self.data[r * w..(r + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Writes the tensor in the raw FBT1 format.
    ///
    /// Layout: magic `FBT1`, u8 dtype tag (0 = f32, 1 = f64), u32 rank,
    /// one u64 per dimension, then the row-major payload. All integers and
    /// floats little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W, dtype: Dtype) -> Result<()> {
        w.write_all(b"FBT1")?;
        w.write_all(&[dtype as u8])?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match dtype {
            Dtype::F32 => {
                for &v in &self.data {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            Dtype::F64 => {
                for &v in &self.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Reads a tensor in the FBT1 format; f32 payloads are widened to f64.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"FBT1" {
            return Err(Error::Format(format!(
                "bad tensor magic {:?}, expected FBT1",
                magic
            )));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let dtype = match tag[0] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        };
        let mut rank_buf = [0u8; 4];
        r.read_exact(&mut rank_buf)?;
        let rank = u32::from_le_bytes(rank_buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut dim_buf = [0u8; 8];
            r.read_exact(&mut dim_buf)?;
            shape.push(u64::from_le_bytes(dim_buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        match dtype {
            Dtype::F32 => {
                let mut buf = [0u8; 4];
                for _ in 0..numel {
                    r.read_exact(&mut buf)?;
                    data.push(f32::from_le_bytes(buf) as f64);
                }
            }
            Dtype::F64 => {
                let mut buf = [0u8; 8];
                for _ in 0..numel {
                    r.read_exact(&mut buf)?;
                    data.push(f64::from_le_bytes(buf));
                }
            }
        }
        Tensor::from_vec(shape, data)
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f, dtype)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Tensor::read_from(&mut f)
    }
}

/// On-disk element type for the FBT1 format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}
