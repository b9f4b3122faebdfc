use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Ignore label shared by masks and class rasters.
pub const VOID_LABEL: u8 = 255;
/// In-distribution pixel.
pub const LABEL_ID: u8 = 0;
/// Out-of-distribution pixel.
pub const LABEL_OOD: u8 = 1;

/// Per-pixel real-valued score raster; higher = more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::contract(format!(
                "score map {}x{} needs {} values, got {}",
                height,
                width,
                height * width,
                values.len()
            )));
        }
        Ok(ScoreMap { height, width, values })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        ScoreMap { height, width, values: vec![value; height * width] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.width + c] = v;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(vec![self.height, self.width], self.values.clone())
            .expect("score map is well-formed")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::contract(format!(
                "expected rank-2 tensor for score map, got {:?}",
                t.shape()
            )));
        }
        ScoreMap::new(t.shape()[0], t.shape()[1], t.data().to_vec())
    }
}

/// Per-pixel ternary label: 0 = in-distribution, 1 = OoD, 255 = void/ignore.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::contract("label mask size mismatch"));
        }
        if let Some(&bad) = labels
            .iter()
            .find(|&&v| v != LABEL_ID && v != LABEL_OOD && v != VOID_LABEL)
        {
            return Err(Error::contract(format!(
                "label mask may only contain 0/1/255, found {bad}"
            )));
        }
        Ok(LabelMask { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        LabelMask { height, width, labels: vec![label; height * width] }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.labels[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        debug_assert!(v == LABEL_ID || v == LABEL_OOD || v == VOID_LABEL);
        self.labels[r * self.width + c] = v;
    }

    pub fn count(&self, label: u8) -> u64 {
        self.labels.iter().filter(|&&v| v == label).count() as u64
    }
}

/// Per-pixel semantic class ids (`0..C`), with [`VOID_LABEL`] as ignore.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRaster {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<u8>,
}

impl ClassRaster {
    pub fn new(height: usize, width: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::contract("class raster size mismatch"));
        }
        Ok(ClassRaster { height, width, classes })
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.classes[r * self.width + c]
    }
}
