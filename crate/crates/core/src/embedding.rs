use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Strided grid of D-dimensional feature vectors produced by an encoder tap.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub stride: usize,
    pub layer_id: String,
    data: Vec<f64>,
}

impl EmbeddingMap {
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        stride: usize,
        layer_id: impl Into<String>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != height * width * dim {
            return Err(Error::contract(format!(
                "embedding map {}x{}x{} needs {} values, got {}",
                height,
                width,
                dim,
                height * width * dim,
                data.len()
            )));
        }
        Ok(EmbeddingMap { height, width, dim, stride, layer_id: layer_id.into(), data })
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.width + c) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Cells flattened into a `[cells, dim]` tensor, row-major.
    pub fn to_matrix(&self) -> Tensor {
        Tensor::from_vec(vec![self.cells(), self.dim], self.data.clone())
            .expect("embedding map is well-formed")
    }
}

/// Flattened reference set of embedding vectors with optional per-vector
/// class associations and cached norms for cosine queries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: Vec<f64>,
    norms: Vec<f64>,
    class_sets: Option<Vec<Vec<u16>>>,
    pub stride: usize,
}

impl EmbeddingSet {
    /// Builds a set from row-major `[len/dim, dim]` data. Rejects vectors
    /// with norm below 1e-12 (the cosine kernel is undefined there).
    pub fn new(dim: usize, vectors: Vec<f64>, stride: usize) -> Result<Self> {
        if dim == 0 || vectors.len() % dim != 0 {
            return Err(Error::contract("embedding data length not divisible by dim"));
        }
        let n = vectors.len() / dim;
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let row = &vectors[i * dim..(i + 1) * dim];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::contract(format!(
                    "embedding vector {i} has near-zero norm {norm:e}"
                )));
            }
            norms.push(norm);
        }
        Ok(EmbeddingSet { dim, vectors, norms, class_sets: None, stride })
    }

    pub fn with_class_sets(mut self, class_sets: Vec<Vec<u16>>) -> Result<Self> {
        if class_sets.len() != self.len() {
            return Err(Error::contract(format!(
                "class_sets has {} entries but the set holds {} vectors",
                class_sets.len(),
                self.len()
            )));
        }
        self.class_sets = Some(class_sets);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn class_sets(&self) -> Option<&[Vec<u16>]> {
        self.class_sets.as_deref()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(vec![self.len(), self.dim], self.vectors.clone())
            .expect("embedding set is well-formed")
    }

    pub fn from_tensor(t: &Tensor, stride: usize) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::contract(format!(
                "expected rank-2 tensor for embedding set, got {:?}",
                t.shape()
            )));
        }
        EmbeddingSet::new(t.shape()[1], t.data().to_vec(), stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_norm_vector_rejected() {
        let err = EmbeddingSet::new(2, vec![1.0, 0.0, 0.0, 0.0], 1);
        assert!(err.is_err());
    }

    #[test]
    fn class_set_length_checked() {
        let set = EmbeddingSet::new(2, vec![1.0, 0.0, 0.0, 1.0], 1).unwrap();
        assert!(set.with_class_sets(vec![vec![0]]).is_err());
    }
}
