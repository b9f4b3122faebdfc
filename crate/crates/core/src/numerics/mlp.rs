use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// One dense layer: `y = x · Wᵀ + b` with `W: [out, in]`, `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(vec![out_dim, in_dim]),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Small feed-forward network with tanh hidden activations and an
/// identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

/// Per-layer parameter gradients, same shapes as the corresponding layers.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LinearLayer>,
}

impl Mlp {
    /// Network with the given layer widths, weights drawn from
    /// U(-1/sqrt(in), 1/sqrt(in)) and zero biases.
    pub fn random<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let bound = 1.0 / (in_dim as f64).sqrt();
                let data: Vec<f64> = (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                LinearLayer {
                    weight: Tensor::from_vec(vec![out_dim, in_dim], data).unwrap(),
                    bias: Tensor::zeros(vec![out_dim]),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::zeros(w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    /// Zeroes the final layer so the network outputs 0 for every input.
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().expect("mlp has layers");
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Deterministic forward pass over a `[batch, in_dim]` input.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass keeping every activation for the backward pass.
    ///
    /// The cache holds `a_0 = x` and the post-activation output of every
    /// layer (tanh applied everywhere except the last).
    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim() {
            return Err(Error::contract(format!(
                "mlp expects [batch, {}], got {:?}",
                self.in_dim(),
                x.shape()
            )));
        }
        let n_layers = self.layers.len();
        let mut acts: Vec<Tensor> = Vec::with_capacity(n_layers + 1);
        acts.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let is_last = l + 1 == n_layers;
            let mut z = linear_forward(acts.last().unwrap(), layer);
            if !is_last {
                for v in z.data_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, MlpCache { acts }))
    }

    /// Reverse-mode gradients of the forward pass.
    ///
    /// `upstream` must match the output shape. Returns the gradient with
    /// respect to the input and to every layer's parameters.
    pub fn grad(&self, x: &Tensor, upstream: &Tensor) -> Result<(Tensor, MlpGrads)> {
        let (out, cache) = self.forward_cached(x)?;
        if upstream.shape() != out.shape() {
            return Err(Error::contract(format!(
                "upstream shape {:?} does not match output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        Ok(self.backward(&cache, upstream))
    }

    /// Backward pass from a cached forward. `upstream` is dL/d(output).
    pub fn backward(&self, cache: &MlpCache, upstream: &Tensor) -> (Tensor, MlpGrads) {
        let n_layers = self.layers.len();
        let batch = cache.acts[0].shape()[0];
        let mut grads: Vec<LinearLayer> = self
            .layers
            .iter()
            .map(|l| LinearLayer::zeros(l.in_dim(), l.out_dim()))
            .collect();

        // delta = dL/dz_l for the current layer's pre-activation. The output
        // layer has identity activation, so delta starts as upstream itself.
        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &cache.acts[l];
            let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());

            // grad_W[o, i] = sum_b delta[b, o] * input[b, i]
            // grad_b[o]    = sum_b delta[b, o]
            {
                let gw = grads[l].weight.data_mut();
                for b in 0..batch {
                    let drow = delta.row(b);
                    let irow = input.row(b);
                    for o in 0..out_dim {
                        let d = drow[o];
                        if d != 0.0 {
                            let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                            for i in 0..in_dim {
                                grow[i] += d * irow[i];
                            }
                        }
                    }
                }
                let gb = grads[l].bias.data_mut();
                for b in 0..batch {
                    let drow = delta.row(b);
                    for o in 0..out_dim {
                        gb[o] += drow[o];
                    }
                }
            }

            // dL/d(input) = delta · W
            let mut dinput = Tensor::zeros(vec![batch, in_dim]);
            for b in 0..batch {
                let drow = delta.row(b);
                let orow = dinput.row_mut(b);
                for o in 0..out_dim {
                    let d = drow[o];
                    if d != 0.0 {
                        let wrow = &layer.weight.data()[o * in_dim..(o + 1) * in_dim];
                        for i in 0..in_dim {
                            orow[i] += d * wrow[i];
                        }
                    }
                }
            }

            if l > 0 {
                // Chain through the tanh of the previous layer: its cached
                // activation a satisfies tanh'(z) = 1 - a^2.
                let a = &cache.acts[l];
                for (dv, av) in dinput.data_mut().iter_mut().zip(a.data()) {
                    *dv *= 1.0 - av * av;
                }
            }
            delta = dinput;
        }
        (delta, MlpGrads { layers: grads })
    }
}

/// Activations recorded during [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Tensor>,
}

fn linear_forward(x: &Tensor, layer: &LinearLayer) -> Tensor {
    let batch = x.shape()[0];
    let in_dim = layer.in_dim();
    let out_dim = layer.out_dim();
    let mut out = Tensor::zeros(vec![batch, out_dim]);
    let w = layer.weight.data();
    let b = layer.bias.data();
    for r in 0..batch {
        let xrow = x.row(r);
        let orow = out.row_mut(r);
        for o in 0..out_dim {
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for i in 0..in_dim {
                acc += xrow[i] * wrow[i];
            }
            orow[o] = acc;
        }
    }
    out
}
