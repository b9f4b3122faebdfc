//! Flow model persistence: a single `FBF1` file holding the dimension and
//! the ordered step list, with every parameter tensor in the FBT1 format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{BatchNormBijector, BnMode, CouplingLayer, FlowModel, FlowStep};
use crate::numerics::{Dtype, LinearLayer, Mlp, Tensor};

const STEP_COUPLING: u8 = 0;
const STEP_BATCHNORM: u8 = 1;
const STEP_PERMUTATION: u8 = 2;

impl FlowModel {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"FBF1")?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.steps().len() as u32).to_le_bytes())?;
        for step in self.steps() {
            match step {
                FlowStep::Coupling(c) => {
                    w.write_all(&[STEP_COUPLING, c.parity])?;
                    w.write_all(&c.scale_clamp.to_le_bytes())?;
                    write_mlp(w, &c.scale_net)?;
                    write_mlp(w, &c.shift_net)?;
                }
                FlowStep::BatchNorm(bn) => {
                    w.write_all(&[STEP_BATCHNORM])?;
                    w.write_all(&bn.momentum.to_le_bytes())?;
                    w.write_all(&bn.eps.to_le_bytes())?;
                    let dim = bn.dim();
                    Tensor::from_vec(vec![dim], bn.running_mean.clone())?
                        .write_to(w, Dtype::F64)?;
                    Tensor::from_vec(vec![dim], bn.running_var.clone())?
                        .write_to(w, Dtype::F64)?;
                }
                FlowStep::Permutation(p) => {
                    w.write_all(&[STEP_PERMUTATION])?;
                    w.write_all(&(p.len() as u32).to_le_bytes())?;
                    for &i in p {
                        w.write_all(&(i as u64).to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Loads a model; batch-norm steps come back in inference mode.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"FBF1" {
            return Err(Error::Format(format!(
                "bad flow magic {:?}, expected FBF1",
                magic
            )));
        }
        let dim = read_u32(r)? as usize;
        let n_steps = read_u32(r)? as usize;
        let mut steps = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let tag = read_u8(r)?;
            match tag {
                STEP_COUPLING => {
                    let parity = read_u8(r)?;
                    let scale_clamp = read_f64(r)?;
                    if scale_clamp <= 0.0 || !scale_clamp.is_finite() {
                        return Err(Error::Format("scale clamp must be positive".into()));
                    }
                    let scale_net = read_mlp(r)?;
                    let shift_net = read_mlp(r)?;
                    steps.push(FlowStep::Coupling(CouplingLayer::from_parts(
                        parity, scale_net, shift_net, scale_clamp,
                    )));
                }
                STEP_BATCHNORM => {
                    let momentum = read_f64(r)?;
                    let eps = read_f64(r)?;
                    let mean = Tensor::read_from(r)?;
                    let var = Tensor::read_from(r)?;
                    steps.push(FlowStep::BatchNorm(BatchNormBijector {
                        running_mean: mean.into_data(),
                        running_var: var.into_data(),
                        momentum,
                        eps,
                        mode: BnMode::Inference,
                    }));
                }
                STEP_PERMUTATION => {
                    let len = read_u32(r)? as usize;
                    let mut p = Vec::with_capacity(len);
                    for _ in 0..len {
                        let mut buf = [0u8; 8];
                        r.read_exact(&mut buf)?;
                        p.push(u64::from_le_bytes(buf) as usize);
                    }
                    steps.push(FlowStep::Permutation(p));
                }
                t => return Err(Error::Format(format!("unknown step tag {t}"))),
            }
        }
        FlowModel::from_steps(dim, steps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        FlowModel::read_from(&mut f)
    }
}

fn write_mlp<W: Write>(w: &mut W, mlp: &Mlp) -> Result<()> {
    w.write_all(&(mlp.layers.len() as u32).to_le_bytes())?;
    for layer in &mlp.layers {
        layer.weight.write_to(w, Dtype::F64)?;
        layer.bias.write_to(w, Dtype::F64)?;
    }
    Ok(())
}

fn read_mlp<R: Read>(r: &mut R) -> Result<Mlp> {
    let n = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let weight = Tensor::read_from(r)?;
        let bias = Tensor::read_from(r)?;
        if weight.shape().len() != 2 || bias.shape().len() != 1
            || weight.shape()[0] != bias.shape()[0]
        {
            return Err(Error::Format("malformed linear layer".into()));
        }
        layers.push(LinearLayer { weight, bias });
    }
    if layers.is_empty() {
        return Err(Error::Format("mlp with zero layers".into()));
    }
    Ok(Mlp { layers })
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_nll_exactly() {
        let model = FlowModel::init(3, 4, 77);
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let loaded = FlowModel::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(model, loaded);

        let z = Tensor::from_vec(vec![2, 3], vec![0.4, -1.1, 0.9, 2.0, 0.3, -0.7]).unwrap();
        let a = model.nll(&z).unwrap();
        let b = loaded.nll(&z).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn bad_magic_is_format_error() {
        let buf = b"NOPE".to_vec();
        assert!(matches!(
            FlowModel::read_from(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
