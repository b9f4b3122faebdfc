use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Standard optical fog model: `I' = t * I + (1 - t) * L` with
/// transmittance `t = exp(-beta * depth)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FogParams {
    /// Attenuation per meter-equivalent of the depth proxy.
    pub beta: f64,
    pub atmospheric_light: [f64; 3],
    pub per_image_probability: f64,
}

impl FogParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::contract("fog beta must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.per_image_probability) {
            return Err(Error::contract("fog probability must lie in [0, 1]"));
        }
        if self.atmospheric_light.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("atmospheric light must lie in [0, 1]"));
        }
        Ok(())
    }
}

impl Default for FogParams {
    fn default() -> Self {
        FogParams {
            beta: 0.01,
            atmospheric_light: [0.9, 0.9, 0.92],
            per_image_probability: 0.5,
        }
    }
}

/// Rolls the per-image dice and, on success, applies the fog model using
/// the per-pixel depth proxy. Returns the (possibly unchanged) image and
/// whether fog was applied.
pub fn apply_fog(
    image: &Tensor,
    depth_proxy: &[f64],
    fog: &FogParams,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, bool)> {
    fog.validate()?;
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::contract("fog expects an [H, W, 3] image"));
    }
    if depth_proxy.len() != shape[0] * shape[1] {
        return Err(Error::contract("depth proxy size mismatch"));
    }
    if !rng.random_bool(fog.per_image_probability) {
        return Ok((image.clone(), false));
    }
    let mut out = image.clone();
    let data = out.data_mut();
    for (px, &d) in depth_proxy.iter().enumerate() {
        let t = (-fog.beta * d).exp();
        for k in 0..3 {
            let v = &mut data[px * 3 + k];
            *v = (t * *v + (1.0 - t) * fog.atmospheric_light[k]).clamp(0.0, 1.0);
        }
    }
    Ok((out, true))
}
