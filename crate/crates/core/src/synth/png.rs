//! PNG io for images (RGB, quantized from [0, 1] reals), label masks, and
//! class rasters (single-channel, raw values).

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::raster::{ClassRaster, LabelMask};

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image_png(image: &Tensor, path: &Path) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::contract("expected [H, W, 3] image"));
    }
    let (h, w) = (shape[0], shape[1]);
    let buf: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    let img = RgbImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::Format("image buffer size mismatch".into()))?;
    img.save(path).map_err(|e| Error::Format(format!("png save: {e}")))
}

pub fn load_image_png(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::Format(format!("png load: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = img.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Tensor::from_vec(vec![h, w, 3], data)
}

pub fn save_mask_png(mask: &LabelMask, path: &Path) -> Result<()> {
    let img = GrayImage::from_raw(
        mask.width as u32,
        mask.height as u32,
        mask.labels().to_vec(),
    )
    .ok_or_else(|| Error::Format("mask buffer size mismatch".into()))?;
    img.save(path).map_err(|e| Error::Format(format!("png save: {e}")))
}

pub fn load_mask_png(path: &Path) -> Result<LabelMask> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::Format(format!("png load: {e}")))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    LabelMask::new(h, w, img.into_raw())
}

pub fn save_classes_png(classes: &ClassRaster, path: &Path) -> Result<()> {
    let img = GrayImage::from_raw(
        classes.width as u32,
        classes.height as u32,
        classes.classes.clone(),
    )
    .ok_or_else(|| Error::Format("class buffer size mismatch".into()))?;
    img.save(path).map_err(|e| Error::Format(format!("png save: {e}")))
}

pub fn load_classes_png(path: &Path) -> Result<ClassRaster> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::Format(format!("png load: {e}")))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    ClassRaster::new(h, w, img.into_raw())
}
