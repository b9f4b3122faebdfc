//! Encoder persistence: `FBE1` magic, a JSON header with the stage shapes
//! and dropout rate, then every parameter tensor in the FBT1 format.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{ConvLayer, ToyEncoder};
use crate::error::{Error, Result};
use crate::numerics::{Dtype, Tensor};

#[derive(Serialize, Deserialize)]
struct Header {
    in_channels: usize,
    classes: usize,
    widths: Vec<usize>,
    dropout_rate: f64,
    seed: u64,
}

impl ToyEncoder {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"FBE1")?;
        let header = Header {
            in_channels: self.in_channels,
            classes: self.classes,
            widths: self.stage_widths(),
            dropout_rate: self.dropout_rate,
            seed: self.seed,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for stage in self.stages() {
            stage.weight.write_to(w, Dtype::F64)?;
            stage.bias.write_to(w, Dtype::F64)?;
        }
        self.head().weight.write_to(w, Dtype::F64)?;
        self.head().bias.write_to(w, Dtype::F64)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"FBE1" {
            return Err(Error::Format(format!(
                "bad encoder magic {:?}, expected FBE1",
                magic
            )));
        }
        let mut len_buf = [0u8; 4];
        r.read_exact(&mut len_buf)?;
        let mut json = vec![0u8; u32::from_le_bytes(len_buf) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| Error::Format(format!("encoder header: {e}")))?;

        let mut enc = ToyEncoder::with_widths(
            header.in_channels,
            header.classes,
            &header.widths,
            header.dropout_rate,
            header.seed,
        );
        for stage in enc.stages_mut() {
            stage.weight = read_expected(r, stage.weight.shape())?;
            stage.bias = read_expected(r, stage.bias.shape())?;
        }
        let head: &mut ConvLayer = enc.head_mut();
        head.weight = read_expected(r, head.weight.shape())?;
        head.bias = read_expected(r, head.bias.shape())?;
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        ToyEncoder::read_from(&mut f)
    }
}

fn read_expected<R: Read>(r: &mut R, shape: &[usize]) -> Result<Tensor> {
    let t = Tensor::read_from(r)?;
    if t.shape() != shape {
        return Err(Error::Format(format!(
            "tensor shape {:?} does not match header-implied {:?}",
            t.shape(),
            shape
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_reproduces_predictions() {
        let enc = ToyEncoder::with_widths(3, 4, &[4, 8], 0.25, 9);
        let mut buf = Vec::new();
        enc.write_to(&mut buf).unwrap();
        let loaded = ToyEncoder::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(enc, loaded);

        let img = Tensor::from_vec(
            vec![8, 8, 3],
            (0..192).map(|i| (i % 9) as f64 / 9.0).collect(),
        )
        .unwrap();
        assert_eq!(
            enc.predict(&img).unwrap().data(),
            loaded.predict(&img).unwrap().data()
        );
    }
}
