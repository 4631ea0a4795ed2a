//! Binary model files: `CNNRSL1` magic, five little-endian `u32` shape fields
//! (M, K, kernels, kernel size, stride), the rescale range as two `f64`, then
//! `w1, b1, w2, b2` as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::augment::RescaleParams;
use crate::error::{Error, Result};
use crate::net::NetworkParams;

pub const MODEL_MAGIC: &[u8; 7] = b"CNNRSL1";

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: NetworkParams,
    pub rescale: RescaleParams,
}

impl Model {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let p = &self.params;
        w.write_all(MODEL_MAGIC)?;
        for v in [p.bands, p.classes, p.num_kernels, p.kernel_size, p.stride] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.rescale.min_value.to_le_bytes())?;
        w.write_all(&self.rescale.max_value.to_le_bytes())?;
        for tensor in p.tensors() {
            for &v in tensor {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let truncated = |_| Error::Format("model file truncated".into());
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(truncated)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [bands, classes, kernels, kernel_size, stride] = dims;
        if kernel_size == 0 || kernel_size > bands || stride == 0 || kernels == 0 || classes == 0 {
            return Err(Error::Format(format!("inconsistent model shape {dims:?}")));
        }
        let read_f64 = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            Ok(f64::from_le_bytes(b))
        };
        let min_value = read_f64(&mut r)?;
        let max_value = read_f64(&mut r)?;

        let mut params = NetworkParams::zeros(bands, classes, kernels, kernel_size, stride);
        for tensor in params.tensors_mut() {
            for v in tensor.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(truncated)?;
                *v = f32::from_le_bytes(b) as f64;
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(truncated)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes in model file",
                rest.len()
            )));
        }
        Ok(Self {
            params,
            rescale: RescaleParams {
                min_value,
                max_value,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
