//! Feature files: magic "WSFEAT1", frame count, dim, then little-endian
//! 32-bit floats, row-major.

use std::io::{Read, Write};

use super::{AcousticFrame, DspScalar, FEATURE_DIM};
use crate::error::{Error, Result};

pub const FEAT_MAGIC: &[u8; 7] = b"WSFEAT1";

pub fn write_features<S: DspScalar, W: Write>(frames: &[AcousticFrame<S>], w: &mut W) -> Result<()> {
    w.write_all(FEAT_MAGIC)?;
    w.write_all(&(frames.len() as u32).to_le_bytes())?;
    w.write_all(&(FEATURE_DIM as u32).to_le_bytes())?;
    for f in frames {
        for v in &f.values {
            w.write_all(&v.to_f32_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features<S: DspScalar, R: Read>(r: &mut R) -> Result<Vec<AcousticFrame<S>>> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != FEAT_MAGIC {
        return Err(Error::Format("not a WSFEAT1 file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let frames = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    if dim != FEATURE_DIM {
        return Err(Error::Format(format!(
            "feature dim {dim}, expected {FEATURE_DIM}"
        )));
    }
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut values = [S::zero(); FEATURE_DIM];
        for v in values.iter_mut() {
            r.read_exact(&mut b4)?;
            *v = S::of_f64(f32::from_le_bytes(b4) as f64);
        }
        out.push(AcousticFrame { values });
    }
    Ok(out)
}
