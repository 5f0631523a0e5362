//! Per-dimension min-max scaling of acoustic features.

use super::{AcousticFrame, DspScalar, FEATURE_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn fit<S: DspScalar>(frames: &[AcousticFrame<S>]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::validation("cannot fit normalization on zero frames"));
        }
        let mut min = vec![f64::INFINITY; FEATURE_DIM];
        let mut max = vec![f64::NEG_INFINITY; FEATURE_DIM];
        for f in frames {
            for (d, v) in f.values.iter().enumerate() {
                let v = v.to_f64_lossy();
                min[d] = min[d].min(v);
                max[d] = max[d].max(v);
            }
        }
        Ok(NormStats { min, max })
    }

    fn check_dim(&self) -> Result<()> {
        if self.min.len() != FEATURE_DIM || self.max.len() != FEATURE_DIM {
            return Err(Error::shape(
                "norm_stats",
                format!(
                    "expected {FEATURE_DIM} dims, got {}/{}",
                    self.min.len(),
                    self.max.len()
                ),
            ));
        }
        Ok(())
    }

    /// x' = (x - min) / (max - min); a constant dimension maps to 0.
    pub fn normalize<S: DspScalar>(&self, frames: &mut [AcousticFrame<S>]) -> Result<()> {
        self.check_dim()?;
        for f in frames {
            for (d, v) in f.values.iter_mut().enumerate() {
                let range = self.max[d] - self.min[d];
                *v = if range == 0.0 {
                    S::zero()
                } else {
                    S::of_f64((v.to_f64_lossy() - self.min[d]) / range)
                };
            }
        }
        Ok(())
    }

    /// Exact inverse of [`normalize`] on non-constant dimensions; constant
    /// dimensions restore their fitted value.
    pub fn denormalize<S: DspScalar>(&self, frames: &mut [AcousticFrame<S>]) -> Result<()> {
        self.check_dim()?;
        for f in frames {
            for (d, v) in f.values.iter_mut().enumerate() {
                let range = self.max[d] - self.min[d];
                *v = if range == 0.0 {
                    S::of_f64(self.min[d])
                } else {
                    S::of_f64(v.to_f64_lossy() * range + self.min[d])
                };
            }
        }
        Ok(())
    }
}
