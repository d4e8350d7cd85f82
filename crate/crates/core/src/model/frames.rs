use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Difference-imaging strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ImagingMode {
    /// Each frame is referenced to a background-only acquisition at the same
    /// frequency.
    TimeDifference,
    /// Each frame is referenced to an acquisition with the object present at
    /// a fixed reference frequency.
    FrequencyDifference { reference_hz: f64 },
}

/// Normalized voltage differences, one column per imaged frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrameSet<T> {
    values: Matrix<T>,
    frequencies: Vec<f64>,
    mode: ImagingMode,
}

impl<T: Real> MeasurementFrameSet<T> {
    pub fn new(values: Matrix<T>, frequencies: Vec<f64>, mode: ImagingMode) -> Result<Self> {
        if values.cols() == 0 || values.rows() == 0 {
            return Err(Error::InvalidArgument(
                "measurement set needs at least one frame and one measurement".into(),
            ));
        }
        if frequencies.len() != values.cols() {
            return Err(Error::shape(
                "MeasurementFrameSet::new",
                values.cols(),
                frequencies.len(),
            ));
        }
        if let ImagingMode::FrequencyDifference { reference_hz } = mode {
            if frequencies.contains(&reference_hz) {
                return Err(Error::InvalidArgument(format!(
                    "reference frequency {reference_hz} Hz must not be an imaged frequency"
                )));
            }
        }
        Ok(Self {
            values,
            frequencies,
            mode,
        })
    }

    /// `M x L` matrix `V`.
    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn mode(&self) -> ImagingMode {
        self.mode
    }

    pub fn measurement_count(&self) -> usize {
        self.values.rows()
    }

    pub fn frame_count(&self) -> usize {
        self.values.cols()
    }

    /// Same metadata, new values of identical shape.
    pub fn with_values(&self, values: Matrix<T>) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::shape("with_values", self.values.shape(), values.shape()));
        }
        Ok(Self {
            values,
            frequencies: self.frequencies.clone(),
            mode: self.mode,
        })
    }

    /// Replaces every frame by a copy of frame `source`, `count` times.
    pub fn replicate_frame(&self, source: usize, count: usize) -> Result<Self> {
        if source >= self.frame_count() || count == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot replicate frame {source} of {} into {count} frames",
                self.frame_count()
            )));
        }
        let col = self.values.column(source);
        let values = Matrix::from_fn(self.values.rows(), count, |i, _| col[i]);
        Self::new(values, vec![self.frequencies[source]; count], self.mode)
    }
}
