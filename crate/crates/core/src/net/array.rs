use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// `f64` working array for the autodiff engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("does not describe {} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_tensor(&self) -> Result<DenseTensor> {
        DenseTensor::from_f64(self.shape.clone(), &self.data)
    }

    pub fn from_tensor(t: &DenseTensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.to_f64(),
        }
    }

    /// Rounds every element to the nearest `f32`, so the array survives a
    /// `.dt` round trip unchanged.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = f64::from(*v as f32);
        }
    }
}
