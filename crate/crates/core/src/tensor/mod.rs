//! Dense row-major tensors of `f32` and the portable `.dt` file format.
//!
//! Storage is 32-bit; reductions accumulate in `f64` in flat-index order so
//! that distances (and therefore neighbor orderings) are reproducible.

mod format;

pub use format::{load_tensor, read_tensor, save_tensor, write_tensor, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    /// Builds a tensor, checking that every extent is positive, that the
    /// extents multiply out to `data.len()`, and that all values are finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("extents multiply to {expected} but {} values given", data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self> {
        check_shape(&shape)?;
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    /// Rounds `f64` values to `f32` storage.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.len(),
                found: index.len(),
            });
        }
        let mut flat = 0;
        for (&i, &extent) in index.iter().zip(&self.shape) {
            if i >= extent {
                return Err(Error::ShapeMismatch(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            flat = flat * extent + i;
        }
        Ok(flat)
    }

    pub fn get(&self, index: &[usize]) -> Result<f32> {
        Ok(self.data[self.offset(index)?])
    }

    /// Applies `f` elementwise; fails if the result contains a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Euclidean distance to `other`.
    pub fn l2_distance(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(l2_distance_f32(&self.data, &other.data))
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "at least one extent is required".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    Ok(())
}

/// Sequential sum of squared differences, accumulated in `f64`.
pub fn squared_l2_f64(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

pub fn l2_distance_f64(a: &[f64], b: &[f64]) -> f64 {
    squared_l2_f64(a, b).sqrt()
}

pub fn l2_distance_f32(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = f64::from(x) - f64::from(y);
        acc += d * d;
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f32]) -> DenseTensor {
        DenseTensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(t(&[2], &[0., 0.]).l2_distance(&t(&[2], &[3., 4.])).unwrap(), 5.0);
        assert_eq!(
            t(&[3], &[1., 2., 3.]).l2_distance(&t(&[3], &[4., 6., 3.])).unwrap(),
            5.0
        );
        let a = t(&[2, 2], &[0.3, -1.7, 2.5, 9.0]);
        assert_eq!(a.l2_distance(&a).unwrap(), 0.0);
    }

    #[test]
    fn distance_rejects_shape_mismatch() {
        let err = t(&[2], &[0., 0.]).l2_distance(&t(&[1, 2], &[0., 0.]));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn construction_checks() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![0, 2], vec![]).is_err());
        assert!(DenseTensor::new(vec![], vec![1.0]).is_err());
        assert!(matches!(
            DenseTensor::new(vec![2], vec![1.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(t(&[1], &[1.0]).map(|v| v / 0.0).is_err());
    }

    #[test]
    fn offsets_are_row_major() {
        let x = DenseTensor::new(vec![2, 3, 4], (0..24).map(|v| v as f32).collect()).unwrap();
        assert_eq!(x.get(&[1, 2, 3]).unwrap(), 23.0);
        assert_eq!(x.get(&[0, 1, 0]).unwrap(), 4.0);
        assert!(x.get(&[2, 0, 0]).is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-100.0f32..100.0, 6)
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(a in vec3(), b in vec3()) {
            let (a, b) = (t(&[6], &a), t(&[6], &b));
            prop_assert_eq!(a.l2_distance(&b).unwrap(), b.l2_distance(&a).unwrap());
        }

        #[test]
        fn triangle_inequality(a in vec3(), b in vec3(), c in vec3()) {
            let (a, b, c) = (t(&[6], &a), t(&[6], &b), t(&[6], &c));
            let ab = a.l2_distance(&b).unwrap();
            let bc = b.l2_distance(&c).unwrap();
            let ac = a.l2_distance(&c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-5);
        }
    }
}
