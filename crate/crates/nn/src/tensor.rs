use rand::Rng;

use crate::error::{NnError, Result};

/// Dense row-major tensor with an optional gradient buffer of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBuffer {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl TensorBuffer {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(NnError::Config(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; len],
            grad: None,
        }
    }

    /// Glorot/Xavier uniform in `±sqrt(6 / (fan_in + fan_out))`.
    ///
    /// For a `[out, in]` matrix `fan_out = out`, `fan_in = in`; vectors use their
    /// length for both.
    pub fn glorot<R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Self {
        let (fan_out, fan_in) = match shape.as_slice() {
            [] => (1, 1),
            [n] => (*n, *n),
            [o, rest @ ..] => (*o, rest.iter().product()),
        };
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let len = shape.iter().product();
        let values = (0..len).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            shape,
            values,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows when viewed as a matrix: leading dim for rank ≥ 2, else 1.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.values.len()
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.values.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_must_match_values() {
        assert!(TensorBuffer::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            TensorBuffer::new(vec![2, 3], vec![0.0; 5]),
            Err(NnError::Config(_))
        ));
    }

    #[test]
    fn glorot_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = TensorBuffer::glorot(vec![16, 48], &mut rng);
        let limit = (6.0f64 / 64.0).sqrt();
        assert!(t.values().iter().all(|v| v.abs() < limit));
        assert_eq!((t.rows(), t.cols()), (16, 48));
    }
}
