//! Dense row-major `f64` tensors.
//!
//! Feature maps are always NCHW. Parameters use whatever rank their layer
//! needs (conv weights are `[out, in / groups, kh, kw]`, architecture rows
//! are rank 1).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(
            len,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// NCHW dimensions. Panics on tensors that are not rank 4.
    pub fn dims4(&self) -> [usize; 4] {
        match self.shape.as_slice() {
            &[n, c, h, w] => [n, c, h, w],
            other => panic!("expected an NCHW tensor, got shape {:?}", other),
        }
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scaled_add_assign(&mut self, scale: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * *b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contiguous `[h, w]` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let [_, ch, h, w] = self.dims4();
        let start = (n * ch + c) * h * w;
        &self.data[start..start + h * w]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let [_, ch, h, w] = self.dims4();
        let start = (n * ch + c) * h * w;
        &mut self.data[start..start + h * w]
    }

    /// Sample `n` as a `[1, c, h, w]` tensor.
    pub fn sample(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.dims4();
        let len = c * h * w;
        Tensor::from_vec(&[1, c, h, w], self.data[n * len..(n + 1) * len].to_vec())
    }

    /// Stacks `[1, c, h, w]` tensors (or equal-shaped NCHW tensors) along N.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "stack of zero tensors");
        let [_, c, h, w] = items[0].dims4();
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        for t in items {
            let [tn, tc, th, tw] = t.dims4();
            assert_eq!((tc, th, tw), (c, h, w), "stack of mismatched shapes");
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&[n, c, h, w], data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}
