//! Minimal NHWC float tensor.

use crate::{Error, Result};

/// Dense row-major tensor, shape (n, h, w, c). Vectors ride along as
/// (n, 1, 1, c).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Tensor {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(format!(
                "{} values for shape {shape:?} (needs {expect})",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((n * self.h() + y) * self.w() + x) * self.c() + c]
    }

    /// Debug-mode guard: every op output must stay finite.
    #[inline]
    pub fn debug_assert_finite(&self, op: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value after {op}"
        );
        let _ = op;
    }
}

/// Multiply-accumulate tally. The convolution and dense kernels call
/// [`Tally::add`] once per scalar multiply; the no-op implementation
/// compiles to nothing, so the production path pays no cost while the
/// counted path runs the identical kernel code.
pub trait Tally {
    fn add(&mut self, n: u64);
}

/// Zero-cost tally for production forwards.
pub struct NoTally;

impl Tally for NoTally {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

impl Tally for u64 {
    #[inline(always)]
    fn add(&mut self, n: u64) {
        *self += n;
    }
}
