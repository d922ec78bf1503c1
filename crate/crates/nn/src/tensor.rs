use std::fmt;

use crate::{NnError, Result, Scalar};

/// Extent of a five-dimensional `(n, c, d, h, w)` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, d: usize, h: usize, w: usize) -> Self {
        Self { n, c, d, h, w }
    }

    /// A batch of 2D maps (`d = 1`).
    pub const fn planar(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self::new(n, c, 1, h, w)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.d * self.h * self.w
    }

    /// Elements in one spatial map.
    pub fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    /// Elements in one batch item.
    pub fn item(&self) -> usize {
        self.c * self.spatial()
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.c, self.d, self.h, self.w]
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {}, {})", self.n, self.c, self.d, self.h, self.w)
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(NnError::BadBuffer {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 5]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for z in 0..shape.d {
                    for y in 0..shape.h {
                        for x in 0..shape.w {
                            data.push(f([n, c, z, y, x]));
                        }
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, [n, c, z, y, x]: [usize; 5]) -> usize {
        let s = self.shape;
        (((n * s.c + c) * s.d + z) * s.h + y) * s.w + x
    }

    pub fn at(&self, idx: [usize; 5]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 5], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Contiguous view of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.item();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(NnError::ShapeMismatch {
                op: "reshape",
                expected: format!("{} elements", self.shape.numel()),
                actual: shape.to_string(),
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape("zip_map", other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape("add_assign", other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape("max_abs_diff", other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, op: &'static str, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(NnError::ShapeMismatch {
                op,
                expected: shape.to_string(),
                actual: self.shape.to_string(),
            });
        }
        Ok(())
    }

    /// Concatenate along the batch axis.
    pub fn stack_batch(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| NnError::Invalid("stack of zero tensors".into()))?;
        let base = first.shape.with_n(1);
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape.with_n(1) != base {
                return Err(NnError::ShapeMismatch {
                    op: "stack_batch",
                    expected: base.to_string(),
                    actual: t.shape.to_string(),
                });
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: base.with_n(n),
            data,
        })
    }

    /// Copy out channel range `[c0, c1)`.
    pub fn channels(&self, c0: usize, c1: usize) -> Self {
        let s = self.shape;
        assert!(c0 <= c1 && c1 <= s.c, "channel range out of bounds");
        let sp = s.spatial();
        let mut data = Vec::with_capacity(s.n * (c1 - c0) * sp);
        for n in 0..s.n {
            let item = self.item(n);
            data.extend_from_slice(&item[c0 * sp..c1 * sp]);
        }
        Self {
            shape: s.with_c(c1 - c0),
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::<f32>::from_fn(Shape::new(2, 3, 4, 5, 6), |[n, c, z, y, x]| {
            (n * 10000 + c * 1000 + z * 100 + y * 10 + x) as f32
        });
        assert_eq!(t.at([1, 2, 3, 4, 5]), 12345.0);
        assert_eq!(t.data()[t.offset([1, 2, 3, 4, 5])], 12345.0);
    }

    #[test]
    fn channel_slice_copies_each_item() {
        let t = Tensor::<f32>::from_fn(Shape::planar(2, 3, 1, 2), |[n, c, _, _, x]| {
            (n * 100 + c * 10 + x) as f32
        });
        let mid = t.channels(1, 2);
        assert_eq!(mid.shape(), Shape::planar(2, 1, 1, 2));
        assert_eq!(mid.data(), &[10.0, 11.0, 110.0, 111.0]);
    }

    #[test]
    fn bad_buffer_is_rejected() {
        assert!(Tensor::<f32>::from_vec(Shape::planar(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }
}
