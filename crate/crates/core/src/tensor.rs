use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array of rank 1 to 4 (`f32` unless stated otherwise).
///
/// Feature maps use `[batch, channels, height, width]`, so element
/// `(b, c, h, w)` lives at `((b * C + c) * H + h) * W + w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(op: &'static str, shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::shape(op, format!("rank {} outside 1..=4", shape.len())));
    }
    if shape.contains(&0) {
        return Err(Error::shape(op, format!("zero extent in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape("Tensor::new", shape)?;
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; for internally computed shapes.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = check_shape("Tensor::full", shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Leading extent.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per leading index.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape("reshape", shape)?;
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Collapse every axis after the first: `[B, ...] -> [B, D]`.
    pub fn flatten_batch(self) -> Self {
        let b = self.batch();
        let d = self.sample_len();
        Tensor {
            shape: vec![b, d],
            data: self.data,
        }
    }

    pub fn get4(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cc, hh, ww] = self.dims4();
        self.data[((b * cc + c) * hh + h) * ww + w]
    }

    /// Extents of a rank-4 tensor. Panics on other ranks.
    pub fn dims4(&self) -> [usize; 4] {
        assert_eq!(self.rank(), 4, "expected rank-4 tensor, got {:?}", self.shape);
        [self.shape[0], self.shape[1], self.shape[2], self.shape[3]]
    }

    /// Gather entries along the leading axis.
    pub fn select(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if indices.is_empty() {
            return Err(Error::shape("select", "empty index list"));
        }
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= self.batch() {
                return Err(Error::shape(
                    "select",
                    format!("index {i} out of range for batch {}", self.batch()),
                ));
            }
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }

    /// Contiguous leading-axis range `[start, end)`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        if start >= end || end > self.batch() {
            return Err(Error::shape(
                "slice_batch",
                format!("range {start}..{end} invalid for batch {}", self.batch()),
            ));
        }
        let n = self.sample_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * n..end * n].to_vec(),
        })
    }

    /// Concatenate along the leading axis.
    pub fn concat_batch(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_batch", "no inputs"))?;
        let mut shape = first.shape.clone();
        let mut total = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape(
                    "concat_batch",
                    format!("{:?} vs {:?}", p.shape, first.shape),
                ));
            }
            total += p.batch();
        }
        shape[0] = total;
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Concatenate along axis 1, in argument order. All inputs must agree on
    /// every other axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        if first.rank() < 2 {
            return Err(Error::shape("concat_channels", "rank must be >= 2"));
        }
        let batch = first.batch();
        let inner: usize = first.shape[2..].iter().product();
        let mut channels = 0;
        for p in parts {
            if p.rank() != first.rank() || p.batch() != batch || p.shape[2..] != first.shape[2..] {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", p.shape, first.shape),
                ));
            }
            channels += p.shape[1];
        }
        let mut data = Vec::with_capacity(batch * channels * inner);
        for b in 0..batch {
            for p in parts {
                let n = p.sample_len();
                data.extend_from_slice(&p.data[b * n..(b + 1) * n]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = channels;
        Ok(Tensor { shape, data })
    }

    /// Channels `[start, end)` along axis 1.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        if self.rank() < 2 || start >= end || end > self.shape[1] {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{end} invalid for {:?}", self.shape),
            ));
        }
        let inner: usize = self.shape[2..].iter().product();
        let n = self.sample_len();
        let mut data = Vec::with_capacity(self.batch() * (end - start) * inner);
        for b in 0..self.batch() {
            data.extend_from_slice(&self.data[b * n + start * inner..b * n + end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[1] = end - start;
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of squares, accumulated in f64.
    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| v.f64() * v.f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Equality of shape and of every element's bit pattern.
    pub fn bitwise_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    /// Elementwise conversion to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }
}
