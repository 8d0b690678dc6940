//! Dense rank-4 tensors in (batch, channel, height, width) order and 2-D grids.

use std::fmt;

use crate::error::{Error, Result};

/// Scalar type used throughout the engine.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;

/// Shape of a [`Tensor4`]: `[n, c, h, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims(pub [usize; 4]);

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

/// Dense rank-4 array, row-major over `(n, c, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<Real>,
}

impl Tensor4 {
    pub fn new(dims: Dims, data: Vec<Real>) -> Result<Self> {
        if dims.0.contains(&0) {
            return Err(Error::Config(format!("tensor dims must be >= 1, got {dims}")));
        }
        if data.len() != dims.len() {
            return Err(Error::shape(
                "Tensor4::new",
                format!("{} elements for {dims}", dims.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn from_shape(shape: [usize; 4], data: Vec<Real>) -> Result<Self> {
        Self::new(Dims(shape), data)
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: Real) -> Self {
        assert!(!dims.0.contains(&0), "tensor dims must be >= 1, got {dims}");
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    /// Row vector stored as `1 x len x 1 x 1`.
    pub fn vector(values: Vec<Real>) -> Self {
        let dims = Dims::new(1, values.len(), 1, 1);
        Tensor4::new(dims, values).expect("vector must be non-empty")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, hh, ww] = self.dims.0;
        ((n * cc + c) * hh + y) * ww + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> Real {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: Real) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    /// Contiguous `h*w` plane for sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[Real] {
        let p = self.dims.plane();
        let start = (n * self.dims.c() + c) * p;
        &self.data[start..start + p]
    }

    /// Contiguous `c*h*w` block for sample `n`.
    pub fn sample_data(&self, n: usize) -> &[Real] {
        let s = self.dims.c() * self.dims.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor4, op: &'static str, f: impl Fn(Real, Real) -> Real) -> Result<Tensor4> {
        self.expect_dims(op, other.dims)?;
        Ok(Tensor4 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn scale(&self, factor: Real) -> Tensor4 {
        self.map(|v| v * factor)
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.expect_dims("add_assign", other.dims)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> Real {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }

    /// Copies channels `start..start + count` into a new tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Tensor4> {
        let [n, c, h, w] = self.dims.0;
        if count == 0 || start + count > c {
            return Err(Error::shape(
                "channel_slice",
                format!("channels within 0..{c}"),
                format!("{start}..{}", start + count),
            ));
        }
        let p = h * w;
        let mut data = Vec::with_capacity(n * count * p);
        for s in 0..n {
            let base = (s * c + start) * p;
            data.extend_from_slice(&self.data[base..base + count * p]);
        }
        Tensor4::new(Dims::new(n, count, h, w), data)
    }

    /// Concatenates tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat_channels needs at least one tensor".into()))?;
        let [n, _, h, w] = first.dims.0;
        let mut total = 0;
        for t in parts {
            let [tn, tc, th, tw] = t.dims.0;
            if (tn, th, tw) != (n, h, w) {
                return Err(Error::shape("concat_channels", first.dims, t.dims));
            }
            total += tc;
        }
        let mut data = Vec::with_capacity(n * total * h * w);
        for s in 0..n {
            for t in parts {
                data.extend_from_slice(t.sample_data(s));
            }
        }
        Tensor4::new(Dims::new(n, total, h, w), data)
    }

    /// Stacks samples (each `1 x c x h x w`) into one batch.
    pub fn stack(samples: &[&Tensor4]) -> Result<Tensor4> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("stack needs at least one tensor".into()))?;
        let [_, c, h, w] = first.dims.0;
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        let mut n = 0;
        for t in samples {
            let [tn, tc, th, tw] = t.dims.0;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::shape("stack", first.dims, t.dims));
            }
            data.extend_from_slice(&t.data);
            n += tn;
        }
        Tensor4::new(Dims::new(n, c, h, w), data)
    }

    /// Extracts sample `n` as a `1 x c x h x w` tensor.
    pub fn sample(&self, n: usize) -> Tensor4 {
        let [_, c, h, w] = self.dims.0;
        Tensor4 {
            dims: Dims::new(1, c, h, w),
            data: self.sample_data(n).to_vec(),
        }
    }

    pub fn reshape(self, dims: Dims) -> Result<Tensor4> {
        if dims.len() != self.dims.len() {
            return Err(Error::shape("reshape", self.dims, dims));
        }
        Tensor4::new(dims, self.data)
    }

    pub(crate) fn expect_dims(&self, op: &'static str, expected: Dims) -> Result<()> {
        if self.dims != expected {
            return Err(Error::shape(op, expected, self.dims));
        }
        Ok(())
    }
}

/// Row-major 2-D grid: images, activation maps, masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T = Real> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!("grid dims must be >= 1, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(
                "Grid::new",
                format!("{} values for {height}x{width}", height * width),
                format!("{} values", data.len()),
            ));
        }
        Ok(Grid { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "grid dims must be >= 1");
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "grid dims must be >= 1");
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the `rows x cols` window whose top-left corner is `(top, left)`.
    pub fn window(&self, top: usize, left: usize, rows: usize, cols: usize) -> Result<Grid<T>> {
        if rows == 0 || cols == 0 || top + rows > self.height || left + cols > self.width {
            return Err(Error::shape(
                "window",
                format!("window inside {}x{}", self.height, self.width),
                format!("{rows}x{cols} at ({top},{left})"),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for y in top..top + rows {
            let start = y * self.width + left;
            data.extend_from_slice(&self.data[start..start + cols]);
        }
        Ok(Grid {
            height: rows,
            width: cols,
            data,
        })
    }
}

impl Grid<Real> {
    /// Wraps the grid as a `1 x 1 x h x w` tensor.
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::new(Dims::new(1, 1, self.height, self.width), self.data.clone())
            .expect("grid dims are non-zero")
    }

    pub fn min_max(&self) -> (Real, Real) {
        self.data
            .iter()
            .fold((Real::INFINITY, Real::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> Real {
        self.data.iter().sum::<Real>() / self.data.len() as Real
    }

    /// Index of the largest value (first occurrence).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}
