//! Dense row-major tensors and the small arithmetic core every layer builds on.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid shape: extent {extent} at axis {axis} (every extent must be >= 1)")]
    ZeroExtent { axis: usize, extent: usize },
    #[error("shape {0} overflows the addressable element count")]
    SizeOverflow(String),
}

/// Ordered list of positive extents. The element count is the product of the
/// extents and is guaranteed to fit in a `usize`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let dims = dims.into();
        let mut count: usize = 1;
        for (axis, &extent) in dims.iter().enumerate() {
            if extent == 0 {
                return Err(TensorError::ZeroExtent { axis, extent });
            }
            count = count
                .checked_mul(extent)
                .ok_or_else(|| TensorError::SizeOverflow(format!("{dims:?}")))?;
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Total element count (product of extents).
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // every extent is >= 1, so there is always at least one element
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Scalar element type for tensors. Training and inference run in `f32`;
/// the gradient-check harness re-runs models in `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + fmt::Debug
    + fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                if other > self {
                    other
                } else {
                    self
                }
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense N-dimensional value array, row-major (last index fastest).
/// Tensors are immutable values once constructed; ops return new tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: Shape) -> Self {
        let data = vec![S::ZERO; shape.len()];
        Tensor { shape, data }
    }

    pub fn filled(shape: Shape, value: S) -> Self {
        let data = vec![value; shape.len()];
        Tensor { shape, data }
    }

    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Self, TensorError> {
        if data.len() != shape.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape} expects {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Same flat data under a new shape; element counts must agree.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor<S>, TensorError> {
        if shape.len() != self.data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot reshape {} ({} elements) to {shape} ({} elements)",
                self.shape,
                self.data.len(),
                shape.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Convert element type through `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| T::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.data.iter()
    }

    /// True when every element is finite (no NaN/Inf).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `c[i,j] = sum_t a[i,t] * b[t,j]` for rank-2 operands.
    ///
    /// Accumulation over t runs in ascending order for every output element,
    /// so the result is bitwise identical to the textbook triple loop.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul needs rank-2 operands, got {} and {}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.dims()[0], self.dims()[1]);
        let (k2, n) = (other.dims()[0], other.dims()[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul inner dimensions differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![S::ZERO; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            for (t, &a) in row.iter().enumerate() {
                let brow = &other.data[t * n..(t + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: Shape::new([m, n]).expect("validated extents"),
            data: out,
        })
    }
}

/// `c[i] = op(a[i], b[i])` for all flat indices; shapes must be identical.
pub fn elementwise<S: Scalar>(
    op: impl Fn(S, S) -> S,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "elementwise operands differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(Tensor {
        shape: a.shape().clone(),
        data: a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| op(x, y))
            .collect(),
    })
}
