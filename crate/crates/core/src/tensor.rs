//! Dense row-major tensors and the scalar types they hold.

use std::fmt::{Debug, Display};

use crate::error::{Error, Result};

/// Floating point element type. Training runs in `f32`; gradient checks use `f64`.
pub trait Scalar:
    num_traits_lite::Float + Default + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` for an `m×k` by `k×n` product with explicit
    /// row/column strides (in elements).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

/// The handful of float operations the engine needs, without pulling in a
/// numeric-traits crate for them.
pub mod num_traits_lite {
    use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

    pub trait Float:
        Copy
        + PartialOrd
        + Add<Output = Self>
        + Sub<Output = Self>
        + Mul<Output = Self>
        + Div<Output = Self>
        + Neg<Output = Self>
        + AddAssign
        + SubAssign
        + MulAssign
    {
        const ZERO: Self;
        const ONE: Self;
        fn abs(self) -> Self;
        fn sqrt(self) -> Self;
        fn exp(self) -> Self;
        fn ln(self) -> Self;
        fn max(self, other: Self) -> Self;
        fn is_finite(self) -> bool;
        fn signum(self) -> Self;
        fn neg_infinity() -> Self;
    }

    macro_rules! impl_float {
        ($t:ty) => {
            impl Float for $t {
                const ZERO: Self = 0.0;
                const ONE: Self = 1.0;
                #[inline]
                fn abs(self) -> Self {
                    <$t>::abs(self)
                }
                #[inline]
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                #[inline]
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                #[inline]
                fn ln(self) -> Self {
                    <$t>::ln(self)
                }
                #[inline]
                fn max(self, other: Self) -> Self {
                    <$t>::max(self, other)
                }
                #[inline]
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
                #[inline]
                fn signum(self) -> Self {
                    if self > 0.0 {
                        1.0
                    } else if self < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                #[inline]
                fn neg_infinity() -> Self {
                    <$t>::NEG_INFINITY
                }
            }
        };
    }
    impl_float!(f32);
    impl_float!(f64);
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    a_strides: (isize, isize),
    b_len: usize,
    b_strides: (isize, isize),
    c_len: usize,
    c_strides: (isize, isize),
) {
    let last = |rows: usize, cols: usize, (rs, cs): (isize, isize)| -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(last(m, k, a_strides) <= a_len, "gemm: lhs out of bounds");
    assert!(last(k, n, b_strides) <= b_len, "gemm: rhs out of bounds");
    assert!(last(m, n, c_strides) <= c_len, "gemm: output out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_gemm_bounds(
                    m,
                    k,
                    n,
                    a.len(),
                    a_strides,
                    b.len(),
                    b_strides,
                    c.len(),
                    c_strides,
                );
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every element touched lies inside the slices (checked above),
                // and `c` is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}
impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major dense tensor with an optional gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; shape.iter().product()],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || expected != data.len() {
            return Err(Error::ShapeData {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Allocates (or clears) the gradient buffer and returns it.
    pub fn zero_grad(&mut self) -> &mut [T] {
        let n = self.data.len();
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|x| *x = T::ZERO),
            None => self.grad = Some(vec![T::ZERO; n]),
        }
        self.grad.as_deref_mut().unwrap()
    }

    /// Split borrow of values and gradient.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn drop_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeData {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&x| x != T::ZERO).count()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.to_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|&x| U::of(x.to_f64())).collect()),
        }
    }

    /// Contiguous slice holding sample `i` of a batch-major tensor.
    pub fn sample(&self, i: usize) -> &[T] {
        let per = self.data.len() / self.shape[0];
        &self.data[i * per..(i + 1) * per]
    }

    /// Gathers the listed samples of a batch-major tensor into a new batch.
    pub fn gather_samples(&self, indices: &[usize]) -> Tensor<T> {
        let per = self.data.len() / self.shape[0];
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }
}
