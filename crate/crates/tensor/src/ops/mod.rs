//! Differentiable operations on [`Var`].

mod broadcast;
mod conv;
mod shape;

pub use broadcast::broadcast_shape;
pub use conv::conv2d_output_size;

use broadcast::{broadcast_binary, expand_to, reduce_to};

use crate::scalar::gemm;
use crate::{Scalar, Tensor, Var};

impl<T: Scalar> Var<T> {
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
        let out = self.value.map(f);
        let x = self.value.clone();
        let y = out.clone();
        self.graph.op(out, &[self], move |g, _| {
            let gd = g.data();
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(gd)
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor::from_vec(x.shape(), data))]
        })
    }

    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let out = broadcast_binary(&self.value, &other.value, |a, b| a + b);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        self.graph.op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(g, &sa)),
                need[1].then(|| reduce_to(g, &sb)),
            ]
        })
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let out = broadcast_binary(&self.value, &other.value, |a, b| a - b);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        self.graph.op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(g, &sa)),
                need[1].then(|| reduce_to(&g.map(|v| -v), &sb)),
            ]
        })
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let out = broadcast_binary(&self.value, &other.value, |a, b| a * b);
        let (a, b) = (self.value.clone(), other.value.clone());
        self.graph.op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(&broadcast_binary(g, &b, |x, y| x * y), a.shape())),
                need[1].then(|| reduce_to(&broadcast_binary(g, &a, |x, y| x * y), b.shape())),
            ]
        })
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let out = broadcast_binary(&self.value, &other.value, |a, b| a / b);
        let (a, b) = (self.value.clone(), other.value.clone());
        self.graph.op(out, &[self, other], move |g, need| {
            let ga = need[0].then(|| reduce_to(&broadcast_binary(g, &b, |x, y| x / y), a.shape()));
            let gb = need[1].then(|| {
                let ga_over_b = broadcast_binary(g, &a, |x, y| x * y);
                let t = broadcast_binary(&ga_over_b, &b, |x, y| -x / (y * y));
                reduce_to(&t, b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn scale(&self, c: f64) -> Var<T> {
        let c = T::of(c);
        self.unary(move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<T> {
        let c = T::of(c);
        self.unary(move |v| v + c, |_, _| T::one())
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Var<T> {
        self.unary(|v| v * v, |x, _| x + x)
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&self) -> Var<T> {
        self.unary(
            |v| v.sqrt(),
            |_, y| {
                if y > T::zero() {
                    T::of(0.5) / y
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn rsqrt(&self) -> Var<T> {
        self.unary(|v| T::one() / v.sqrt(), |x, y| T::of(-0.5) * y / x)
    }

    pub fn exp(&self) -> Var<T> {
        self.unary(|v| v.exp(), |_, y| y)
    }

    pub fn tanh(&self) -> Var<T> {
        self.unary(|v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::of(slope);
        self.unary(
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&self) -> Var<T> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn sum(&self) -> Var<T> {
        let out = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.graph.op(out, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Var<T> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            assert!(a < shape.len(), "axis {a} out of range for {shape:?}");
            shape[a] = 1;
        }
        let out = reduce_to(&self.value, &shape);
        let in_shape = self.shape().to_vec();
        self.graph
            .op(out, &[self], move |g, _| vec![Some(expand_to(g, &in_shape))])
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Var<T> {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes).scale(1.0 / n.max(1) as f64)
    }

    /// Repeats along size-1 axes to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Var<T> {
        let out = expand_to(&self.value, shape);
        let in_shape = self.shape().to_vec();
        self.graph
            .op(out, &[self], move |g, _| vec![Some(reduce_to(g, &in_shape))])
    }

    /// `[m,k] @ [k,n]`.
    pub fn matmul(&self, other: &Var<T>) -> Var<T> {
        let (m, k) = dims2(self.shape());
        let (k2, n) = dims2(other.shape());
        assert_eq!(k, k2, "matmul inner dims {:?} @ {:?}", self.shape(), other.shape());
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value.data(), false, other.value.data(), false, &mut out, false);
        let (a, b) = (self.value.clone(), other.value.clone());
        self.graph
            .op(Tensor::from_vec(&[m, n], out), &[self, other], move |g, need| {
                let ga = need[0].then(|| {
                    let mut d = vec![T::zero(); m * k];
                    gemm(m, n, k, g.data(), false, b.data(), true, &mut d, false);
                    Tensor::from_vec(&[m, k], d)
                });
                let gb = need[1].then(|| {
                    let mut d = vec![T::zero(); k * n];
                    gemm(k, m, n, a.data(), true, g.data(), false, &mut d, false);
                    Tensor::from_vec(&[k, n], d)
                });
                vec![ga, gb]
            })
    }

    /// `[m,k] @ [n,k]ᵀ`.
    pub fn matmul_t(&self, other: &Var<T>) -> Var<T> {
        let (m, k) = dims2(self.shape());
        let (n, k2) = dims2(other.shape());
        assert_eq!(k, k2, "matmul_t inner dims {:?} @ {:?}ᵀ", self.shape(), other.shape());
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value.data(), false, other.value.data(), true, &mut out, false);
        let (a, b) = (self.value.clone(), other.value.clone());
        self.graph
            .op(Tensor::from_vec(&[m, n], out), &[self, other], move |g, need| {
                let ga = need[0].then(|| {
                    let mut d = vec![T::zero(); m * k];
                    gemm(m, n, k, g.data(), false, b.data(), false, &mut d, false);
                    Tensor::from_vec(&[m, k], d)
                });
                let gb = need[1].then(|| {
                    let mut d = vec![T::zero(); n * k];
                    gemm(n, m, k, g.data(), true, a.data(), false, &mut d, false);
                    Tensor::from_vec(&[n, k], d)
                });
                vec![ga, gb]
            })
    }
}

fn dims2(s: &[usize]) -> (usize, usize) {
    assert_eq!(s.len(), 2, "expected a matrix, got shape {s:?}");
    (s[0], s[1])
}

pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
