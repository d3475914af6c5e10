//! Layers with equalized learning rate: weights are stored at unit scale and
//! multiplied by `1/sqrt(fan_in)` at runtime.

use rand::Rng;

use crate::{Binder, ParamId, ParamSet, Scalar, Tensor, Var};

pub const LRELU_SLOPE: f64 = 0.2;

/// Leaky ReLU with slope 0.2 followed by the √2 gain that preserves
/// activation variance.
pub fn lrelu<T: Scalar>(x: &Var<T>) -> Var<T> {
    x.leaky_relu(LRELU_SLOPE).scale(std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
    weight_gain: f64,
    bias_gain: f64,
    activate: bool,
}

impl Linear {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        bias_init: f64,
        lr_multiplier: f64,
        activate: bool,
        rng: &mut R,
    ) -> Self {
        let w = Tensor::<T>::randn(&[out_features, in_features], rng).map(|v| v / T::of(lr_multiplier));
        let weight = ps.add(format!("{name}.weight"), w);
        let bias = bias.then(|| {
            ps.add(
                format!("{name}.bias"),
                Tensor::full(&[out_features], T::of(bias_init / lr_multiplier)),
            )
        });
        Self {
            weight,
            bias,
            in_features,
            out_features,
            weight_gain: lr_multiplier / (in_features as f64).sqrt(),
            bias_gain: lr_multiplier,
            activate,
        }
    }

    /// `[N,in] → [N,out]`.
    pub fn forward<T: Scalar>(&self, b: &Binder<T>, x: &Var<T>) -> Var<T> {
        let w = b.var(self.weight).scale(self.weight_gain);
        let mut y = x.matmul_t(&w);
        if let Some(bias) = self.bias {
            let bv = b.var(bias).scale(self.bias_gain).reshape(&[1, self.out_features]);
            y = y.add(&bv);
        }
        if self.activate {
            lrelu(&y)
        } else {
            y
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    weight_gain: f64,
    activate: bool,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        activate: bool,
        rng: &mut R,
    ) -> Self {
        let weight = ps.add(
            format!("{name}.weight"),
            Tensor::randn(&[out_channels, in_channels, kernel, kernel], rng),
        );
        let bias = bias.then(|| ps.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
            weight_gain: 1.0 / ((in_channels * kernel * kernel) as f64).sqrt(),
            activate,
        }
    }

    pub fn forward<T: Scalar>(&self, b: &Binder<T>, x: &Var<T>) -> Var<T> {
        let w = b.var(self.weight).scale(self.weight_gain);
        let mut y = x.conv2d(&w, self.stride, self.pad);
        if let Some(bias) = self.bias {
            y = y.add(&b.var(bias).reshape(&[1, self.out_channels, 1, 1]));
        }
        if self.activate {
            lrelu(&y)
        } else {
            y
        }
    }
}
