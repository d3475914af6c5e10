use crate::{ParamSet, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update; `grads` are in parameter order.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::of(c.lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(c.eps);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                *w -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

/// `target ← decay·target + (1−decay)·source`, elementwise.
pub fn ema_update<T: Scalar>(target: &mut ParamSet<T>, source: &ParamSet<T>, decay: f64) {
    assert_eq!(target.names(), source.names(), "EMA layouts differ");
    let d = T::of(decay);
    let e = T::one() - d;
    for (t, s) in target.tensors_mut().iter_mut().zip(source.tensors()) {
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = d * *a + e * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("x", Tensor::from_f64(&[2], &[3.0, -2.0]));
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            &ps,
        );
        for _ in 0..2000 {
            let g = ps.get(id).map(|v| 2.0 * v);
            opt.update(&mut ps, &[g]);
        }
        assert!(ps.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("x", Tensor::from_f64(&[1], &[1.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.1, beta1: 0.0, beta2: 0.99, eps: 0.0 }, &ps);
        opt.update(&mut ps, &[Tensor::from_f64(&[1], &[123.0])]);
        assert!((ps.get(id).data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn ema_with_zero_decay_copies() {
        let mut a = ParamSet::<f32>::new();
        a.add("w", Tensor::zeros(&[3]));
        let mut b = ParamSet::<f32>::new();
        b.add("w", Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]));
        ema_update(&mut a, &b, 0.0);
        assert_eq!(a, b);
    }
}
