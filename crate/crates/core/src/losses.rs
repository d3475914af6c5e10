//! Reconstruction, adversarial and regularization losses.
//!
//! Image losses take `[N,3,H,W]` batches; every reconstruction term is
//! computed per image and averaged over the batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use semtex_tensor::nn::{Conv2d, Linear};
use semtex_tensor::{softplus, Binder, Graph, ParamSet, Scalar, Tensor, Var};

use crate::generator::Discriminator;
use crate::{Error, Result};

/// Fixed network producing a list of feature maps (perceptual loss).
#[derive(Clone, Debug)]
pub struct PerceptualNet<T: Scalar = f32> {
    id: String,
    levels: Vec<Conv2d>,
    pub params: ParamSet<T>,
}

impl<T: Scalar> PerceptualNet<T> {
    /// Randomly initialized with a fixed seed; level `k` halves the
    /// resolution of level `k-1` before its conv.
    pub fn toy(levels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = 3;
        let convs = (0..levels)
            .map(|k| {
                let cout = 8 << k;
                let c = Conv2d::new(&mut params, &format!("lpips.l{k}"), cin, cout, 3, 1, true, true, &mut rng);
                cin = cout;
                c
            })
            .collect();
        Self {
            id: format!("toy-lpips/levels={levels}/seed={seed}"),
            levels: convs,
            params,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self, x: &Var<T>) -> Vec<Var<T>> {
        let b = Binder::frozen(x.graph(), &self.params);
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.levels.len());
        for (k, conv) in self.levels.iter().enumerate() {
            if k > 0 {
                h = h.avg_pool(2);
            }
            h = conv.forward(&b, &h);
            out.push(h.clone());
        }
        out
    }
}

/// Fixed network producing a unit-norm embedding (similarity loss).
#[derive(Clone, Debug)]
pub struct EmbeddingNet<T: Scalar = f32> {
    id: String,
    convs: Vec<Conv2d>,
    fc: Linear,
    pub params: ParamSet<T>,
}

impl<T: Scalar> EmbeddingNet<T> {
    pub fn toy(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let convs = vec![
            Conv2d::new(&mut params, "moco.c0", 3, 16, 3, 2, true, true, &mut rng),
            Conv2d::new(&mut params, "moco.c1", 16, 32, 3, 2, true, true, &mut rng),
        ];
        let fc = Linear::new(&mut params, "moco.fc", 32, dim, true, 0.0, 1.0, false, &mut rng);
        Self {
            id: format!("toy-moco/dim={dim}/seed={seed}"),
            convs,
            fc,
            params,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// `[N,3,H,W]` → `[N,E]` with unit rows.
    pub fn embed(&self, x: &Var<T>) -> Var<T> {
        let b = Binder::frozen(x.graph(), &self.params);
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(&b, &h);
        }
        let n = h.shape()[0];
        let e = self.fc.forward(&b, &h.mean_axes(&[2, 3]).reshape(&[n, 32]));
        e.mul(&e.square().sum_axes(&[1]).add_scalar(1e-12).rsqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub l2: f64,
    pub lpips: f64,
    pub moco: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l2: 1.0,
            lpips: 0.8,
            moco: 0.5,
        }
    }
}

impl LossWeights {
    pub fn combine(&self, l2: f64, lpips: f64, moco: f64) -> f64 {
        self.l2 * l2 + self.lpips * lpips + self.moco * moco
    }
}

fn check_same(a: &Var<impl Scalar>, b: &Var<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "loss inputs must be equal NCHW shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Batch mean of `‖a_n − b_n‖₂ / numel(a_n)`.
fn mean_norm_distance<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let per: usize = a.shape()[1..].iter().product();
    let axes: Vec<usize> = (1..a.shape().len()).collect();
    a.sub(b).square().sum_axes(&axes).sqrt().scale(1.0 / per as f64).mean()
}

pub fn l2_loss<T: Scalar>(i: &Var<T>, t: &Var<T>) -> Result<Var<T>> {
    check_same(i, t)?;
    Ok(mean_norm_distance(i, t))
}

fn unit_channels<T: Scalar>(f: &Var<T>) -> Var<T> {
    f.mul(&f.square().sum_axes(&[1]).add_scalar(1e-10).rsqrt())
}

pub fn lpips_loss<T: Scalar>(i: &Var<T>, t: &Var<T>, f: &PerceptualNet<T>) -> Result<Var<T>> {
    check_same(i, t)?;
    let (fi, ft) = (f.features(i), f.features(t));
    let mut total: Option<Var<T>> = None;
    for (a, b) in fi.iter().zip(&ft) {
        let d = mean_norm_distance(&unit_channels(a), &unit_channels(b));
        total = Some(match total {
            None => d,
            Some(s) => s.add(&d),
        });
    }
    total.ok_or_else(|| Error::Precondition("perceptual extractor has no levels".into()))
}

pub fn moco_loss<T: Scalar>(i: &Var<T>, t: &Var<T>, m: &EmbeddingNet<T>) -> Result<Var<T>> {
    check_same(i, t)?;
    Ok(cosine_loss(&m.embed(i), &m.embed(t)))
}

/// Batch mean of `1 − ⟨a_n, b_n⟩` for unit-row embeddings, evaluated as
/// `½‖a_n − b_n‖²` so identical embeddings give exactly zero.
pub fn cosine_loss<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    a.sub(b).square().sum_axes(&[1]).scale(0.5).mean()
}

/// Individual terms and weighted total of a reconstruction loss.
pub struct ReconLoss<T: Scalar> {
    pub total: Var<T>,
    pub l2: f64,
    pub lpips: f64,
    pub moco: f64,
}

pub fn recon_loss<T: Scalar>(
    i: &Var<T>,
    t: &Var<T>,
    f: &PerceptualNet<T>,
    m: &EmbeddingNet<T>,
    w: &LossWeights,
) -> Result<ReconLoss<T>> {
    let l2 = l2_loss(i, t)?;
    let lp = lpips_loss(i, t, f)?;
    let mo = moco_loss(i, t, m)?;
    let total = l2.scale(w.l2).add(&lp.scale(w.lpips)).add(&mo.scale(w.moco));
    Ok(ReconLoss {
        total,
        l2: l2.item().f64(),
        lpips: lp.item().f64(),
        moco: mo.item().f64(),
    })
}

/// Non-saturating logistic losses `(loss_G, loss_D)` as batch means.
pub fn gan_losses(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len().max(1) as f64;
    let g = mean(d_fake, &|x| softplus(-x));
    let d = mean(d_fake, &|x| softplus(x)) + mean(d_real, &|x| softplus(-x));
    (g, d)
}

pub fn d_loss_var<T: Scalar>(d_real: &Var<T>, d_fake: &Var<T>) -> Var<T> {
    d_fake.softplus().mean().add(&d_real.neg().softplus().mean())
}

pub fn g_loss_var<T: Scalar>(d_fake: &Var<T>) -> Var<T> {
    d_fake.neg().softplus().mean()
}

/// `∇_x Σ_n D(x_n)` and the per-sample squared norms.
pub fn input_gradient<T: Scalar>(d: &Discriminator<T>, real: &Tensor<T>) -> Result<(Tensor<T>, Vec<f64>)> {
    d.check_input(real)?;
    let g = Graph::new();
    let b = Binder::frozen(&g, &d.params);
    let x = g.param(real.clone());
    let s = d.forward(&b, &x).sum();
    let grad = g.backward(&s).get_or_zeros(&x);
    let n = real.shape()[0];
    let per = grad.numel() / n;
    let norms = (0..n)
        .map(|i| grad.data()[i * per..(i + 1) * per].iter().map(|v| v.f64() * v.f64()).sum())
        .collect();
    Ok((grad, norms))
}

/// `(γ/2) · mean_n ‖∇_x D(x_n)‖²`.
pub fn r1_penalty<T: Scalar>(d: &Discriminator<T>, real: &Tensor<T>, gamma: f64) -> Result<f64> {
    let (_, norms) = input_gradient(d, real)?;
    Ok(0.5 * gamma * norms.iter().sum::<f64>() / norms.len() as f64)
}

/// Gradient of `D`'s summed logits with respect to its parameters.
fn param_grads<T: Scalar>(d: &Discriminator<T>, x: Tensor<T>) -> Vec<Tensor<T>> {
    let g = Graph::new();
    let b = Binder::trainable(&g, &d.params);
    let s = d.forward(&b, &g.constant(x)).sum();
    b.grads(&g.backward(&s))
}

/// R1 value and its parameter gradient.
///
/// With `g = ∇_x S` for `S = Σ_n D(x_n)`, the gradient of `½‖g‖²` is the
/// mixed second derivative applied to `g`, i.e. the directional derivative
/// of `∇_θ S` along `g`; it is taken by a central difference with an RMS
/// input perturbation of `step`.
pub fn r1_param_gradient<T: Scalar>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    gamma: f64,
    step: f64,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let (g, norms) = input_gradient(d, real)?;
    let n = norms.len() as f64;
    let penalty = 0.5 * gamma * norms.iter().sum::<f64>() / n;
    let rms = (norms.iter().sum::<f64>() / g.numel() as f64).sqrt();
    if !rms.is_finite() {
        return Err(Error::Numerical("non-finite discriminator input gradient".into()));
    }
    if rms == 0.0 {
        return Ok((penalty, d.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()));
    }
    let eps = step / rms;
    let shift = g.map(|v| v * T::of(eps));
    let plus = param_grads(d, real.zip_map(&shift, |a, b| a + b));
    let minus = param_grads(d, real.zip_map(&shift, |a, b| a - b));
    let coef = T::of(gamma / n / (2.0 * eps));
    let grads = plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| p.zip_map(m, |a, b| (a - b) * coef))
        .collect();
    Ok((penalty, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;

    fn img(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(shape, &mut rng)
    }

    #[test]
    fn l2_examples() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let z = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert_eq!(l2_loss(&a, &z).unwrap().item(), 0.5);
        assert_eq!(l2_loss(&a, &a).unwrap().item(), 0.0);
        let x = g.constant(img(1, &[2, 3, 4, 4]));
        let y = g.constant(img(2, &[2, 3, 4, 4]));
        assert_eq!(l2_loss(&x, &y).unwrap().item(), l2_loss(&y, &x).unwrap().item());
        assert!(l2_loss(&x, &a).is_err());
    }

    #[test]
    fn identical_inputs_give_zero_terms() {
        let f = PerceptualNet::<f64>::toy(2, 0);
        let m = EmbeddingNet::<f64>::toy(16, 1);
        let g = Graph::new();
        let x = g.constant(img(3, &[2, 3, 8, 8]));
        let r = recon_loss(&x, &x, &f, &m, &LossWeights::default()).unwrap();
        assert_eq!((r.l2, r.lpips), (0.0, 0.0));
        assert!(r.moco.abs() < 1e-12);
        let y = g.constant(img(4, &[2, 3, 8, 8]));
        let r = recon_loss(&x, &y, &f, &m, &LossWeights::default()).unwrap();
        assert!(r.l2 > 0.0 && r.lpips > 0.0 && r.moco >= 0.0);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = EmbeddingNet::<f32>::toy(16, 1);
        let g = Graph::new();
        let e = m.embed(&g.constant(Tensor::randn(&[4, 3, 16, 16], &mut ChaCha8Rng::seed_from_u64(0))));
        for row in e.value().data().chunks(16) {
            let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn weights_combine() {
        let w = LossWeights::default();
        assert_eq!(w.combine(0.5, 0.25, 0.1), 1.0 * 0.5 + 0.8 * 0.25 + 0.5 * 0.1);
        let f = PerceptualNet::<f64>::toy(2, 0);
        let m = EmbeddingNet::<f64>::toy(16, 1);
        let g = Graph::new();
        let (x, y) = (g.constant(img(5, &[1, 3, 8, 8])), g.constant(img(6, &[1, 3, 8, 8])));
        let only_l2 = LossWeights {
            l2: 1.0,
            lpips: 0.0,
            moco: 0.0,
        };
        let r = recon_loss(&x, &y, &f, &m, &only_l2).unwrap();
        assert_eq!(r.total.item(), l2_loss(&x, &y).unwrap().item());
    }

    #[test]
    fn gan_loss_values() {
        let (g, d) = gan_losses(&[0.0], &[0.0]);
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g - 2f64.ln()).abs() < 1e-12);
        let (_, d) = gan_losses(&[50.0], &[-50.0]);
        assert!(d < 1e-20);
        let gs: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|&x| gan_losses(&[0.0], &[x]).0).collect();
        assert!(gs.windows(2).all(|w| w[1] < w[0]));
    }

    fn tiny_d(seed: u64) -> Discriminator<f64> {
        let cfg = GeneratorConfig {
            resolution: 8,
            channel_base: 32,
            channel_max: 4,
            ..GeneratorConfig::desk()
        };
        Discriminator::new(&cfg, seed).unwrap()
    }

    #[test]
    fn r1_zero_for_constant_discriminator() {
        let mut d = tiny_d(0);
        let names: Vec<String> = d.params.names().to_vec();
        for name in names {
            if name.starts_with("d.b4.out.weight") {
                d.params.by_name_mut(&name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        assert_eq!(r1_penalty(&d, &img(0, &[2, 3, 8, 8]), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn r1_matches_direct_finite_differences_of_the_penalty() {
        let d = tiny_d(1);
        let x = img(2, &[2, 3, 8, 8]);
        let gamma = 2.0;
        let (p, grads) = r1_param_gradient(&d, &x, gamma, 1e-4).unwrap();
        assert!(p > 0.0);
        let mut checked = 0;
        for (pi, name) in d.params.names().iter().enumerate() {
            let t = &d.params.tensors()[pi];
            for k in [0, t.numel() / 2] {
                let h = 1e-5;
                let mut dp = d.clone();
                dp.params.tensors_mut()[pi].data_mut()[k] += h;
                let mut dm = d.clone();
                dm.params.tensors_mut()[pi].data_mut()[k] -= h;
                let fd = (r1_penalty(&dp, &x, gamma).unwrap() - r1_penalty(&dm, &x, gamma).unwrap()) / (2.0 * h);
                let an = grads[pi].data()[k];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                    "{name}[{k}]: fd {fd} vs {an}"
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}
