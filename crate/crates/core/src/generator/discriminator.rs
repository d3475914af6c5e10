use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semtex_tensor::nn::{Conv2d, Linear};
use semtex_tensor::{Binder, Graph, ParamSet, Scalar, Tensor, Var};

use super::GeneratorConfig;
use crate::{Error, Result};

#[derive(Clone, Debug)]
struct DownBlock {
    conv0: Conv2d,
    conv1: Conv2d,
    skip: Conv2d,
}

/// Residual convolutional critic returning one unnormalized logit per image.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar = f32> {
    pub resolution: usize,
    from_rgb: Conv2d,
    blocks: Vec<DownBlock>,
    epilogue_conv: Conv2d,
    fc: Linear,
    out: Linear,
    channels4: usize,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: &GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let r = config.resolution;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let from_rgb = Conv2d::new(&mut ps, "d.fromrgb", 3, config.channels(r), 1, 1, true, true, &mut rng);
        let mut blocks = Vec::new();
        let mut res = r;
        while res > 4 {
            let (cin, cout) = (config.channels(res), config.channels(res / 2));
            let name = format!("d.b{res}");
            blocks.push(DownBlock {
                conv0: Conv2d::new(&mut ps, &format!("{name}.conv0"), cin, cin, 3, 1, true, true, &mut rng),
                conv1: Conv2d::new(&mut ps, &format!("{name}.conv1"), cin, cout, 3, 1, true, true, &mut rng),
                skip: Conv2d::new(&mut ps, &format!("{name}.skip"), cin, cout, 1, 1, false, false, &mut rng),
            });
            res /= 2;
        }
        let c4 = config.channels(4);
        let epilogue_conv = Conv2d::new(&mut ps, "d.b4.conv", c4 + 1, c4, 3, 1, true, true, &mut rng);
        let fc = Linear::new(&mut ps, "d.b4.fc", c4 * 16, c4, true, 0.0, 1.0, true, &mut rng);
        let out = Linear::new(&mut ps, "d.b4.out", c4, 1, true, 0.0, 1.0, false, &mut rng);
        Ok(Self {
            resolution: r,
            from_rgb,
            blocks,
            epilogue_conv,
            fc,
            out,
            channels4: c4,
            params: ps,
        })
    }

    /// `[N,3,R,R]` → `[N,1]`.
    pub fn forward(&self, b: &Binder<T>, img: &Var<T>) -> Var<T> {
        let n = img.shape()[0];
        let mut x = self.from_rgb.forward(b, img);
        for blk in &self.blocks {
            let skip = blk.skip.forward(b, &x.avg_pool(2));
            let h = blk.conv0.forward(b, &x);
            let h = blk.conv1.forward(b, &h.avg_pool(2));
            x = skip.add(&h).scale(std::f64::consts::FRAC_1_SQRT_2);
        }
        let x = Var::concat(&[x.clone(), minibatch_stddev(&x)], 1);
        let x = self.epilogue_conv.forward(b, &x);
        let x = self.fc.forward(b, &x.reshape(&[n, self.channels4 * 16]));
        self.out.forward(b, &x)
    }

    /// Frozen evaluation of a batch; returns the `N` logits.
    pub fn discriminate(&self, images: &Tensor<T>) -> Result<Vec<T>> {
        self.check_input(images)?;
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        Ok(self.forward(&b, &g.constant(images.clone())).value().data().to_vec())
    }

    pub fn check_input(&self, images: &Tensor<T>) -> Result<()> {
        let r = self.resolution;
        match images.shape() {
            [n, 3, h, w] if *n > 0 && *h == r && *w == r => Ok(()),
            s => Err(Error::Shape(format!("discriminator expects [N,3,{r},{r}], got {s:?}"))),
        }
    }
}

/// Largest group size ≤ 4 that divides the batch.
fn group_size(n: usize) -> usize {
    (1..=n.min(4)).rev().find(|g| n % g == 0).unwrap_or(1)
}

/// Per-group standard deviation averaged over features, as one extra channel.
fn minibatch_stddev<T: Scalar>(x: &Var<T>) -> Var<T> {
    let s = x.shape().to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let g = group_size(n);
    let m = n / g;
    let y = x.reshape(&[g, m, c, h, w]);
    let centered = y.sub(&y.mean_axes(&[0]));
    let std = centered.square().mean_axes(&[0]).add_scalar(1e-8).sqrt();
    std.mean_axes(&[2, 3, 4])
        .expand(&[g, m, 1, h, w])
        .reshape(&[n, 1, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GeneratorConfig {
        GeneratorConfig {
            resolution: 16,
            channel_base: 64,
            channel_max: 8,
            ..GeneratorConfig::desk()
        }
    }

    #[test]
    fn logits_per_image_and_deterministic() {
        let d = Discriminator::<f32>::new(&cfg(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[3, 3, 16, 16], &mut rng);
        let a = d.discriminate(&x).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, d.discriminate(&x).unwrap());
        assert!(d.discriminate(&Tensor::zeros(&[1, 3, 8, 8])).is_err());
    }

    #[test]
    fn group_sizes() {
        assert_eq!(group_size(1), 1);
        assert_eq!(group_size(4), 4);
        assert_eq!(group_size(6), 3);
        assert_eq!(group_size(8), 4);
        assert_eq!(group_size(7), 1);
    }

    #[test]
    fn stddev_channel_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Tensor::<f64>::randn(&[4, 2, 2, 2], &mut rng);
        let g = Graph::new();
        let out = minibatch_stddev(&g.constant(t.clone()));
        let d = t.data();
        let mut acc = 0.0;
        for f in 0..8 {
            let vals: Vec<f64> = (0..4).map(|i| d[i * 8 + f]).collect();
            let mean = vals.iter().sum::<f64>() / 4.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            acc += (var + 1e-8).sqrt();
        }
        let expect = acc / 8.0;
        for v in out.value().data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }
}
