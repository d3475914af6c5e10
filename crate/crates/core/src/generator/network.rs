use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semtex_tensor::nn::{lrelu, Linear};
use semtex_tensor::{Binder, Graph, ParamId, ParamSet, Scalar, Tensor, Var};

use super::{num_style_layers, GeneratorConfig, StyleCodes};
use crate::image::RgbImage;
use crate::{Error, Result};

/// Source of the per-layer noise maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// The stored per-layer noise buffers.
    Fixed,
    /// Fresh noise drawn from a generator seeded with this value.
    Seeded(u64),
    /// No noise.
    Zero,
}

/// Modulated convolution: input channels are scaled by an affine map of
/// the layer's latent vector, and (optionally) outputs are demodulated so
/// every output channel has unit expected magnitude.
#[derive(Clone, Debug)]
struct ModConv {
    affine: Linear,
    weight: ParamId,
    bias: ParamId,
    noise_strength: Option<ParamId>,
    noise_const: Option<ParamId>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    res: usize,
    up: bool,
    demodulate: bool,
    activate: bool,
}

impl ModConv {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        buffers: &mut ParamSet<T>,
        name: &str,
        latent_dim: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        res: usize,
        up: bool,
        rgb: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let affine = Linear::new(ps, &format!("{name}.affine"), latent_dim, in_ch, true, 1.0, 1.0, false, rng);
        let weight = ps.add(format!("{name}.weight"), Tensor::randn(&[out_ch, in_ch, kernel, kernel], rng));
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        let (noise_strength, noise_const) = if rgb {
            (None, None)
        } else {
            (
                Some(ps.add(format!("{name}.noise_strength"), Tensor::zeros(&[1]))),
                Some(buffers.add(format!("{name}.noise_const"), Tensor::randn(&[1, 1, res, res], rng))),
            )
        };
        Self {
            affine,
            weight,
            bias,
            noise_strength,
            noise_const,
            in_ch,
            out_ch,
            kernel,
            res,
            up,
            demodulate: !rgb,
            activate: !rgb,
        }
    }

    fn forward<T: Scalar>(
        &self,
        b: &Binder<T>,
        buffers: &Binder<T>,
        x: &Var<T>,
        w: &Var<T>,
        noise: &mut Option<ChaCha8Rng>,
        zero_noise: bool,
    ) -> Var<T> {
        let n = x.shape()[0];
        let fan_in = (self.in_ch * self.kernel * self.kernel) as f64;
        let mut styles = self.affine.forward(b, w);
        let weight = b.var(self.weight).scale(1.0 / fan_in.sqrt());
        if !self.demodulate {
            // 1×1 output layers scale styles instead of demodulating
            styles = styles.scale(1.0 / (self.in_ch as f64).sqrt());
        }
        let mut h = x.mul(&styles.reshape(&[n, self.in_ch, 1, 1]));
        if self.up {
            h = h.upsample2x();
        }
        let mut y = h.conv2d(&weight, 1, self.kernel / 2);
        if self.demodulate {
            let wsq = weight.square().sum_axes(&[2, 3]).reshape(&[self.out_ch, self.in_ch]);
            let d = styles.square().matmul_t(&wsq).add_scalar(1e-8).rsqrt();
            y = y.mul(&d.reshape(&[n, self.out_ch, 1, 1]));
        }
        if let (Some(strength), Some(buf)) = (self.noise_strength, self.noise_const) {
            if !zero_noise {
                let map = match noise {
                    Some(rng) => y.graph().constant(Tensor::randn(&[n, 1, self.res, self.res], rng)),
                    None => buffers.var(buf),
                };
                y = y.add(&map.mul(&b.var(strength)));
            }
        }
        y = y.add(&b.var(self.bias).reshape(&[1, self.out_ch, 1, 1]));
        if self.activate {
            lrelu(&y)
        } else {
            y
        }
    }
}

/// Image and captured per-layer activations of one synthesis pass.
pub struct SynthesisOutput<T: Scalar> {
    pub image: Var<T>,
    /// Output of conv layer `i`, which consumed latent vector `i`.
    pub activations: Vec<Var<T>>,
}

/// Mapping network plus skip-architecture synthesis network.
#[derive(Clone, Debug)]
pub struct Generator<T: Scalar = f32> {
    pub config: GeneratorConfig,
    mapping: Vec<Linear>,
    const_input: ParamId,
    layers: Vec<ModConv>,
    to_rgb: Vec<ModConv>,
    pub params: ParamSet<T>,
    /// Fixed noise maps; never trained.
    pub buffers: ParamSet<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let mut buffers = ParamSet::new();
        let d = config.latent_dim;
        let mapping = (0..config.mapping_layers)
            .map(|i| {
                Linear::new(
                    &mut ps,
                    &format!("mapping.fc{i}"),
                    d,
                    d,
                    true,
                    0.0,
                    config.mapping_lr_multiplier,
                    true,
                    &mut rng,
                )
            })
            .collect();
        let c4 = config.channels(4);
        let const_input = ps.add("synthesis.const", Tensor::randn(&[1, c4, 4, 4], &mut rng));
        let levels = config.num_layers() / 2;
        let mut layers = Vec::new();
        let mut to_rgb = Vec::new();
        let mut in_ch = c4;
        for j in 0..levels {
            let res = 4 << j;
            let out_ch = config.channels(res);
            let name = format!("synthesis.b{res}");
            layers.push(ModConv::new(
                &mut ps,
                &mut buffers,
                &format!("{name}.conv0"),
                d,
                in_ch,
                out_ch,
                3,
                res,
                j > 0,
                false,
                &mut rng,
            ));
            layers.push(ModConv::new(
                &mut ps,
                &mut buffers,
                &format!("{name}.conv1"),
                d,
                out_ch,
                out_ch,
                3,
                res,
                false,
                false,
                &mut rng,
            ));
            to_rgb.push(ModConv::new(
                &mut ps,
                &mut buffers,
                &format!("{name}.torgb"),
                d,
                out_ch,
                3,
                1,
                res,
                false,
                true,
                &mut rng,
            ));
            in_ch = out_ch;
        }
        Ok(Self {
            config,
            mapping,
            const_input,
            layers,
            to_rgb,
            params: ps,
            buffers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// z `[N,D]` → w `[N,D]`; z is first rescaled to norm √D.
    pub fn map_var(&self, b: &Binder<T>, z: &Var<T>) -> Var<T> {
        let mut x = z.mul(&z.square().mean_axes(&[1]).rsqrt());
        for fc in &self.mapping {
            x = fc.forward(b, &x);
        }
        x
    }

    /// Runs synthesis on `L` latent batches, each `[N,D]`; layer `i`
    /// consumes `ws[i]`.
    pub fn synthesize_var(&self, b: &Binder<T>, ws: &[Var<T>], noise: NoiseMode) -> SynthesisOutput<T> {
        assert_eq!(ws.len(), self.layers.len(), "one latent per layer");
        let graph = b.graph();
        let buffers = Binder::frozen(graph, &self.buffers);
        let n = ws[0].shape()[0];
        let mut rng = match noise {
            NoiseMode::Seeded(s) => Some(ChaCha8Rng::seed_from_u64(s)),
            _ => None,
        };
        let zero = noise == NoiseMode::Zero;
        let c4 = self.config.channels(4);
        let ones = graph.constant(Tensor::ones(&[n, 1, 1, 1]));
        let mut x = ones.mul(&b.var(self.const_input)).reshape(&[n, c4, 4, 4]);
        let mut img: Option<Var<T>> = None;
        let mut activations = Vec::with_capacity(self.layers.len());
        for (j, rgb) in self.to_rgb.iter().enumerate() {
            for i in [2 * j, 2 * j + 1] {
                x = self.layers[i].forward(b, &buffers, &x, &ws[i], &mut rng, zero);
                activations.push(x.clone());
            }
            let y = rgb.forward(b, &buffers, &x, &ws[2 * j + 1], &mut None, true);
            img = Some(match img {
                None => y,
                Some(prev) => prev.upsample2x().add(&y),
            });
        }
        SynthesisOutput {
            image: img.expect("at least one resolution level"),
            activations,
        }
    }

    /// Frozen mapping of a `[N,D]` batch (or a single `[D]` vector).
    pub fn mapping_network(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.config.latent_dim;
        let z = match z.shape() {
            [k] if *k == d => z.clone().reshaped(&[1, d]),
            [_, k] if *k == d => z.clone(),
            s => return Err(Error::Shape(format!("latent must be [N,{d}] or [{d}], got {s:?}"))),
        };
        if !z.is_finite() {
            return Err(Error::Numerical("latent input contains non-finite values".into()));
        }
        for i in 0..z.shape()[0] {
            if z.data()[i * d..(i + 1) * d].iter().all(|v| *v == T::zero()) {
                return Err(Error::Numerical("zero latent cannot be normalized".into()));
            }
        }
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        Ok(self.map_var(&b, &g.constant(z)).value().clone())
    }

    /// Frozen synthesis of a batch; `ws[i]` is `[N,D]`. Returns `[N,3,R,R]`.
    pub fn synthesize_batch(&self, ws: &[Tensor<T>], noise: NoiseMode) -> Result<Tensor<T>> {
        if ws.len() != self.num_layers() {
            return Err(Error::Shape(format!(
                "generator consumes {} latent vectors, got {}",
                self.num_layers(),
                ws.len()
            )));
        }
        let n = ws[0].shape().first().copied().unwrap_or(0);
        for w in ws {
            if w.shape() != [n, self.config.latent_dim] {
                return Err(Error::Shape(format!(
                    "latent batch must be [{n},{}], got {:?}",
                    self.config.latent_dim,
                    w.shape()
                )));
            }
        }
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        let vars: Vec<_> = ws.iter().map(|w| g.constant(w.clone())).collect();
        Ok(self.synthesize_var(&b, &vars, noise).image.value().clone())
    }
}

impl Generator<f32> {
    /// Synthesizes one texture from a full `[L,D]` code stack.
    pub fn synthesize(&self, codes: &StyleCodes, noise: NoiseMode) -> Result<RgbImage> {
        let expect_l = num_style_layers(self.config.resolution)?;
        if codes.num_layers() != expect_l || codes.latent_dim() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "codes are [{}, {}], generator expects [{expect_l}, {}]",
                codes.num_layers(),
                codes.latent_dim(),
                self.config.latent_dim
            )));
        }
        let d = self.config.latent_dim;
        let ws: Vec<_> = (0..expect_l)
            .map(|i| Tensor::from_vec(&[1, d], codes.layer(i).to_vec()))
            .collect();
        let img = self.synthesize_batch(&ws, noise)?;
        RgbImage::from_tensor(&img.index0(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            resolution: 16,
            latent_dim: 8,
            split_index: 2,
            channel_base: 64,
            channel_max: 8,
            num_views: 1,
            mapping_layers: 2,
            mapping_lr_multiplier: 0.01,
        }
    }

    fn codes(cfg: &GeneratorConfig, seed: u64) -> StyleCodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StyleCodes::new(Tensor::randn(&[cfg.num_layers(), cfg.latent_dim], &mut rng), cfg.split_index).unwrap()
    }

    #[test]
    fn output_shape_and_determinism() {
        let cfg = GeneratorConfig { resolution: 32, ..tiny() };
        let g = Generator::<f32>::new(cfg.clone(), 0).unwrap();
        let w = codes(&cfg, 1);
        let a = g.synthesize(&w, NoiseMode::Fixed).unwrap();
        assert_eq!((a.width, a.height), (32, 32));
        assert_eq!(a, g.synthesize(&w, NoiseMode::Fixed).unwrap());
        assert_eq!(
            g.synthesize(&w, NoiseMode::Seeded(3)).unwrap(),
            g.synthesize(&w, NoiseMode::Seeded(3)).unwrap()
        );
    }

    #[test]
    fn consumes_exactly_num_style_layers() {
        for r in [8, 16, 32] {
            let g = Generator::<f32>::new(GeneratorConfig { resolution: r, split_index: 0, ..tiny() }, 0).unwrap();
            assert_eq!(g.num_layers(), num_style_layers(r).unwrap());
        }
    }

    #[test]
    fn wrong_code_shape_is_error() {
        let cfg = tiny();
        let g = Generator::<f32>::new(cfg.clone(), 0).unwrap();
        let bad = StyleCodes::new(Tensor::zeros(&[cfg.num_layers() + 1, cfg.latent_dim]), 0).unwrap();
        assert!(g.synthesize(&bad, NoiseMode::Zero).is_err());
    }

    #[test]
    fn later_codes_do_not_touch_earlier_layers() {
        let cfg = tiny();
        let g = Generator::<f32>::new(cfg.clone(), 7).unwrap();
        let l = cfg.num_layers();
        let base = codes(&cfg, 2);
        let run = |w: &StyleCodes| {
            let gr = Graph::new();
            let b = Binder::frozen(&gr, &g.params);
            let ws: Vec<_> = (0..l)
                .map(|i| gr.constant(Tensor::from_vec(&[1, cfg.latent_dim], w.layer(i).to_vec())))
                .collect();
            g.synthesize_var(&b, &ws, NoiseMode::Zero)
                .activations
                .iter()
                .map(|a| a.value().clone())
                .collect::<Vec<_>>()
        };
        let ref_acts = run(&base);
        for k in 0..l {
            let mut w = base.clone();
            let d = cfg.latent_dim;
            for v in &mut w.w_full.data_mut()[k * d..] {
                *v += 0.5;
            }
            let acts = run(&w);
            for i in 0..k {
                assert_eq!(acts[i], ref_acts[i], "layer {i} changed when editing codes from {k}");
            }
            assert_ne!(acts[k], ref_acts[k]);
        }
    }

    #[test]
    fn mapping_is_scale_invariant_and_batch_consistent() {
        let cfg = tiny();
        let g = Generator::<f32>::new(cfg.clone(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Tensor::<f32>::randn(&[3, cfg.latent_dim], &mut rng);
        let w = g.mapping_network(&z).unwrap();
        let w2 = g.mapping_network(&z.map(|v| 2.0 * v)).unwrap();
        assert_eq!(w, w2);
        for i in 0..3 {
            assert_eq!(g.mapping_network(&z.index0(i)).unwrap().into_data(), w.index0(i).into_data());
        }
        assert!(g.mapping_network(&z.map(|_| f32::NAN)).is_err());
    }

    #[test]
    fn zero_noise_ignores_buffers() {
        let cfg = tiny();
        let mut g = Generator::<f32>::new(cfg.clone(), 0).unwrap();
        for t in g.params.tensors_mut() {
            if t.shape() == [1] {
                t.data_mut()[0] = 1.0;
            }
        }
        let w = codes(&cfg, 9);
        let a = g.synthesize(&w, NoiseMode::Zero).unwrap();
        let fixed = g.synthesize(&w, NoiseMode::Fixed).unwrap();
        assert_ne!(a, fixed);
        for t in g.buffers.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 3.0);
        }
        assert_eq!(a, g.synthesize(&w, NoiseMode::Zero).unwrap());
    }
}
