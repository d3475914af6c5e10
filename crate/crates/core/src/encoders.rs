//! Image → style codes and segmentation → structure codes.
//!
//! Both encoders predict offsets from the generator's average latent, which
//! is stored as a non-trainable buffer and set when training starts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use semtex_tensor::nn::{Conv2d, Linear};
use semtex_tensor::{Binder, Graph, ParamId, ParamSet, Scalar, Tensor, Var};

use crate::generator::{layer_resolution, num_style_layers, GeneratorConfig};
use crate::image::{LabelMap, RgbImage};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureEncoderKind {
    CoarseToFine,
    PyramidBaseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureInputKind {
    Segmentation,
    Silhouette,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_resolution: usize,
    pub latent_dim: usize,
    pub split_index: usize,
    pub num_classes: usize,
    pub structure_encoder_kind: StructureEncoderKind,
    pub structure_input_kind: StructureInputKind,
    /// Feature width of every encoder conv.
    pub channels: usize,
}

impl EncoderConfig {
    pub fn for_generator(g: &GeneratorConfig, num_classes: usize) -> Self {
        Self {
            input_resolution: g.resolution,
            latent_dim: g.latent_dim,
            split_index: g.split_index,
            num_classes,
            structure_encoder_kind: StructureEncoderKind::CoarseToFine,
            structure_input_kind: StructureInputKind::Segmentation,
            channels: 32,
        }
    }

    pub fn num_layers(&self) -> usize {
        num_style_layers(self.input_resolution).unwrap_or(0)
    }

    /// Channels of the structure input: `C`, or 2 for silhouettes.
    pub fn structure_channels(&self) -> usize {
        match self.structure_input_kind {
            StructureInputKind::Segmentation => self.num_classes,
            StructureInputKind::Silhouette => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = num_style_layers(self.input_resolution)?;
        if self.input_resolution < 16 {
            return Err(Error::Config(format!(
                "encoders need resolution >= 16 for three pyramid levels, got {}",
                self.input_resolution
            )));
        }
        if self.split_index > l || self.num_classes < 2 || self.latent_dim == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "invalid encoder config: n={} of L={l}, C={}, D={}, channels={}",
                self.split_index, self.num_classes, self.latent_dim, self.channels
            )));
        }
        Ok(())
    }

    pub fn check_matches(&self, g: &GeneratorConfig) -> Result<()> {
        if (self.input_resolution, self.latent_dim, self.split_index) != (g.resolution, g.latent_dim, g.split_index) {
            return Err(Error::Config(format!(
                "encoder (R={}, D={}, n={}) does not match generator (R={}, D={}, n={})",
                self.input_resolution, self.latent_dim, self.split_index, g.resolution, g.latent_dim, g.split_index
            )));
        }
        Ok(())
    }
}

/// `[C,H,W]` indicator channels of a label image.
pub fn onehot<T: Scalar>(seg: &LabelMap, classes: usize) -> Result<Tensor<T>> {
    seg.check_classes(classes)?;
    let p = seg.width * seg.height;
    let mut data = vec![T::zero(); classes * p];
    for (i, &l) in seg.data.iter().enumerate() {
        data[l as usize * p + i] = T::one();
    }
    Ok(Tensor::from_vec(&[classes, seg.height, seg.width], data))
}

/// Per-pixel index of the largest channel (first on ties).
pub fn argmax_channels<T: Scalar>(t: &Tensor<T>) -> LabelMap {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let p = h * w;
    let d = t.data();
    let data = (0..p)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if d[k * p + i] > d[best * p + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(w, h, data)
}

/// Stride-2 convs from `size` down to 1×1, then a linear map to `D`.
#[derive(Clone, Debug)]
struct Map2Style {
    convs: Vec<Conv2d>,
    fc: Linear,
    channels: usize,
}

impl Map2Style {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, size: usize, ch: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let convs = (0..size.trailing_zeros())
            .map(|k| Conv2d::new(ps, &format!("{name}.conv{k}"), ch, ch, 3, 2, true, true, rng))
            .collect();
        let fc = Linear::new(ps, &format!("{name}.fc"), ch, d, true, 0.0, 1.0, false, rng);
        Self { convs, fc, channels: ch }
    }

    fn forward<T: Scalar>(&self, b: &Binder<T>, x: &Var<T>) -> Var<T> {
        let n = x.shape()[0];
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(b, &h);
        }
        self.fc.forward(b, &h.reshape(&[n, self.channels]))
    }
}

#[derive(Clone, Debug)]
struct ResDown {
    conv0: Conv2d,
    conv1: Conv2d,
    skip: Conv2d,
}

impl ResDown {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv0: Conv2d::new(ps, &format!("{name}.conv0"), ch, ch, 3, 1, true, true, rng),
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), ch, ch, 3, 1, true, true, rng),
            skip: Conv2d::new(ps, &format!("{name}.skip"), ch, ch, 1, 1, false, false, rng),
        }
    }

    fn forward<T: Scalar>(&self, b: &Binder<T>, x: &Var<T>) -> Var<T> {
        let skip = self.skip.forward(b, &x.avg_pool(2));
        let h = self.conv1.forward(b, &self.conv0.forward(b, x).avg_pool(2));
        skip.add(&h).scale(std::f64::consts::FRAC_1_SQRT_2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Band {
    Fine,
    Medium,
    Coarse,
}

/// Pyramid level read by the head of a generator layer at resolution `r`.
fn band(r: usize, resolution: usize) -> Band {
    if r * 8 <= resolution {
        Band::Coarse
    } else if r * 4 == resolution {
        Band::Medium
    } else {
        Band::Fine
    }
}

/// Residual backbone with fine (R/2), medium (R/4) and coarse (R/8) levels,
/// merged top-down, and one Map2Style head per output vector.
#[derive(Clone, Debug)]
struct Pyramid {
    stem: Conv2d,
    down: [ResDown; 3],
    lateral: [Conv2d; 2],
    heads: Vec<(Band, Map2Style)>,
}

impl Pyramid {
    fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        resolution: usize,
        heads: usize,
        cfg: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let ch = cfg.channels;
        let stem = Conv2d::new(ps, &format!("{name}.stem"), in_ch, ch, 3, 1, true, true, rng);
        let down = [0, 1, 2].map(|k| ResDown::new(ps, &format!("{name}.down{k}"), ch, rng));
        let lateral = [0, 1].map(|k| Conv2d::new(ps, &format!("{name}.lateral{k}"), ch, ch, 1, 1, true, false, rng));
        let heads = (0..heads)
            .map(|i| {
                let bd = band(layer_resolution(i), resolution);
                let size = match bd {
                    Band::Fine => resolution / 2,
                    Band::Medium => resolution / 4,
                    Band::Coarse => resolution / 8,
                };
                (bd, Map2Style::new(ps, &format!("{name}.head{i}"), size, ch, cfg.latent_dim, rng))
            })
            .collect();
        Self {
            stem,
            down,
            lateral,
            heads,
        }
    }

    fn forward<T: Scalar>(&self, b: &Binder<T>, x: &Var<T>) -> Vec<Var<T>> {
        let h = self.stem.forward(b, x);
        let fine = self.down[0].forward(b, &h);
        let medium = self.down[1].forward(b, &fine);
        let coarse = self.down[2].forward(b, &medium);
        let medium = self.lateral[1].forward(b, &medium).add(&coarse.upsample2x());
        let fine = self.lateral[0].forward(b, &fine).add(&medium.upsample2x());
        self.heads
            .iter()
            .map(|(bd, head)| {
                let src = match bd {
                    Band::Fine => &fine,
                    Band::Medium => &medium,
                    Band::Coarse => &coarse,
                };
                head.forward(b, src)
            })
            .collect()
    }
}

fn add_latent_avg<T: Scalar>(codes: Vec<Var<T>>, b: &Binder<T>, avg: ParamId, d: usize) -> Vec<Var<T>> {
    let a = b.var(avg).reshape(&[1, d]);
    codes.into_iter().map(|c| c.add(&a)).collect()
}

fn stack_rows<T: Scalar>(codes: &[Var<T>], d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(codes.len() * d);
    for c in codes {
        data.extend_from_slice(&c.value().data()[..d]);
    }
    Tensor::from_vec(&[codes.len(), d], data)
}

/// Style encoder: RGB image → all `L` per-layer codes.
#[derive(Clone, Debug)]
pub struct StyleEncoder<T: Scalar = f32> {
    pub config: EncoderConfig,
    net: Pyramid,
    pub params: ParamSet<T>,
    /// Holds `latent_avg` `[D]`.
    pub buffers: ParamSet<T>,
    latent_avg: ParamId,
}

impl<T: Scalar> StyleEncoder<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let net = Pyramid::new(
            &mut params,
            "style",
            3,
            config.input_resolution,
            config.num_layers(),
            &config,
            &mut rng,
        );
        let mut buffers = ParamSet::new();
        let latent_avg = buffers.add("style.latent_avg", Tensor::zeros(&[config.latent_dim]));
        Ok(Self {
            config,
            net,
            params,
            buffers,
            latent_avg,
        })
    }

    pub fn set_latent_avg(&mut self, avg: Tensor<T>) {
        *self.buffers.get_mut(self.latent_avg) = avg.reshaped(&[self.config.latent_dim]);
    }

    /// `[N,3,R,R]` → `L` tensors of `[N,D]`.
    pub fn forward(&self, b: &Binder<T>, x: &Var<T>) -> Vec<Var<T>> {
        let bb = Binder::frozen(b.graph(), &self.buffers);
        add_latent_avg(self.net.forward(b, x), &bb, self.latent_avg, self.config.latent_dim)
    }

    /// Frozen encoding of one `[3,R,R]` image into `[L,D]`.
    pub fn encode(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self.config.input_resolution;
        if image.shape() != [3, r, r] {
            return Err(Error::Shape(format!("style image must be [3,{r},{r}], got {:?}", image.shape())));
        }
        let x = image.clone().reshaped(&[1, 3, r, r]);
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        Ok(stack_rows(&self.forward(&b, &g.constant(x)), self.config.latent_dim))
    }
}

impl StyleEncoder<f32> {
    pub fn style_encode(&self, image: &RgbImage) -> Result<Tensor<f32>> {
        self.encode(&image.to_tensor())
    }
}

#[derive(Clone, Debug)]
struct C2fLayer {
    seg0: Conv2d,
    seg1: Conv2d,
    head: Map2Style,
    res: usize,
}

#[derive(Clone, Debug)]
enum StructureNet {
    CoarseToFine(Vec<C2fLayer>),
    Pyramid(Pyramid),
}

/// Structure encoder: one-hot segmentation → the first `n` codes.
#[derive(Clone, Debug)]
pub struct StructureEncoder<T: Scalar = f32> {
    pub config: EncoderConfig,
    net: StructureNet,
    pub params: ParamSet<T>,
    pub buffers: ParamSet<T>,
    latent_avg: ParamId,
}

impl<T: Scalar> StructureEncoder<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (cin, ch, n) = (config.structure_channels(), config.channels, config.split_index);
        let net = match config.structure_encoder_kind {
            StructureEncoderKind::CoarseToFine => StructureNet::CoarseToFine(
                (0..n)
                    .map(|i| {
                        let res = layer_resolution(i);
                        let name = format!("struct.l{i}");
                        C2fLayer {
                            seg0: Conv2d::new(&mut params, &format!("{name}.seg0"), cin, ch, 3, 1, true, true, &mut rng),
                            seg1: Conv2d::new(&mut params, &format!("{name}.seg1"), ch, ch, 3, 1, true, true, &mut rng),
                            head: Map2Style::new(&mut params, &format!("{name}.head"), res, ch, config.latent_dim, &mut rng),
                            res,
                        }
                    })
                    .collect(),
            ),
            StructureEncoderKind::PyramidBaseline => StructureNet::Pyramid(Pyramid::new(
                &mut params,
                "struct",
                cin,
                config.input_resolution,
                n,
                &config,
                &mut rng,
            )),
        };
        let mut buffers = ParamSet::new();
        let latent_avg = buffers.add("struct.latent_avg", Tensor::zeros(&[config.latent_dim]));
        Ok(Self {
            config,
            net,
            params,
            buffers,
            latent_avg,
        })
    }

    pub fn set_latent_avg(&mut self, avg: Tensor<T>) {
        *self.buffers.get_mut(self.latent_avg) = avg.reshaped(&[self.config.latent_dim]);
    }

    /// `[N,C,R,R]` → `n` tensors of `[N,D]`.
    pub fn forward(&self, b: &Binder<T>, x: &Var<T>) -> Vec<Var<T>> {
        self.forward_masked(b, x, None)
    }

    /// As [`Self::forward`]; for the coarse-to-fine net, `zero_layer`
    /// replaces the segmentation injected at that layer with zeros.
    pub fn forward_masked(&self, b: &Binder<T>, x: &Var<T>, zero_layer: Option<usize>) -> Vec<Var<T>> {
        let codes = match &self.net {
            StructureNet::Pyramid(p) => p.forward(b, x),
            StructureNet::CoarseToFine(layers) => {
                let mut carry: Option<Var<T>> = None;
                let mut out = Vec::with_capacity(layers.len());
                for (i, l) in layers.iter().enumerate() {
                    let mut seg = x.resize_to(l.res);
                    if zero_layer == Some(i) {
                        seg = seg.scale(0.0);
                    }
                    let mut h = l.seg1.forward(b, &l.seg0.forward(b, &seg));
                    if let Some(c) = carry {
                        h = h.add(&c.resize_to(l.res));
                    }
                    out.push(l.head.forward(b, &h));
                    carry = Some(h);
                }
                out
            }
        };
        let bb = Binder::frozen(b.graph(), &self.buffers);
        add_latent_avg(codes, &bb, self.latent_avg, self.config.latent_dim)
    }

    /// Frozen encoding of one `[C,R,R]` one-hot map into `[n,D]`.
    pub fn encode(&self, seg_onehot: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, r) = (self.config.structure_channels(), self.config.input_resolution);
        if seg_onehot.shape() != [c, r, r] {
            return Err(Error::Shape(format!(
                "structure input must be [{c},{r},{r}], got {:?}",
                seg_onehot.shape()
            )));
        }
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        let x = g.constant(seg_onehot.clone().reshaped(&[1, c, r, r]));
        Ok(stack_rows(&self.forward(&b, &x), self.config.latent_dim))
    }

    /// One-hot encodes a label map (as a silhouette if so configured) and
    /// encodes it.
    pub fn encode_labels(&self, seg: &LabelMap) -> Result<Tensor<T>> {
        self.encode(&self.prepare(seg)?)
    }

    pub fn prepare(&self, seg: &LabelMap) -> Result<Tensor<T>> {
        seg.check_classes(self.config.num_classes)?;
        match self.config.structure_input_kind {
            StructureInputKind::Segmentation => onehot(seg, self.config.num_classes),
            StructureInputKind::Silhouette => {
                let sil = LabelMap::new(seg.width, seg.height, seg.data.iter().map(|&v| u8::from(v > 0)).collect());
                onehot(&sil, 2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            input_resolution: 32,
            latent_dim: 16,
            split_index: 4,
            num_classes: 4,
            structure_encoder_kind: StructureEncoderKind::CoarseToFine,
            structure_input_kind: StructureInputKind::Segmentation,
            channels: 8,
        }
    }

    fn seg(seed: u64) -> LabelMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let mut m = LabelMap::zeros(32, 32);
        for y in 8..24 {
            for x in 4..28 {
                m.set(x, y, 1);
            }
        }
        let cx = rng.gen_range(6..26);
        for y in 20..26 {
            for x in cx - 3..cx + 3 {
                m.set(x, y, 3);
            }
        }
        m
    }

    #[test]
    fn onehot_examples() {
        let m = LabelMap::new(2, 2, vec![0, 1, 1, 0]);
        let t = onehot::<f64>(&m, 2).unwrap();
        for i in 0..4 {
            assert_eq!(t.data()[i] + t.data()[4 + i], 1.0);
        }
        let z = onehot::<f32>(&LabelMap::zeros(3, 3), 4).unwrap();
        assert!(z.data()[..9].iter().all(|&v| v == 1.0));
        assert!(onehot::<f32>(&LabelMap::new(1, 1, vec![5]), 3).is_err());
    }

    proptest! {
        #[test]
        fn argmax_inverts_onehot(w in 1usize..6, h in 1usize..6, c in 2usize..7, seed in any::<u64>()) {
            let data = (0..w * h).map(|i| ((seed >> (i % 60)) as usize + i) % c).map(|v| v as u8).collect();
            let m = LabelMap::new(w, h, data);
            let t = onehot::<f32>(&m, c).unwrap();
            prop_assert_eq!(argmax_channels(&t), m);
        }
    }

    #[test]
    fn bands() {
        let r: Vec<_> = (0..8).map(|i| band(layer_resolution(i), 32)).collect();
        use Band::*;
        assert_eq!(r, [Coarse, Coarse, Medium, Medium, Fine, Fine, Fine, Fine]);
    }

    #[test]
    fn style_shapes_and_determinism() {
        let e = StyleEncoder::<f32>::new(cfg(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::randn(&[3, 32, 32], &mut rng);
        let w = e.encode(&img).unwrap();
        assert_eq!(w.shape(), &[8, 16]);
        assert_eq!(w, e.encode(&img).unwrap());
        assert!(e.encode(&Tensor::zeros(&[3, 16, 16])).is_err());
    }

    #[test]
    fn structure_shapes_for_both_kinds() {
        for kind in [StructureEncoderKind::CoarseToFine, StructureEncoderKind::PyramidBaseline] {
            let c = EncoderConfig {
                structure_encoder_kind: kind,
                ..cfg()
            };
            let e = StructureEncoder::<f32>::new(c, 0).unwrap();
            let w = e.encode_labels(&seg(0)).unwrap();
            assert_eq!(w.shape(), &[4, 16]);
            assert_eq!(w, e.encode_labels(&seg(0)).unwrap());
            assert!(e.encode(&Tensor::zeros(&[5, 32, 32])).is_err());
        }
    }

    #[test]
    fn full_scale_car_split_gives_six_vectors() {
        let c = EncoderConfig {
            input_resolution: 128,
            split_index: 6,
            ..cfg()
        };
        let e = StructureEncoder::<f32>::new(c, 0).unwrap();
        let x = onehot(&LabelMap::zeros(128, 128), 4).unwrap();
        assert_eq!(e.encode(&x).unwrap().shape(), &[6, 16]);
    }

    #[test]
    fn c2f_and_pyramid_differ() {
        let a = StructureEncoder::<f32>::new(cfg(), 0).unwrap();
        let b = StructureEncoder::<f32>::new(
            EncoderConfig {
                structure_encoder_kind: StructureEncoderKind::PyramidBaseline,
                ..cfg()
            },
            1,
        )
        .unwrap();
        let s = seg(0);
        assert!(a.encode_labels(&s).unwrap().max_abs_diff(&b.encode_labels(&s).unwrap()) > 0.0);
    }

    #[test]
    fn small_region_change_changes_codes() {
        let e = StructureEncoder::<f32>::new(cfg(), 3).unwrap();
        let a = seg(0);
        let mut b = a.clone();
        for y in 20..26 {
            for x in 0..32 {
                if b.get(x, y) == 3 {
                    b.set(x, y, 1);
                }
            }
        }
        assert!(e.encode_labels(&a).unwrap().max_abs_diff(&e.encode_labels(&b).unwrap()) > 0.0);
    }

    #[test]
    fn channel_permutation_equivariance() {
        let c = cfg();
        let e = StructureEncoder::<f64>::new(c.clone(), 4).unwrap();
        let perm = [2usize, 0, 3, 1];
        let s = seg(1);
        let permuted = LabelMap::new(32, 32, s.data.iter().map(|&v| perm[v as usize] as u8).collect());
        let mut e2 = e.clone();
        for (name, t) in e.params.iter() {
            if name.ends_with("seg0.weight") {
                let dst = e2.params.by_name_mut(name).unwrap();
                let (o, k) = (t.shape()[0], 9);
                for oc in 0..o {
                    for ic in 0..4 {
                        let src = &t.data()[(oc * 4 + ic) * k..(oc * 4 + ic + 1) * k];
                        dst.data_mut()[(oc * 4 + perm[ic]) * k..(oc * 4 + perm[ic] + 1) * k].copy_from_slice(src);
                    }
                }
            }
        }
        let a = e.encode_labels(&s).unwrap();
        let b = e2.encode_labels(&permuted).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn c2f_uses_every_layer_injection() {
        let e = StructureEncoder::<f64>::new(cfg(), 5).unwrap();
        let x = e.prepare(&seg(2)).unwrap().reshaped(&[1, 4, 32, 32]);
        let run = |z: Option<usize>| {
            let g = Graph::new();
            let b = Binder::frozen(&g, &e.params);
            stack_rows(&e.forward_masked(&b, &g.constant(x.clone()), z), 16)
        };
        let base = run(None);
        for i in 0..4 {
            assert!(run(Some(i)).max_abs_diff(&base) > 0.0, "layer {i} injection unused");
        }
    }

    #[test]
    fn silhouette_input_accepts_two_channels() {
        for kind in [StructureEncoderKind::CoarseToFine, StructureEncoderKind::PyramidBaseline] {
            let c = EncoderConfig {
                structure_encoder_kind: kind,
                structure_input_kind: StructureInputKind::Silhouette,
                ..cfg()
            };
            let e = StructureEncoder::<f32>::new(c, 0).unwrap();
            assert_eq!(e.prepare(&seg(0)).unwrap().shape(), &[2, 32, 32]);
            assert_eq!(e.encode_labels(&seg(0)).unwrap().shape(), &[4, 16]);
        }
    }
}
