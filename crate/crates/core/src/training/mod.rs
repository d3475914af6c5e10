//! Three-stage training: adversarial generator training, then the style
//! encoder against the frozen generator, then the structure encoder with
//! both of those frozen.

pub mod augment;
pub mod checkpoint;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use semtex_tensor::optim::{ema_update, Adam, AdamConfig};
use semtex_tensor::{Binder, Graph, ParamSet, Tensor, Var};

pub use augment::{augment, AugConfig, AugController};
pub use checkpoint::{param_hash, Container, FORMAT_VERSION};

use crate::encoders::{EncoderConfig, StructureEncoder, StyleEncoder};
use crate::generator::{Discriminator, Generator, GeneratorConfig, NoiseMode};
use crate::image::{LabelMap, RgbImage};
use crate::losses::{d_loss_var, g_loss_var, r1_param_gradient, recon_loss, EmbeddingNet, LossWeights, PerceptualNet};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: u64,
    pub ema_decay: f64,
    /// Ramp the EMA decay as `min(decay, (1+t)/(10+t))`.
    pub ema_warmup: bool,
    pub aug: AugConfig,
    pub r1_gamma: f64,
    pub r1_interval: u64,
    pub style_mixing_prob: f64,
    pub loss_weights: LossWeights,
    pub log_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-4,
            max_steps: 1000,
            ema_decay: 0.999,
            ema_warmup: true,
            aug: AugConfig::default(),
            r1_gamma: 1.0,
            r1_interval: 16,
            style_mixing_prob: 0.9,
            loss_weights: LossWeights::default(),
            log_interval: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "batch_size must be >= 1 and learning_rate > 0 (got {}, {})",
                self.batch_size, self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) || !(0.0..=1.0).contains(&self.aug.p_init) {
            return Err(Error::Config("ema_decay and aug.p_init must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// β = (0, 0.99) for the adversarial stage, (0.9, 0.999) otherwise.
    pub fn adam(&self, stage: u8) -> AdamConfig {
        let (beta1, beta2) = if stage == 1 { (0.0, 0.99) } else { (0.9, 0.999) };
        AdamConfig {
            lr: self.learning_rate,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// Fixed networks behind the perceptual and embedding losses.
#[derive(Clone, Debug)]
pub struct LossNets {
    pub perceptual: PerceptualNet<f32>,
    pub embedding: EmbeddingNet<f32>,
}

impl LossNets {
    pub fn toy() -> Self {
        Self {
            perceptual: PerceptualNet::toy(3, 0x5eed_0001),
            embedding: EmbeddingNet::toy(64, 0x5eed_0002),
        }
    }

    /// Toy architecture with weights read from a container whose arrays
    /// are named `perceptual.*` and `embedding.*`.
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::<serde_json::Value>::load(path)?;
        let mut nets = Self::toy();
        c.fill_params("perceptual", &mut nets.perceptual.params)?;
        c.fill_params("embedding", &mut nets.embedding.params)?;
        Ok(nets)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub r1: f64,
    pub recon: f64,
    pub p: f64,
    pub seconds: f64,
}

/// Everything a stage reads or writes, including optimizer moments.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Stage this state was produced by (1, 2 or 3).
    pub stage: u8,
    pub step: u64,
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub g_ema: Option<Generator<f32>>,
    pub discriminator: Option<Discriminator<f32>>,
    pub style_encoder: Option<StyleEncoder<f32>>,
    pub structure_encoder: Option<StructureEncoder<f32>>,
    pub opt_g: Option<Adam<f32>>,
    pub opt_d: Option<Adam<f32>>,
    pub opt_style: Option<Adam<f32>>,
    pub opt_structure: Option<Adam<f32>>,
    pub aug: AugController,
    pub rng: ChaCha8Rng,
}

/// Stacks images `idx` into `[N,3,R,R]`.
pub fn image_batch(images: &[RgbImage], idx: &[usize]) -> Tensor<f32> {
    let (w, h) = (images[idx[0]].width, images[idx[0]].height);
    let mut data = Vec::with_capacity(idx.len() * 3 * w * h);
    for &i in idx {
        data.extend_from_slice(&images[i].data);
    }
    Tensor::from_vec(&[idx.len(), 3, h, w], data)
}

fn check_images(images: &[RgbImage], r: usize) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if let Some(im) = images.iter().find(|im| im.width != r || im.height != r) {
        return Err(Error::Shape(format!(
            "training images must be {r}x{r}, found {}x{}",
            im.width, im.height
        )));
    }
    Ok(())
}

/// Mapping of a fresh z batch with optional style mixing: one `[N,D]`
/// latent per synthesis layer.
fn sample_ws(g: &Generator<f32>, b: &Binder<f32>, n: usize, mixing: f64, rng: &mut ChaCha8Rng) -> Vec<Var<f32>> {
    let (l, d) = (g.num_layers(), g.config.latent_dim);
    let graph = b.graph().clone();
    let w1 = g.map_var(b, &graph.constant(Tensor::randn(&[n, d], rng)));
    let cut = if rng.gen_bool(mixing.clamp(0.0, 1.0)) { rng.gen_range(1..l) } else { l };
    let z2 = graph.constant(Tensor::randn(&[n, d], rng));
    let w2 = if cut < l { Some(g.map_var(b, &z2)) } else { None };
    (0..l)
        .map(|i| if i < cut { w1.clone() } else { w2.clone().expect("mixing latent") })
        .collect()
}

fn sample_indices(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..len)).collect()
}

fn ensure_finite(v: f64, step: u64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            what: format!("{what} is {v}"),
        })
    }
}

fn add_grads(acc: &mut [Tensor<f32>], extra: &[Tensor<f32>]) {
    for (a, e) in acc.iter_mut().zip(extra) {
        a.add_assign(e);
    }
}

impl TrainState {
    /// Fresh generator, EMA copy and discriminator for adversarial training.
    pub fn stage1(gen: &GeneratorConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(gen.clone(), cfg.seed)?;
        let discriminator = Discriminator::new(gen, cfg.seed.wrapping_add(1))?;
        Ok(Self {
            stage: 1,
            step: 0,
            config: cfg.clone(),
            opt_g: Some(Adam::new(cfg.adam(1), &generator.params)),
            opt_d: Some(Adam::new(cfg.adam(1), &discriminator.params)),
            g_ema: Some(generator.clone()),
            generator,
            discriminator: Some(discriminator),
            style_encoder: None,
            structure_encoder: None,
            opt_style: None,
            opt_structure: None,
            aug: AugController::new(cfg.aug.p_init),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5354_4147_4531),
        })
    }

    /// Generator used for encoders and inference: the EMA copy if present.
    pub fn inference_generator(&self) -> &Generator<f32> {
        self.g_ema.as_ref().unwrap_or(&self.generator)
    }

    /// Moves a finished stage-1 state into style-encoder training: the EMA
    /// weights become the frozen generator and the discriminator is dropped.
    pub fn stage2(mut self, enc: &EncoderConfig, cfg: &TrainConfig) -> Result<Self> {
        if self.stage != 1 {
            return Err(Error::Precondition(format!(
                "style-encoder training needs a stage-1 checkpoint, got stage {}",
                self.stage
            )));
        }
        cfg.validate()?;
        enc.validate()?;
        enc.check_matches(&self.generator.config)?;
        if let Some(ema) = self.g_ema.take() {
            self.generator = ema;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5354_4147_4532);
        let mut style = StyleEncoder::new(enc.clone(), cfg.seed.wrapping_add(2))?;
        style.set_latent_avg(mean_latent(&self.generator, 4096, &mut rng)?);
        self.opt_style = Some(Adam::new(cfg.adam(2), &style.params));
        self.style_encoder = Some(style);
        self.discriminator = None;
        self.opt_g = None;
        self.opt_d = None;
        self.stage = 2;
        self.step = 0;
        self.config = cfg.clone();
        self.rng = rng;
        Ok(self)
    }

    /// Adds a fresh structure encoder; generator and style encoder stay frozen.
    pub fn stage3(mut self, enc: &EncoderConfig, cfg: &TrainConfig) -> Result<Self> {
        if self.stage != 2 {
            return Err(Error::Precondition(format!(
                "structure-encoder training needs a stage-2 checkpoint, got stage {}",
                self.stage
            )));
        }
        cfg.validate()?;
        enc.validate()?;
        enc.check_matches(&self.generator.config)?;
        let mut s = StructureEncoder::new(enc.clone(), cfg.seed.wrapping_add(3))?;
        let avg = self.style_encoder.as_ref().expect("stage-2 state has a style encoder").buffers.tensors()[0].clone();
        s.set_latent_avg(avg);
        self.opt_structure = Some(Adam::new(cfg.adam(3), &s.params));
        self.structure_encoder = Some(s);
        self.opt_style = None;
        self.stage = 3;
        self.step = 0;
        self.config = cfg.clone();
        self.rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5354_4147_4533);
        Ok(self)
    }

    fn log(&self, l: &StepLog) {
        log::info!(
            "stage={} step={} loss_g={:.5} loss_d={:.5} r1={:.5} recon={:.5} p={:.3} t={:.1}s",
            self.stage,
            l.step,
            l.loss_g,
            l.loss_d,
            l.r1,
            l.recon,
            l.p,
            l.seconds
        );
    }

    fn should_log(&self) -> bool {
        let k = self.config.log_interval;
        k > 0 && (self.step % k == 0 || self.step == self.config.max_steps)
    }

    fn stage1_step(&mut self, data: &Tensor<f32>, images: usize) -> Result<StepLog> {
        let t0 = Instant::now();
        let n = self.config.batch_size;
        let p = self.aug.p;
        let d = self.discriminator.take().expect("stage-1 state has a discriminator");

        // discriminator step
        let idx = sample_indices(&mut self.rng, n, images);
        let real = gather_rows(data, &idx);
        let fake = {
            let g = Graph::new();
            let b = Binder::frozen(&g, &self.generator.params);
            let ws = sample_ws(&self.generator, &b, n, self.config.style_mixing_prob, &mut self.rng);
            let seed = self.rng.gen();
            self.generator.synthesize_var(&b, &ws, NoiseMode::Seeded(seed)).image.value().clone()
        };
        let g = Graph::new();
        let bd = Binder::trainable(&g, &d.params);
        let real_aug = augment(&g.constant(real), p, &mut self.rng);
        let fake_aug = augment(&g.constant(fake), p, &mut self.rng);
        let d_real = d.forward(&bd, &real_aug);
        let d_fake = d.forward(&bd, &fake_aug);
        let loss_d = d_loss_var(&d_real, &d_fake);
        let loss_d_v = loss_d.item() as f64;
        ensure_finite(loss_d_v, self.step, "discriminator loss")?;
        let mut grads = bd.grads(&g.backward(&loss_d));
        let mut r1 = 0.0;
        let k = self.config.r1_interval;
        if k > 0 && self.config.r1_gamma > 0.0 && self.step % k == 0 {
            let (pen, rg) = r1_param_gradient(&d, real_aug.value(), self.config.r1_gamma * k as f64, 1e-2)?;
            ensure_finite(pen, self.step, "R1 penalty")?;
            add_grads(&mut grads, &rg);
            r1 = pen / k as f64;
        }
        let mut d = d;
        self.opt_d.as_mut().expect("stage-1 D optimizer").update(&mut d.params, &grads);
        self.aug.record(&d_real.value().data().iter().map(|&v| v as f64).collect::<Vec<_>>());

        // generator step
        let g = Graph::new();
        let bg = Binder::trainable(&g, &self.generator.params);
        let bd = Binder::frozen(&g, &d.params);
        let ws = sample_ws(&self.generator, &bg, n, self.config.style_mixing_prob, &mut self.rng);
        let seed = self.rng.gen();
        let img = self.generator.synthesize_var(&bg, &ws, NoiseMode::Seeded(seed)).image;
        let img = augment(&img, p, &mut self.rng);
        let loss_g = g_loss_var(&d.forward(&bd, &img));
        let loss_g_v = loss_g.item() as f64;
        ensure_finite(loss_g_v, self.step, "generator loss")?;
        let grads = bg.grads(&g.backward(&loss_g));
        drop(bg);
        self.opt_g.as_mut().expect("stage-1 G optimizer").update(&mut self.generator.params, &grads);
        self.discriminator = Some(d);

        let decay = if self.config.ema_warmup {
            self.config.ema_decay.min((1.0 + self.step as f64) / (10.0 + self.step as f64))
        } else {
            self.config.ema_decay
        };
        let ema = self.g_ema.as_mut().expect("stage-1 state has an EMA generator");
        ema_update(&mut ema.params, &self.generator.params, decay);

        self.step += 1;
        self.aug.end_step(self.step as usize, &self.config.aug);
        Ok(StepLog {
            step: self.step,
            loss_g: loss_g_v,
            loss_d: loss_d_v,
            r1,
            recon: 0.0,
            p: self.aug.p,
            seconds: t0.elapsed().as_secs_f64(),
        })
    }

    /// Style codes for all layers; the structure encoder replaces the first
    /// `n` when present and `seg` is given.
    fn encode_codes(
        &self,
        g: &Graph<f32>,
        x: &Tensor<f32>,
        seg: Option<&Tensor<f32>>,
        train_style: bool,
        train_structure: bool,
    ) -> (Vec<Var<f32>>, Option<Binder<'_, f32>>) {
        let style = self.style_encoder.as_ref().expect("style encoder present");
        let bs = Binder::new(g, &style.params, train_style);
        let mut codes = style.forward(&bs, &g.constant(x.clone()));
        match (seg, &self.structure_encoder) {
            (Some(s), Some(enc)) => {
                let bst = Binder::new(g, &enc.params, train_structure);
                let sc = enc.forward(&bst, &g.constant(s.clone()));
                for (i, c) in sc.into_iter().enumerate() {
                    codes[i] = c;
                }
                (codes, Some(if train_structure { bst } else { bs }))
            }
            _ => (codes, Some(bs)),
        }
    }

    fn encoder_step(&mut self, nets: &LossNets, data: &Tensor<f32>, segs: Option<&Tensor<f32>>, count: usize) -> Result<StepLog> {
        let t0 = Instant::now();
        let idx = sample_indices(&mut self.rng, self.config.batch_size, count);
        let x = gather_rows(data, &idx);
        let s = segs.map(|s| gather_rows(s, &idx));
        let structure = self.stage == 3;
        let g = Graph::new();
        let (codes, binder) = self.encode_codes(&g, &x, s.as_ref(), !structure, structure);
        let bg = Binder::frozen(&g, &self.generator.params);
        let t = self.generator.synthesize_var(&bg, &codes, NoiseMode::Zero).image;
        let r = recon_loss(&t, &g.constant(x), &nets.perceptual, &nets.embedding, &self.config.loss_weights)?;
        let total = r.total.item() as f64;
        ensure_finite(total, self.step, "reconstruction loss")?;
        let grads = binder.expect("trainable binder").grads(&g.backward(&r.total));
        if structure {
            let enc = self.structure_encoder.as_mut().expect("structure encoder");
            self.opt_structure.as_mut().expect("structure optimizer").update(&mut enc.params, &grads);
        } else {
            let enc = self.style_encoder.as_mut().expect("style encoder");
            self.opt_style.as_mut().expect("style optimizer").update(&mut enc.params, &grads);
        }
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            loss_g: 0.0,
            loss_d: 0.0,
            r1: 0.0,
            recon: total,
            p: self.aug.p,
            seconds: t0.elapsed().as_secs_f64(),
        })
    }

    /// Runs the current stage until `config.max_steps`. Stage 3 needs
    /// `labels` paired with `images`.
    pub fn run(&mut self, images: &[RgbImage], labels: Option<&[LabelMap]>, nets: &LossNets) -> Result<Vec<StepLog>> {
        check_images(images, self.generator.config.resolution)?;
        let data = image_batch(images, &(0..images.len()).collect::<Vec<_>>());
        let segs = if self.stage == 3 {
            let labels = labels.ok_or_else(|| Error::Precondition("structure training needs label maps".into()))?;
            Some(self.structure_batch(images, labels)?)
        } else {
            None
        };
        let started = Instant::now();
        let mut logs = Vec::new();
        while self.step < self.config.max_steps {
            let mut l = match self.stage {
                1 => self.stage1_step(&data, images.len())?,
                _ => self.encoder_step(nets, &data, segs.as_ref(), images.len())?,
            };
            l.seconds = started.elapsed().as_secs_f64();
            if self.should_log() {
                self.log(&l);
            }
            logs.push(l);
        }
        Ok(logs)
    }

    fn structure_batch(&self, images: &[RgbImage], labels: &[LabelMap]) -> Result<Tensor<f32>> {
        let enc = self.structure_encoder.as_ref().expect("stage-3 state has a structure encoder");
        if labels.len() != images.len() {
            return Err(Error::Shape(format!("{} images but {} label maps", images.len(), labels.len())));
        }
        let mut data = Vec::new();
        let mut shape = Vec::new();
        for (im, lab) in images.iter().zip(labels) {
            if (lab.width, lab.height) != (im.width, im.height) {
                return Err(Error::Shape(format!(
                    "label map {}x{} does not align with image {}x{}",
                    lab.width, lab.height, im.width, im.height
                )));
            }
            let t = enc.prepare(lab)?;
            shape = t.shape().to_vec();
            data.extend_from_slice(t.data());
        }
        shape.insert(0, labels.len());
        Ok(Tensor::from_vec(&shape, data))
    }

    /// Frozen reconstructions of `images` (using `labels` for the first `n`
    /// codes when a structure encoder exists).
    pub fn reconstruct(&self, images: &[RgbImage], labels: Option<&[LabelMap]>) -> Result<Vec<RgbImage>> {
        check_images(images, self.generator.config.resolution)?;
        let segs = match (labels, &self.structure_encoder) {
            (Some(l), Some(_)) => Some(self.structure_batch(images, l)?),
            _ => None,
        };
        let mut out = Vec::with_capacity(images.len());
        for start in (0..images.len()).step_by(16) {
            let idx: Vec<usize> = (start..(start + 16).min(images.len())).collect();
            let x = image_batch(images, &idx);
            let s = segs.as_ref().map(|s| gather_rows(s, &idx));
            let g = Graph::new();
            let (codes, _) = self.encode_codes(&g, &x, s.as_ref(), false, false);
            let bg = Binder::frozen(&g, &self.generator.params);
            let t = self.generator.synthesize_var(&bg, &codes, NoiseMode::Zero).image;
            for i in 0..idx.len() {
                out.push(RgbImage::from_tensor(&t.value().index0(i))?);
            }
        }
        Ok(out)
    }

    /// Mean reconstruction loss over a held-out set.
    pub fn eval_recon(&self, images: &[RgbImage], labels: Option<&[LabelMap]>, nets: &LossNets) -> Result<f64> {
        let recon = self.reconstruct(images, labels)?;
        let mut total = 0.0;
        for start in (0..images.len()).step_by(16) {
            let idx: Vec<usize> = (start..(start + 16).min(images.len())).collect();
            let g = Graph::new();
            let a = g.constant(image_batch(&recon, &idx));
            let b = g.constant(image_batch(images, &idx));
            let r = recon_loss(&a, &b, &nets.perceptual, &nets.embedding, &self.config.loss_weights)?;
            total += r.total.item() as f64 * idx.len() as f64;
        }
        Ok(total / images.len() as f64)
    }
}

/// Rows `idx` of a batched tensor.
pub fn gather_rows(t: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let per: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_vec(&shape, data)
}

/// Average mapping output over `count` standard-normal inputs.
pub fn mean_latent(g: &Generator<f32>, count: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let d = g.config.latent_dim;
    let mut acc = vec![0f64; d];
    let mut done = 0;
    while done < count {
        let n = (count - done).min(512);
        let w = g.mapping_network(&Tensor::randn(&[n, d], rng))?;
        for row in w.data().chunks(d) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += *v as f64;
            }
        }
        done += n;
    }
    Ok(Tensor::from_vec(&[d], acc.iter().map(|a| (a / count as f64) as f32).collect()))
}

/// `count` unconditional samples with one z per image and seeded noise.
pub fn sample_images(g: &Generator<f32>, count: usize, seed: u64) -> Result<Vec<RgbImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, d) = (g.num_layers(), g.config.latent_dim);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = (count - out.len()).min(32);
        let w = g.mapping_network(&Tensor::randn(&[n, d], &mut rng))?;
        let ws = vec![w; l];
        let imgs = g.synthesize_batch(&ws, NoiseMode::Seeded(rng.gen()))?;
        for i in 0..n {
            out.push(RgbImage::from_tensor(&imgs.index0(i))?);
        }
    }
    Ok(out)
}

pub fn train_stage1(images: &[RgbImage], gen: &GeneratorConfig, cfg: &TrainConfig) -> Result<TrainState> {
    let mut s = TrainState::stage1(gen, cfg)?;
    s.run(images, None, &LossNets::toy())?;
    Ok(s)
}

pub fn train_stage2(prev: TrainState, images: &[RgbImage], enc: &EncoderConfig, cfg: &TrainConfig, nets: &LossNets) -> Result<TrainState> {
    let mut s = prev.stage2(enc, cfg)?;
    s.run(images, None, nets)?;
    Ok(s)
}

pub fn train_stage3(
    prev: TrainState,
    images: &[RgbImage],
    labels: &[LabelMap],
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    nets: &LossNets,
) -> Result<TrainState> {
    let mut s = prev.stage3(enc, cfg)?;
    s.run(images, Some(labels), nets)?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamMeta {
    group: String,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: u8,
    pub step: u64,
    pub generator: GeneratorConfig,
    pub style_encoder: Option<EncoderConfig>,
    pub structure_encoder: Option<EncoderConfig>,
    pub train: TrainConfig,
    aug_p_bits: u64,
    aug_state: (u64, usize),
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    optimizers: Vec<AdamMeta>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    if s.len() != 64 {
        return Err(Error::Checkpoint("bad RNG seed".into()));
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| Error::Checkpoint("bad RNG seed".into()))?;
    }
    Ok(out)
}

fn push_adam(c: &mut Container<CheckpointMeta>, group: &str, opt: &Adam<f32>, ps: &ParamSet<f32>) {
    for ((name, m), v) in ps.names().iter().zip(&opt.m).zip(&opt.v) {
        c.push(format!("adam.{group}.m.{name}"), m.clone());
        c.push(format!("adam.{group}.v.{name}"), v.clone());
    }
    c.meta.optimizers.push(AdamMeta {
        group: group.into(),
        step: opt.step,
        lr: opt.config.lr,
        beta1: opt.config.beta1,
        beta2: opt.config.beta2,
        eps: opt.config.eps,
    });
}

fn load_adam(c: &Container<CheckpointMeta>, group: &str, ps: &ParamSet<f32>) -> Result<Option<Adam<f32>>> {
    let Some(meta) = c.meta.optimizers.iter().find(|o| o.group == group) else {
        return Ok(None);
    };
    let cfg = AdamConfig {
        lr: meta.lr,
        beta1: meta.beta1,
        beta2: meta.beta2,
        eps: meta.eps,
    };
    let mut opt = Adam::new(cfg, ps);
    opt.step = meta.step;
    let mut m = ps.clone();
    c.fill_params(&format!("adam.{group}.m"), &mut m)?;
    let mut v = ps.clone();
    c.fill_params(&format!("adam.{group}.v"), &mut v)?;
    opt.m = m.tensors().to_vec();
    opt.v = v.tensors().to_vec();
    Ok(Some(opt))
}

impl TrainState {
    pub fn to_container(&self) -> Container<CheckpointMeta> {
        let (sum, count) = self.aug.internals();
        let mut c = Container::new(CheckpointMeta {
            stage: self.stage,
            step: self.step,
            generator: self.generator.config.clone(),
            style_encoder: self.style_encoder.as_ref().map(|e| e.config.clone()),
            structure_encoder: self.structure_encoder.as_ref().map(|e| e.config.clone()),
            train: self.config.clone(),
            aug_p_bits: self.aug.p.to_bits(),
            aug_state: (sum.to_bits(), count),
            rng_seed: hex(&self.rng.get_seed()),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            optimizers: Vec::new(),
        });
        c.push_params("generator", &self.generator.params);
        c.push_params("generator_noise", &self.generator.buffers);
        if let Some(g) = &self.g_ema {
            c.push_params("g_ema", &g.params);
            c.push_params("g_ema_noise", &g.buffers);
        }
        if let Some(d) = &self.discriminator {
            c.push_params("discriminator", &d.params);
        }
        if let Some(e) = &self.style_encoder {
            c.push_params("style_encoder", &e.params);
            c.push_params("style_encoder_buffers", &e.buffers);
        }
        if let Some(e) = &self.structure_encoder {
            c.push_params("structure_encoder", &e.params);
            c.push_params("structure_encoder_buffers", &e.buffers);
        }
        if let Some(o) = &self.opt_g {
            push_adam(&mut c, "generator", o, &self.generator.params);
        }
        if let (Some(o), Some(d)) = (&self.opt_d, &self.discriminator) {
            push_adam(&mut c, "discriminator", o, &d.params);
        }
        if let (Some(o), Some(e)) = (&self.opt_style, &self.style_encoder) {
            push_adam(&mut c, "style_encoder", o, &e.params);
        }
        if let (Some(o), Some(e)) = (&self.opt_structure, &self.structure_encoder) {
            push_adam(&mut c, "structure_encoder", o, &e.params);
        }
        c
    }

    pub fn from_container(c: &Container<CheckpointMeta>) -> Result<Self> {
        let m = &c.meta;
        let mut generator = Generator::new(m.generator.clone(), 0)?;
        c.fill_params("generator", &mut generator.params)?;
        c.fill_params("generator_noise", &mut generator.buffers)?;
        let g_ema = if c.has_prefix("g_ema") {
            let mut g = generator.clone();
            c.fill_params("g_ema", &mut g.params)?;
            c.fill_params("g_ema_noise", &mut g.buffers)?;
            Some(g)
        } else {
            None
        };
        let discriminator = if c.has_prefix("discriminator") {
            let mut d = Discriminator::new(&m.generator, 0)?;
            c.fill_params("discriminator", &mut d.params)?;
            Some(d)
        } else {
            None
        };
        let style_encoder = match &m.style_encoder {
            Some(cfg) => {
                let mut e = StyleEncoder::new(cfg.clone(), 0)?;
                c.fill_params("style_encoder", &mut e.params)?;
                c.fill_params("style_encoder_buffers", &mut e.buffers)?;
                Some(e)
            }
            None => None,
        };
        let structure_encoder = match &m.structure_encoder {
            Some(cfg) => {
                let mut e = StructureEncoder::new(cfg.clone(), 0)?;
                c.fill_params("structure_encoder", &mut e.params)?;
                c.fill_params("structure_encoder_buffers", &mut e.buffers)?;
                Some(e)
            }
            None => None,
        };
        let opt_g = load_adam(c, "generator", &generator.params)?;
        let opt_d = match &discriminator {
            Some(d) => load_adam(c, "discriminator", &d.params)?,
            None => None,
        };
        let opt_style = match &style_encoder {
            Some(e) => load_adam(c, "style_encoder", &e.params)?,
            None => None,
        };
        let opt_structure = match &structure_encoder {
            Some(e) => load_adam(c, "structure_encoder", &e.params)?,
            None => None,
        };
        let mut rng = ChaCha8Rng::from_seed(unhex(&m.rng_seed)?);
        rng.set_stream(m.rng_stream);
        rng.set_word_pos(
            m.rng_word_pos
                .parse()
                .map_err(|_| Error::Checkpoint("bad RNG position".into()))?,
        );
        let aug = AugController::from_internals(f64::from_bits(m.aug_p_bits), f64::from_bits(m.aug_state.0), m.aug_state.1);
        Ok(Self {
            stage: m.stage,
            step: m.step,
            config: m.train.clone(),
            generator,
            g_ema,
            discriminator,
            style_encoder,
            structure_encoder,
            opt_g,
            opt_d,
            opt_style,
            opt_structure,
            aug,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
