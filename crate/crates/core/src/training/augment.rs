use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use semtex_tensor::{Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugConfig {
    pub enabled: bool,
    pub p_init: f64,
    /// Target for the mean sign of real logits.
    pub target: f64,
    pub interval: usize,
    pub adjust: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            p_init: 0.0,
            target: 0.6,
            interval: 256,
            adjust: 0.01,
        }
    }
}

/// Sign heuristic for the augmentation probability.
#[derive(Clone, Debug, PartialEq)]
pub struct AugController {
    pub p: f64,
    sign_sum: f64,
    count: usize,
}

impl AugController {
    pub fn new(p: f64) -> Self {
        Self {
            p: p.clamp(0.0, 1.0),
            sign_sum: 0.0,
            count: 0,
        }
    }

    /// Sign accumulator and sample count, for checkpointing.
    pub fn internals(&self) -> (f64, usize) {
        (self.sign_sum, self.count)
    }

    pub fn from_internals(p: f64, sign_sum: f64, count: usize) -> Self {
        Self { p, sign_sum, count }
    }

    pub fn record(&mut self, d_real: &[f64]) {
        for &v in d_real {
            self.sign_sum += sign(v);
            self.count += 1;
        }
    }

    /// Called after `step` (1-based count of finished steps).
    pub fn end_step(&mut self, step: usize, cfg: &AugConfig) {
        if !cfg.enabled || cfg.interval == 0 || step % cfg.interval != 0 || self.count == 0 {
            return;
        }
        let rt = self.sign_sum / self.count as f64;
        self.p = (self.p + cfg.adjust * sign(rt - cfg.target)).clamp(0.0, 1.0);
        self.sign_sum = 0.0;
        self.count = 0;
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample random flip, integer translation up to `R/8` (edge-clamped)
/// and brightness shift up to ±0.2, each applied with probability `p`.
pub fn augment<T: Scalar>(x: &Var<T>, p: f64, rng: &mut ChaCha8Rng) -> Var<T> {
    if p <= 0.0 {
        return x.clone();
    }
    let s = x.shape().to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let max_shift = (w / 8) as i64;
    let mut index = Vec::with_capacity(x.value().numel());
    let mut bright = vec![T::zero(); n];
    for (i, b) in bright.iter_mut().enumerate() {
        let flip = rng.gen_bool(p);
        let (tx, ty) = if rng.gen_bool(p) {
            (rng.gen_range(-max_shift..=max_shift), rng.gen_range(-max_shift..=max_shift))
        } else {
            (0, 0)
        };
        if rng.gen_bool(p) {
            *b = T::of(rng.gen_range(-0.2..=0.2));
        }
        for ch in 0..c {
            for y in 0..h {
                let sy = (y as i64 - ty).clamp(0, h as i64 - 1) as usize;
                for xx in 0..w {
                    let fx = if flip { w - 1 - xx } else { xx };
                    let sx = (fx as i64 - tx).clamp(0, w as i64 - 1) as usize;
                    index.push(Some(((i * c + ch) * h + sy) * w + sx));
                }
            }
        }
    }
    let moved = x.gather(&s, index);
    moved.add(&x.graph().constant(Tensor::from_vec(&[n, 1, 1, 1], bright)))
}
