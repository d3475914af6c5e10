//! Style-based texture generator, its discriminator, and the per-layer
//! latent code stack split into structure and style parts.

mod discriminator;
mod network;

pub use discriminator::Discriminator;
pub use network::{Generator, NoiseMode, SynthesisOutput};

use serde::{Deserialize, Serialize};
use semtex_tensor::Tensor;

use crate::{Error, Result};

/// Number of per-layer latent vectors consumed at output resolution `r`:
/// two per resolution level from 4×4 up to `r×r`.
pub fn num_style_layers(resolution: usize) -> Result<usize> {
    if resolution < 8 || !resolution.is_power_of_two() {
        return Err(Error::Precondition(format!(
            "generator resolution must be a power of two >= 8, got {resolution}"
        )));
    }
    Ok(2 * (resolution.trailing_zeros() as usize - 1))
}

/// Feature-map side length at which layer `i` operates.
pub fn layer_resolution(layer: usize) -> usize {
    4 << (layer / 2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub latent_dim: usize,
    pub split_index: usize,
    pub channel_base: usize,
    pub channel_max: usize,
    pub num_views: usize,
    pub mapping_layers: usize,
    pub mapping_lr_multiplier: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            latent_dim: 512,
            split_index: 6,
            channel_base: 8192,
            channel_max: 512,
            num_views: 6,
            mapping_layers: 8,
            mapping_lr_multiplier: 0.01,
        }
    }
}

impl GeneratorConfig {
    /// Small network that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            resolution: 32,
            latent_dim: 64,
            split_index: 4,
            channel_base: 512,
            channel_max: 32,
            ..Self::default()
        }
    }

    pub fn num_layers(&self) -> usize {
        2 * (self.resolution.trailing_zeros() as usize).saturating_sub(1)
    }

    pub fn channels(&self, res: usize) -> usize {
        (self.channel_base / res).clamp(1, self.channel_max)
    }

    pub fn validate(&self) -> Result<()> {
        let l = num_style_layers(self.resolution)?;
        if self.split_index > l {
            return Err(Error::Config(format!(
                "split index {} exceeds the {l} style layers",
                self.split_index
            )));
        }
        if self.latent_dim == 0 || self.num_views == 0 || self.mapping_layers == 0 {
            return Err(Error::Config(
                "latent_dim, num_views and mapping_layers must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `L` latent vectors (one per generator layer) with the structure/style
/// boundary `n`: rows `[0, n)` are structure codes, `[n, L)` style codes.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCodes {
    pub w_full: Tensor<f32>,
    pub split_index: usize,
}

impl StyleCodes {
    pub fn new(w_full: Tensor<f32>, split_index: usize) -> Result<Self> {
        if w_full.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "style codes must be [L, D], got {:?}",
                w_full.shape()
            )));
        }
        if split_index > w_full.shape()[0] {
            return Err(Error::Precondition(format!(
                "split index {split_index} beyond {} layers",
                w_full.shape()[0]
            )));
        }
        Ok(Self { w_full, split_index })
    }

    pub fn num_layers(&self) -> usize {
        self.w_full.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.w_full.shape()[1]
    }

    pub fn layer(&self, i: usize) -> &[f32] {
        let d = self.latent_dim();
        &self.w_full.data()[i * d..(i + 1) * d]
    }
}

fn rows(t: &Tensor<f32>, from: usize, to: usize) -> Tensor<f32> {
    let d = t.shape()[1];
    Tensor::from_vec(&[to - from, d], t.data()[from * d..to * d].to_vec())
}

/// `(w_struct, w_sty)`: the first `n` rows and the remaining `L − n`.
pub fn split_codes(w: &StyleCodes) -> (Tensor<f32>, Tensor<f32>) {
    let (n, l) = (w.split_index, w.num_layers());
    (rows(&w.w_full, 0, n), rows(&w.w_full, n, l))
}

/// Stacks structure codes above style codes.
pub fn merge_codes(w_struct: &Tensor<f32>, w_sty: &Tensor<f32>) -> Result<StyleCodes> {
    let (a, b) = (w_struct.shape(), w_sty.shape());
    if a.len() != 2 || b.len() != 2 {
        return Err(Error::Shape(format!("codes must be 2-d, got {a:?} and {b:?}")));
    }
    if a[1] != b[1] && a[0] > 0 && b[0] > 0 {
        return Err(Error::Shape(format!(
            "latent dims differ: structure {} vs style {}",
            a[1], b[1]
        )));
    }
    let d = if a[0] > 0 { a[1] } else { b[1] };
    let mut data = Vec::with_capacity((a[0] + b[0]) * d);
    data.extend_from_slice(w_struct.data());
    data.extend_from_slice(w_sty.data());
    StyleCodes::new(Tensor::from_vec(&[a[0] + b[0], d], data), a[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn style_layer_counts() {
        assert_eq!(num_style_layers(128).unwrap(), 12);
        assert_eq!(num_style_layers(32).unwrap(), 8);
        assert_eq!(num_style_layers(8).unwrap(), 4);
        assert!(num_style_layers(48).is_err());
        assert!(num_style_layers(4).is_err());
        assert_eq!(GeneratorConfig::default().num_layers(), 12);
    }

    #[test]
    fn layer_resolution_schedule() {
        let r: Vec<_> = (0..8).map(layer_resolution).collect();
        assert_eq!(r, [4, 4, 8, 8, 16, 16, 32, 32]);
    }

    fn codes(l: usize, d: usize, n: usize) -> StyleCodes {
        let data = (0..l * d).map(|i| i as f32 * 0.5 - 3.0).collect();
        StyleCodes::new(Tensor::from_vec(&[l, d], data), n).unwrap()
    }

    #[test]
    fn split_shapes() {
        let (s, t) = split_codes(&codes(12, 512, 6));
        assert_eq!((s.shape(), t.shape()), (&[6, 512][..], &[6, 512][..]));
        let (s, t) = split_codes(&codes(12, 512, 7));
        assert_eq!((s.shape()[0], t.shape()[0]), (7, 5));
        let (s, t) = split_codes(&codes(12, 512, 0));
        assert_eq!((s.shape()[0], t.shape()[0]), (0, 12));
    }

    #[test]
    fn merge_rejects_dim_mismatch() {
        let a = Tensor::<f32>::zeros(&[6, 512]);
        let b = Tensor::<f32>::zeros(&[6, 256]);
        assert!(matches!(merge_codes(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn merge_empty_structure_is_style() {
        let sty = codes(12, 8, 0).w_full;
        let w = merge_codes(&Tensor::zeros(&[0, 8]), &sty).unwrap();
        assert_eq!(w.w_full, sty);
        assert_eq!(w.split_index, 0);
    }

    proptest! {
        #[test]
        fn split_merge_round_trip(res_pow in 3u32..8, d in 1usize..6, n_frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let l = num_style_layers(1 << res_pow).unwrap();
            let n = ((l as f64) * n_frac).round() as usize;
            let data = (0..l * d).map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32) % 0x7f00_0000)).collect();
            let w = StyleCodes::new(Tensor::from_vec(&[l, d], data), n).unwrap();
            let (s, t) = split_codes(&w);
            let back = merge_codes(&s, &t).unwrap();
            prop_assert_eq!(back.w_full.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            w.w_full.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.split_index, n);
        }
    }
}
