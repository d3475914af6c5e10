//! Conditional and unconditional texture generation, export and evaluation.
//!
//! Both generation modes go through [`generate_textures`]; they differ only
//! in where the style codes come from. The style codes are produced once
//! and reused verbatim for every view.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use semtex_tensor::Tensor;

use crate::app::dataset::class_palette;
use crate::encoders::{StructureEncoder, StyleEncoder};
use crate::generator::{merge_codes, Generator, NoiseMode, StyleCodes};
use crate::geometry::{export_textured_mesh, render_view, ExportedFiles, Mesh, SegmentationMapSet, TextureMapSet, UvAtlas, ViewSpec};
use crate::image::{LabelMap, RgbImage};
use crate::metrics::{extract_stats, fid, kid, miou, oracle_segment, pixel_accuracy, FidExtractor};
use crate::training::TrainState;
use crate::{Error, Result};

/// Frozen networks used at inference time.
#[derive(Clone, Debug)]
pub struct Model {
    pub generator: Generator<f32>,
    pub style_encoder: StyleEncoder<f32>,
    pub structure_encoder: StructureEncoder<f32>,
}

impl Model {
    pub fn from_state(state: TrainState) -> Result<Self> {
        if state.stage != 3 {
            return Err(Error::Precondition(format!(
                "generation needs a stage-3 checkpoint, got stage {}",
                state.stage
            )));
        }
        Ok(Self {
            generator: state.generator,
            style_encoder: state.style_encoder.expect("stage-3 state has a style encoder"),
            structure_encoder: state.structure_encoder.expect("stage-3 state has a structure encoder"),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_state(TrainState::load(path)?)
    }

    pub fn num_style_codes(&self) -> usize {
        let c = &self.generator.config;
        c.num_layers() - c.split_index
    }
}

#[derive(Clone, Copy, Debug)]
pub enum StyleSource<'a> {
    /// Encode a reference image.
    Image(&'a RgbImage),
    /// Standard-normal vectors drawn directly in w-space from this seed.
    Random(u64),
    /// Precomputed `[L − n, D]` codes.
    Codes(&'a Tensor<f32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Conditional,
    Unconditional,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub textures: TextureMapSet,
    /// `[L − n, D]` codes shared by every view.
    pub style_codes: Tensor<f32>,
    /// Per view, the raw bits of rows `[n, L)` actually passed to the generator.
    pub style_bits_per_view: Vec<Vec<u32>>,
}

/// Noise seed for one view: distinct per view, fixed for a base seed.
pub fn view_seed(base: u64, view: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((view as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// `count × dim` standard-normal style vectors.
pub fn sample_style_codes(count: usize, dim: usize, seed: u64) -> Tensor<f32> {
    Tensor::randn(&[count, dim], &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn style_codes(model: &Model, source: StyleSource) -> Result<Tensor<f32>> {
    let (n, d) = (model.generator.config.split_index, model.generator.config.latent_dim);
    let k = model.num_style_codes();
    Ok(match source {
        StyleSource::Image(img) => {
            let all = model.style_encoder.style_encode(img)?;
            Tensor::from_vec(&[k, d], all.data()[n * d..].to_vec())
        }
        StyleSource::Random(seed) => sample_style_codes(k, d, seed),
        StyleSource::Codes(t) => {
            if t.shape() != [k, d] {
                return Err(Error::Shape(format!("style codes must be [{k}, {d}], got {:?}", t.shape())));
            }
            t.clone()
        }
    })
}

/// One texture for one segmentation map with the given style codes.
pub fn synthesize_view(model: &Model, seg: &LabelMap, w_sty: &Tensor<f32>, noise_seed: u64) -> Result<(RgbImage, StyleCodes)> {
    let w_struct = model.structure_encoder.encode_labels(seg)?;
    let codes = merge_codes(&w_struct, w_sty)?;
    let img = model.generator.synthesize(&codes, NoiseMode::Seeded(noise_seed))?;
    Ok((img, codes))
}

pub fn generate_textures(model: &Model, segs: &SegmentationMapSet, style: StyleSource, seed: u64) -> Result<Generation> {
    let cfg = &model.generator.config;
    if segs.len() != cfg.num_views {
        return Err(Error::ViewCount {
            expected: cfg.num_views,
            got: segs.len(),
        });
    }
    let classes = model.structure_encoder.config.num_classes;
    if segs.num_classes != classes {
        return Err(Error::Config(format!(
            "segmentation maps use {} classes, model expects {classes}",
            segs.num_classes
        )));
    }
    if segs.resolution() != cfg.resolution {
        return Err(Error::Shape(format!(
            "segmentation maps are {}x{0}, model expects {}x{1}",
            segs.resolution(),
            cfg.resolution
        )));
    }
    let w_sty = style_codes(model, style)?;
    let mut maps = Vec::with_capacity(segs.len());
    let mut bits = Vec::with_capacity(segs.len());
    for (i, seg) in segs.maps.iter().enumerate() {
        let (img, codes) = synthesize_view(model, seg, &w_sty, view_seed(seed, i))?;
        let d = codes.latent_dim();
        bits.push(codes.w_full.data()[codes.split_index * d..].iter().map(|v| v.to_bits()).collect());
        maps.push(img);
    }
    Ok(Generation {
        textures: TextureMapSet::from_unclipped(maps)?,
        style_codes: w_sty,
        style_bits_per_view: bits,
    })
}

#[derive(Clone, Debug)]
pub struct Exported {
    pub mesh: ExportedFiles,
    pub textures: Vec<PathBuf>,
    pub renders: Vec<PathBuf>,
}

/// Writes per-view textures, the textured mesh and one render per atlas view
/// plus one per extra camera.
pub fn export_generation(
    mesh: &Mesh,
    atlas: &UvAtlas,
    textures: &TextureMapSet,
    out_dir: &Path,
    render_size: usize,
    extra_cameras: &[ViewSpec],
) -> Result<Exported> {
    let files = export_textured_mesh(mesh, atlas, textures, out_dir, "textured")?;
    let tex_dir = out_dir.join("textures");
    let render_dir = out_dir.join("renders");
    for d in [&tex_dir, &render_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut tex = Vec::new();
    let mut renders = Vec::new();
    for (view, map) in atlas.views.iter().zip(&textures.maps) {
        let p = tex_dir.join(format!("{}.png", view.name));
        map.save_png(&p)?;
        tex.push(p);
        let p = render_dir.join(format!("{}.png", view.name));
        render_view(mesh, atlas, textures, view, render_size)?.save_png(&p)?;
        renders.push(p);
    }
    for cam in extra_cameras {
        let p = render_dir.join(format!("{}.png", cam.name));
        render_view(mesh, atlas, textures, cam, render_size)?.save_png(&p)?;
        renders.push(p);
    }
    Ok(Exported {
        mesh: files,
        textures: tex,
        renders,
    })
}

pub fn conditional_generate(
    model: &Model,
    mesh: &Mesh,
    atlas: &UvAtlas,
    segs: &SegmentationMapSet,
    style_image: &RgbImage,
    seed: u64,
    out_dir: &Path,
    render_size: usize,
) -> Result<(Generation, Exported)> {
    let g = generate_textures(model, segs, StyleSource::Image(style_image), seed)?;
    let files = export_generation(mesh, atlas, &g.textures, out_dir, render_size, &[])?;
    Ok((g, files))
}

pub fn unconditional_generate(
    model: &Model,
    mesh: &Mesh,
    atlas: &UvAtlas,
    segs: &SegmentationMapSet,
    seed: u64,
    out_dir: &Path,
    render_size: usize,
) -> Result<(Generation, Exported)> {
    let g = generate_textures(model, segs, StyleSource::Random(seed), seed)?;
    let files = export_generation(mesh, atlas, &g.textures, out_dir, render_size, &[])?;
    Ok((g, files))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub fid: f64,
    pub kid: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub miou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixel_accuracy: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
    pub extractor_id: String,
}

impl Report {
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }
}

/// FID/KID of `fake` against `real`, plus segmentation agreement when
/// `seg_check` pairs each fake with its input map and class palette.
pub fn score(
    real: &[RgbImage],
    fake: &[RgbImage],
    seg_check: Option<(&[LabelMap], &[[f32; 3]])>,
    extractor: &FidExtractor,
) -> Result<Report> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Precondition("evaluation needs real and generated images".into()));
    }
    let (fr, ff) = (extractor.embed_images(real), extractor.embed_images(fake));
    let fid_v = fid(&extract_stats(real, extractor)?, &extract_stats(fake, extractor)?)?;
    let kid_v = kid(&fr, &ff)?;
    let (miou_v, acc_v) = match seg_check {
        Some((labels, palette)) => {
            let classes = palette.len();
            let (mut m, mut a) = (0.0, 0.0);
            for (img, lab) in fake.iter().zip(labels) {
                let pred = oracle_segment(img, palette)?;
                m += miou(&pred, lab, classes)?;
                a += pixel_accuracy(&pred, lab)?;
            }
            let k = labels.len().min(fake.len()) as f64;
            (Some(m / k), Some(a / k))
        }
        None => (None, None),
    };
    Ok(Report {
        fid: fid_v,
        kid: kid_v,
        miou: miou_v,
        pixel_accuracy: acc_v,
        n_real: real.len(),
        n_fake: fake.len(),
        extractor_id: extractor.id().to_string(),
    })
}

/// One texture per evaluation pair. Conditional mode takes its style from
/// the next image in the set, so structure and style come from different
/// samples; unconditional mode samples style codes per item.
pub fn generate_eval_set(model: &Model, images: &[RgbImage], labels: &[LabelMap], mode: Mode, seed: u64) -> Result<Vec<RgbImage>> {
    if images.is_empty() || labels.len() != images.len() {
        return Err(Error::Precondition(format!(
            "evaluation needs paired images and labels, got {} and {}",
            images.len(),
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(labels.len());
    for (i, lab) in labels.iter().enumerate() {
        let source = match mode {
            Mode::Conditional => StyleSource::Image(&images[(i + 1) % images.len()]),
            Mode::Unconditional => StyleSource::Random(view_seed(seed, i)),
        };
        let w_sty = style_codes(model, source)?;
        out.push(synthesize_view(model, lab, &w_sty, view_seed(seed ^ 0x9e37_79b9, i))?.0.clipped());
    }
    Ok(out)
}

/// Generates over the evaluation pairs and scores them. Segmentation
/// agreement is computed when `synthetic` is set, since only the synthetic
/// palette gives an oracle segmenter.
pub fn evaluate(
    model: &Model,
    images: &[RgbImage],
    labels: &[LabelMap],
    mode: Mode,
    seed: u64,
    synthetic: bool,
    extractor: &FidExtractor,
) -> Result<Report> {
    let fake = generate_eval_set(model, images, labels, mode, seed)?;
    let palette = if synthetic {
        Some(class_palette(model.structure_encoder.config.num_classes)?)
    } else {
        None
    };
    score(images, &fake, palette.as_deref().map(|p| (labels, p)), extractor)
}
