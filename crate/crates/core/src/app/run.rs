//! Run-directory operations behind the command-line subcommands.
//!
//! Layout: `config.resolved`, `checkpoints/stage{k}.ckpt`, `samples/`,
//! `report.txt`.

use std::path::{Path, PathBuf};

use crate::app::config::PipelineConfig;
use crate::app::dataset::{generate_synthetic_dataset, load_dataset, write_dataset, Dataset};
use crate::app::pipeline::{evaluate, export_generation, generate_textures, Exported, Generation, Mode, Model, Report, StyleSource};
use crate::geometry::{
    build_uv_atlas, load_face_labels, load_mesh, normalize_mesh, rasterize_segmentation, save_face_labels, Mesh,
    SegmentationMapSet, TextureMapSet, UvAtlas,
};
use crate::image::RgbImage;
use crate::metrics::FidExtractor;
use crate::training::{sample_images, LossNets, TrainConfig, TrainState};
use crate::{Error, Result};

/// Marker written next to synthetic datasets; enables oracle segmentation.
pub const SYNTH_MARKER: &str = "synthetic.toml";

pub fn checkpoint_path(cfg: &PipelineConfig, stage: u8) -> PathBuf {
    cfg.output_dir.join("checkpoints").join(format!("stage{stage}.ckpt"))
}

/// Stage settings with the pipeline seed applied.
pub fn stage_config(cfg: &PipelineConfig, stage: u8) -> Result<TrainConfig> {
    Ok(TrainConfig {
        seed: cfg.seed,
        ..cfg.stage(stage)?.clone()
    })
}

pub fn synth_data(cfg: &PipelineConfig, out: &Path) -> Result<Dataset> {
    let spec = cfg.synth_spec();
    let ds = generate_synthetic_dataset(&spec, cfg.seed)?;
    write_dataset(&ds, out)?;
    let marker = out.join(SYNTH_MARKER);
    let text = toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&marker, text).map_err(|e| Error::io(&marker, e))?;
    Ok(ds)
}

pub fn is_synthetic(dir: &Path) -> bool {
    dir.join(SYNTH_MARKER).is_file()
}

/// `(train, held_out)` split of the configured dataset.
pub fn load_split(cfg: &PipelineConfig) -> Result<(Dataset, Dataset)> {
    let ds = load_dataset(&cfg.dataset_dir, cfg.num_classes)?;
    if ds.is_empty() {
        return Err(Error::Precondition(format!("dataset {} has no images", cfg.dataset_dir.display())));
    }
    let holdout = cfg.eval.holdout.min(ds.len() / 2);
    Ok(ds.split_tail(holdout))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub stage: u8,
    pub steps: u64,
    pub checkpoint: PathBuf,
    /// Held-out reconstruction loss before and after (stages 2 and 3).
    pub recon: Option<(f64, f64)>,
}

fn load_previous(cfg: &PipelineConfig, stage: u8) -> Result<TrainState> {
    let p = checkpoint_path(cfg, stage - 1);
    if !p.exists() {
        return Err(Error::Precondition(format!(
            "stage {stage} needs the stage-{} checkpoint at {}; run `train --stage {}` first",
            stage - 1,
            p.display(),
            stage - 1
        )));
    }
    TrainState::load(&p)
}

/// Trains one stage, resuming from an existing checkpoint of the same stage.
pub fn train(cfg: &PipelineConfig, stage: u8) -> Result<TrainSummary> {
    let tc = stage_config(cfg, stage)?;
    let enc = cfg.encoder_config();
    let nets = match &cfg.loss_nets {
        Some(p) => LossNets::load(p)?,
        None => LossNets::toy(),
    };
    let own = checkpoint_path(cfg, stage);
    let mut state = if own.exists() {
        let mut s = TrainState::load(&own)?;
        s.config.max_steps = tc.max_steps;
        s
    } else {
        match stage {
            1 => TrainState::stage1(&cfg.generator, &tc)?,
            2 => load_previous(cfg, 2)?.stage2(&enc, &tc)?,
            _ => load_previous(cfg, 3)?.stage3(&enc, &tc)?,
        }
    };
    cfg.write_resolved(&cfg.output_dir)?;
    let (train, held) = load_split(cfg)?;
    let labels = if stage == 3 {
        if !train.has_labels() {
            return Err(Error::Precondition("stage 3 needs a dataset with labels/".into()));
        }
        Some(train.labels.as_slice())
    } else {
        None
    };
    let held_labels = if stage == 3 { Some(held.labels.as_slice()) } else { None };
    let before = if stage > 1 && !held.is_empty() {
        Some(state.eval_recon(&held.images, held_labels, &nets)?)
    } else {
        None
    };
    state.run(&train.images, labels, &nets)?;
    state.save(&own)?;
    let recon = match before {
        Some(b) => Some((b, state.eval_recon(&held.images, held_labels, &nets)?)),
        None => None,
    };
    if stage == 1 {
        let dir = cfg.output_dir.join("samples").join("stage1");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, img) in sample_images(state.inference_generator(), 16, cfg.seed)?.iter().enumerate() {
            img.clipped().save_png(&dir.join(format!("{i:02}.png")))?;
        }
    }
    Ok(TrainSummary {
        stage,
        steps: state.step,
        checkpoint: own,
        recon,
    })
}

/// Normalized mesh with face labels read from the `.labels` file beside it.
pub fn load_labeled_mesh(path: &Path, labels: Option<&Path>) -> Result<Mesh> {
    let mesh = load_mesh(path)?;
    let lp = labels.map(Path::to_path_buf).unwrap_or_else(|| path.with_extension("labels"));
    let mesh = if lp.exists() {
        mesh.with_labels(load_face_labels(&lp)?)?
    } else if labels.is_some() {
        return Err(Error::Precondition(format!("label file {} not found", lp.display())));
    } else {
        mesh
    };
    normalize_mesh(&mesh)
}

pub struct Parametrized {
    pub mesh: Mesh,
    pub atlas: UvAtlas,
    pub segs: SegmentationMapSet,
}

pub fn parametrize_mesh(cfg: &PipelineConfig, mesh: Mesh) -> Result<Parametrized> {
    let atlas = build_uv_atlas(&mesh, &cfg.views.resolve()?, cfg.generator.resolution)?;
    let segs = rasterize_segmentation(&mesh, &atlas, cfg.num_classes)?;
    Ok(Parametrized { mesh, atlas, segs })
}

/// Writes `mesh.obj`, `mesh.labels`, `atlas.json` and `seg/seg_*.png`.
pub fn parametrize(cfg: &PipelineConfig, mesh_path: &Path, labels: Option<&Path>, out: &Path) -> Result<Parametrized> {
    let p = parametrize_mesh(cfg, load_labeled_mesh(mesh_path, labels)?)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    p.mesh.save_obj(&out.join("mesh.obj"))?;
    if let Some(l) = &p.mesh.face_labels {
        save_face_labels(l, &out.join("mesh.labels"))?;
    }
    p.atlas.save_json(&out.join("atlas.json"))?;
    let names: Vec<String> = p.atlas.views.iter().map(|v| v.name.clone()).collect();
    p.segs.save_dir(&out.join("seg"), &names)?;
    Ok(p)
}

pub struct GenerateRequest<'a> {
    pub checkpoint: Option<&'a Path>,
    pub mesh: &'a Path,
    pub labels: Option<&'a Path>,
    /// Overrides the segmentation rasterized from the mesh.
    pub seg_dir: Option<&'a Path>,
    pub style_image: Option<&'a Path>,
    pub mode: Mode,
    pub out: &'a Path,
}

pub fn generate(cfg: &PipelineConfig, req: &GenerateRequest) -> Result<(Generation, Exported)> {
    let ck = req.checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(cfg, 3));
    if !ck.exists() {
        return Err(Error::Precondition(format!(
            "generation needs a stage-3 checkpoint at {}",
            ck.display()
        )));
    }
    let model = Model::load(&ck)?;
    let mut p = parametrize_mesh(cfg, load_labeled_mesh(req.mesh, req.labels)?)?;
    if let Some(dir) = req.seg_dir {
        p.segs = SegmentationMapSet::load_dir(dir, cfg.num_classes)?;
    }
    let style_img;
    let source = match (req.mode, req.style_image) {
        (Mode::Conditional, Some(path)) => {
            style_img = RgbImage::load_png(path)?;
            StyleSource::Image(&style_img)
        }
        (Mode::Conditional, None) => {
            return Err(Error::Precondition("conditional generation needs a style image".into()));
        }
        (Mode::Unconditional, _) => StyleSource::Random(cfg.seed),
    };
    let g = generate_textures(&model, &p.segs, source, cfg.seed)?;
    let files = export_generation(&p.mesh, &p.atlas, &g.textures, req.out, cfg.eval.render_size, &cfg.eval.extra_cameras)?;
    Ok((g, files))
}

/// Evaluates on the held-out split and writes `report.txt` into `out`.
pub fn evaluate_run(cfg: &PipelineConfig, checkpoint: Option<&Path>, mode: Mode, out: &Path) -> Result<Report> {
    let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(cfg, 3));
    let model = Model::load(&ck)?;
    let (_, held) = load_split(cfg)?;
    if held.is_empty() || !held.has_labels() {
        return Err(Error::Precondition("evaluation set is empty or has no label maps".into()));
    }
    let report = evaluate(
        &model,
        &held.images,
        &held.labels,
        mode,
        cfg.seed,
        is_synthetic(&cfg.dataset_dir),
        &FidExtractor::toy(0),
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.save(&out.join("report.txt"))?;
    Ok(report)
}

/// Exports per-view textures `<view>.png` from `textures_dir` onto a mesh.
pub fn export(cfg: &PipelineConfig, mesh_path: &Path, labels: Option<&Path>, textures_dir: &Path, out: &Path) -> Result<Exported> {
    let mesh = load_labeled_mesh(mesh_path, labels)?;
    let atlas = build_uv_atlas(&mesh, &cfg.views.resolve()?, cfg.generator.resolution)?;
    let maps = atlas
        .views
        .iter()
        .map(|v| RgbImage::load_png(&textures_dir.join(format!("{}.png", v.name))))
        .collect::<Result<Vec<_>>>()?;
    export_generation(&mesh, &atlas, &TextureMapSet::new(maps)?, out, cfg.eval.render_size, &cfg.eval.extra_cameras)
}
