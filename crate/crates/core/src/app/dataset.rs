//! Procedural vehicle-like dataset and the on-disk dataset layout:
//! `images/*.png`, `labels/*.png` (paired by name), `meshes/*.obj` with
//! `meshes/*.labels`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{box_mesh, load_face_labels, load_mesh, merge_meshes, normalize_mesh, save_face_labels, Mesh, Vec3};
use crate::image::{LabelMap, RgbImage};
use crate::{Error, Result};

/// Canonical part colors: background, body, window, wheel, then small
/// decals. Every pair is farther apart than twice the jitter diagonal.
const PALETTE: [[f32; 3]; 10] = [
    [0.8, 0.8, 0.8],
    [0.7, -0.6, -0.6],
    [-0.6, -0.3, 0.7],
    [-0.8, -0.8, -0.8],
    [0.9, 0.9, -0.7],
    [-0.6, 0.7, -0.6],
    [0.8, -0.6, 0.8],
    [-0.7, 0.8, 0.8],
    [0.9, 0.2, -0.8],
    [-0.1, -0.1, -0.1],
];

pub const MAX_CLASSES: usize = PALETTE.len();

/// Per-channel half-width of the uniform per-part color jitter.
pub const COLOR_JITTER: f32 = 0.15;

pub fn class_palette(classes: usize) -> Result<Vec<[f32; 3]>> {
    if !(2..=MAX_CLASSES).contains(&classes) {
        return Err(Error::Precondition(format!(
            "synthetic data supports 2..={MAX_CLASSES} classes, got {classes}"
        )));
    }
    Ok(PALETTE[..classes].to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub resolution: usize,
    pub num_classes: usize,
    pub num_meshes: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        class_palette(self.num_classes)?;
        if self.count == 0 {
            return Err(Error::Precondition("dataset count must be at least 1".into()));
        }
        if self.resolution < 8 {
            return Err(Error::Precondition(format!("resolution {} too small", self.resolution)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<RgbImage>,
    pub labels: Vec<LabelMap>,
    pub meshes: Vec<(String, Mesh)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty()
    }

    /// Splits off the last `k` image pairs.
    pub fn split_tail(&self, k: usize) -> (Dataset, Dataset) {
        let cut = self.len().saturating_sub(k);
        let part = |a: usize, b: usize| Dataset {
            names: self.names[a..b].to_vec(),
            images: self.images[a..b].to_vec(),
            labels: if self.has_labels() { self.labels[a..b].to_vec() } else { Vec::new() },
            meshes: Vec::new(),
        };
        let mut head = part(0, cut);
        head.meshes = self.meshes.clone();
        (head, part(cut, self.len()))
    }
}

struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Side-profile layout in unit coordinates (y down).
fn sample_layout(rng: &mut ChaCha8Rng, classes: usize) -> impl Fn(f64, f64) -> u8 {
    let body = Rect {
        x0: rng.gen_range(0.06..0.16),
        x1: rng.gen_range(0.84..0.94),
        y0: rng.gen_range(0.36..0.46),
        y1: rng.gen_range(0.62..0.70),
    };
    let w = body.x1 - body.x0;
    let cabin = Rect {
        x0: body.x0 + w * rng.gen_range(0.18..0.30),
        x1: body.x1 - w * rng.gen_range(0.22..0.34),
        y0: body.y0 - rng.gen_range(0.14..0.20),
        y1: body.y0 + rng.gen_range(0.0..0.04),
    };
    let r = rng.gen_range(0.08..0.11);
    let wheels = [
        (body.x0 + w * rng.gen_range(0.16..0.24), body.y1),
        (body.x1 - w * rng.gen_range(0.16..0.24), body.y1),
    ];
    let (bh, cw) = (body.y1 - body.y0, cabin.x1 - cabin.x0);
    // decal templates relative to the body and cabin, one per extra class
    let templates = [
        Rect { x0: body.x1 - 0.06, y0: body.y0 + 0.02, x1: body.x1, y1: body.y0 + 0.08 },
        Rect { x0: body.x0 + 0.02, y0: body.y0 + bh * 0.45, x1: body.x1 - 0.02, y1: body.y0 + bh * 0.45 + 0.05 },
        Rect { x0: cabin.x0 + cw * 0.3, y0: body.y0 + 0.04, x1: cabin.x0 + cw * 0.3 + 0.08, y1: body.y0 + 0.08 },
        Rect { x0: cabin.x0 + 0.04, y0: cabin.y0 - 0.04, x1: cabin.x1 - 0.04, y1: cabin.y0 },
        Rect { x0: body.x1 - 0.10, y0: body.y1 - 0.06, x1: body.x1, y1: body.y1 },
        Rect { x0: body.x0, y0: body.y0 + 0.02, x1: body.x0 + 0.05, y1: body.y0 + 0.08 },
    ];
    let shift = (rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02));
    let extras: Vec<Rect> = templates
        .into_iter()
        .take(classes.saturating_sub(4))
        .map(|t| Rect {
            x0: t.x0 + shift.0,
            x1: t.x1 + shift.0,
            y0: t.y0 + shift.1,
            y1: t.y1 + shift.1,
        })
        .collect();
    move |x, y| {
        let mut label = 0u8;
        if body.contains(x, y) {
            label = 1;
        }
        if classes > 2 && cabin.contains(x, y) {
            label = 2;
        }
        for (k, e) in extras.iter().enumerate() {
            if e.contains(x, y) {
                label = 4 + k as u8;
            }
        }
        if classes > 3 && wheels.iter().any(|(cx, cy)| (x - cx).powi(2) + (y - cy).powi(2) < r * r) {
            label = 3;
        }
        if classes == 2 {
            label = label.min(1);
        }
        label
    }
}

/// One image/label pair.
pub fn synth_pair(rng: &mut ChaCha8Rng, resolution: usize, classes: usize) -> Result<(RgbImage, LabelMap)> {
    let palette = class_palette(classes)?;
    let layout = sample_layout(rng, classes);
    let colors: Vec<[f32; 3]> = palette
        .iter()
        .map(|c| c.map(|v| v + rng.gen_range(-COLOR_JITTER..COLOR_JITTER)))
        .collect();
    let mut img = RgbImage::filled(resolution, resolution, colors[0]);
    let mut lab = LabelMap::zeros(resolution, resolution);
    let s = resolution as f64;
    for y in 0..resolution {
        for x in 0..resolution {
            let l = layout((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            lab.set(x, y, l);
            img.set(x, y, colors[l as usize]);
        }
    }
    Ok((img, lab))
}

/// Boxy vehicle: body (1), cabin (2), four wheels (3), and a headlight
/// slab (4) when there are more than four classes. Length runs along z.
pub fn toy_vehicle(rng: &mut ChaCha8Rng, classes: usize) -> Result<Mesh> {
    let (hw, len) = (rng.gen_range(0.38..0.5), rng.gen_range(0.9..1.1));
    let (y0, y1) = (-0.3, rng.gen_range(0.15..0.3));
    let lab = |l: u8| l.min(classes as u8 - 1);
    let mut parts = vec![box_mesh(Vec3::new(-hw, y0, -len), Vec3::new(hw, y1, len)).with_labels(vec![lab(1); 12])?];
    let (c0, c1) = (rng.gen_range(-0.55..-0.35), rng.gen_range(0.2..0.45));
    parts.push(
        box_mesh(Vec3::new(-hw * 0.85, y1, c0), Vec3::new(hw * 0.85, y1 + rng.gen_range(0.25..0.35), c1))
            .with_labels(vec![lab(2); 12])?,
    );
    let r = rng.gen_range(0.16..0.2);
    for sz in [-0.6, 0.6] {
        for sx in [-1.0, 1.0] {
            let x = sx * hw;
            let lo = Vec3::new(x.min(x + sx * 0.08), y0 - r * 0.6, sz * len - r);
            let hi = Vec3::new(x.max(x + sx * 0.08), y0 + r * 1.2, sz * len + r);
            parts.push(box_mesh(lo, hi).with_labels(vec![lab(3); 12])?);
        }
    }
    if classes > 4 {
        parts.push(
            box_mesh(Vec3::new(-hw * 0.8, y1 - 0.15, len), Vec3::new(hw * 0.8, y1 - 0.05, len + 0.03))
                .with_labels(vec![4; 12])?,
        );
    }
    normalize_mesh(&merge_meshes(&parts))
}

pub fn generate_synthetic_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::default();
    for i in 0..spec.count {
        let (img, lab) = synth_pair(&mut rng, spec.resolution, spec.num_classes)?;
        ds.names.push(format!("{i:05}"));
        ds.images.push(img);
        ds.labels.push(lab);
    }
    for k in 0..spec.num_meshes {
        ds.meshes.push((format!("vehicle_{k:02}"), toy_vehicle(&mut rng, spec.num_classes)?));
    }
    Ok(ds)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let (img_dir, lab_dir, mesh_dir) = (dir.join("images"), dir.join("labels"), dir.join("meshes"));
    mkdir(&img_dir)?;
    for (name, img) in ds.names.iter().zip(&ds.images) {
        img.save_png(&img_dir.join(format!("{name}.png")))?;
    }
    if ds.has_labels() {
        mkdir(&lab_dir)?;
        for (name, lab) in ds.names.iter().zip(&ds.labels) {
            lab.save_png(&lab_dir.join(format!("{name}.png")))?;
        }
    }
    if !ds.meshes.is_empty() {
        mkdir(&mesh_dir)?;
        for (name, m) in &ds.meshes {
            m.save_obj(&mesh_dir.join(format!("{name}.obj")))?;
            if let Some(l) = &m.face_labels {
                save_face_labels(l, &mesh_dir.join(format!("{name}.labels")))?;
            }
        }
    }
    Ok(())
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    Ok(v)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads a dataset directory. Labels, if the directory exists, must pair
/// with every image by file name and stay below `num_classes`.
pub fn load_dataset(dir: &Path, num_classes: usize) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for p in sorted_files(&dir.join("images"), "png")? {
        ds.names.push(stem(&p));
        ds.images.push(RgbImage::load_png(&p)?);
    }
    let lab_dir = dir.join("labels");
    if lab_dir.is_dir() {
        for (name, img) in ds.names.iter().zip(&ds.images) {
            let p = lab_dir.join(format!("{name}.png"));
            if !p.exists() {
                return Err(Error::Precondition(format!("image {name} has no label map at {}", p.display())));
            }
            let lab = LabelMap::load_png(&p)?;
            if (lab.width, lab.height) != (img.width, img.height) {
                return Err(Error::Shape(format!("label map {name} does not match its image size")));
            }
            lab.check_classes(num_classes)?;
            ds.labels.push(lab);
        }
    }
    let mesh_dir = dir.join("meshes");
    if mesh_dir.is_dir() {
        for p in sorted_files(&mesh_dir, "obj")? {
            let mut m = load_mesh(&p)?;
            let lp = p.with_extension("labels");
            if lp.exists() {
                m = m.with_labels(load_face_labels(&lp)?)?;
            }
            ds.meshes.push((stem(&p), m));
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_separation_exceeds_jitter() {
        let j = 2.0 * COLOR_JITTER * 3f32.sqrt();
        for i in 0..MAX_CLASSES {
            for k in 0..i {
                let d: f32 = (0..3).map(|c| (PALETTE[i][c] - PALETTE[k][c]).powi(2)).sum::<f32>().sqrt();
                assert!(d > j, "classes {k} and {i} too close: {d}");
            }
        }
    }

    #[test]
    fn contract_and_background_presence() {
        for classes in [2, 4, 10] {
            let spec = SynthSpec {
                count: 20,
                resolution: 32,
                num_classes: classes,
                num_meshes: 1,
            };
            let ds = generate_synthetic_dataset(&spec, 1).unwrap();
            assert_eq!(ds.len(), 20);
            for lab in &ds.labels {
                assert!(lab.check_classes(classes).is_ok());
                assert!(lab.data.contains(&0));
            }
            let top = ds.labels.iter().map(|l| l.max_label()).max().unwrap();
            assert_eq!(top as usize, classes - 1);
            ds.meshes[0].1.check_labels(classes).unwrap();
        }
    }

    #[test]
    fn palette_oracle_recovers_labels() {
        let spec = SynthSpec {
            count: 10,
            resolution: 32,
            num_classes: 8,
            num_meshes: 0,
        };
        let ds = generate_synthetic_dataset(&spec, 2).unwrap();
        let pal = class_palette(8).unwrap();
        for (img, lab) in ds.images.iter().zip(&ds.labels) {
            assert_eq!(&crate::metrics::oracle_segment(img, &pal).unwrap(), lab);
        }
    }

    #[test]
    fn same_seed_same_bytes_on_disk() {
        let spec = SynthSpec {
            count: 5,
            resolution: 16,
            num_classes: 4,
            num_meshes: 2,
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_dataset(&generate_synthetic_dataset(&spec, 9).unwrap(), a.path()).unwrap();
        write_dataset(&generate_synthetic_dataset(&spec, 9).unwrap(), b.path()).unwrap();
        for sub in ["images/00003.png", "labels/00000.png", "meshes/vehicle_01.obj", "meshes/vehicle_01.labels"] {
            assert_eq!(
                std::fs::read(a.path().join(sub)).unwrap(),
                std::fs::read(b.path().join(sub)).unwrap(),
                "{sub}"
            );
        }
        let back = load_dataset(a.path(), 4).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back.labels, generate_synthetic_dataset(&spec, 9).unwrap().labels);
        assert_eq!(back.meshes.len(), 2);
        assert!(back.meshes[0].1.face_labels.is_some());
    }

    #[test]
    fn missing_label_pair_is_error() {
        let spec = SynthSpec {
            count: 2,
            resolution: 16,
            num_classes: 4,
            num_meshes: 0,
        };
        let d = tempfile::tempdir().unwrap();
        write_dataset(&generate_synthetic_dataset(&spec, 0).unwrap(), d.path()).unwrap();
        std::fs::remove_file(d.path().join("labels/00001.png")).unwrap();
        assert!(load_dataset(d.path(), 4).is_err());
    }
}
