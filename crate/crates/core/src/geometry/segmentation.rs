use std::path::{Path, PathBuf};

use super::atlas::UvAtlas;
use super::mesh::Mesh;
use super::raster::ZBuffer;
use crate::image::LabelMap;
use crate::{Error, Result};

/// One label image per view, pixel-aligned with the atlas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMapSet {
    pub maps: Vec<LabelMap>,
    pub num_classes: usize,
}

impl SegmentationMapSet {
    pub fn new(maps: Vec<LabelMap>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Precondition(format!(
                "need at least 2 classes (background plus one part), got {num_classes}"
            )));
        }
        if let Some(first) = maps.first() {
            for m in &maps {
                if m.width != first.width || m.height != first.height || m.width != m.height {
                    return Err(Error::Shape("segmentation maps must be square and equally sized".into()));
                }
            }
        }
        for m in &maps {
            m.check_classes(num_classes)?;
        }
        Ok(Self { maps, num_classes })
    }

    pub fn resolution(&self) -> usize {
        self.maps.first().map_or(0, |m| m.width)
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Writes `seg_<index>_<name>.png` per view and returns the paths.
    pub fn save_dir(&self, dir: &Path, view_names: &[String]) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.maps
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let name = view_names.get(i).map_or("view", String::as_str);
                let p = dir.join(format!("seg_{i:02}_{name}.png"));
                m.save_png(&p)?;
                Ok(p)
            })
            .collect()
    }

    /// Reads every `*.png` in `dir`, ordered by file name.
    pub fn load_dir(dir: &Path, num_classes: usize) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        paths.sort();
        let maps = paths.iter().map(|p| LabelMap::load_png(p)).collect::<Result<_>>()?;
        Self::new(maps, num_classes)
    }
}

/// Draws each view's assigned faces with their labels; uncovered pixels are 0.
pub fn rasterize_segmentation(mesh: &Mesh, atlas: &UvAtlas, num_classes: usize) -> Result<SegmentationMapSet> {
    let labels = mesh
        .face_labels
        .as_ref()
        .ok_or_else(|| Error::Precondition("mesh has no face labels".into()))?;
    mesh.check_labels(num_classes)?;
    let r = atlas.resolution;
    let mut maps = Vec::with_capacity(atlas.num_views());
    for view in 0..atlas.num_views() {
        let uv = &atlas.per_view_uv[view];
        let (_, depth) = super::view::project_view(mesh, &atlas.views[view]);
        let mut zb = ZBuffer::new(r);
        for f in atlas.faces_in_view(view) {
            let tri = mesh.faces[f];
            zb.draw(f, tri.map(|v| uv[v]), tri.map(|v| depth[v]));
        }
        let data = zb.face.iter().map(|f| f.map_or(0, |f| labels[f])).collect();
        maps.push(LabelMap::new(r, r, data));
    }
    SegmentationMapSet::new(maps, num_classes)
}

/// Foreground/background version of a segmentation set.
pub fn make_silhouette(seg: &SegmentationMapSet) -> SegmentationMapSet {
    SegmentationMapSet {
        maps: seg
            .maps
            .iter()
            .map(|m| LabelMap::new(m.width, m.height, m.data.iter().map(|&v| u8::from(v > 0)).collect()))
            .collect(),
        num_classes: 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::atlas::build_uv_atlas;
    use crate::geometry::mesh::{box_mesh, merge_meshes, Vec3};
    use crate::geometry::view::car_views;

    fn half_cube() -> Mesh {
        box_mesh(Vec3::new(-0.5, -0.5, -0.5), Vec3::new(0.5, 0.5, 0.5))
            .with_labels(vec![1; 12])
            .unwrap()
    }

    #[test]
    fn labeled_cube_gives_centered_squares() {
        let m = half_cube();
        let atlas = build_uv_atlas(&m, &car_views(), 16).unwrap();
        let seg = rasterize_segmentation(&m, &atlas, 2).unwrap();
        assert_eq!(seg.len(), 6);
        for map in &seg.maps {
            for y in 0..16 {
                for x in 0..16 {
                    let inside = (4..12).contains(&x) && (4..12).contains(&y);
                    assert_eq!(map.get(x, y), u8::from(inside), "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn view_without_faces_is_background() {
        let m = half_cube();
        let mut atlas = build_uv_atlas(&m, &car_views(), 16).unwrap();
        atlas.face_view.iter_mut().for_each(|v| *v = 0);
        let seg = rasterize_segmentation(&m, &atlas, 2).unwrap();
        assert!(seg.maps[0].data.iter().any(|&v| v == 1));
        for map in &seg.maps[1..] {
            assert!(map.data.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn nearer_face_label_wins() {
        let far = box_mesh(Vec3::new(-0.5, -0.5, -0.5), Vec3::new(0.5, 0.5, 0.0))
            .with_labels(vec![1; 12])
            .unwrap();
        let near = box_mesh(Vec3::new(-0.25, -0.25, 0.2), Vec3::new(0.25, 0.25, 0.4))
            .with_labels(vec![2; 12])
            .unwrap();
        let m = merge_meshes(&[far, near]);
        let mut atlas = build_uv_atlas(&m, &car_views()[..1], 16).unwrap();
        atlas.face_view.iter_mut().for_each(|v| *v = 0);
        let seg = rasterize_segmentation(&m, &atlas, 3).unwrap();
        assert_eq!(seg.maps[0].get(8, 8), 2);
        assert_eq!(seg.maps[0].get(5, 5), 1);
        assert_eq!(seg.maps[0].get(0, 0), 0);
    }

    #[test]
    fn missing_labels_rejected() {
        let m = box_mesh(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        let atlas = build_uv_atlas(&m, &car_views(), 16).unwrap();
        assert!(rasterize_segmentation(&m, &atlas, 2).is_err());
    }

    #[test]
    fn silhouette_thresholds_and_is_idempotent() {
        let seg = SegmentationMapSet::new(
            vec![
                LabelMap::new(2, 2, vec![0, 3, 7, 0]),
                LabelMap::zeros(2, 2),
                LabelMap::new(2, 2, vec![5; 4]),
            ],
            8,
        )
        .unwrap();
        let s = make_silhouette(&seg);
        assert_eq!(s.num_classes, 2);
        assert_eq!(s.maps[0].data, vec![0, 1, 1, 0]);
        assert_eq!(s.maps[1].data, vec![0; 4]);
        assert_eq!(s.maps[2].data, vec![1; 4]);
        assert_eq!(make_silhouette(&s), s);
    }
}
