use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use super::raster::ZBuffer;
use super::view::{project_view, ViewSpec};
use crate::{Error, Result};

/// Depth slack, in normalized model units, before a face counts as hidden.
const OCCLUSION_TOLERANCE: f64 = 1e-3;

/// Per-view texture coordinates and the view each face takes its texture from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UvAtlas {
    pub views: Vec<ViewSpec>,
    pub per_view_uv: Vec<Vec<[f64; 2]>>,
    pub face_view: Vec<usize>,
    pub resolution: usize,
}

impl UvAtlas {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn faces_in_view(&self, view: usize) -> impl Iterator<Item = usize> + '_ {
        self.face_view
            .iter()
            .enumerate()
            .filter(move |(_, &v)| v == view)
            .map(|(f, _)| f)
    }

    pub fn face_uv(&self, mesh: &Mesh, face: usize) -> [[f64; 2]; 3] {
        let uv = &self.per_view_uv[self.face_view[face]];
        mesh.faces[face].map(|v| uv[v])
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing atlas: {e}")))?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Depth buffer of the whole mesh seen from `view`.
pub fn depth_buffer(mesh: &Mesh, view: &ViewSpec, size: usize, faces: impl Iterator<Item = usize>) -> ZBuffer {
    let (uv, depth) = project_view(mesh, view);
    let mut zb = ZBuffer::new(size);
    for f in faces {
        let tri = mesh.faces[f];
        zb.draw(f, tri.map(|v| uv[v]), tri.map(|v| depth[v]));
    }
    zb
}

fn is_occluded(mesh: &Mesh, view: &ViewSpec, zb: &ZBuffer, face: usize) -> bool {
    let c = mesh.face_centroid(face);
    let (u, v, d) = view.project_point(&c);
    match zb.pixel_of([u, v]).and_then(|(x, y)| zb.at(x, y)) {
        Some((f, depth, _)) => f != face && depth < d - OCCLUSION_TOLERANCE,
        None => false,
    }
}

/// Picks, for every face, the view that sees it most head-on.
///
/// Ties go to the lower view index. A face whose centroid is hidden in its
/// best view moves to the best front-facing view where it is visible, if any.
pub fn assign_faces(mesh: &Mesh, views: &[ViewSpec], resolution: usize) -> Result<Vec<usize>> {
    if views.is_empty() {
        return Err(Error::Precondition("at least one view is required".into()));
    }
    let mut scores = Vec::with_capacity(mesh.faces.len());
    for f in 0..mesh.faces.len() {
        let n = mesh.face_cross(f);
        let len = n.norm();
        if !(len > 1e-12) {
            return Err(Error::ZeroAreaFace(f));
        }
        let n = n / len;
        let s: Vec<f64> = views.iter().map(|v| -n.dot(&v.forward())).collect();
        scores.push(s);
    }
    let argmax = |s: &[f64]| {
        let mut best = 0;
        for i in 1..s.len() {
            if s[i] > s[best] + 1e-12 {
                best = i;
            }
        }
        best
    };
    let mut assignment: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    if views.len() == 1 {
        return Ok(assignment);
    }

    let zb: Vec<ZBuffer> = views
        .iter()
        .map(|v| depth_buffer(mesh, v, resolution, 0..mesh.faces.len()))
        .collect();
    for f in 0..mesh.faces.len() {
        let chosen = assignment[f];
        if !is_occluded(mesh, &views[chosen], &zb[chosen], f) {
            continue;
        }
        let mut order: Vec<usize> = (0..views.len()).filter(|&i| scores[f][i] > 0.0).collect();
        order.sort_by(|&a, &b| scores[f][b].total_cmp(&scores[f][a]).then(a.cmp(&b)));
        if let Some(&v) = order.iter().find(|&&v| !is_occluded(mesh, &views[v], &zb[v], f)) {
            assignment[f] = v;
        }
    }
    Ok(assignment)
}

/// Projects the mesh into every view and assigns faces to views.
pub fn build_uv_atlas(mesh: &Mesh, views: &[ViewSpec], resolution: usize) -> Result<UvAtlas> {
    if resolution < 16 || !resolution.is_power_of_two() {
        return Err(Error::Precondition(format!(
            "atlas resolution must be a power of two >= 16, got {resolution}"
        )));
    }
    let face_view = assign_faces(mesh, views, resolution)?;
    let per_view_uv = views.iter().map(|v| project_view(mesh, v).0).collect();
    Ok(UvAtlas {
        views: views.to_vec(),
        per_view_uv,
        face_view,
        resolution,
    })
}
