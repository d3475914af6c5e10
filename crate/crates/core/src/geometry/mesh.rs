use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Triangle mesh with optional per-face semantic labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub face_labels: Option<Vec<u8>>,
}

impl Mesh {
    /// Builds a mesh, checking face indices.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, face_labels: Option<Vec<u8>>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            face_labels,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            face_labels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&x| x >= v) {
                return Err(Error::InvalidMesh(format!(
                    "face {i} references vertex {} but the mesh has {v} vertices",
                    bad + 1
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {i} repeats a vertex: {f:?}")));
            }
        }
        if let Some(labels) = &self.face_labels {
            if labels.len() != self.faces.len() {
                return Err(Error::InvalidMesh(format!(
                    "{} face labels for {} faces",
                    labels.len(),
                    self.faces.len()
                )));
            }
        }
        Ok(())
    }

    /// Checks that every face label is below `classes`.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        if let Some(labels) = &self.face_labels {
            if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
                return Err(Error::LabelRange {
                    label: l as usize,
                    classes,
                });
            }
        }
        Ok(())
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        self.face_labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Unnormalized face normal `(b-a)×(c-a)`.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (b - a).cross(&(c - a))
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    /// Writes `v`/`f` records only.
    pub fn save_obj(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for f in &self.faces {
            s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Raw OBJ content: positions, texture coordinates and triangulated faces
/// with optional texture-coordinate indices.
#[derive(Clone, Debug, Default)]
pub struct ObjData {
    pub positions: Vec<Vec3>,
    pub texcoords: Vec<[f64; 2]>,
    pub faces: Vec<[usize; 3]>,
    pub face_texcoords: Vec<Option<[usize; 3]>>,
}

fn resolve_index(raw: &str, count: usize, path: &Path, line: usize) -> Result<usize> {
    let i: i64 = raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad index {raw:?}"),
    })?;
    match i {
        0 => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: "OBJ indices are 1-based; found 0".into(),
        }),
        i if i > 0 => Ok(i as usize - 1),
        // relative index; an out-of-range result is left for validation
        i => Ok((count as i64 + i).max(0) as usize),
    }
}

pub fn parse_obj(text: &str, path: &Path) -> Result<ObjData> {
    let mut obj = ObjData::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let floats = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
            parts
                .map(|p| p.parse::<f64>().map_err(|_| err(format!("bad number {p:?}"))))
                .collect()
        };
        match tag {
            "v" => {
                let xs = floats(parts)?;
                if xs.len() < 3 {
                    return Err(err(format!("vertex needs 3 coordinates, got {}", xs.len())));
                }
                obj.positions.push(Vec3::new(xs[0], xs[1], xs[2]));
            }
            "vt" => {
                let xs = floats(parts)?;
                if xs.len() < 2 {
                    return Err(err("texture coordinate needs 2 values".into()));
                }
                obj.texcoords.push([xs[0], xs[1]]);
            }
            "f" => {
                let mut vs = Vec::new();
                let mut ts = Vec::new();
                for corner in parts {
                    let mut it = corner.split('/');
                    let v = it.next().unwrap_or("");
                    vs.push(resolve_index(v, obj.positions.len(), path, line)?);
                    match it.next() {
                        Some(t) if !t.is_empty() => {
                            ts.push(Some(resolve_index(t, obj.texcoords.len(), path, line)?))
                        }
                        _ => ts.push(None),
                    }
                }
                if vs.len() < 3 {
                    return Err(err(format!("face needs at least 3 vertices, got {}", vs.len())));
                }
                let all_t = ts.iter().all(Option::is_some);
                for k in 1..vs.len() - 1 {
                    obj.faces.push([vs[0], vs[k], vs[k + 1]]);
                    obj.face_texcoords.push(
                        all_t.then(|| [ts[0].unwrap(), ts[k].unwrap(), ts[k + 1].unwrap()]),
                    );
                }
            }
            _ => {}
        }
    }
    Ok(obj)
}

/// Reads a triangle mesh from an OBJ file; polygons are fan-triangulated.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let obj = parse_obj(&text, path)?;
    Mesh::new(obj.positions, obj.faces, None)
}

/// Reads one face label per line.
pub fn load_face_labels(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u8>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad face label {:?}", l.trim()),
            })
        })
        .collect()
}

pub fn save_face_labels(labels: &[u8], path: &Path) -> Result<()> {
    let s: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Centers the bounding box at the origin and scales its longest side to 2.
pub fn normalize_mesh(mesh: &Mesh) -> Result<Mesh> {
    let (lo, hi) = mesh
        .bounding_box()
        .ok_or_else(|| Error::InvalidMesh("cannot normalize a mesh without vertices".into()))?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::InvalidMesh(
            "all vertices coincide; scale cannot be normalized".into(),
        ));
    }
    let center = (lo + hi) / 2.0;
    let scale = 2.0 / extent;
    Ok(Mesh {
        vertices: mesh.vertices.iter().map(|v| (v - center) * scale).collect(),
        faces: mesh.faces.clone(),
        face_labels: mesh.face_labels.clone(),
    })
}

/// Axis-aligned box as 8 vertices and 12 outward-facing triangles.
pub fn box_mesh(lo: Vec3, hi: Vec3) -> Mesh {
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect();
    // two triangles per side, wound counter-clockwise seen from outside
    let faces = vec![
        [1, 3, 7],
        [1, 7, 5], // +x
        [0, 4, 6],
        [0, 6, 2], // -x
        [2, 6, 7],
        [2, 7, 3], // +y
        [0, 1, 5],
        [0, 5, 4], // -y
        [4, 5, 7],
        [4, 7, 6], // +z
        [0, 2, 3],
        [0, 3, 1], // -z
    ];
    Mesh {
        vertices,
        faces,
        face_labels: None,
    }
}

/// Concatenates meshes, carrying labels when every part has them.
pub fn merge_meshes(parts: &[Mesh]) -> Mesh {
    let mut out = Mesh::empty();
    let mut labels = Some(Vec::new());
    for p in parts {
        let base = out.vertices.len();
        out.vertices.extend_from_slice(&p.vertices);
        out.faces
            .extend(p.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        match (&mut labels, &p.face_labels) {
            (Some(acc), Some(l)) => acc.extend_from_slice(l),
            _ => labels = None,
        }
    }
    out.face_labels = labels;
    out
}
