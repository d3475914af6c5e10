use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::atlas::UvAtlas;
use super::mesh::{Mesh, Vec3};
use super::raster::ZBuffer;
use super::view::{project_view, ViewSpec};
use crate::image::RgbImage;
use crate::{Error, Result};

/// One square RGB texture per canonical view, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureMapSet {
    pub maps: Vec<RgbImage>,
}

impl TextureMapSet {
    pub fn new(maps: Vec<RgbImage>) -> Result<Self> {
        if let Some(first) = maps.first() {
            for m in &maps {
                if m.width != first.width || m.height != first.height || m.width != m.height {
                    return Err(Error::Shape("texture maps must be square and equally sized".into()));
                }
            }
        }
        if maps.iter().flat_map(|m| &m.data).any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Precondition("texture values must lie in [-1, 1]".into()));
        }
        Ok(Self { maps })
    }

    /// Clips unconstrained generator output into range.
    pub fn from_unclipped(maps: Vec<RgbImage>) -> Result<Self> {
        Self::new(maps.iter().map(RgbImage::clipped).collect())
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.maps.first().map_or(0, |m| m.width)
    }
}

fn texel(uv: [f64; 2], size: usize) -> (usize, usize) {
    let s = size as f64;
    let x = ((uv[0] * s).floor().max(0.0) as usize).min(size - 1);
    let y = (((1.0 - uv[1]) * s).floor().max(0.0) as usize).min(size - 1);
    (x, y)
}

fn interpolate_uv(tri: [[f64; 2]; 3], b: [f64; 3]) -> [f64; 2] {
    [
        b[0] * tri[0][0] + b[1] * tri[1][0] + b[2] * tri[2][0],
        b[0] * tri[0][1] + b[1] * tri[1][1] + b[2] * tri[2][1],
    ]
}

pub const BACKGROUND: [f32; 3] = [1.0, 1.0, 1.0];

/// Fills each view's texels from a surface color function evaluated at the
/// 3D point the texel covers; texels not covered by an assigned face get
/// the white background.
pub fn bake_surface(
    mesh: &Mesh,
    atlas: &UvAtlas,
    mut color: impl FnMut(usize, Vec3) -> [f32; 3],
) -> Result<TextureMapSet> {
    let r = atlas.resolution;
    let mut maps = Vec::with_capacity(atlas.num_views());
    for view in 0..atlas.num_views() {
        let uv = &atlas.per_view_uv[view];
        let (_, depth) = project_view(mesh, &atlas.views[view]);
        let mut zb = ZBuffer::new(r);
        for f in atlas.faces_in_view(view) {
            let tri = mesh.faces[f];
            zb.draw(f, tri.map(|v| uv[v]), tri.map(|v| depth[v]));
        }
        let mut img = RgbImage::filled(r, r, BACKGROUND);
        for y in 0..r {
            for x in 0..r {
                if let Some((f, _, b)) = zb.at(x, y) {
                    let [i, j, k] = mesh.faces[f];
                    let p = mesh.vertices[i] * b[0] + mesh.vertices[j] * b[1] + mesh.vertices[k] * b[2];
                    img.set(x, y, color(f, p));
                }
            }
        }
        maps.push(img);
    }
    TextureMapSet::new(maps)
}

/// Orthographic render: each covered pixel takes the nearest texel of its
/// face's assigned-view texture; everything else is white.
pub fn render_view(
    mesh: &Mesh,
    atlas: &UvAtlas,
    textures: &TextureMapSet,
    camera: &ViewSpec,
    size: usize,
) -> Result<RgbImage> {
    if textures.len() != atlas.num_views() {
        return Err(Error::ViewCount {
            expected: atlas.num_views(),
            got: textures.len(),
        });
    }
    let (uv, depth) = project_view(mesh, camera);
    let mut zb = ZBuffer::new(size);
    for (f, tri) in mesh.faces.iter().enumerate() {
        zb.draw(f, tri.map(|v| uv[v]), tri.map(|v| depth[v]));
    }
    let mut img = RgbImage::filled(size, size, BACKGROUND);
    for y in 0..size {
        for x in 0..size {
            if let Some((f, _, b)) = zb.at(x, y) {
                let tex = &textures.maps[atlas.face_view[f]];
                let (tx, ty) = texel(interpolate_uv(atlas.face_uv(mesh, f), b), tex.width);
                img.set(x, y, tex.get(tx, ty));
            }
        }
    }
    Ok(img)
}

/// Files written by [`export_textured_mesh`].
#[derive(Clone, Debug)]
pub struct ExportedFiles {
    pub obj: PathBuf,
    pub mtl: PathBuf,
    pub texture: PathBuf,
}

/// Tile grid `(columns, rows)` for packing `n` view textures.
pub fn tile_grid(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    (cols, n.div_ceil(cols).max(1))
}

/// Maps a view-local UV into the packed atlas image.
pub fn packed_uv(view: usize, uv: [f64; 2], n: usize) -> [f64; 2] {
    let (cols, rows) = tile_grid(n);
    let (col, row) = ((view % cols) as f64, (view / cols) as f64);
    [
        (col + uv[0]) / cols as f64,
        1.0 - (row + 1.0 - uv[1]) / rows as f64,
    ]
}

/// Packs the per-view textures into one image, row-major tiles.
pub fn pack_textures(textures: &TextureMapSet) -> RgbImage {
    let n = textures.len();
    let r = textures.resolution();
    let (cols, rows) = tile_grid(n);
    let mut out = RgbImage::filled(cols * r, rows * r, BACKGROUND);
    for (i, t) in textures.maps.iter().enumerate() {
        let (ox, oy) = ((i % cols) * r, (i / cols) * r);
        for y in 0..r {
            for x in 0..r {
                out.set(ox + x, oy + y, t.get(x, y));
            }
        }
    }
    out
}

/// Writes `<stem>.obj`, `<stem>.mtl` and `<stem>.png`. Vertex `v` in view
/// `i` gets texture coordinate record `i·V + v + 1`.
pub fn export_textured_mesh(
    mesh: &Mesh,
    atlas: &UvAtlas,
    textures: &TextureMapSet,
    out_dir: &Path,
    stem: &str,
) -> Result<ExportedFiles> {
    let n = atlas.num_views();
    if textures.len() != n {
        return Err(Error::ViewCount {
            expected: n,
            got: textures.len(),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = ExportedFiles {
        obj: out_dir.join(format!("{stem}.obj")),
        mtl: out_dir.join(format!("{stem}.mtl")),
        texture: out_dir.join(format!("{stem}.png")),
    };
    pack_textures(textures).save_png(&files.texture)?;

    let tex_name = files.texture.file_name().unwrap().to_string_lossy();
    let mtl = format!("newmtl textured\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {tex_name}\n");
    std::fs::write(&files.mtl, mtl).map_err(|e| Error::io(&files.mtl, e))?;

    let nv = mesh.vertices.len();
    let mut s = String::new();
    let mtl_name = files.mtl.file_name().unwrap().to_string_lossy();
    writeln!(s, "mtllib {mtl_name}").unwrap();
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for (i, uvs) in atlas.per_view_uv.iter().enumerate() {
        for &uv in uvs {
            let [u, v] = packed_uv(i, uv, n);
            writeln!(s, "vt {u} {v}").unwrap();
        }
    }
    writeln!(s, "usemtl textured").unwrap();
    for (f, tri) in mesh.faces.iter().enumerate() {
        let base = atlas.face_view[f] * nv + 1;
        writeln!(
            s,
            "f {}/{} {}/{} {}/{}",
            tri[0] + 1,
            base + tri[0],
            tri[1] + 1,
            base + tri[1],
            tri[2] + 1,
            base + tri[2]
        )
        .unwrap();
    }
    std::fs::write(&files.obj, s).map_err(|e| Error::io(&files.obj, e))?;
    Ok(files)
}
