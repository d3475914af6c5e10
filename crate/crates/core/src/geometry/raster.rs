//! Depth-buffered triangle scan conversion over a square pixel grid.
//!
//! Texture coordinate `(u, v)` maps to pixel space as `x = u·size`,
//! `y = (1 − v)·size`, so row 0 is the top of the image. A pixel is covered
//! when its center lies inside or on the edge of the triangle.

/// Nearest-face record per pixel.
#[derive(Clone, Debug)]
pub struct ZBuffer {
    pub size: usize,
    pub depth: Vec<f64>,
    pub face: Vec<Option<usize>>,
    pub bary: Vec<[f64; 3]>,
}

impl ZBuffer {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            depth: vec![f64::INFINITY; size * size],
            face: vec![None; size * size],
            bary: vec![[0.0; 3]; size * size],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> Option<(usize, f64, [f64; 3])> {
        let i = y * self.size + x;
        self.face[i].map(|f| (f, self.depth[i], self.bary[i]))
    }

    /// Pixel containing texture coordinate `uv`, if inside the frame.
    pub fn pixel_of(&self, uv: [f64; 2]) -> Option<(usize, usize)> {
        let x = (uv[0] * self.size as f64).floor();
        let y = ((1.0 - uv[1]) * self.size as f64).floor();
        let s = self.size as f64;
        (x >= 0.0 && y >= 0.0 && x < s && y < s).then_some((x as usize, y as usize))
    }

    /// Draws one triangle given per-corner `(u, v)` and depth.
    pub fn draw(&mut self, face: usize, uv: [[f64; 2]; 3], depth: [f64; 3]) {
        let size = self.size;
        raster_triangle(uv, size, |x, y, b| {
            let d = b[0] * depth[0] + b[1] * depth[1] + b[2] * depth[2];
            let i = y * size + x;
            if d < self.depth[i] {
                self.depth[i] = d;
                self.face[i] = Some(face);
                self.bary[i] = b;
            }
        });
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Calls `f(x, y, barycentrics)` for every covered pixel.
pub fn raster_triangle(uv: [[f64; 2]; 3], size: usize, mut f: impl FnMut(usize, usize, [f64; 3])) {
    let s = size as f64;
    let p = uv.map(|[u, v]| [u * s, (1.0 - v) * s]);
    let area = edge(p[0], p[1], p[2]);
    if area.abs() < 1e-12 {
        return;
    }
    let xmin = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
    let xmax = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
    let ymin = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
    let ymax = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (xmin - 0.5).floor().max(0.0) as usize;
    let y0 = (ymin - 0.5).floor().max(0.0) as usize;
    let x1 = ((xmax - 0.5).ceil().max(-1.0) as i64).min(size as i64 - 1);
    let y1 = ((ymax - 0.5).ceil().max(-1.0) as i64).min(size as i64 - 1);
    if x1 < 0 || y1 < 0 {
        return;
    }
    let tol = 1e-9 * area.abs();
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let c = [x as f64 + 0.5, y as f64 + 0.5];
            let w0 = edge(p[1], p[2], c);
            let w1 = edge(p[2], p[0], c);
            let w2 = edge(p[0], p[1], c);
            let inside = if area > 0.0 {
                w0 >= -tol && w1 >= -tol && w2 >= -tol
            } else {
                w0 <= tol && w1 <= tol && w2 <= tol
            };
            if inside {
                f(x, y, [w0 / area, w1 / area, w2 / area]);
            }
        }
    }
}
