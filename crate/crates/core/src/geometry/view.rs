use serde::{Deserialize, Serialize};

use super::mesh::{Mesh, Vec3};
use crate::{Error, Result};

/// Orthographic camera looking along `forward` with image-up `up`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub name: String,
    pub forward: [f64; 3],
    pub up: [f64; 3],
}

impl ViewSpec {
    pub fn new(name: &str, forward: [f64; 3], up: [f64; 3]) -> Result<Self> {
        let v = Self {
            name: name.to_string(),
            forward,
            up,
        };
        let (f, u) = (v.forward(), v.up());
        if (f.norm() - 1.0).abs() > 1e-9 || (u.norm() - 1.0).abs() > 1e-9 || f.dot(&u).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "view {name}: forward and up must be orthonormal"
            )));
        }
        Ok(v)
    }

    pub fn forward(&self) -> Vec3 {
        Vec3::from(self.forward)
    }

    pub fn up(&self) -> Vec3 {
        Vec3::from(self.up)
    }

    /// Image-right axis, `forward × up`.
    pub fn right(&self) -> Vec3 {
        self.forward().cross(&self.up())
    }

    /// `(u, v, depth)` of a point; the `[-1,1]²` view plane maps to `[0,1]²`.
    pub fn project_point(&self, p: &Vec3) -> (f64, f64, f64) {
        let u = (p.dot(&self.right()) + 1.0) * 0.5;
        let v = (p.dot(&self.up()) + 1.0) * 0.5;
        (u, v, p.dot(&self.forward()))
    }
}

fn view(name: &str, forward: [f64; 3], up: [f64; 3]) -> ViewSpec {
    ViewSpec::new(name, forward, up).expect("preset views are orthonormal")
}

/// The six axis-aligned views for vehicles, in canonical order.
/// Opposite views share `up`, so their images mirror horizontally.
pub fn car_views() -> Vec<ViewSpec> {
    vec![
        view("front", [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
        view("back", [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
        view("left", [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        view("right", [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        view("top", [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]),
        view("bottom", [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]),
    ]
}

/// Single frontal view used for faces.
pub fn face_views() -> Vec<ViewSpec> {
    vec![view("front", [0.0, 0.0, -1.0], [0.0, 1.0, 0.0])]
}

/// Per-vertex texture coordinates and depths for one view.
pub fn project_view(mesh: &Mesh, view: &ViewSpec) -> (Vec<[f64; 2]>, Vec<f64>) {
    mesh.vertices
        .iter()
        .map(|p| {
            let (u, v, d) = view.project_point(p);
            ([u, v], d)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::box_mesh;

    #[test]
    fn presets_are_orthonormal_and_ordered() {
        let names: Vec<_> = car_views().into_iter().map(|v| v.name).collect();
        assert_eq!(names, ["front", "back", "left", "right", "top", "bottom"]);
        assert_eq!(face_views().len(), 1);
        assert!(ViewSpec::new("bad", [0.0, 0.0, 1.0], [0.0, 0.6, 0.8]).is_err());
    }

    #[test]
    fn origin_projects_to_center() {
        let m = Mesh::new(vec![Vec3::zeros()], vec![], None).unwrap();
        for v in car_views() {
            let (uv, d) = project_view(&m, &v);
            assert_eq!(uv[0], [0.5, 0.5]);
            assert_eq!(d[0], 0.0);
        }
    }

    #[test]
    fn front_view_corner() {
        let m = Mesh::new(vec![Vec3::new(1.0, 1.0, 1.0)], vec![], None).unwrap();
        let (uv, d) = project_view(&m, &car_views()[0]);
        assert_eq!(uv[0], [1.0, 1.0]);
        assert_eq!(d[0], -1.0);
    }

    #[test]
    fn opposite_views_mirror_horizontally() {
        let cube = box_mesh(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        let views = car_views();
        for (a, b) in [(0, 1), (2, 3), (4, 5)] {
            let (ua, da) = project_view(&cube, &views[a]);
            let (ub, db) = project_view(&cube, &views[b]);
            for i in 0..cube.vertices.len() {
                assert_eq!(ub[i][0], 1.0 - ua[i][0]);
                assert_eq!(ub[i][1], ua[i][1]);
                assert_eq!(db[i], -da[i]);
            }
        }
    }
}
