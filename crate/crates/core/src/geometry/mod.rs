//! Mesh I/O, canonical-view UV parameterization, segmentation rasterization,
//! texture baking/export and a small orthographic renderer.

mod atlas;
mod mesh;
mod raster;
mod segmentation;
mod texture;
mod view;

pub use atlas::{assign_faces, build_uv_atlas, depth_buffer, UvAtlas};
pub use mesh::{
    box_mesh, load_face_labels, load_mesh, merge_meshes, normalize_mesh, parse_obj, save_face_labels, Mesh,
    ObjData, Vec3,
};
pub use raster::{raster_triangle, ZBuffer};
pub use segmentation::{make_silhouette, rasterize_segmentation, SegmentationMapSet};
pub use texture::{
    bake_surface, export_textured_mesh, pack_textures, packed_uv, render_view, tile_grid, ExportedFiles,
    TextureMapSet, BACKGROUND,
};
pub use view::{car_views, face_views, project_view, ViewSpec};
