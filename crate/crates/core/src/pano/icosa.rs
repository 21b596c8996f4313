//! Icosahedral tangent-view projection.
//!
//! Projects a panorama onto the 20 faces of a regular icosahedron
//! (one vertex at +y), yielding overlapping gnomonic perspective views
//! whose union covers the sphere for sufficiently wide FoV.

use super::image::EquirectImage;
use super::{direction_to_pixel, rotation_facing, CameraPose};
use crate::error::{Error, Result};
use crate::grid::{Grid, Texel, WrapMode};
use nalgebra::{Unit, Vector3};

/// Maximum vertex-to-vertex arc of an icosahedron face, in degrees
/// (the face angular diameter; adjacent vertices subtend acos(1/sqrt(5))).
pub const ICOSA_FACE_ANGULAR_DIAMETER_DEG: f64 = 63.43494882292201;

/// Default tangent-view FoV. Half of it (37.5 deg) exceeds the face
/// circumradius (about 37.38 deg), so each view's inscribed cone covers its
/// whole face and the 20-view union covers the sphere.
pub const ICOSA_DEFAULT_FOV_DEG: f64 = 75.0;

/// One gnomonic tangent view of a panorama.
#[derive(Debug, Clone)]
pub struct TangentView {
    pub pose: CameraPose,
    pub fov_deg: f64,
    pub image: TangentImage,
}

/// Channel payload of a tangent view, matching the source panorama.
#[derive(Debug, Clone)]
pub enum TangentImage {
    Rgb(Grid<[u8; 3]>),
    Scalar(Grid<f32>),
    Mask(Grid<u8>),
}

/// The 20 face-center forward axes of a regular icosahedron with one
/// vertex at +y, as unit vectors.
pub fn icosa_face_axes() -> Vec<Unit<Vector3<f64>>> {
    let mut verts = vec![Vector3::new(0.0, 1.0, 0.0)];
    let ring_y = 1.0 / 5.0_f64.sqrt();
    let ring_r = 2.0 / 5.0_f64.sqrt();
    for k in 0..5 {
        let a = std::f64::consts::TAU * k as f64 / 5.0;
        verts.push(Vector3::new(ring_r * a.cos(), ring_y, ring_r * a.sin()));
    }
    for k in 0..5 {
        let a = std::f64::consts::TAU * (k as f64 + 0.5) / 5.0;
        verts.push(Vector3::new(ring_r * a.cos(), -ring_y, ring_r * a.sin()));
    }
    verts.push(Vector3::new(0.0, -1.0, 0.0));

    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(20);
    for k in 0..5 {
        let k1 = (k + 1) % 5;
        faces.push([0, 1 + k, 1 + k1]);
        faces.push([1 + k, 6 + k, 1 + k1]);
        faces.push([6 + k, 6 + k1, 1 + k1]);
        faces.push([11, 6 + k1, 6 + k]);
    }

    faces
        .iter()
        .map(|f| Unit::new_normalize(verts[f[0]] + verts[f[1]] + verts[f[2]]))
        .collect()
}

/// Camera-frame direction of a tangent-view pixel at continuous image
/// coordinates, given the view FoV.
#[inline]
pub fn persp_pixel_direction(x: f64, y: f64, res: usize, fov_deg: f64) -> Vector3<f64> {
    let t = (fov_deg.to_radians() / 2.0).tan();
    let a = (2.0 * x / res as f64 - 1.0) * t;
    let b = (1.0 - 2.0 * y / res as f64) * t;
    Vector3::new(1.0, b, a).normalize()
}

/// Whether world direction `d` falls inside the square frustum of a view.
pub fn view_contains(pose: &CameraPose, fov_deg: f64, d: &Vector3<f64>) -> bool {
    let cam = pose.rotation.inverse() * d;
    if cam.x <= 0.0 {
        return false;
    }
    let t = (fov_deg.to_radians() / 2.0).tan();
    (cam.z / cam.x).abs() <= t && (cam.y / cam.x).abs() <= t
}

fn project_view<T: Copy>(
    src: &Grid<T>,
    pose: &CameraPose,
    fov_deg: f64,
    res: usize,
    sample: impl Fn(&Grid<T>, f64, f64) -> T,
) -> Grid<T> {
    Grid::from_fn(res, res, |u, v| {
        let cam = persp_pixel_direction(u as f64 + 0.5, v as f64 + 0.5, res, fov_deg);
        let world = pose.rotation * cam;
        let px = direction_to_pixel(&Unit::new_unchecked(world), src.width(), src.height());
        sample(src, px.u + 0.5, px.v + 0.5)
    })
}

fn bilinear_wrap<T: Texel>(g: &Grid<T>, u: f64, v: f64) -> T {
    g.sample_bilinear(u, v, WrapMode::WrapU)
}

fn nearest_wrap<T: Copy>(g: &Grid<T>, u: f64, v: f64) -> T {
    g.sample_nearest(u, v, WrapMode::WrapU)
}

/// Projects the panorama onto 20 icosahedral tangent views.
///
/// Logs a coverage warning when `fov_deg` does not exceed the face angular
/// diameter, since neighboring views then stop overlapping.
pub fn icosa_tangent_views(img: &EquirectImage, fov_deg: f64, res: usize) -> Result<Vec<TangentView>> {
    if !(fov_deg > 0.0 && fov_deg < 180.0) {
        return Err(Error::domain(format!("fov {fov_deg} degrees outside (0, 180)")));
    }
    if res < 2 {
        return Err(Error::domain(format!("tangent view resolution {res} too small")));
    }
    if fov_deg <= ICOSA_FACE_ANGULAR_DIAMETER_DEG {
        log::warn!(
            "tangent-view fov {fov_deg} deg <= face angular diameter {ICOSA_FACE_ANGULAR_DIAMETER_DEG:.1} deg; coverage gaps likely"
        );
    }
    Ok(icosa_face_axes()
        .iter()
        .map(|axis| {
            let pose = CameraPose {
                position: Vector3::zeros(),
                rotation: rotation_facing(axis),
            };
            let image = match img {
                EquirectImage::Rgb(p) => {
                    TangentImage::Rgb(project_view(p.grid(), &pose, fov_deg, res, bilinear_wrap))
                }
                EquirectImage::Scalar(p) => {
                    TangentImage::Scalar(project_view(p.grid(), &pose, fov_deg, res, bilinear_wrap))
                }
                EquirectImage::Mask(p) => {
                    TangentImage::Mask(project_view(p.grid(), &pose, fov_deg, res, nearest_wrap))
                }
            };
            TangentView { pose, fov_deg, image }
        })
        .collect())
}
