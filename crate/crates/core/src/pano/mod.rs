//! Equirectangular panorama geometry.
//!
//! Fixes the world-coordinate conventions used by every other module:
//! x points forward, y up, z right. A panorama row index v maps to the
//! polar angle phi = pi * (v + 0.5) / H and a column index u to
//! theta = 2*pi * (u + 0.5) / W - pi/2, sampling at pixel centers so the
//! seam and pole rows are not double-covered. The v = H/2 boundary lies in
//! the y = 0 plane and theta = 0 faces +x.

mod cubemap;
mod icosa;
mod image;

pub use cubemap::{cubemap_to_equirect, equirect_to_cubemap, CubeMap, FACE_AXES};
pub use icosa::{
    icosa_face_axes, icosa_tangent_views, persp_pixel_direction, view_contains, TangentImage,
    TangentView, ICOSA_DEFAULT_FOV_DEG, ICOSA_FACE_ANGULAR_DIAMETER_DEG,
};
pub use image::{EquirectImage, MaskPano, RgbPano, ScalarPano};

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

/// Unit viewing direction in the world frame.
pub type Direction = Unit<Vector3<f64>>;

/// Rigid camera pose: position in scene units plus an orthonormal rotation
/// mapping camera axes (x forward, y up, z right) into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        CameraPose { position: Vector3::zeros(), rotation: Rotation3::identity() }
    }

    pub fn new(position: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        CameraPose { position, rotation }
    }

    /// Validates the rotation part: orthonormal within 1e-6, determinant +1.
    pub fn from_matrix(position: Vector3<f64>, m: Matrix3<f64>) -> Result<Self> {
        let gram = m.transpose() * m;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > 1e-6 {
            return Err(Error::domain(format!(
                "rotation not orthonormal (max deviation {dev:.3e})"
            )));
        }
        if m.determinant() < 0.0 {
            return Err(Error::domain("rotation has determinant -1"));
        }
        Ok(CameraPose { position, rotation: Rotation3::from_matrix_unchecked(m) })
    }

    /// Pose at `position` looking toward `target` with y-up. Falls back to
    /// the +x forward axis when position and target coincide.
    pub fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> Self {
        let delta = target - position;
        let forward = if delta.norm() < 1e-12 { Vector3::x() } else { delta.normalize() };
        CameraPose { position, rotation: rotation_facing(&forward) }
    }

    /// Relative pose taking this (source) frame to `target`:
    /// rotation = R_s^-1 R_t, translation = R_s^-1 (t_t - t_s).
    pub fn relative_to(&self, target: &CameraPose) -> CameraPose {
        let inv = self.rotation.inverse();
        CameraPose {
            position: inv * (target.position - self.position),
            rotation: inv * target.rotation,
        }
    }
}

/// Rotation whose camera forward axis is `forward`, keeping the camera up
/// axis as close to world +y as possible.
pub fn rotation_facing(forward: &Vector3<f64>) -> Rotation3<f64> {
    let f = forward.normalize();
    let mut right = f.cross(&Vector3::y());
    if right.norm() < 1e-9 {
        right = f.cross(&Vector3::x());
    }
    let right = right.normalize();
    let up = right.cross(&f);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[f, up, right]))
}

/// Direction for spherical angles: `polar` from the +y pole, `azimuth`
/// measured from +x toward +z.
#[inline]
pub fn angles_to_direction(polar: f64, azimuth: f64) -> Direction {
    let (sp, cp) = polar.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Unit::new_unchecked(Vector3::new(sp * ca, cp, sp * sa))
}

/// Azimuth of a direction in [0, 2*pi), measured from +x toward +z.
#[inline]
pub fn azimuth_of(d: &Vector3<f64>) -> f64 {
    let a = d.z.atan2(d.x);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Real-valued pixel coordinates of a direction; `pole` marks the
/// degenerate near-pole convention (u = 0, v in {0, H}).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanoPixel {
    pub u: f64,
    pub v: f64,
    pub pole: bool,
}

/// Maps a (sub-)pixel coordinate to its unit viewing direction. Samples are
/// taken at pixel centers (u + 0.5, v + 0.5); u is periodic while the polar
/// angle clamps at the poles, so the map is a bijection on v in
/// [0, H - 0.5) and saturates over the trailing half-pixel pole cap.
pub fn pixel_to_direction(u: f64, v: f64, width: usize, height: usize) -> Result<Direction> {
    if !(0.0..width as f64).contains(&u) || !(0.0..height as f64).contains(&v) {
        return Err(Error::domain(format!(
            "pixel ({u}, {v}) outside {width}x{height} panorama"
        )));
    }
    let polar = (std::f64::consts::PI * (v + 0.5) / height as f64).min(std::f64::consts::PI);
    let azimuth = std::f64::consts::TAU * (u + 0.5) / width as f64 - std::f64::consts::FRAC_PI_2;
    Ok(angles_to_direction(polar, azimuth))
}

/// Inverse of [`pixel_to_direction`]. u is wrapped into [0, W); near-pole
/// directions (|d_y| > 1 - 1e-12) collapse to u = 0, v in {0, H}.
pub fn direction_to_pixel(d: &Direction, width: usize, height: usize) -> PanoPixel {
    if d.y > 1.0 - 1e-12 {
        return PanoPixel { u: 0.0, v: 0.0, pole: true };
    }
    if d.y < -(1.0 - 1e-12) {
        return PanoPixel { u: 0.0, v: height as f64, pole: true };
    }
    let polar = d.y.clamp(-1.0, 1.0).acos();
    let theta = d.z.atan2(d.x);
    let u = ((theta + std::f64::consts::FRAC_PI_2) / std::f64::consts::TAU) * width as f64 - 0.5;
    let v = polar / std::f64::consts::PI * height as f64 - 0.5;
    PanoPixel { u: u.rem_euclid(width as f64), v, pole: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn equator_forward_identity() {
        // W=4, H=2: pixel (0.5, 0.5) sits at phi = pi/2, theta = 0.
        let d = pixel_to_direction(0.5, 0.5, 4, 2).unwrap();
        assert_relative_eq!(d.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pole_degeneracy_in_angle_chart() {
        for azimuth in [0.0, 1.0, 3.0, 6.0] {
            let d = angles_to_direction(0.0, azimuth);
            assert_relative_eq!(d.y, 1.0, epsilon = 1e-12);
            assert!(d.x.abs() < 1e-12 && d.z.abs() < 1e-12);
        }
    }

    #[test]
    fn forward_and_right_axes_map_to_expected_columns() {
        let (w, h) = (512, 256);
        let px = direction_to_pixel(&Unit::new_normalize(Vector3::x()), w, h);
        // theta = 0 column: u + 0.5 = W/4.
        assert_relative_eq!(px.u, w as f64 / 4.0 - 0.5, epsilon = 1e-9);
        assert_relative_eq!(px.v, h as f64 / 2.0 - 0.5, epsilon = 1e-9);
        let px = direction_to_pixel(&Unit::new_normalize(Vector3::z()), w, h);
        // theta = pi/2 column: u + 0.5 = W/2.
        assert_relative_eq!(px.u, w as f64 / 2.0 - 0.5, epsilon = 1e-9);
    }

    #[test]
    fn pole_directions_flagged() {
        let (w, h) = (64, 32);
        let up = direction_to_pixel(&Unit::new_normalize(Vector3::y()), w, h);
        assert!(up.pole);
        assert_eq!((up.u, up.v), (0.0, 0.0));
        let down = direction_to_pixel(&Unit::new_normalize(-Vector3::y()), w, h);
        assert!(down.pole);
        assert_eq!((down.u, down.v), (0.0, h as f64));
    }

    #[test]
    fn round_trip_pixel_direction_pixel() {
        let (w, h) = (2048, 1024);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut max_err: f64 = 0.0;
        for _ in 0..10_000 {
            // The chart is bijective away from the poles; the trailing
            // half-pixel row saturates at the -y pole by construction.
            let u = rng.gen_range(0.0..w as f64);
            let v = rng.gen_range(0.0..(h as f64 - 0.5));
            let d = pixel_to_direction(u, v, w, h).unwrap();
            let px = direction_to_pixel(&d, w, h);
            assert!(!px.pole);
            let du = (px.u - u).abs().min(w as f64 - (px.u - u).abs());
            let dv = (px.v - v).abs();
            max_err = max_err.max(du).max(dv);
        }
        assert!(max_err < 1e-6, "round-trip error {max_err}");
    }

    #[test]
    fn round_trip_direction_pixel_direction() {
        let (w, h) = (2048, 1024);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut max_angle: f64 = 0.0;
        for _ in 0..10_000 {
            let v3 = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v3.norm() < 1e-3 {
                continue;
            }
            let d = Unit::new_normalize(v3);
            let px = direction_to_pixel(&d, w, h);
            if px.pole || px.v < 0.0 || px.v >= h as f64 {
                continue;
            }
            let d2 = pixel_to_direction(px.u, px.v, w, h).unwrap();
            max_angle = max_angle.max(d.dot(&d2).clamp(-1.0, 1.0).acos());
        }
        assert!(max_angle < 1e-7, "round-trip angular error {max_angle}");
    }

    #[test]
    fn equator_row_lies_in_y0_plane() {
        let (w, h) = (128, 64);
        // Continuous v = H/2 is the equator boundary.
        for u in [0.0, 17.3, 63.0, 127.9] {
            let d = pixel_to_direction(u, h as f64 / 2.0 - 0.5, w, h).unwrap();
            // Row center H/2 - 0.5 maps to phi = pi/2 exactly.
            assert!(d.y.abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_pixel_rejected() {
        assert!(pixel_to_direction(-0.1, 0.0, 8, 4).is_err());
        assert!(pixel_to_direction(0.0, 4.0, 8, 4).is_err());
    }

    #[test]
    fn look_at_is_orthonormal_det_one() {
        let pose = CameraPose::look_at(Vector3::new(1.0, 2.0, 3.0), Vector3::new(-2.0, 0.5, 1.0));
        let m = pose.rotation.matrix();
        assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-12);
        assert!(((m.transpose() * m) - Matrix3::identity()).abs().max() < 1e-12);
    }
}
