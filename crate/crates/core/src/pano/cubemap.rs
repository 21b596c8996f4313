//! Equirectangular <-> cubemap reprojection.
//!
//! Six 90-degree-FoV faces along +x, -x, +y, -y, +z, -z. Color and scalar
//! channels resample bilinearly; masks use nearest-neighbor.

use super::image::{EquirectImage, MaskPano, RgbPano, ScalarPano};
use super::{direction_to_pixel, pixel_to_direction};
use crate::error::{Error, Result};
use crate::grid::{Grid, Texel, WrapMode};
use nalgebra::Vector3;

/// Per-face (forward, right, up) axes, in face order +x, -x, +y, -y, +z, -z.
pub const FACE_AXES: [([f64; 3], [f64; 3], [f64; 3]); 6] = [
    ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
    ([-1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
    ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]),
    ([0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
    ([0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
    ([0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
];

/// Six square cube faces matching the panorama's channel layout.
#[derive(Debug, Clone, PartialEq)]
pub enum CubeMap {
    Rgb([Grid<[u8; 3]>; 6]),
    Scalar([Grid<f32>; 6]),
    Mask([Grid<u8>; 6]),
}

impl CubeMap {
    pub fn face_size(&self) -> usize {
        match self {
            CubeMap::Rgb(f) => f[0].width(),
            CubeMap::Scalar(f) => f[0].width(),
            CubeMap::Mask(f) => f[0].width(),
        }
    }
}

/// World direction of a face pixel at continuous face coordinates
/// (x right, y down in the face image), for a 90-degree FoV face.
#[inline]
pub(crate) fn face_pixel_direction(face: usize, x: f64, y: f64, size: usize) -> Vector3<f64> {
    let (f, r, u) = FACE_AXES[face];
    let a = 2.0 * x / size as f64 - 1.0;
    let b = 1.0 - 2.0 * y / size as f64;
    let d = Vector3::new(
        f[0] + a * r[0] + b * u[0],
        f[1] + a * r[1] + b * u[1],
        f[2] + a * r[2] + b * u[2],
    );
    d.normalize()
}

/// Which face sees direction `d`, plus its continuous face coordinates.
#[inline]
pub(crate) fn direction_to_face(d: &Vector3<f64>, size: usize) -> (usize, f64, f64) {
    let ax = d.x.abs();
    let ay = d.y.abs();
    let az = d.z.abs();
    let face = if ax >= ay && ax >= az {
        if d.x >= 0.0 { 0 } else { 1 }
    } else if ay >= az {
        if d.y >= 0.0 { 2 } else { 3 }
    } else if d.z >= 0.0 {
        4
    } else {
        5
    };
    let (f, r, u) = FACE_AXES[face];
    let fwd = d.x * f[0] + d.y * f[1] + d.z * f[2];
    let a = (d.x * r[0] + d.y * r[1] + d.z * r[2]) / fwd;
    let b = (d.x * u[0] + d.y * u[1] + d.z * u[2]) / fwd;
    let x = (a + 1.0) * 0.5 * size as f64;
    let y = (1.0 - b) * 0.5 * size as f64;
    (face, x, y)
}

fn equirect_to_cube_faces<T: Copy>(
    src: &Grid<T>,
    size: usize,
    sample: impl Fn(&Grid<T>, f64, f64) -> T,
) -> [Grid<T>; 6] {
    std::array::from_fn(|face| {
        Grid::from_fn(size, size, |u, v| {
            let d = face_pixel_direction(face, u as f64 + 0.5, v as f64 + 0.5, size);
            let px = direction_to_pixel(&nalgebra::Unit::new_unchecked(d), src.width(), src.height());
            sample(src, px.u + 0.5, px.v + 0.5)
        })
    })
}

fn cube_to_equirect_grid<T: Copy>(
    faces: &[Grid<T>; 6],
    height: usize,
    sample: impl Fn(&Grid<T>, f64, f64) -> T,
) -> Grid<T> {
    let width = 2 * height;
    let size = faces[0].width();
    Grid::from_fn(width, height, |u, v| {
        let d = pixel_to_direction(u as f64, v as f64, width, height).expect("in-range pixel");
        let (face, x, y) = direction_to_face(&d, size);
        sample(&faces[face], x, y)
    })
}

fn bilinear_wrap<T: Texel>(g: &Grid<T>, u: f64, v: f64) -> T {
    g.sample_bilinear(u, v, WrapMode::WrapU)
}

fn nearest_wrap<T: Copy>(g: &Grid<T>, u: f64, v: f64) -> T {
    g.sample_nearest(u, v, WrapMode::WrapU)
}

fn bilinear_clamp<T: Texel>(g: &Grid<T>, u: f64, v: f64) -> T {
    g.sample_bilinear(u, v, WrapMode::Clamp)
}

fn nearest_clamp<T: Copy>(g: &Grid<T>, u: f64, v: f64) -> T {
    g.sample_nearest(u, v, WrapMode::Clamp)
}

/// Projects a panorama onto six 90-degree cube faces of `face_size` pixels.
pub fn equirect_to_cubemap(img: &EquirectImage, face_size: usize) -> Result<CubeMap> {
    if face_size < 8 {
        return Err(Error::contract(format!("face_size must be >= 8, got {face_size}")));
    }
    Ok(match img {
        EquirectImage::Rgb(p) => {
            CubeMap::Rgb(equirect_to_cube_faces(p.grid(), face_size, bilinear_wrap))
        }
        EquirectImage::Scalar(p) => {
            CubeMap::Scalar(equirect_to_cube_faces(p.grid(), face_size, bilinear_wrap))
        }
        EquirectImage::Mask(p) => {
            CubeMap::Mask(equirect_to_cube_faces(p.grid(), face_size, nearest_wrap))
        }
    })
}

/// Inverts the cube sampling back into an equirect panorama of the given
/// height (width is 2*height).
pub fn cubemap_to_equirect(cube: &CubeMap, height: usize) -> Result<EquirectImage> {
    // The six-face count is enforced by the CubeMap type; sizes must agree.
    let check = |dims: &[usize]| -> Result<()> {
        let s = dims[0];
        if dims.iter().any(|&d| d != s) || s == 0 {
            return Err(Error::contract("cube faces must be square and equally sized"));
        }
        Ok(())
    };
    match cube {
        CubeMap::Rgb(faces) => {
            let dims: Vec<usize> = faces.iter().flat_map(|f| [f.width(), f.height()]).collect();
            check(&dims[..])?;
            Ok(EquirectImage::Rgb(RgbPano::new(cube_to_equirect_grid(faces, height, bilinear_clamp))?))
        }
        CubeMap::Scalar(faces) => {
            let dims: Vec<usize> = faces.iter().flat_map(|f| [f.width(), f.height()]).collect();
            check(&dims[..])?;
            Ok(EquirectImage::Scalar(ScalarPano::new(cube_to_equirect_grid(
                faces,
                height,
                bilinear_clamp,
            ))?))
        }
        CubeMap::Mask(faces) => {
            let dims: Vec<usize> = faces.iter().flat_map(|f| [f.width(), f.height()]).collect();
            check(&dims[..])?;
            Ok(EquirectImage::Mask(MaskPano::new(cube_to_equirect_grid(faces, height, nearest_clamp))?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn smooth_rgb(width: usize, height: usize) -> RgbPano {
        RgbPano::new(Grid::from_fn(width, height, |u, v| {
            let d = pixel_to_direction(u as f64, v as f64, width, height).unwrap();
            [
                (127.5 + 120.0 * d.x) as u8,
                (127.5 + 120.0 * d.y) as u8,
                (127.5 + 120.0 * d.z) as u8,
            ]
        }))
        .unwrap()
    }

    #[test]
    fn constant_panorama_gives_constant_faces() {
        let img = EquirectImage::Rgb(RgbPano::new(Grid::filled(64, 32, [9, 80, 200])).unwrap());
        let cube = equirect_to_cubemap(&img, 16).unwrap();
        match cube {
            CubeMap::Rgb(faces) => {
                for f in &faces {
                    assert!(f.data().iter().all(|&p| p == [9, 80, 200]));
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn face_centers_map_to_axes() {
        for (face, (f, _, _)) in FACE_AXES.iter().enumerate() {
            let d = face_pixel_direction(face, 8.0, 8.0, 16);
            assert_relative_eq!(d.x, f[0], epsilon = 1e-12);
            assert_relative_eq!(d.y, f[1], epsilon = 1e-12);
            assert_relative_eq!(d.z, f[2], epsilon = 1e-12);
        }
    }

    #[test]
    fn face_projection_round_trips() {
        // direction -> face coords -> direction is the identity.
        let mut rng_state = 1u64;
        for _ in 0..2000 {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let a = (rng_state >> 11) as f64 / (1u64 << 53) as f64;
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let b = (rng_state >> 11) as f64 / (1u64 << 53) as f64;
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let c = (rng_state >> 11) as f64 / (1u64 << 53) as f64;
            let d = Vector3::new(a - 0.5, b - 0.5, c - 0.5);
            if d.norm() < 1e-3 {
                continue;
            }
            let d = d.normalize();
            let (face, x, y) = direction_to_face(&d, 32);
            let d2 = face_pixel_direction(face, x, y, 32);
            assert!(d.dot(&d2) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn smooth_round_trip_error_small_away_from_poles() {
        let (w, h) = (256, 128);
        let img = EquirectImage::Rgb(smooth_rgb(w, h));
        let cube = equirect_to_cubemap(&img, 128).unwrap();
        let back = cubemap_to_equirect(&cube, h).unwrap();
        let (orig, rt) = match (&img, &back) {
            (EquirectImage::Rgb(a), EquirectImage::Rgb(b)) => (a, b),
            _ => unreachable!(),
        };
        // Exclude 15% bands at each pole where equirect stretch dominates.
        let band = h * 15 / 100;
        let mut max_err = 0u8;
        for v in band..h - band {
            for u in 0..w {
                let a = orig.grid().get(u, v);
                let b = rt.grid().get(u, v);
                for c in 0..3 {
                    max_err = max_err.max(a[c].abs_diff(b[c]));
                }
            }
        }
        assert!(max_err <= 2, "per-pixel round-trip error {max_err} > 2/255");
    }

    #[test]
    fn round_trip_is_resampling_fixed_point() {
        let (w, h) = (256, 128);
        let img = EquirectImage::Rgb(smooth_rgb(w, h));
        let rt1 = cubemap_to_equirect(&equirect_to_cubemap(&img, 128).unwrap(), h).unwrap();
        let rt2 = cubemap_to_equirect(&equirect_to_cubemap(&rt1, 128).unwrap(), h).unwrap();
        let (a, b) = match (&rt1, &rt2) {
            (EquirectImage::Rgb(a), EquirectImage::Rgb(b)) => (a, b),
            _ => unreachable!(),
        };
        let band = h * 15 / 100;
        let mut max_err = 0u8;
        for v in band..h - band {
            for u in 0..w {
                let pa = a.grid().get(u, v);
                let pb = b.grid().get(u, v);
                for c in 0..3 {
                    max_err = max_err.max(pa[c].abs_diff(pb[c]));
                }
            }
        }
        // Quantized channels: stability means bit-identical away from poles.
        assert_eq!(max_err, 0, "second round-trip moved pixels by {max_err}/255");
    }

    #[test]
    fn mismatched_faces_rejected() {
        let faces = [
            Grid::filled(16, 16, 0u8),
            Grid::filled(16, 16, 0u8),
            Grid::filled(8, 8, 0u8),
            Grid::filled(16, 16, 0u8),
            Grid::filled(16, 16, 0u8),
            Grid::filled(16, 16, 0u8),
        ];
        assert!(cubemap_to_equirect(&CubeMap::Mask(faces), 32).is_err());
    }

    #[test]
    fn mask_reprojection_stays_binary() {
        let mut grid = Grid::filled(64, 32, 0u8);
        for v in 8..20 {
            for u in 20..40 {
                grid.set(u, v, 1);
            }
        }
        let img = EquirectImage::Mask(MaskPano::new(grid).unwrap());
        let cube = equirect_to_cubemap(&img, 32).unwrap();
        let back = cubemap_to_equirect(&cube, 32).unwrap();
        match back {
            EquirectImage::Mask(m) => {
                assert!(m.grid().data().iter().all(|&s| s <= 1));
            }
            _ => unreachable!(),
        }
    }
}
