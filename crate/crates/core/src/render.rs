//! Panorama rendering of scene meshes and disocclusion-mask morphology.
//!
//! Rendering is per-pixel ray casting against the mesh BVH (equirect
//! projection is non-linear in screen space, so rasterization buys
//! nothing). Output is deterministic and independent of the row schedule.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mesh::SceneMesh;
use crate::pano::{pixel_to_direction, CameraPose, MaskPano, RgbPano, ScalarPano};
use crate::raycast::Ray;
use rayon::prelude::*;

/// Rendered panorama: RGB, ray distance and validity (1 = geometry hit).
/// Distance holds a placeholder 1.0 where valid = 0.
#[derive(Debug, Clone)]
pub struct PanoRender {
    pub rgb: RgbPano,
    pub dist: ScalarPano,
    pub valid: MaskPano,
}

impl PanoRender {
    /// The disocclusion mask: 1 exactly where no geometry was hit.
    pub fn disocclusion_mask(&self) -> MaskPano {
        MaskPano::new(self.valid.grid().map(|m| 1 - m)).expect("binary complement")
    }

    pub fn validate(&self) -> Result<()> {
        for (&d, &m) in self.dist.grid().data().iter().zip(self.valid.grid().data().iter()) {
            if m == 1 && !(d > 0.0) {
                return Err(Error::contract("valid pixel with non-positive distance"));
            }
        }
        Ok(())
    }
}

/// Renders the mesh into a panorama at the given pose. An empty mesh
/// yields a fully invalid render.
pub fn render_panorama(
    mesh: &SceneMesh,
    pose: &CameraPose,
    width: usize,
    height: usize,
) -> Result<PanoRender> {
    if width != 2 * height || height == 0 {
        return Err(Error::contract(format!(
            "render target must satisfy W = 2H, got {width}x{height}"
        )));
    }
    let mut rgb = Grid::filled(width, height, [0u8; 3]);
    let mut dist = Grid::filled(width, height, 1.0f32);
    let mut valid = Grid::filled(width, height, 0u8);
    if !mesh.is_empty() {
        let bvh = mesh.build_bvh();
        let rows: Vec<Vec<(f32, [u8; 3], u8)>> = (0..height)
            .into_par_iter()
            .map(|v| {
                let mut row = Vec::with_capacity(width);
                for u in 0..width {
                    let d = pixel_to_direction(u as f64, v as f64, width, height)
                        .expect("in-range pixel");
                    let dir = pose.rotation * d.into_inner();
                    match bvh.closest_hit(&Ray::new(pose.position, dir), 1e-9) {
                        Some(hit) => {
                            let f = mesh.faces[hit.face as usize];
                            let (bu, bv) = hit.bary;
                            let w0 = 1.0 - bu - bv;
                            let c0 = mesh.colors[f[0] as usize];
                            let c1 = mesh.colors[f[1] as usize];
                            let c2 = mesh.colors[f[2] as usize];
                            let mut c = [0u8; 3];
                            for k in 0..3 {
                                c[k] = (w0 * c0[k] as f64 + bu * c1[k] as f64 + bv * c2[k] as f64)
                                    .round()
                                    .clamp(0.0, 255.0) as u8;
                            }
                            row.push((hit.t as f32, c, 1));
                        }
                        None => row.push((1.0, [0, 0, 0], 0)),
                    }
                }
                row
            })
            .collect();
        for (v, row) in rows.into_iter().enumerate() {
            for (u, (t, c, m)) in row.into_iter().enumerate() {
                rgb.set(u, v, c);
                dist.set(u, v, t);
                valid.set(u, v, m);
            }
        }
    }
    Ok(PanoRender {
        rgb: RgbPano::new(rgb)?,
        dist: ScalarPano::new(dist)?,
        valid: MaskPano::new(valid)?,
    })
}

/// Morphology order for [`refine_mask`]; the default opening
/// (erode-then-dilate) removes speckle without growing regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MorphOrder {
    #[default]
    ErodeDilate,
    DilateErode,
}

/// Offsets of the 9x9 elliptical structuring element.
fn elliptical_kernel() -> Vec<(i64, i64)> {
    let mut k = Vec::new();
    let r = 4.5f64;
    for dy in -4i64..=4 {
        for dx in -4i64..=4 {
            if (dx * dx + dy * dy) as f64 <= r * r {
                k.push((dx, dy));
            }
        }
    }
    k
}

fn sample_mask(g: &Grid<u8>, u: i64, v: i64) -> u8 {
    // Azimuth wraps; vertically the mask is embedded in a zero plane.
    if v < 0 || v >= g.height() as i64 {
        return 0;
    }
    let w = g.width() as i64;
    g.get(((u % w + w) % w) as usize, v as usize)
}

fn erode(g: &Grid<u8>, kernel: &[(i64, i64)]) -> Grid<u8> {
    Grid::from_fn(g.width(), g.height(), |u, v| {
        let hit = kernel
            .iter()
            .all(|&(dx, dy)| sample_mask(g, u as i64 + dx, v as i64 + dy) == 1);
        hit as u8
    })
}

fn dilate(g: &Grid<u8>, kernel: &[(i64, i64)]) -> Grid<u8> {
    Grid::from_fn(g.width(), g.height(), |u, v| {
        let hit = kernel
            .iter()
            .any(|&(dx, dy)| sample_mask(g, u as i64 - dx, v as i64 - dy) == 1);
        hit as u8
    })
}

/// Morphological refinement with a 9x9 elliptical structuring element.
/// The azimuth seam wraps; the pole rows clamp (no vertical wrap).
pub fn refine_mask(mask: &MaskPano, order: MorphOrder) -> MaskPano {
    let kernel = elliptical_kernel();
    let out = match order {
        MorphOrder::ErodeDilate => dilate(&erode(mask.grid(), &kernel), &kernel),
        MorphOrder::DilateErode => erode(&dilate(mask.grid(), &kernel), &kernel),
    };
    MaskPano::new(out).expect("morphology preserves binary masks")
}
