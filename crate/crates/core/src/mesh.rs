//! Scene mesh construction, depth alignment and observation fusion.
//!
//! Panoramas unproject into colored point grids that inherit the pixel
//! connectivity as triangles; edges with a sharp relative depth gradient
//! are pruned so structural boundaries do not become stretched polygons.
//! New observations fuse against the existing surface through a ray-cast
//! consistency check: candidates noticeably in front of the surface
//! conflict and are dropped, candidates on the surface are duplicates,
//! and the rest extend the mesh.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::pano::{pixel_to_direction, CameraPose, MaskPano, RgbPano, ScalarPano};
use crate::raycast::{Bvh, Ray};
use nalgebra::Vector3;

/// Default relative depth-gradient threshold for edge pruning.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.05;

/// Default fusion conflict tolerance, relative to the existing surface
/// distance along the candidate's ray.
pub const DEFAULT_FUSE_TOL: f64 = 0.02;

/// Per-vertex provenance: source panorama id plus pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub source: u32,
    pub pixel: (u32, u32),
}

/// Colored triangle mesh with per-vertex provenance.
#[derive(Debug, Clone, Default)]
pub struct SceneMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub provenance: Vec<Provenance>,
    next_source: u32,
}

impl SceneMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_area(&self, f: &[u32; 3]) -> f64 {
        let a = self.vertices[f[0] as usize];
        let b = self.vertices[f[1] as usize];
        let c = self.vertices[f[2] as usize];
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    /// Checks the structural invariants: in-range indices, finite
    /// coordinates, no degenerate faces.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if self.colors.len() != self.vertices.len() || self.provenance.len() != self.vertices.len() {
            return Err(Error::contract("vertex attribute arrays out of sync"));
        }
        for v in &self.vertices {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::contract("non-finite vertex coordinate"));
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::contract("face index out of range"));
            }
            if self.face_area(f) < 1e-12 {
                return Err(Error::contract("degenerate face"));
            }
        }
        Ok(())
    }

    pub fn build_bvh(&self) -> Bvh {
        Bvh::build(&self.vertices, &self.faces)
    }
}

/// Whether the edge between depth samples is kept (relative gradient
/// within threshold). Unit-free by construction.
#[inline]
fn edge_kept(r_i: f64, r_j: f64, threshold: f64) -> bool {
    (r_i - r_j).abs() / r_i.min(r_j) <= threshold
}

/// Grid faces over kept pixels, seam column wrapped. A face survives when
/// all three vertices are kept and none of its edges is pruned.
fn grid_faces(
    dist: &Grid<f32>,
    keep: impl Fn(usize, usize) -> bool,
    threshold: f64,
) -> Vec<[u32; 3]> {
    let (w, h) = (dist.width(), dist.height());
    let idx = |u: usize, v: usize| (v * w + u) as u32;
    let mut faces = Vec::new();
    let mut emit = |a: (usize, usize), b: (usize, usize), c: (usize, usize)| {
        if !(keep(a.0, a.1) && keep(b.0, b.1) && keep(c.0, c.1)) {
            return;
        }
        let ra = dist.get(a.0, a.1) as f64;
        let rb = dist.get(b.0, b.1) as f64;
        let rc = dist.get(c.0, c.1) as f64;
        if edge_kept(ra, rb, threshold) && edge_kept(rb, rc, threshold) && edge_kept(ra, rc, threshold)
        {
            faces.push([idx(a.0, a.1), idx(b.0, b.1), idx(c.0, c.1)]);
        }
    };
    for v in 0..h - 1 {
        for u in 0..w {
            let u1 = (u + 1) % w;
            emit((u, v), (u, v + 1), (u1, v));
            emit((u1, v), (u, v + 1), (u1, v + 1));
        }
    }
    faces
}

/// Unprojects an RGBD panorama into a triangulated scene mesh at the
/// origin. `dist` must be strictly positive; edges whose relative depth
/// gradient exceeds `edge_threshold` are pruned along with their faces.
pub fn unproject_and_triangulate(
    rgb: &RgbPano,
    dist: &ScalarPano,
    edge_threshold: f64,
) -> Result<SceneMesh> {
    unproject_and_triangulate_masked(rgb, dist, None, edge_threshold)
}

/// Masked variant: faces are restricted to pixels where `valid` is 1
/// (distance placeholders at invalid pixels must still be positive).
pub fn unproject_and_triangulate_masked(
    rgb: &RgbPano,
    dist: &ScalarPano,
    valid: Option<&MaskPano>,
    edge_threshold: f64,
) -> Result<SceneMesh> {
    if rgb.width() != dist.width() || rgb.height() != dist.height() {
        return Err(Error::contract(format!(
            "rgb {}x{} and distance {}x{} resolutions differ",
            rgb.width(),
            rgb.height(),
            dist.width(),
            dist.height()
        )));
    }
    if let Some(mask) = valid {
        if mask.width() != dist.width() {
            return Err(Error::contract("validity mask resolution differs"));
        }
    }
    if let Some(bad) = dist.grid().data().iter().find(|d| !(**d > 0.0)) {
        return Err(Error::contract(format!("non-positive distance sample {bad}")));
    }
    let (w, h) = (dist.width(), dist.height());
    let mut mesh = SceneMesh::default();
    mesh.vertices.reserve(w * h);
    for v in 0..h {
        for u in 0..w {
            let d = pixel_to_direction(u as f64, v as f64, w, h)?;
            let r = dist.grid().get(u, v) as f64;
            mesh.vertices.push(d.into_inner() * r);
            mesh.colors.push(rgb.grid().get(u, v));
            mesh.provenance.push(Provenance { source: 0, pixel: (u as u32, v as u32) });
        }
    }
    let keep = |u: usize, v: usize| valid.map_or(true, |m| m.grid().get(u, v) == 1);
    let mut faces = grid_faces(dist.grid(), keep, edge_threshold);
    faces.retain(|f| mesh.face_area(f) >= 1e-12);
    mesh.faces = faces;
    mesh.next_source = 1;
    Ok(mesh)
}

/// Closed-form scale/shift alignment of a predicted depth map against
/// reference depth on the known mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentSolution {
    pub scale: f64,
    pub shift: f64,
    /// Set when the least-squares system was rank-deficient (constant
    /// prediction) or produced a non-positive scale; the solution then
    /// falls back to scale 1 with a mean-residual shift.
    pub degenerate: bool,
}

/// Least-squares (s, t) minimizing sum over known pixels of
/// (s * pred + t - reference)^2.
pub fn align_depth(
    pred: &Grid<f32>,
    known: &Grid<u8>,
    reference: &Grid<f32>,
) -> Result<AlignmentSolution> {
    if pred.width() != known.width()
        || pred.height() != known.height()
        || pred.width() != reference.width()
        || pred.height() != reference.height()
    {
        return Err(Error::contract("align_depth inputs must share a resolution"));
    }
    let mut n = 0.0f64;
    let (mut sp, mut sr, mut spp, mut spr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for ((&p, &k), &r) in pred
        .data()
        .iter()
        .zip(known.data().iter())
        .zip(reference.data().iter())
    {
        if k == 0 {
            continue;
        }
        let (p, r) = (p as f64, r as f64);
        n += 1.0;
        sp += p;
        sr += r;
        spp += p * p;
        spr += p * r;
    }
    if n < 1.0 {
        return Err(Error::contract("align_depth requires at least one known pixel"));
    }
    let var = spp - sp * sp / n;
    let cov = spr - sp * sr / n;
    let mean_scale = (spp / n).max(1e-30);
    if n < 2.0 || var <= 1e-12 * mean_scale {
        return Ok(AlignmentSolution { scale: 1.0, shift: (sr - sp) / n, degenerate: true });
    }
    let scale = cov / var;
    if scale <= 0.0 {
        return Ok(AlignmentSolution { scale: 1.0, shift: (sr - sp) / n, degenerate: true });
    }
    let shift = (sr - scale * sp) / n;
    Ok(AlignmentSolution { scale, shift, degenerate: false })
}

/// How each fusion candidate was classified.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuseReport {
    pub candidates: usize,
    pub kept: usize,
    pub conflicts: usize,
    pub duplicates: usize,
}

/// A posed RGBD observation offered for fusion.
pub struct Observation<'a> {
    pub rgb: &'a RgbPano,
    pub dist: &'a ScalarPano,
    pub pose: CameraPose,
    /// Pixels with no prior geometry (1 = candidate for fusion).
    pub unobserved: &'a MaskPano,
}

/// Fuses a new observation into the mesh. Candidate points that lie closer
/// to the camera than the existing surface along their ray by more than
/// `tol` (relative) conflict and are discarded; points within `tol` of the
/// surface already exist and are skipped; the remainder is triangulated
/// over the mask with the same edge pruning and appended. Pre-existing
/// vertices are never moved or deleted.
pub fn fuse_observation(
    mesh: &SceneMesh,
    obs: &Observation,
    tol: f64,
    edge_threshold: f64,
) -> Result<(SceneMesh, FuseReport)> {
    let (w, h) = (obs.dist.width(), obs.dist.height());
    if obs.rgb.width() != w || obs.rgb.height() != h || obs.unobserved.width() != w {
        return Err(Error::contract("observation channel resolutions differ"));
    }
    let mut report = FuseReport::default();
    let mut out = mesh.clone();
    if obs.unobserved.grid().data().iter().all(|&m| m == 0) {
        return Ok((out, report));
    }
    let bvh = mesh.build_bvh();
    let mut keep = Grid::filled(w, h, 0u8);
    for v in 0..h {
        for u in 0..w {
            if obs.unobserved.grid().get(u, v) == 0 {
                continue;
            }
            report.candidates += 1;
            let d = pixel_to_direction(u as f64, v as f64, w, h)?;
            let dir = obs.pose.rotation * d.into_inner();
            let t_p = obs.dist.grid().get(u, v) as f64;
            if !(t_p > 0.0) {
                return Err(Error::contract(format!("non-positive distance at ({u}, {v})")));
            }
            match bvh.closest_hit(&Ray::new(obs.pose.position, dir), 1e-9) {
                None => {
                    keep.set(u, v, 1);
                    report.kept += 1;
                }
                Some(hit) => {
                    if t_p < (1.0 - tol) * hit.t {
                        report.conflicts += 1;
                    } else if t_p <= (1.0 + tol) * hit.t {
                        report.duplicates += 1;
                    } else {
                        keep.set(u, v, 1);
                        report.kept += 1;
                    }
                }
            }
        }
    }

    // Triangulate the kept subgrid, then remap indices onto appended
    // vertices.
    let faces = grid_faces(obs.dist.grid(), |u, v| keep.get(u, v) == 1, edge_threshold);
    let mut remap = vec![u32::MAX; w * h];
    let base = out.vertices.len() as u32;
    let source = out.next_source;
    let mut appended = 0u32;
    for v in 0..h {
        for u in 0..w {
            if keep.get(u, v) == 1 {
                let d = pixel_to_direction(u as f64, v as f64, w, h)?;
                let world =
                    obs.pose.position + obs.pose.rotation * (d.into_inner() * obs.dist.grid().get(u, v) as f64);
                remap[v * w + u] = base + appended;
                out.vertices.push(world);
                out.colors.push(obs.rgb.grid().get(u, v));
                out.provenance.push(Provenance { source, pixel: (u as u32, v as u32) });
                appended += 1;
            }
        }
    }
    for f in &faces {
        let mapped = [remap[f[0] as usize], remap[f[1] as usize], remap[f[2] as usize]];
        debug_assert!(mapped.iter().all(|&i| i != u32::MAX));
        let tri = [mapped[0], mapped[1], mapped[2]];
        let area = {
            let a = out.vertices[tri[0] as usize];
            let b = out.vertices[tri[1] as usize];
            let c = out.vertices[tri[2] as usize];
            (b - a).cross(&(c - a)).norm() * 0.5
        };
        if area >= 1e-12 {
            out.faces.push(tri);
        }
    }
    out.next_source = source + 1;
    Ok((out, report))
}
