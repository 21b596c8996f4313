//! Motion-conditioned inpainting data synthesis on analytic scenes.
//!
//! Collision-free piecewise-linear trajectories are sampled in the free
//! volume; each recording point captures six cardinal 90-degree RGBD
//! views (the cube rig) that stitch into an equirect panorama. Frames
//! with more than 2% invalid pixels are discarded (strict >). Training
//! pairs reproject a mesh proxy of a source frame into its nearest
//! neighbors' poses, yielding (partial panorama, mask, relative motion,
//! target panorama) tuples.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mesh::{unproject_and_triangulate_masked, DEFAULT_EDGE_THRESHOLD};
use crate::motion::RelativeMotion;
use crate::pano::{
    cubemap_to_equirect, CameraPose, CubeMap, EquirectImage, MaskPano, RgbPano, ScalarPano,
    FACE_AXES,
};
use crate::render::render_panorama;
use crate::scene::{capture_perspective, SyntheticScene};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Capture/pairing configuration (desk-scale defaults; the reference
/// pipeline used 30 trajectories x 50 points per scene).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Panorama height (width is twice this).
    pub pano_height: usize,
    /// Cube-rig face resolution.
    pub face_res: usize,
    /// Minimum clearance of trajectory waypoints from scene surfaces.
    pub clearance: f64,
    /// Frames with invalid fraction strictly above this are discarded.
    pub invalid_threshold: f64,
    /// Neighbors per anchor frame.
    pub neighbors: usize,
    /// Pairs whose partial render covers less than this are dropped.
    pub min_coverage: f64,
    pub edge_threshold: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            pano_height: 128,
            face_res: 128,
            clearance: 0.25,
            invalid_threshold: 0.02,
            neighbors: 6,
            min_coverage: 0.05,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
        }
    }
}

/// One stitched RGBD capture.
#[derive(Debug, Clone)]
pub struct CaptureFrame {
    pub trajectory: usize,
    pub index: usize,
    pub pose: CameraPose,
    pub rgb: RgbPano,
    pub dist: ScalarPano,
    pub valid: MaskPano,
    pub invalid_fraction: f64,
}

/// Strict-> filter semantics: a frame at exactly the threshold is kept.
#[inline]
pub fn passes_invalid_filter(invalid_fraction: f64, threshold: f64) -> bool {
    !(invalid_fraction > threshold)
}

/// Rotation whose camera axes match cube face `k` of [`FACE_AXES`].
fn face_rotation(face: usize) -> Rotation3<f64> {
    let (f, r, u) = FACE_AXES[face];
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
        Vector3::from_column_slice(&f),
        Vector3::from_column_slice(&u),
        Vector3::from_column_slice(&r),
    ]))
}

/// Captures one cube-rig frame at `position` and stitches it into an
/// equirect panorama. Distances at invalid pixels hold a positive
/// placeholder and are masked out downstream.
pub fn capture_frame(
    scene: &SyntheticScene,
    position: Vector3<f64>,
    config: &DatasetConfig,
) -> Result<CaptureFrame> {
    let mut rgb_faces = Vec::with_capacity(6);
    let mut dist_faces = Vec::with_capacity(6);
    let mut valid_faces = Vec::with_capacity(6);
    for face in 0..6 {
        let pose = CameraPose { position, rotation: face_rotation(face) };
        let cap = capture_perspective(scene, &pose, 90.0, config.face_res);
        rgb_faces.push(cap.rgb);
        dist_faces.push(cap.dist);
        valid_faces.push(cap.valid);
    }
    let to6 = |v: Vec<Grid<f32>>| -> [Grid<f32>; 6] { v.try_into().expect("six faces") };
    let rgb = match cubemap_to_equirect(
        &CubeMap::Rgb(rgb_faces.try_into().expect("six faces")),
        config.pano_height,
    )? {
        EquirectImage::Rgb(p) => p,
        _ => unreachable!(),
    };
    let dist = match cubemap_to_equirect(&CubeMap::Scalar(to6(dist_faces)), config.pano_height)? {
        EquirectImage::Scalar(p) => p,
        _ => unreachable!(),
    };
    let valid = match cubemap_to_equirect(
        &CubeMap::Mask(valid_faces.try_into().expect("six faces")),
        config.pano_height,
    )? {
        EquirectImage::Mask(p) => p,
        _ => unreachable!(),
    };
    let invalid_fraction = 1.0 - valid.coverage();
    Ok(CaptureFrame {
        trajectory: 0,
        index: 0,
        pose: CameraPose { position, rotation: Rotation3::identity() },
        rgb,
        dist,
        valid,
        invalid_fraction,
    })
}

fn sample_free_point(
    scene: &SyntheticScene,
    clearance: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vector3<f64>> {
    let lo = scene.room.min;
    let ext = scene.room.extent();
    for _ in 0..10_000 {
        let p = Vector3::new(
            lo.x + rng.gen::<f64>() * ext.x,
            lo.y + rng.gen::<f64>() * ext.y,
            lo.z + rng.gen::<f64>() * ext.z,
        );
        if scene.clearance(&p) >= clearance {
            return Ok(p);
        }
    }
    Err(Error::Planning("scene has no free volume at the requested clearance".to_string()))
}

fn segment_clear(scene: &SyntheticScene, a: &Vector3<f64>, b: &Vector3<f64>, clearance: f64) -> bool {
    let steps = 16;
    (0..=steps).all(|i| {
        let t = i as f64 / steps as f64;
        scene.clearance(&(a + (b - a) * t)) >= clearance
    })
}

/// Samples collision-free piecewise-linear trajectories and captures a
/// cube-rig frame at every recording point, dropping frames whose invalid
/// fraction exceeds the threshold (strict >).
pub fn build_dataset(
    scene: &SyntheticScene,
    n_traj: usize,
    n_points: usize,
    seed: u64,
    config: &DatasetConfig,
) -> Result<Vec<CaptureFrame>> {
    if n_traj == 0 || n_points == 0 {
        return Err(Error::contract("n_traj and n_points must be positive"));
    }
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::new();
    for traj in 0..n_traj {
        let mut current = sample_free_point(scene, config.clearance, &mut rng)?;
        let mut points = vec![current];
        while points.len() < n_points {
            // Greedy next waypoint: first clear candidate.
            let mut accepted = None;
            for _ in 0..200 {
                let cand = sample_free_point(scene, config.clearance, &mut rng)?;
                if segment_clear(scene, &current, &cand, config.clearance) {
                    accepted = Some(cand);
                    break;
                }
            }
            let next = accepted.ok_or_else(|| {
                Error::Planning("could not connect a collision-free trajectory segment".to_string())
            })?;
            points.push(next);
            current = next;
        }
        for (index, p) in points.into_iter().enumerate() {
            let mut frame = capture_frame(scene, p, config)?;
            frame.trajectory = traj;
            frame.index = index;
            if passes_invalid_filter(frame.invalid_fraction, config.invalid_threshold) {
                frames.push(frame);
            } else {
                log::info!(
                    "dropping frame {traj}/{index}: invalid fraction {:.4}",
                    frame.invalid_fraction
                );
            }
        }
    }
    Ok(frames)
}

/// One training tuple: partial render, disocclusion mask, normalized
/// relative motion and the ground-truth target panorama.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub source: usize,
    pub target: usize,
    pub i_r: RgbPano,
    pub mask: MaskPano,
    pub motion: RelativeMotion,
    pub i_t: RgbPano,
}

impl TrainingPair {
    /// mask AND valid = 0 and mask OR valid = 1 everywhere, where valid
    /// is the render validity (mask is its exact complement).
    pub fn coverage(&self) -> f64 {
        1.0 - self.mask.coverage()
    }
}

/// Builds training pairs: per anchor (target) frame, its `neighbors`
/// nearest same-trajectory frames act as sources; each source is meshed
/// and reprojected to the anchor pose.
pub fn make_pairs(
    frames: &[CaptureFrame],
    vertical_extent: f64,
    config: &DatasetConfig,
) -> Result<Vec<TrainingPair>> {
    if frames.len() < 2 {
        return Err(Error::contract("make_pairs needs at least two frames"));
    }
    let mut pairs = Vec::new();
    for (ti, target) in frames.iter().enumerate() {
        let mut candidates: Vec<(usize, f64)> = frames
            .iter()
            .enumerate()
            .filter(|(si, s)| *si != ti && s.trajectory == target.trajectory)
            .map(|(si, s)| (si, (s.pose.position - target.pose.position).norm()))
            .collect();
        candidates.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        for (si, _) in candidates.into_iter().take(config.neighbors) {
            let source = &frames[si];
            let mesh = unproject_and_triangulate_masked(
                &source.rgb,
                &source.dist,
                Some(&source.valid),
                config.edge_threshold,
            )?;
            // Render in the source-local frame at the relative pose.
            let relative = source.pose.relative_to(&target.pose);
            let render = render_panorama(
                &mesh,
                &relative,
                source.rgb.width(),
                source.rgb.height(),
            )?;
            let coverage = render.valid.coverage();
            if coverage < config.min_coverage {
                log::warn!(
                    "dropping pair {} -> {}: coverage {coverage:.3} below {}",
                    si,
                    ti,
                    config.min_coverage
                );
                continue;
            }
            let motion = RelativeMotion::between(&source.pose, &target.pose, vertical_extent)?;
            let mask = render.disocclusion_mask();
            pairs.push(TrainingPair {
                source: si,
                target: ti,
                i_r: render.rgb,
                mask,
                motion,
                i_t: target.rgb.clone(),
            });
        }
    }
    Ok(pairs)
}

/// Serialized dataset layout: a manifest plus per-frame and per-pair
/// raster/grid files, written with deterministic ordering and content.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub vertical_extent: f64,
    pub frames: Vec<FrameRecord>,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameRecord {
    pub trajectory: usize,
    pub index: usize,
    pub position: [f64; 3],
    pub invalid_fraction: f64,
    pub rgb: String,
    pub dist: String,
    pub valid: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairRecord {
    pub source: usize,
    pub target: usize,
    pub i_r: String,
    pub mask: String,
    pub i_t: String,
    pub translation: [f64; 3],
    pub rotation_6d: [f64; 6],
}

/// Writes frames, pairs and the manifest under `dir`. Returns the
/// manifest path. Identical inputs produce byte-identical trees.
pub fn write_dataset(
    dir: &Path,
    frames: &[CaptureFrame],
    pairs: &[TrainingPair],
    seed: u64,
    vertical_extent: f64,
) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = DatasetManifest {
        seed,
        vertical_extent,
        frames: Vec::with_capacity(frames.len()),
        pairs: Vec::with_capacity(pairs.len()),
    };
    for (i, f) in frames.iter().enumerate() {
        let rgb = format!("frame_{i:04}_rgb.png");
        let dist = format!("frame_{i:04}_dist.fgrid");
        let valid = format!("frame_{i:04}_valid.png");
        crate::io::save_rgb_png(&dir.join(&rgb), &f.rgb)?;
        crate::io::write_float_grid(&dir.join(&dist), &[f.dist.grid()])?;
        crate::io::save_mask_png(&dir.join(&valid), &f.valid)?;
        manifest.frames.push(FrameRecord {
            trajectory: f.trajectory,
            index: f.index,
            position: [f.pose.position.x, f.pose.position.y, f.pose.position.z],
            invalid_fraction: f.invalid_fraction,
            rgb,
            dist,
            valid,
        });
    }
    for (i, p) in pairs.iter().enumerate() {
        let i_r = format!("pair_{i:04}_ir.png");
        let mask = format!("pair_{i:04}_mask.png");
        let i_t = format!("pair_{i:04}_it.png");
        crate::io::save_rgb_png(&dir.join(&i_r), &p.i_r)?;
        crate::io::save_mask_png(&dir.join(&mask), &p.mask)?;
        crate::io::save_rgb_png(&dir.join(&i_t), &p.i_t)?;
        let m = p.motion.rotation.matrix();
        manifest.pairs.push(PairRecord {
            source: p.source,
            target: p.target,
            i_r,
            mask,
            i_t,
            translation: [p.motion.translation.x, p.motion.translation.y, p.motion.translation.z],
            rotation_6d: [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]],
        });
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
