//! Pluggable inpainting hook.
//!
//! The diffusion inpainter is an external component; the pipeline only
//! needs something that completes masked panorama pixels and predicts a
//! dense depth map. The bundled oracle fills from the analytic scene
//! (exact, used by tests and synthetic runs); the flagging stub marks
//! masked pixels and reuses rendered depth; the command hook shells out
//! to a user-provided program.

use roam_core::error::{Error, Result};
use roam_core::grid::Grid;
use roam_core::pano::{pixel_to_direction, CameraPose, MaskPano, RgbPano, ScalarPano};
use roam_core::render::PanoRender;
use roam_core::scene::SyntheticScene;
use std::path::PathBuf;
use std::process::Command;

/// Completed panorama: full RGB plus a dense predicted distance map.
pub struct Completion {
    pub rgb: RgbPano,
    pub dist: ScalarPano,
}

pub trait InpaintHook {
    fn complete(
        &self,
        render: &PanoRender,
        mask: &MaskPano,
        pose: &CameraPose,
        text: &str,
    ) -> Result<Completion>;
}

/// Fills masked pixels from the analytic scene and predicts the exact
/// scene depth everywhere (a perfect inpainter + depth estimator).
pub struct OracleInpainter<'a> {
    pub scene: &'a SyntheticScene,
}

impl InpaintHook for OracleInpainter<'_> {
    fn complete(
        &self,
        render: &PanoRender,
        mask: &MaskPano,
        pose: &CameraPose,
        _text: &str,
    ) -> Result<Completion> {
        let (w, h) = (render.rgb.width(), render.rgb.height());
        let mut rgb = render.rgb.grid().clone();
        let mut dist = Grid::filled(w, h, 1.0f32);
        for v in 0..h {
            for u in 0..w {
                let d = pixel_to_direction(u as f64, v as f64, w, h)?;
                let dir = pose.rotation * d.into_inner();
                match self.scene.raycast(&pose.position, &dir) {
                    Some(hit) => {
                        dist.set(u, v, hit.t as f32);
                        if mask.grid().get(u, v) == 1 {
                            rgb.set(u, v, hit.color);
                        }
                    }
                    None => {
                        // Open scene: keep the placeholder depth; the pixel
                        // stays masked content-wise.
                        if mask.grid().get(u, v) == 1 {
                            rgb.set(u, v, [0, 0, 0]);
                        }
                    }
                }
            }
        }
        Ok(Completion { rgb: RgbPano::new(rgb)?, dist: ScalarPano::new(dist)? })
    }
}

/// Leaves masked pixels flagged magenta and reuses the rendered depth;
/// keeps the pipeline runnable on real inputs with no model attached.
pub struct FlaggingInpainter;

impl InpaintHook for FlaggingInpainter {
    fn complete(
        &self,
        render: &PanoRender,
        mask: &MaskPano,
        _pose: &CameraPose,
        _text: &str,
    ) -> Result<Completion> {
        let mut rgb = render.rgb.grid().clone();
        for v in 0..rgb.height() {
            for u in 0..rgb.width() {
                if mask.grid().get(u, v) == 1 {
                    rgb.set(u, v, [255, 0, 255]);
                }
            }
        }
        Ok(Completion { rgb: RgbPano::new(rgb)?, dist: render.dist.clone() })
    }
}

/// Shells out to an external inpainting command. The command is invoked
/// as `cmd <i_r.png> <mask.png> <text.txt> <out_rgb.png> <out_dist.fgrid>`
/// inside a scratch directory and must write both outputs.
pub struct CommandInpainter {
    pub command: PathBuf,
}

impl InpaintHook for CommandInpainter {
    fn complete(
        &self,
        render: &PanoRender,
        mask: &MaskPano,
        _pose: &CameraPose,
        text: &str,
    ) -> Result<Completion> {
        let dir = tempfile::tempdir()?;
        let i_r = dir.path().join("i_r.png");
        let m = dir.path().join("mask.png");
        let t = dir.path().join("text.txt");
        let out_rgb = dir.path().join("out_rgb.png");
        let out_dist = dir.path().join("out_dist.fgrid");
        roam_core::io::save_rgb_png(&i_r, &render.rgb)?;
        roam_core::io::save_mask_png(&m, mask)?;
        std::fs::write(&t, text)?;
        roam_core::io::write_float_grid(&out_dist, &[render.dist.grid()])?;
        let status = Command::new(&self.command)
            .args([&i_r, &m, &t, &out_rgb, &out_dist])
            .status()
            .map_err(|e| Error::Transport(format!("inpaint command: {e}")))?;
        if !status.success() {
            return Err(Error::Transport(format!("inpaint command exited with {status}")));
        }
        let rgb = roam_core::io::load_rgb_png(&out_rgb)?;
        let grids = roam_core::io::read_float_grid(&out_dist)?;
        let dist = ScalarPano::new(grids.into_iter().next().ok_or_else(|| {
            Error::parse("inpaint command wrote an empty distance grid")
        })?)?;
        Ok(Completion { rgb, dist })
    }
}
