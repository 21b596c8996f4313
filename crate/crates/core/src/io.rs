//! File formats: float grids, rasters, ASCII PLY meshes, parameter blobs
//! and pose records.
//!
//! Float grids are little-endian, row-major, channel-interleaved f32 with
//! a 16-byte header (magic "RKFG", u32 width, u32 height, u32 channels).
//! Parameter blobs are a single JSON header line followed by raw
//! little-endian f64 data.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mesh::{Provenance, SceneMesh};
use crate::pano::{CameraPose, MaskPano, RgbPano};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const FGRID_MAGIC: &[u8; 4] = b"RKFG";

/// Writes interleaved float channels of equal dimensions.
pub fn write_float_grid(path: &Path, channels: &[&Grid<f32>]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::contract("float grid needs at least one channel"));
    }
    let (w, h) = (channels[0].width(), channels[0].height());
    if channels.iter().any(|c| c.width() != w || c.height() != h) {
        return Err(Error::contract("float grid channels must share dimensions"));
    }
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    f.write_all(FGRID_MAGIC)?;
    f.write_all(&(w as u32).to_le_bytes())?;
    f.write_all(&(h as u32).to_le_bytes())?;
    f.write_all(&(channels.len() as u32).to_le_bytes())?;
    for i in 0..w * h {
        for c in channels {
            f.write_all(&c.data()[i].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a float grid back as one grid per channel.
pub fn read_float_grid(path: &Path) -> Result<Vec<Grid<f32>>> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; 16];
    f.read_exact(&mut header)?;
    if &header[0..4] != FGRID_MAGIC {
        return Err(Error::parse(format!("{}: bad float-grid magic", path.display())));
    }
    let w = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if w == 0 || h == 0 || c == 0 || c > 16 {
        return Err(Error::parse(format!("{}: implausible float-grid header", path.display())));
    }
    let mut raw = vec![0u8; w * h * c * 4];
    f.read_exact(&mut raw)?;
    let mut out: Vec<Vec<f32>> = vec![Vec::with_capacity(w * h); c];
    for i in 0..w * h {
        for (ch, chan) in out.iter_mut().enumerate() {
            let o = (i * c + ch) * 4;
            chan.push(f32::from_le_bytes(raw[o..o + 4].try_into().unwrap()));
        }
    }
    Ok(out.into_iter().map(|d| Grid::from_vec(w, h, d)).collect())
}

pub fn save_rgb_png(path: &Path, pano: &RgbPano) -> Result<()> {
    let (w, h) = (pano.width(), pano.height());
    let mut buf = Vec::with_capacity(w * h * 3);
    for px in pano.grid().data() {
        buf.extend_from_slice(px);
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .expect("raw buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

pub fn load_rgb_png(path: &Path) -> Result<RgbPano> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    RgbPano::new(Grid::from_vec(w, h, data))
}

/// Masks are stored as 8-bit grayscale with 0/255 levels.
pub fn save_mask_png(path: &Path, mask: &MaskPano) -> Result<()> {
    let (w, h) = (mask.width(), mask.height());
    let buf: Vec<u8> = mask.grid().data().iter().map(|&m| m * 255).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf)
        .expect("raw buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<MaskPano> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u8> = img.pixels().map(|p| (p.0[0] > 127) as u8).collect();
    MaskPano::new(Grid::from_vec(w, h, data))
}

/// Label maps are 16-bit grayscale (object ids up to 65535).
pub fn save_labels_png(path: &Path, labels: &Grid<u32>) -> Result<()> {
    let (w, h) = (labels.width(), labels.height());
    let data: Vec<u16> = labels.data().iter().map(|&l| l.min(u16::MAX as u32) as u16).collect();
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(w as u32, h as u32, data)
        .expect("raw buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

pub fn load_labels_png(path: &Path) -> Result<Grid<u32>> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u32> = img.pixels().map(|p| p.0[0] as u32).collect();
    Ok(Grid::from_vec(w, h, data))
}

/// ASCII PLY export with per-vertex colors.
pub fn write_mesh_ply(path: &Path, mesh: &SceneMesh) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "ply")?;
    writeln!(f, "format ascii 1.0")?;
    writeln!(f, "element vertex {}", mesh.vertices.len())?;
    for p in ["x", "y", "z"] {
        writeln!(f, "property double {p}")?;
    }
    for p in ["red", "green", "blue"] {
        writeln!(f, "property uchar {p}")?;
    }
    writeln!(f, "element face {}", mesh.faces.len())?;
    writeln!(f, "property list uchar uint vertex_indices")?;
    writeln!(f, "end_header")?;
    for (v, c) in mesh.vertices.iter().zip(mesh.colors.iter()) {
        writeln!(f, "{} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2])?;
    }
    for face in &mesh.faces {
        writeln!(f, "3 {} {} {}", face[0], face[1], face[2])?;
    }
    Ok(())
}

/// Reads the subset of ASCII PLY written by [`write_mesh_ply`].
/// Provenance is not stored in the file; imported vertices carry their
/// own pixel-less provenance record.
pub fn read_mesh_ply(path: &Path) -> Result<SceneMesh> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut header_ok = false;
    for line in lines.by_ref() {
        let line = line?;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("element vertex ") {
            n_vertices = rest
                .parse()
                .map_err(|_| Error::parse(format!("bad vertex count '{rest}'")))?;
        } else if let Some(rest) = line.strip_prefix("element face ") {
            n_faces = rest.parse().map_err(|_| Error::parse(format!("bad face count '{rest}'")))?;
        } else if line == "end_header" {
            header_ok = true;
            break;
        }
    }
    if !header_ok {
        return Err(Error::parse(format!("{}: missing end_header", path.display())));
    }
    let mut mesh = SceneMesh::default();
    for i in 0..n_vertices {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(format!("vertex {i}: unexpected end of file")))??;
        let mut it = line.split_whitespace();
        let mut take = |name: &str| -> Result<f64> {
            it.next()
                .ok_or_else(|| Error::parse(format!("vertex {i}: missing {name}")))?
                .parse::<f64>()
                .map_err(|_| Error::parse(format!("vertex {i}: bad {name}")))
        };
        let (x, y, z) = (take("x")?, take("y")?, take("z")?);
        let (r, g, b) = (take("red")? as u8, take("green")? as u8, take("blue")? as u8);
        mesh.vertices.push(Vector3::new(x, y, z));
        mesh.colors.push([r, g, b]);
        mesh.provenance.push(Provenance { source: 0, pixel: (0, 0) });
    }
    for i in 0..n_faces {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(format!("face {i}: unexpected end of file")))??;
        let nums: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| Error::parse(format!("face {i}: bad index"))))
            .collect::<Result<_>>()?;
        if nums.len() != 4 || nums[0] != 3 {
            return Err(Error::parse(format!("face {i}: expected '3 a b c'")));
        }
        mesh.faces.push([nums[1], nums[2], nums[3]]);
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Writes a parameter blob: one JSON header line, then raw f64 LE data.
pub fn write_blob(path: &Path, header: &serde_json::Value, data: &[f64]) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut f, header)?;
    f.write_all(b"\n")?;
    for x in data {
        f.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_blob(path: &Path) -> Result<(serde_json::Value, Vec<f64>)> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    f.read_line(&mut line)?;
    let header: serde_json::Value = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::parse(format!("{}: blob header: {e}", path.display())))?;
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(Error::parse(format!("{}: blob data not f64-aligned", path.display())));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

/// Serializable camera pose (row-major rotation).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseRecord {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

impl From<&CameraPose> for PoseRecord {
    fn from(p: &CameraPose) -> Self {
        let m = p.rotation.matrix();
        PoseRecord {
            position: [p.position.x, p.position.y, p.position.z],
            rotation: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<CameraPose> {
        let m = Matrix3::from_fn(|r, c| self.rotation[r][c]);
        CameraPose::from_matrix(Vector3::from_column_slice(&self.position), m)
    }
}

pub fn save_pose(path: &Path, pose: &CameraPose) -> Result<()> {
    let rec: PoseRecord = pose.into();
    std::fs::write(path, serde_json::to_string_pretty(&rec)?)?;
    Ok(())
}

pub fn load_pose(path: &Path) -> Result<CameraPose> {
    let rec: PoseRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    rec.to_pose()
}
