//! Equirectangular image containers with channel-layout invariants.

use crate::error::{Error, Result};
use crate::grid::Grid;

fn check_pano_dims(width: usize, height: usize) -> Result<()> {
    if width != 2 * height || height == 0 {
        return Err(Error::contract(format!(
            "equirect panorama must satisfy W = 2H, got {width}x{height}"
        )));
    }
    Ok(())
}

/// 8-bit RGB panorama.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbPano(Grid<[u8; 3]>);

impl RgbPano {
    pub fn new(grid: Grid<[u8; 3]>) -> Result<Self> {
        check_pano_dims(grid.width(), grid.height())?;
        Ok(RgbPano(grid))
    }

    pub fn grid(&self) -> &Grid<[u8; 3]> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }
}

/// 32-bit scalar panorama (distance maps and other scalar fields).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPano(Grid<f32>);

impl ScalarPano {
    pub fn new(grid: Grid<f32>) -> Result<Self> {
        check_pano_dims(grid.width(), grid.height())?;
        if grid.data().iter().any(|s| !s.is_finite()) {
            return Err(Error::contract("scalar panorama contains non-finite samples"));
        }
        Ok(ScalarPano(grid))
    }

    /// Distance maps additionally require strictly positive samples.
    pub fn new_distance(grid: Grid<f32>) -> Result<Self> {
        if let Some(bad) = grid.data().iter().find(|s| !(**s > 0.0)) {
            return Err(Error::contract(format!(
                "distance map contains non-positive sample {bad}"
            )));
        }
        Self::new(grid)
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }
}

/// Binary mask panorama; samples are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPano(Grid<u8>);

impl MaskPano {
    pub fn new(grid: Grid<u8>) -> Result<Self> {
        check_pano_dims(grid.width(), grid.height())?;
        if grid.data().iter().any(|&s| s > 1) {
            return Err(Error::contract("mask samples must be 0 or 1"));
        }
        Ok(MaskPano(grid))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn coverage(&self) -> f64 {
        let ones: usize = self.0.data().iter().map(|&m| m as usize).sum();
        ones as f64 / self.0.data().len() as f64
    }
}

/// A panorama in one of the supported channel layouts.
#[derive(Debug, Clone, PartialEq)]
pub enum EquirectImage {
    Rgb(RgbPano),
    Scalar(ScalarPano),
    Mask(MaskPano),
}

impl EquirectImage {
    pub fn width(&self) -> usize {
        match self {
            EquirectImage::Rgb(p) => p.width(),
            EquirectImage::Scalar(p) => p.width(),
            EquirectImage::Mask(p) => p.width(),
        }
    }

    pub fn height(&self) -> usize {
        match self {
            EquirectImage::Rgb(p) => p.height(),
            EquirectImage::Scalar(p) => p.height(),
            EquirectImage::Mask(p) => p.height(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aspect_ratio_enforced() {
        assert!(RgbPano::new(Grid::filled(8, 4, [0, 0, 0])).is_ok());
        assert!(RgbPano::new(Grid::filled(8, 5, [0, 0, 0])).is_err());
    }

    #[test]
    fn mask_values_checked() {
        assert!(MaskPano::new(Grid::filled(8, 4, 1)).is_ok());
        assert!(MaskPano::new(Grid::filled(8, 4, 2)).is_err());
    }

    #[test]
    fn distance_positivity_checked() {
        assert!(ScalarPano::new_distance(Grid::filled(8, 4, 1.0)).is_ok());
        assert!(ScalarPano::new_distance(Grid::filled(8, 4, 0.0)).is_err());
        assert!(ScalarPano::new(Grid::filled(8, 4, f32::NAN)).is_err());
    }
}
