//! Multi-resolution feature lattice and MLP head of the distance field.
//!
//! Parameters live in one flat vector: per-level node features (2 per
//! node) followed by the MLP weights. The azimuth axis of every level is
//! periodic; the polar axis clamps. Forward evaluation caches everything
//! the hand-written backward pass needs.

use super::SphereField;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::pano::{azimuth_of, ScalarPano};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub(crate) const MAX_LEVELS: usize = 8;
pub(crate) const HIDDEN: usize = 32;
pub(crate) const FEATS: usize = 2;

/// Lattice/MLP hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldConfig {
    /// Number of lattice levels (at most 8).
    pub levels: usize,
    /// Polar resolution of the coarsest level.
    pub base_res: usize,
    /// Polar resolution of the finest level.
    pub max_res: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { levels: 8, base_res: 16, max_res: 512 }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return Err(Error::contract(format!("levels must be in 1..=8, got {}", self.levels)));
        }
        if self.base_res < 2 || self.max_res < self.base_res {
            return Err(Error::contract("lattice resolutions must satisfy 2 <= base <= max"));
        }
        Ok(())
    }

    /// Polar resolution of level `l` (geometric progression).
    pub fn level_res(&self, l: usize) -> usize {
        if self.levels == 1 {
            return self.base_res;
        }
        let g = (self.max_res as f64 / self.base_res as f64)
            .powf(l as f64 / (self.levels - 1) as f64);
        (self.base_res as f64 * g).round() as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct LevelSpec {
    ny: usize,
    nx: usize,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub(crate) struct Layout {
    levels: Vec<LevelSpec>,
    in_dim: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    pub(crate) total: usize,
}

impl Layout {
    fn new(config: &FieldConfig) -> Self {
        let mut offset = 0usize;
        let mut levels = Vec::with_capacity(config.levels);
        for l in 0..config.levels {
            let ny = config.level_res(l).max(2);
            let nx = 2 * ny;
            levels.push(LevelSpec { ny, nx, offset });
            offset += ny * nx * FEATS;
        }
        let in_dim = config.levels * FEATS;
        let w1 = offset;
        let b1 = w1 + HIDDEN * in_dim;
        let w2 = b1 + HIDDEN;
        let b2 = w2 + HIDDEN * HIDDEN;
        let w3 = b2 + HIDDEN;
        let b3 = w3 + HIDDEN;
        Layout { levels, in_dim, w1, b1, w2, b2, w3, b3, total: b3 + 1 }
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn softplus_inv(y: f64) -> f64 {
    // x with softplus(x) = y, for y > 0.
    y + (-(-y).exp_m1()).ln()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct EvalCache {
    nodes: [[usize; 4]; MAX_LEVELS],
    weights: [[f64; 4]; MAX_LEVELS],
    z: [f64; MAX_LEVELS * FEATS],
    h1: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    a: f64,
    pub r: f64,
}

/// Gradient accumulator matching the flat parameter vector.
#[derive(Debug, Clone)]
pub struct FieldGrad(pub Vec<f64>);

impl FieldGrad {
    pub fn zeros(field: &SphereDistanceField) -> Self {
        FieldGrad(vec![0.0; field.params.len()])
    }

    pub fn add_assign(&mut self, other: &FieldGrad) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += b;
        }
    }
}

/// The fitted distance field.
#[derive(Debug, Clone)]
pub struct SphereDistanceField {
    pub config: FieldConfig,
    pub(crate) layout: Layout,
    pub params: Vec<f64>,
}

impl SphereDistanceField {
    /// Seeded initialization: small uniform lattice features, Xavier MLP,
    /// output bias chosen so the initial field is about 1 everywhere.
    pub fn init(config: &FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5df1_a0c3);
        let mut params = vec![0.0f64; layout.total];
        for spec in &layout.levels {
            for p in params[spec.offset..spec.offset + spec.ny * spec.nx * FEATS].iter_mut() {
                *p = rng.gen_range(-1e-4..1e-4);
            }
        }
        let xavier = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, out: &mut [f64]| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in out.iter_mut() {
                *p = rng.gen_range(-a..a);
            }
        };
        let (w1, b1, w2, b2, w3, b3) =
            (layout.w1, layout.b1, layout.w2, layout.b2, layout.w3, layout.b3);
        let in_dim = layout.in_dim;
        {
            let slice = &mut params[w1..b1];
            xavier(&mut rng, in_dim, HIDDEN, slice);
        }
        {
            let slice = &mut params[w2..b2];
            xavier(&mut rng, HIDDEN, HIDDEN, slice);
        }
        {
            let slice = &mut params[w3..b3];
            xavier(&mut rng, HIDDEN, 1, slice);
        }
        params[b3] = softplus_inv(1.0);
        Ok(SphereDistanceField { config: config.clone(), layout, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Chart coordinates: azimuth in [0,1), polar in [0,1].
    #[inline]
    fn chart(d: &Vector3<f64>) -> (f64, f64) {
        let x = azimuth_of(d) / std::f64::consts::TAU;
        let y = d.y.clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
        (x, y)
    }

    /// Forward evaluation with cached intermediates.
    pub fn forward(&self, d: &Vector3<f64>) -> EvalCache {
        let (x, y) = Self::chart(d);
        let mut cache = EvalCache {
            nodes: [[0; 4]; MAX_LEVELS],
            weights: [[0.0; 4]; MAX_LEVELS],
            z: [0.0; MAX_LEVELS * FEATS],
            h1: [0.0; HIDDEN],
            h2: [0.0; HIDDEN],
            a: 0.0,
            r: 0.0,
        };
        for (l, spec) in self.layout.levels.iter().enumerate() {
            let tx = x * spec.nx as f64;
            let jx0 = (tx.floor() as usize).min(spec.nx - 1);
            let wx = tx - tx.floor();
            let jx1 = (jx0 + 1) % spec.nx;
            let ty = (y * (spec.ny - 1) as f64).min((spec.ny - 1) as f64 - 1e-12).max(0.0);
            let jy0 = ty.floor() as usize;
            let wy = ty - jy0 as f64;
            let jy1 = jy0 + 1;
            let base = spec.offset;
            let n00 = base + (jy0 * spec.nx + jx0) * FEATS;
            let n01 = base + (jy0 * spec.nx + jx1) * FEATS;
            let n10 = base + (jy1 * spec.nx + jx0) * FEATS;
            let n11 = base + (jy1 * spec.nx + jx1) * FEATS;
            let w00 = (1.0 - wx) * (1.0 - wy);
            let w01 = wx * (1.0 - wy);
            let w10 = (1.0 - wx) * wy;
            let w11 = wx * wy;
            cache.nodes[l] = [n00, n01, n10, n11];
            cache.weights[l] = [w00, w01, w10, w11];
            for f in 0..FEATS {
                cache.z[l * FEATS + f] = w00 * self.params[n00 + f]
                    + w01 * self.params[n01 + f]
                    + w10 * self.params[n10 + f]
                    + w11 * self.params[n11 + f];
            }
        }
        let p = &self.params;
        let (w1, b1, w2, b2, w3, b3) = (
            self.layout.w1,
            self.layout.b1,
            self.layout.w2,
            self.layout.b2,
            self.layout.w3,
            self.layout.b3,
        );
        let in_dim = self.layout.in_dim;
        for j in 0..HIDDEN {
            let mut acc = p[b1 + j];
            let row = w1 + j * in_dim;
            for k in 0..in_dim {
                acc += p[row + k] * cache.z[k];
            }
            cache.h1[j] = acc.tanh();
        }
        for j in 0..HIDDEN {
            let mut acc = p[b2 + j];
            let row = w2 + j * HIDDEN;
            for k in 0..HIDDEN {
                acc += p[row + k] * cache.h1[k];
            }
            cache.h2[j] = acc.tanh();
        }
        let mut a = p[b3];
        for k in 0..HIDDEN {
            a += p[w3 + k] * cache.h2[k];
        }
        cache.a = a;
        cache.r = softplus(a);
        cache
    }

    /// Accumulates d(loss)/d(params) for `d_loss_d_r` at a cached forward.
    pub fn backward(&self, cache: &EvalCache, d_loss_d_r: f64, grad: &mut FieldGrad) {
        let g = &mut grad.0;
        let p = &self.params;
        let (w1, b1, w2, b2, w3, b3) = (
            self.layout.w1,
            self.layout.b1,
            self.layout.w2,
            self.layout.b2,
            self.layout.w3,
            self.layout.b3,
        );
        let in_dim = self.layout.in_dim;
        let da = d_loss_d_r * sigmoid(cache.a);
        g[b3] += da;
        let mut dh2 = [0.0f64; HIDDEN];
        for k in 0..HIDDEN {
            g[w3 + k] += da * cache.h2[k];
            dh2[k] = da * p[w3 + k];
        }
        let mut dh1 = [0.0f64; HIDDEN];
        for j in 0..HIDDEN {
            let dpre = dh2[j] * (1.0 - cache.h2[j] * cache.h2[j]);
            g[b2 + j] += dpre;
            let row = w2 + j * HIDDEN;
            for k in 0..HIDDEN {
                g[row + k] += dpre * cache.h1[k];
                dh1[k] += p[row + k] * dpre;
            }
        }
        let mut dz = [0.0f64; MAX_LEVELS * FEATS];
        for j in 0..HIDDEN {
            let dpre = dh1[j] * (1.0 - cache.h1[j] * cache.h1[j]);
            g[b1 + j] += dpre;
            let row = w1 + j * in_dim;
            for k in 0..in_dim {
                g[row + k] += dpre * cache.z[k];
                dz[k] += p[row + k] * dpre;
            }
        }
        for (l, _) in self.layout.levels.iter().enumerate() {
            for (ni, wi) in cache.nodes[l].iter().zip(cache.weights[l].iter()) {
                for f in 0..FEATS {
                    g[ni + f] += wi * dz[l * FEATS + f];
                }
            }
        }
    }

    /// Dense distance panorama of the field.
    pub fn to_distance_pano(&self, height: usize) -> Result<ScalarPano> {
        let width = 2 * height;
        let grid = Grid::from_fn(width, height, |u, v| {
            let d = crate::pano::pixel_to_direction(u as f64, v as f64, width, height)
                .expect("in-range pixel");
            self.eval(&d) as f32
        });
        ScalarPano::new_distance(grid)
    }

    /// Serializes config + parameters into a blob header/data pair.
    pub fn to_blob(&self) -> (serde_json::Value, &[f64]) {
        let header = serde_json::json!({
            "kind": "sphere_distance_field",
            "config": self.config,
            "params": self.params.len(),
        });
        (header, &self.params)
    }

    pub fn from_blob(header: &serde_json::Value, data: Vec<f64>) -> Result<Self> {
        if header["kind"] != "sphere_distance_field" {
            return Err(Error::parse("blob is not a sphere_distance_field"));
        }
        let config: FieldConfig = serde_json::from_value(header["config"].clone())
            .map_err(|e| Error::parse(format!("config: {e}")))?;
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total {
            return Err(Error::parse(format!(
                "parameter count {} does not match layout {}",
                data.len(),
                layout.total
            )));
        }
        Ok(SphereDistanceField { config, layout, params: data })
    }
}

impl SphereField for SphereDistanceField {
    fn eval(&self, d: &Vector3<f64>) -> f64 {
        self.forward(d).r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::eval_with_gradient;
    use approx::assert_relative_eq;

    #[test]
    fn level_resolutions_are_geometric() {
        let c = FieldConfig::default();
        assert_eq!(c.level_res(0), 16);
        assert_eq!(c.level_res(7), 512);
        for l in 1..8 {
            assert!(c.level_res(l) > c.level_res(l - 1));
        }
    }

    #[test]
    fn initial_field_is_near_one_and_positive() {
        let c = FieldConfig { levels: 4, base_res: 8, max_res: 32 };
        let f = SphereDistanceField::init(&c, 3).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let d = Vector3::new(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if d.norm() < 1e-3 {
                continue;
            }
            let r = f.eval(&d.normalize());
            assert!(r > 0.0);
            assert_relative_eq!(r, 1.0, epsilon = 1e-2);
        }
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [0.1, 0.5, 1.0, 2.0, 10.0] {
            assert_relative_eq!(softplus(softplus_inv(y)), y, epsilon = 1e-12);
        }
    }

    #[test]
    fn field_is_continuous_across_the_seam() {
        let c = FieldConfig { levels: 4, base_res: 8, max_res: 64 };
        let f = SphereDistanceField::init(&c, 11).unwrap();
        // Directions straddling azimuth 0 (the +x half plane toward -z).
        for polar in [0.4, 1.0, 1.8, 2.6] {
            let a = crate::pano::angles_to_direction(polar, -1e-9);
            let b = crate::pano::angles_to_direction(polar, 1e-9);
            assert!((f.eval(&a) - f.eval(&b)).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let c = FieldConfig { levels: 2, base_res: 4, max_res: 8 };
        let mut f = SphereDistanceField::init(&c, 5).unwrap();
        // Perturb parameters so tanh units are not all near zero.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for p in f.params.iter_mut() {
            *p += rng.gen_range(-0.05..0.05);
        }
        let d = Vector3::new(0.3, 0.5, -0.8).normalize();
        let cache = f.forward(&d);
        let mut grad = FieldGrad::zeros(&f);
        f.backward(&cache, 1.0, &mut grad);
        // Check a spread of parameter indices.
        let n = f.params.len();
        for i in (0..n).step_by((n / 60).max(1)) {
            let h = 1e-6;
            let orig = f.params[i];
            f.params[i] = orig + h;
            let up = f.eval(&d);
            f.params[i] = orig - h;
            let dn = f.eval(&d);
            f.params[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (grad.0[i] - fd).abs() < 1e-6 + 1e-4 * fd.abs(),
                "param {i}: analytic {} vs fd {fd}",
                grad.0[i]
            );
        }
    }

    #[test]
    fn eval_with_gradient_positive_everywhere() {
        let c = FieldConfig { levels: 3, base_res: 4, max_res: 16 };
        let f = SphereDistanceField::init(&c, 8).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = Vector3::new(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if d.norm() < 1e-3 {
                continue;
            }
            let (r, _) = eval_with_gradient(&f, &d.normalize());
            assert!(r > 0.0);
        }
    }

    #[test]
    fn blob_round_trip() {
        let c = FieldConfig { levels: 3, base_res: 4, max_res: 16 };
        let f = SphereDistanceField::init(&c, 8).unwrap();
        let (header, data) = f.to_blob();
        let g = SphereDistanceField::from_blob(&header, data.to_vec()).unwrap();
        let d = Vector3::new(0.2, 0.9, -0.1).normalize();
        assert_eq!(f.eval(&d), g.eval(&d));
    }
}
