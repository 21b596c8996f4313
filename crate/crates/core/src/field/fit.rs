//! Joint optimization of the distance field and per-view affine
//! alignment parameters.
//!
//! Per view k the objective combines four terms:
//!   data      SmoothL1(s_k * r_k(u,v) + b_k^d(u,v), f(d))
//!   normal    SmoothL1(<v_a, n^>, 0) + SmoothL1(<v_b, n^>, 0)
//!   scale     (s_k - 1)^2 with s_k = softplus(alpha_k)
//!   smooth    mean squared adjacent-element differences of both bias maps
//! with n^ the renormalized biased normal and v_a, v_b the surface
//! tangents built from on-sphere finite differences of f. Gradients are
//! hand-written and checked against central differences in the tests.
//!
//! Bias maps are stored at 1/8 view resolution, bilinearly upsampled, and
//! projected to zero mean after every step: a constant bias offset is
//! indistinguishable from a global scale change, and removing that gauge
//! keeps the scale error in alpha where the regularizer can see it.

use super::lattice::{sigmoid, softplus, softplus_inv, FieldGrad, SphereDistanceField};
use super::{geodesic_step, tangent_frame, tangent_from_gradient, FieldConfig, GRAD_STEP};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::optim::Adam;
use crate::pano::{persp_pixel_direction, CameraPose};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed number of deterministic reduction slices for parallel gradient
/// accumulation; results are bit-identical for any thread count.
const REDUCE_SLICES: usize = 8;

/// One view's distance/normal prediction over a square tangent image.
/// Normals are world-frame; the pose position must be the panorama center
/// (the field is a function of direction only).
#[derive(Debug, Clone)]
pub struct ViewPrediction {
    pub id: u32,
    pub pose: CameraPose,
    pub fov_deg: f64,
    pub dist: Grid<f32>,
    pub normal: Grid<[f32; 3]>,
    pub valid: Grid<u8>,
}

impl ViewPrediction {
    pub fn res(&self) -> usize {
        self.dist.width()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.dist.width();
        if self.dist.height() != r || self.normal.width() != r || self.valid.width() != r {
            return Err(Error::contract(format!("view {}: grids must be square and equal", self.id)));
        }
        if self.pose.position.norm() > 1e-9 {
            return Err(Error::contract(format!(
                "view {}: tangent views share the panorama center",
                self.id
            )));
        }
        for v in 0..r {
            for u in 0..r {
                if self.valid.get(u, v) == 0 {
                    continue;
                }
                let d = self.dist.get(u, v);
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::contract(format!(
                        "view {}: invalid distance {d} at ({u}, {v})",
                        self.id
                    )));
                }
                let n = self.normal.get(u, v);
                let norm = (n[0] as f64).hypot(n[1] as f64).hypot(n[2] as f64);
                if (norm - 1.0).abs() > 1e-4 {
                    return Err(Error::contract(format!(
                        "view {}: normal norm {norm} at ({u}, {v})",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// World direction of a pixel center.
    #[inline]
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vector3<f64> {
        let cam = persp_pixel_direction(u as f64 + 0.5, v as f64 + 0.5, self.res(), self.fov_deg);
        self.pose.rotation * cam
    }

    fn valid_pixels(&self) -> Vec<(u16, u16)> {
        let mut out = Vec::new();
        for v in 0..self.res() {
            for u in 0..self.res() {
                if self.valid.get(u, v) == 1 {
                    out.push((u as u16, v as u16));
                }
            }
        }
        out
    }
}

/// Fitted per-view affine parameters.
#[derive(Debug, Clone)]
pub struct ViewAffineParams {
    /// Unconstrained scale parameter; the applied scale is softplus(alpha).
    pub alpha: f64,
    pub bias_d: Grid<f64>,
    pub bias_n: Grid<[f64; 3]>,
}

impl ViewAffineParams {
    pub fn effective_scale(&self) -> f64 {
        softplus(self.alpha)
    }
}

/// Optimizer configuration; defaults follow the implementation constants
/// (2000 iterations, learning rates 1e-1 affine / 1e-2 field, weights
/// lambda_reg 0.1, lambda_n = lambda_tv = 0.01).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub iters: usize,
    pub lr_affine: f64,
    pub lr_field: f64,
    pub lambda_n: f64,
    pub lambda_reg: f64,
    pub lambda_tv: f64,
    pub samples_per_view: usize,
    pub field: FieldConfig,
    /// Bias maps are stored at view_res / bias_downscale per side.
    pub bias_downscale: usize,
    pub smooth_l1_beta: f64,
    /// Initial applied scale softplus(alpha) for every view.
    pub initial_scale: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iters: 2000,
            lr_affine: 1e-1,
            lr_field: 1e-2,
            lambda_n: 0.01,
            lambda_reg: 0.1,
            lambda_tv: 0.01,
            samples_per_view: 4096,
            field: FieldConfig::default(),
            bias_downscale: 8,
            smooth_l1_beta: 1.0,
            initial_scale: 1.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if self.iters == 0 || self.samples_per_view == 0 {
            return Err(Error::contract("iters and samples_per_view must be positive"));
        }
        if !(self.lr_affine > 0.0 && self.lr_field > 0.0 && self.smooth_l1_beta > 0.0) {
            return Err(Error::contract("learning rates and beta must be positive"));
        }
        if !(self.initial_scale > 0.0) {
            return Err(Error::contract("initial_scale must be positive"));
        }
        if self.bias_downscale == 0 {
            return Err(Error::contract("bias_downscale must be positive"));
        }
        Ok(())
    }
}

#[inline]
fn smooth_l1(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        0.5 * x * x / beta
    } else {
        x.abs() - 0.5 * beta
    }
}

#[inline]
fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Flat per-view affine parameter store: [alpha, bias_d, bias_n] per view.
#[derive(Debug, Clone)]
pub struct AffineState {
    pub data: Vec<f64>,
    slots: Vec<AffineSlot>,
}

#[derive(Debug, Clone, Copy)]
struct AffineSlot {
    off: usize,
    bw: usize,
    bh: usize,
}

impl AffineState {
    pub fn new(views: &[&ViewPrediction], config: &FitConfig) -> Self {
        let mut data = Vec::new();
        let mut slots = Vec::new();
        let alpha0 = softplus_inv(config.initial_scale);
        for view in views {
            let b = (view.res() / config.bias_downscale).max(1);
            let off = data.len();
            data.push(alpha0);
            data.extend(std::iter::repeat(0.0).take(b * b)); // bias_d
            data.extend(std::iter::repeat(0.0).take(3 * b * b)); // bias_n
            slots.push(AffineSlot { off, bw: b, bh: b });
        }
        AffineState { data, slots }
    }

    #[inline]
    fn alpha(&self, k: usize) -> f64 {
        self.data[self.slots[k].off]
    }

    #[inline]
    fn bias_d_index(&self, k: usize, ix: usize, iy: usize) -> usize {
        let s = self.slots[k];
        s.off + 1 + iy * s.bw + ix
    }

    #[inline]
    fn bias_n_index(&self, k: usize, ix: usize, iy: usize) -> usize {
        let s = self.slots[k];
        s.off + 1 + s.bw * s.bh + (iy * s.bw + ix) * 3
    }

    /// Projects every bias map to zero mean (per channel for normals).
    /// This removes the gauge freedom between a constant bias and the
    /// global scale.
    pub fn project_zero_mean(&mut self) {
        for k in 0..self.slots.len() {
            let s = self.slots[k];
            let n = (s.bw * s.bh) as f64;
            let d0 = s.off + 1;
            let mean: f64 = self.data[d0..d0 + s.bw * s.bh].iter().sum::<f64>() / n;
            for x in self.data[d0..d0 + s.bw * s.bh].iter_mut() {
                *x -= mean;
            }
            let n0 = d0 + s.bw * s.bh;
            for c in 0..3 {
                let mut mean = 0.0;
                for i in 0..s.bw * s.bh {
                    mean += self.data[n0 + i * 3 + c];
                }
                mean /= n;
                for i in 0..s.bw * s.bh {
                    self.data[n0 + i * 3 + c] -= mean;
                }
            }
        }
    }

    pub fn to_view_params(&self) -> Vec<ViewAffineParams> {
        self.slots
            .iter()
            .enumerate()
            .map(|(k, s)| ViewAffineParams {
                alpha: self.alpha(k),
                bias_d: Grid::from_fn(s.bw, s.bh, |ix, iy| self.data[self.bias_d_index(k, ix, iy)]),
                bias_n: Grid::from_fn(s.bw, s.bh, |ix, iy| {
                    let o = self.bias_n_index(k, ix, iy);
                    [self.data[o], self.data[o + 1], self.data[o + 2]]
                }),
            })
            .collect()
    }
}

/// Clamped bilinear node pair along one axis for a sample at continuous
/// pixel coordinate `x` on a grid of `n` texels.
#[inline]
fn bilinear_axis(x: f64, n: usize) -> (usize, usize, f64) {
    let t = (x - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (t.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, t - i0 as f64)
}

struct BiasSample {
    nodes: [(usize, usize); 4],
    weights: [f64; 4],
}

fn bias_sample(u: usize, v: usize, res: usize, bw: usize, bh: usize) -> BiasSample {
    let x = (u as f64 + 0.5) * bw as f64 / res as f64;
    let y = (v as f64 + 0.5) * bh as f64 / res as f64;
    let (x0, x1, wx) = bilinear_axis(x, bw);
    let (y0, y1, wy) = bilinear_axis(y, bh);
    BiasSample {
        nodes: [(x0, y0), (x1, y0), (x0, y1), (x1, y1)],
        weights: [(1.0 - wx) * (1.0 - wy), wx * (1.0 - wy), (1.0 - wx) * wy, wx * wy],
    }
}

/// Loss components; the total applies the lambda weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub data: f64,
    pub normal: f64,
    pub reg: f64,
    pub tv: f64,
    pub total: f64,
}

/// Deterministic pixel sample for one (step, view) pair: uniform over the
/// valid pixels, with replacement.
pub fn sample_pixels(valid: &[(u16, u16)], count: usize, seed: u64) -> Vec<(u16, u16)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| valid[rng.gen_range(0..valid.len())]).collect()
}

/// Mean squared adjacent-element difference of a scalar lattice slice.
fn tv_scalar(data: &[f64], bw: usize, bh: usize, stride: usize) -> (f64, Vec<(usize, f64)>) {
    let mut pairs = 0usize;
    let mut sum = 0.0;
    let mut grads: Vec<(usize, f64)> = Vec::new();
    let mut diff = |i: usize, j: usize| {
        let d = data[i * stride] - data[j * stride];
        sum += d * d;
        grads.push((i, 2.0 * d));
        grads.push((j, -2.0 * d));
        pairs += 1;
    };
    for iy in 0..bh {
        for ix in 0..bw {
            let i = iy * bw + ix;
            if ix + 1 < bw {
                diff(i, i + 1);
            }
            if iy + 1 < bh {
                diff(i, i + bw);
            }
        }
    }
    if pairs == 0 {
        return (0.0, grads);
    }
    let inv = 1.0 / pairs as f64;
    for g in grads.iter_mut() {
        g.1 *= inv;
    }
    (sum * inv, grads)
}

/// Single-step objective and analytic gradients over a fixed sample set.
/// This is the exact function the optimizer steps on; the gradient-check
/// tests difference it directly.
pub fn loss_and_grad(
    field: &SphereDistanceField,
    affine: &AffineState,
    views: &[&ViewPrediction],
    samples: &[Vec<(u16, u16)>],
    config: &FitConfig,
) -> Result<(LossBreakdown, FieldGrad, Vec<f64>)> {
    assert_eq!(views.len(), samples.len());
    let beta = config.smooth_l1_beta;
    let h = GRAD_STEP;

    // Flatten (view, pixel) pairs and cut them into fixed slices.
    let flat: Vec<(usize, u16, u16)> = views
        .iter()
        .enumerate()
        .flat_map(|(k, _)| samples[k].iter().map(move |&(u, v)| (k, u, v)))
        .collect();
    let slice_len = flat.len().div_ceil(REDUCE_SLICES).max(1);

    struct Partial {
        data: f64,
        normal: f64,
        fgrad: FieldGrad,
        agrad: Vec<f64>,
    }

    let partials: Vec<Partial> = flat
        .par_chunks(slice_len)
        .map(|chunk| {
            let mut part = Partial {
                data: 0.0,
                normal: 0.0,
                fgrad: FieldGrad(vec![0.0; field.params.len()]),
                agrad: vec![0.0; affine.data.len()],
            };
            for &(k, u, v) in chunk {
                let view = views[k];
                let (u, v) = (u as usize, v as usize);
                let w = 1.0 / samples[k].len() as f64;
                let slot = affine.slots[k];
                let dir = view.pixel_direction(u, v);
                let alpha = affine.alpha(k);
                let s = softplus(alpha);
                let r_pred = view.dist.get(u, v) as f64;

                // Data term.
                let bs = bias_sample(u, v, view.res(), slot.bw, slot.bh);
                let mut bd = 0.0;
                for (node, wt) in bs.nodes.iter().zip(bs.weights.iter()) {
                    bd += wt * affine.data[affine.bias_d_index(k, node.0, node.1)];
                }
                let cache = field.forward(&dir);
                let e = s * r_pred + bd - cache.r;
                part.data += w * smooth_l1(e, beta);
                let de = w * smooth_l1_grad(e, beta);
                part.agrad[slot.off] += de * r_pred * sigmoid(alpha);
                for (node, wt) in bs.nodes.iter().zip(bs.weights.iter()) {
                    part.agrad[affine.bias_d_index(k, node.0, node.1)] += de * wt;
                }
                field.backward(&cache, -de, &mut part.fgrad);

                // Normal term.
                if config.lambda_n > 0.0 {
                    let n_raw = view.normal.get(u, v);
                    let mut m = Vector3::new(n_raw[0] as f64, n_raw[1] as f64, n_raw[2] as f64);
                    let mut bn = [0.0f64; 3];
                    for (node, wt) in bs.nodes.iter().zip(bs.weights.iter()) {
                        let o = affine.bias_n_index(k, node.0, node.1);
                        for c in 0..3 {
                            bn[c] += wt * affine.data[o + c];
                        }
                    }
                    m += Vector3::new(bn[0], bn[1], bn[2]);
                    let nm = m.norm();
                    if nm > 1e-6 {
                        let n_hat = m / nm;
                        let (o_a, o_b) = tangent_frame(&dir);
                        let ca_p = field.forward(&geodesic_step(&dir, &o_a, h));
                        let ca_m = field.forward(&geodesic_step(&dir, &o_a, -h));
                        let cb_p = field.forward(&geodesic_step(&dir, &o_b, h));
                        let cb_m = field.forward(&geodesic_step(&dir, &o_b, -h));
                        let f = cache.r;
                        let ga = (ca_p.r - ca_m.r) / (2.0 * h);
                        let gb = (cb_p.r - cb_m.r) / (2.0 * h);
                        let qa = ga / f;
                        let qb = gb / f;
                        let va = tangent_from_gradient(ga, f, &dir, &o_a);
                        let vb = tangent_from_gradient(gb, f, &dir, &o_b);
                        let ia = va.dot(&n_hat);
                        let ib = vb.dot(&n_hat);
                        part.normal += w * (smooth_l1(ia, beta) + smooth_l1(ib, beta));
                        let dia = config.lambda_n * w * smooth_l1_grad(ia, beta);
                        let dib = config.lambda_n * w * smooth_l1_grad(ib, beta);

                        // d<va, n^>/dqa = <d - qa*oa, n^> / (1+qa^2)^{3/2},
                        // with qa = ga / f coupling back into the center
                        // evaluation as well.
                        let dqa = dia * (dir - o_a * qa).dot(&n_hat) / (1.0 + qa * qa).powf(1.5);
                        let dqb = dib * (dir - o_b * qb).dot(&n_hat) / (1.0 + qb * qb).powf(1.5);
                        let dga = dqa / f;
                        let dgb = dqb / f;
                        let df_center = -(dqa * ga + dqb * gb) / (f * f);
                        field.backward(&ca_p, dga / (2.0 * h), &mut part.fgrad);
                        field.backward(&ca_m, -dga / (2.0 * h), &mut part.fgrad);
                        field.backward(&cb_p, dgb / (2.0 * h), &mut part.fgrad);
                        field.backward(&cb_m, -dgb / (2.0 * h), &mut part.fgrad);
                        field.backward(&cache, df_center, &mut part.fgrad);

                        // d<v, n^>/dm through the normalization.
                        let dm = (va - n_hat * ia) * (dia / nm) + (vb - n_hat * ib) * (dib / nm);
                        for (node, wt) in bs.nodes.iter().zip(bs.weights.iter()) {
                            let o = affine.bias_n_index(k, node.0, node.1);
                            part.agrad[o] += wt * dm.x;
                            part.agrad[o + 1] += wt * dm.y;
                            part.agrad[o + 2] += wt * dm.z;
                        }
                    }
                }
            }
            part
        })
        .collect();

    let mut out = LossBreakdown::default();
    let mut fgrad = FieldGrad(vec![0.0; field.params.len()]);
    let mut agrad = vec![0.0; affine.data.len()];
    for p in partials {
        out.data += p.data;
        out.normal += p.normal;
        fgrad.add_assign(&p.fgrad);
        for (a, b) in agrad.iter_mut().zip(p.agrad.iter()) {
            *a += b;
        }
    }

    // Per-view regularization and smoothness terms.
    for (k, _) in views.iter().enumerate() {
        let slot = affine.slots[k];
        let alpha = affine.alpha(k);
        let s = softplus(alpha);
        out.reg += (s - 1.0) * (s - 1.0);
        agrad[slot.off] += config.lambda_reg * 2.0 * (s - 1.0) * sigmoid(alpha);

        let d0 = slot.off + 1;
        let (tv_d, grads) = tv_scalar(&affine.data[d0..d0 + slot.bw * slot.bh], slot.bw, slot.bh, 1);
        out.tv += tv_d;
        for (i, g) in grads {
            agrad[d0 + i] += config.lambda_tv * g;
        }
        let n0 = d0 + slot.bw * slot.bh;
        for c in 0..3 {
            let (tv_n, grads) =
                tv_scalar(&affine.data[n0 + c..], slot.bw, slot.bh, 3);
            out.tv += tv_n;
            for (i, g) in grads {
                agrad[n0 + i * 3 + c] += config.lambda_tv * g;
            }
        }
    }

    out.total = out.data
        + config.lambda_n * out.normal
        + config.lambda_reg * out.reg
        + config.lambda_tv * out.tv;
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "data={} normal={} reg={} tv={}",
            out.data, out.normal, out.reg, out.tv
        )));
    }
    Ok((out, fgrad, agrad))
}

/// Result of [`fit_field`]. `view_params` aligns with the input view list;
/// skipped views (empty validity) keep their initial parameters.
#[derive(Debug)]
pub struct FitResult {
    pub field: SphereDistanceField,
    pub view_params: Vec<ViewAffineParams>,
    pub loss_trace: Vec<f64>,
    pub skipped_views: Vec<usize>,
}

fn step_view_seed(seed: u64, step: usize, view: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (view as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Fits the field and per-view affine parameters with Adam.
pub fn fit_field(views: &[ViewPrediction], config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::contract("fit_field requires at least one view"));
    }
    for view in views {
        view.validate()?;
    }
    let mut skipped = Vec::new();
    let mut active: Vec<&ViewPrediction> = Vec::new();
    let mut active_idx: Vec<usize> = Vec::new();
    let mut valid_lists: Vec<Vec<(u16, u16)>> = Vec::new();
    for (i, view) in views.iter().enumerate() {
        let valid = view.valid_pixels();
        if valid.is_empty() {
            log::warn!("view {} has an empty validity mask; skipping", view.id);
            skipped.push(i);
        } else {
            active.push(view);
            active_idx.push(i);
            valid_lists.push(valid);
        }
    }
    if active.is_empty() {
        return Err(Error::contract("all views have empty validity masks"));
    }

    let mut field = SphereDistanceField::init(&config.field, config.seed)?;
    let mut affine = AffineState::new(&active, config);
    let mut adam_field = Adam::new(field.params.len());
    let mut adam_affine = Adam::new(affine.data.len());
    let mut trace = Vec::with_capacity(config.iters);

    for step in 0..config.iters {
        let samples: Vec<Vec<(u16, u16)>> = valid_lists
            .iter()
            .enumerate()
            .map(|(k, valid)| {
                sample_pixels(valid, config.samples_per_view.min(valid.len() * 4), step_view_seed(config.seed, step, k))
            })
            .collect();
        let (loss, fgrad, agrad) = loss_and_grad(&field, &affine, &active, &samples, config)
            .map_err(|e| match e {
                Error::NonFiniteLoss(msg) => {
                    Error::NonFiniteLoss(format!("step {step}: {msg}"))
                }
                other => other,
            })?;
        adam_field.step(&mut field.params, &fgrad.0, config.lr_field);
        adam_affine.step(&mut affine.data, &agrad, config.lr_affine);
        affine.project_zero_mean();
        trace.push(loss.total);
    }

    // Re-expand per-view parameters to the input ordering.
    let fitted = affine.to_view_params();
    let mut view_params: Vec<ViewAffineParams> = Vec::with_capacity(views.len());
    let defaults = |view: &ViewPrediction| {
        let b = (view.res() / config.bias_downscale).max(1);
        ViewAffineParams {
            alpha: softplus_inv(config.initial_scale),
            bias_d: Grid::filled(b, b, 0.0),
            bias_n: Grid::filled(b, b, [0.0; 3]),
        }
    };
    let mut it = active_idx.iter().zip(fitted.into_iter()).peekable();
    for (i, view) in views.iter().enumerate() {
        match it.peek() {
            Some((&ai, _)) if ai == i => {
                view_params.push(it.next().unwrap().1);
            }
            _ => view_params.push(defaults(view)),
        }
    }

    Ok(FitResult { field, view_params, loss_trace: trace, skipped_views: skipped })
}
