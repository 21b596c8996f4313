//! Camera-motion conditioning: sinusoidal positional encoding of the
//! relative motion, a 3-layer MLP, a learnable pose-token offset, and the
//! additive broadcast injection into a token sequence.
//!
//! z_cam = MLP(beta(dM)) + o. Rotation enters as the first two columns of
//! the rotation matrix (continuous 6D representation); a translation-only
//! mode drops the rotation features entirely.

use crate::error::{Error, Result};
use crate::pano::CameraPose;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const HID: usize = 256;

/// Default bound on the normalized translation magnitude.
pub const DEFAULT_MAX_TRANSLATION: f64 = 4.0;

/// Relative camera motion: translation normalized by the scene's vertical
/// extent, rotation as an orthonormal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeMotion {
    pub translation: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl RelativeMotion {
    /// Relative motion taking the source pose to the target pose,
    /// expressed in the source frame, translation divided by the scene's
    /// vertical extent.
    pub fn between(source: &CameraPose, target: &CameraPose, vertical_extent: f64) -> Result<Self> {
        if !(vertical_extent > 0.0) {
            return Err(Error::contract(format!("vertical extent must be positive, got {vertical_extent}")));
        }
        let rel = source.relative_to(target);
        Ok(RelativeMotion { translation: rel.position / vertical_extent, rotation: rel.rotation })
    }

    pub fn validate(&self, max_translation: f64) -> Result<()> {
        let n = self.translation.norm();
        if !(n.is_finite() && n <= max_translation) {
            return Err(Error::contract(format!(
                "normalized translation norm {n} exceeds bound {max_translation}"
            )));
        }
        let m = self.rotation.matrix();
        let dev = (m.transpose() * m - Matrix3::identity()).abs().max();
        if dev > 1e-6 {
            return Err(Error::contract(format!("rotation not orthonormal ({dev:.2e})")));
        }
        Ok(())
    }

    /// The 9 motion scalars: translation plus the first two rotation
    /// columns (continuous 6D rotation representation).
    pub fn scalars(&self) -> [f64; 9] {
        let m = self.rotation.matrix();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ]
    }
}

/// Encoder parameters: positional-encoding width, a 3-layer MLP
/// (in -> 256 -> 256 -> d) with tanh between layers, and the learnable
/// pose-token offset.
#[derive(Debug, Clone)]
pub struct MotionEncoderParams {
    pub n_freq: usize,
    pub d_out: usize,
    pub translation_only: bool,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    /// Learnable pose token offset added to the MLP output.
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobHeader {
    kind: String,
    n_f: usize,
    d: usize,
    translation_only: bool,
    shapes: Vec<Vec<usize>>,
}

impl MotionEncoderParams {
    pub fn scalar_count(&self) -> usize {
        if self.translation_only {
            3
        } else {
            9
        }
    }

    pub fn in_dim(&self) -> usize {
        self.scalar_count() * 2 * self.n_freq
    }

    /// Seeded initialization (Xavier weights, zero biases and offset).
    pub fn init(n_freq: usize, d_out: usize, translation_only: bool, seed: u64) -> Result<Self> {
        if n_freq == 0 || d_out == 0 {
            return Err(Error::contract("n_freq and d_out must be positive"));
        }
        let mut p = MotionEncoderParams {
            n_freq,
            d_out,
            translation_only,
            w1: Vec::new(),
            b1: vec![0.0; HID],
            w2: Vec::new(),
            b2: vec![0.0; HID],
            w3: Vec::new(),
            b3: vec![0.0; d_out],
            offset: vec![0.0; d_out],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d0a_11ce);
        let mut xavier = |fan_in: usize, fan_out: usize| -> Vec<f64> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect()
        };
        p.w1 = xavier(p.in_dim(), HID);
        p.w2 = xavier(HID, HID);
        p.w3 = xavier(HID, d_out);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(&self.w3)
            .chain(&self.b3)
            .chain(&self.offset)
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::contract("encoder parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len()
            + self.b3.len()
            + self.offset.len()
    }

    pub fn to_blob(&self) -> (serde_json::Value, Vec<f64>) {
        let header = BlobHeader {
            kind: "motion_encoder".to_string(),
            n_f: self.n_freq,
            d: self.d_out,
            translation_only: self.translation_only,
            shapes: vec![
                vec![HID, self.in_dim()],
                vec![HID],
                vec![HID, HID],
                vec![HID],
                vec![self.d_out, HID],
                vec![self.d_out],
                vec![self.d_out],
            ],
        };
        let mut data = Vec::with_capacity(self.param_count());
        for part in [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.offset] {
            data.extend_from_slice(part);
        }
        (serde_json::to_value(header).expect("serializable header"), data)
    }

    pub fn from_blob(header: &serde_json::Value, data: Vec<f64>) -> Result<Self> {
        let header: BlobHeader = serde_json::from_value(header.clone())
            .map_err(|e| Error::parse(format!("motion encoder header: {e}")))?;
        if header.kind != "motion_encoder" {
            return Err(Error::parse("blob is not a motion_encoder checkpoint"));
        }
        let mut p = MotionEncoderParams {
            n_freq: header.n_f,
            d_out: header.d,
            translation_only: header.translation_only,
            w1: Vec::new(),
            b1: Vec::new(),
            w2: Vec::new(),
            b2: Vec::new(),
            w3: Vec::new(),
            b3: Vec::new(),
            offset: Vec::new(),
        };
        let sizes = [
            HID * p.in_dim(),
            HID,
            HID * HID,
            HID,
            p.d_out * HID,
            p.d_out,
            p.d_out,
        ];
        if data.len() != sizes.iter().sum::<usize>() {
            return Err(Error::parse(format!(
                "checkpoint has {} values, expected {}",
                data.len(),
                sizes.iter().sum::<usize>()
            )));
        }
        let mut off = 0;
        let mut take = |n: usize| {
            let v = data[off..off + n].to_vec();
            off += n;
            v
        };
        p.w1 = take(sizes[0]);
        p.b1 = take(sizes[1]);
        p.w2 = take(sizes[2]);
        p.b2 = take(sizes[3]);
        p.w3 = take(sizes[4]);
        p.b3 = take(sizes[5]);
        p.offset = take(sizes[6]);
        Ok(p)
    }
}

/// Sinusoidal positional encoding: sin/cos at octave frequencies
/// 2^0 .. 2^(n_freq-1) for each motion scalar.
pub fn positional_encoding(scalars: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(scalars.len() * 2 * n_freq);
    for &x in scalars {
        for f in 0..n_freq {
            let arg = x * (1u64 << f) as f64;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

/// Intermediates of one encoder forward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub features: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub z: Vec<f64>,
}

fn affine_tanh(w: &[f64], b: &[f64], x: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    (0..out_dim)
        .map(|j| {
            let mut acc = b[j];
            let row = j * in_dim;
            for k in 0..in_dim {
                acc += w[row + k] * x[k];
            }
            acc.tanh()
        })
        .collect()
}

/// Forward pass with cached intermediates.
pub fn encode_motion_cached(m: &RelativeMotion, p: &MotionEncoderParams) -> EncodeCache {
    let scalars = m.scalars();
    let scalars = &scalars[..p.scalar_count()];
    let features = positional_encoding(scalars, p.n_freq);
    let h1 = affine_tanh(&p.w1, &p.b1, &features, HID);
    let h2 = affine_tanh(&p.w2, &p.b2, &h1, HID);
    let mut z = vec![0.0; p.d_out];
    for j in 0..p.d_out {
        let mut acc = p.b3[j] + p.offset[j];
        let row = j * HID;
        for k in 0..HID {
            acc += p.w3[row + k] * h2[k];
        }
        z[j] = acc;
    }
    EncodeCache { features, h1, h2, z }
}

/// The motion embedding z_cam = MLP(beta(dM)) + o.
pub fn encode_motion(m: &RelativeMotion, p: &MotionEncoderParams) -> Vec<f64> {
    encode_motion_cached(m, p).z
}

/// Parameter gradients of a scalar loss given d(loss)/dz.
#[derive(Debug, Clone)]
pub struct EncoderGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    pub offset: Vec<f64>,
}

impl EncoderGrad {
    pub fn zeros(p: &MotionEncoderParams) -> Self {
        EncoderGrad {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
            w3: vec![0.0; p.w3.len()],
            b3: vec![0.0; p.b3.len()],
            offset: vec![0.0; p.offset.len()],
        }
    }
}

/// Accumulates parameter gradients for one cached forward pass.
pub fn encode_backward(
    p: &MotionEncoderParams,
    cache: &EncodeCache,
    d_z: &[f64],
    grad: &mut EncoderGrad,
) {
    let mut dh2 = vec![0.0; HID];
    for j in 0..p.d_out {
        grad.b3[j] += d_z[j];
        grad.offset[j] += d_z[j];
        let row = j * HID;
        for k in 0..HID {
            grad.w3[row + k] += d_z[j] * cache.h2[k];
            dh2[k] += p.w3[row + k] * d_z[j];
        }
    }
    let mut dh1 = vec![0.0; HID];
    for j in 0..HID {
        let dpre = dh2[j] * (1.0 - cache.h2[j] * cache.h2[j]);
        grad.b2[j] += dpre;
        let row = j * HID;
        for k in 0..HID {
            grad.w2[row + k] += dpre * cache.h1[k];
            dh1[k] += p.w2[row + k] * dpre;
        }
    }
    let in_dim = cache.features.len();
    for j in 0..HID {
        let dpre = dh1[j] * (1.0 - cache.h1[j] * cache.h1[j]);
        grad.b1[j] += dpre;
        let row = j * in_dim;
        for k in 0..in_dim {
            grad.w1[row + k] += dpre * cache.features[k];
        }
    }
}

/// Adds z_cam to every token (the additive broadcast injection).
/// Sequence length is unchanged; token width must equal z's.
pub fn inject_condition(tokens: &[Vec<f64>], z: &[f64]) -> Result<Vec<Vec<f64>>> {
    for (i, t) in tokens.iter().enumerate() {
        if t.len() != z.len() {
            return Err(Error::contract(format!(
                "token {i} has width {}, conditioning width {}",
                t.len(),
                z.len()
            )));
        }
    }
    Ok(tokens
        .iter()
        .map(|t| t.iter().zip(z.iter()).map(|(a, b)| a + b).collect())
        .collect())
}

/// Outcome of the toy information-preservation check.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub r2: f64,
    pub samples: usize,
}

/// Draws seeded random motions with translations in a ball of the given
/// radius and uniformly random rotations.
pub fn random_motions(count: usize, max_norm: f64, seed: u64) -> Vec<RelativeMotion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = loop {
                let v = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.norm() <= 1.0 {
                    break v * max_norm;
                }
            };
            let axis = loop {
                let v = Vector3::new(
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.norm() > 1e-3 && v.norm() <= 1.0 {
                    break v.normalize();
                }
            };
            let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            RelativeMotion {
                translation: t,
                rotation: Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), angle),
            }
        })
        .collect()
}

/// Toy supervised training configuration for the information-preservation
/// check.
#[derive(Debug, Clone)]
pub struct ProbeTrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr_encoder: f64,
    pub lr_probe: f64,
    pub seed: u64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        ProbeTrainConfig { iters: 400, batch: 64, lr_encoder: 1e-3, lr_probe: 1e-2, seed: 0 }
    }
}

/// Toy training loop validating information preservation: a linear probe
/// regressing the translation from z_cam is trained jointly with the
/// encoder on mini-batch MSE; the returned R^2 is measured with the
/// trained probe over all motions.
pub fn train_translation_probe(
    params: &mut MotionEncoderParams,
    motions: &[RelativeMotion],
    config: &ProbeTrainConfig,
) -> Result<ProbeResult> {
    if motions.len() < 10 {
        return Err(Error::contract("probe needs at least 10 motions"));
    }
    let n = motions.len();
    let d = params.d_out;
    // Probe: 3 x (d + 1) with intercept, zero-initialized.
    let mut probe = vec![0.0f64; 3 * (d + 1)];
    let mut adam_probe = crate::optim::Adam::new(probe.len());
    let mut adams: Vec<crate::optim::Adam> = [
        params.w1.len(),
        params.b1.len(),
        params.w2.len(),
        params.b2.len(),
        params.w3.len(),
        params.b3.len(),
        params.offset.len(),
    ]
    .iter()
    .map(|&n| crate::optim::Adam::new(n))
    .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9b0b_e514);

    for _ in 0..config.iters {
        let mut grad = EncoderGrad::zeros(params);
        let mut probe_grad = vec![0.0f64; probe.len()];
        let inv = 1.0 / config.batch as f64;
        for _ in 0..config.batch {
            let m = &motions[rng.gen_range(0..n)];
            let cache = encode_motion_cached(m, params);
            // Residuals of the linear probe per translation channel.
            let mut dz = vec![0.0f64; d];
            for c in 0..3 {
                let row = c * (d + 1);
                let mut pred = probe[row + d];
                for i in 0..d {
                    pred += probe[row + i] * cache.z[i];
                }
                let r = 2.0 * (pred - m.translation[c]) * inv;
                for i in 0..d {
                    probe_grad[row + i] += r * cache.z[i];
                    dz[i] += r * probe[row + i];
                }
                probe_grad[row + d] += r;
            }
            encode_backward(params, &cache, &dz, &mut grad);
        }
        adam_probe.step(&mut probe, &probe_grad, config.lr_probe);
        for (i, (p, g)) in [
            (&mut params.w1, &grad.w1),
            (&mut params.b1, &grad.b1),
            (&mut params.w2, &grad.w2),
            (&mut params.b2, &grad.b2),
            (&mut params.w3, &grad.w3),
            (&mut params.b3, &grad.b3),
            (&mut params.offset, &grad.offset),
        ]
        .into_iter()
        .enumerate()
        {
            adams[i].step(p, g, config.lr_encoder);
        }
    }

    // Coefficient of determination with the trained probe.
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let means: Vec<f64> = (0..3)
        .map(|c| motions.iter().map(|m| m.translation[c]).sum::<f64>() / n as f64)
        .collect();
    for m in motions {
        let z = encode_motion(m, params);
        for c in 0..3 {
            let row = c * (d + 1);
            let mut pred = probe[row + d];
            for i in 0..d {
                pred += probe[row + i] * z[i];
            }
            ss_res += (pred - m.translation[c]).powi(2);
            ss_tot += (m.translation[c] - means[c]).powi(2);
        }
    }
    Ok(ProbeResult { r2: 1.0 - ss_res / ss_tot, samples: n })
}
