//! Adaptive object-aware closed roaming trajectories.
//!
//! The base path scales the equatorial distance profile by gamma into a
//! horizontal closed curve. An anti-symmetric Gaussian-derivative profile
//! then deflects knots laterally around the nearest salient object
//! (glance-and-return), a closed periodic cubic spline interpolates the
//! adapted knots, and poses are sampled with clearance enforcement and
//! perturbation views near salient objects. Planning is fully
//! deterministic: identical inputs produce bit-identical pose lists.

use crate::error::{Error, Result};
use crate::field::{SphereDistanceField, SphereField};
use crate::graph::SalientObject;
use crate::mesh::SceneMesh;
use crate::pano::{CameraPose, ScalarPano};
use crate::raycast::{Bvh, Ray};
use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

/// Ordered base/adapted trajectory knots on uniformly spaced azimuths.
#[derive(Debug, Clone)]
pub struct TrajectoryKnots {
    pub positions: Vec<Vector3<f64>>,
    pub azimuths: Vec<f64>,
}

impl TrajectoryKnots {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Mean distance of the knots from the origin.
    pub fn mean_radius(&self) -> f64 {
        self.positions.iter().map(|p| p.norm()).sum::<f64>() / self.positions.len() as f64
    }
}

/// Amplitude/scope coefficients of the glance-and-return modulation.
#[derive(Debug, Clone)]
pub struct ModulationParams {
    /// Deflection amplitude per unit of object diagonal scale.
    pub c_lambda: f64,
    /// Angular-scope coefficient; sigma = clamp(c_sigma * S / mean_radius).
    pub c_sigma: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Clearance kept between a deflected knot and the object box.
    pub margin: f64,
}

impl Default for ModulationParams {
    fn default() -> Self {
        ModulationParams { c_lambda: 0.35, c_sigma: 1.0, sigma_min: 0.15, sigma_max: 1.2, margin: 0.15 }
    }
}

impl ModulationParams {
    pub fn lambda(&self, diag_scale: f64) -> f64 {
        self.c_lambda * diag_scale
    }

    pub fn sigma(&self, diag_scale: f64, mean_radius: f64) -> f64 {
        (self.c_sigma * diag_scale / mean_radius).clamp(self.sigma_min, self.sigma_max)
    }
}

/// Anti-symmetric modulation profile: the first derivative of a Gaussian,
/// W(x) = x * exp(-x^2 / (2 sigma^2)); zero at x = 0, extremal at |x| = sigma.
#[inline]
pub fn modulation_weight(dphi: f64, sigma: f64) -> f64 {
    dphi * (-dphi * dphi / (2.0 * sigma * sigma)).exp()
}

/// Wraps an angle difference to the principal interval (-pi, pi].
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(TAU);
    if x > std::f64::consts::PI {
        x -= TAU;
    }
    x
}

/// Anything that can answer "how far is the first surface along this
/// direction from the origin" for trajectory planning.
pub trait RadialGeometry {
    fn radial_distance(&self, dir: &Vector3<f64>) -> Option<f64>;
}

impl RadialGeometry for SphereDistanceField {
    fn radial_distance(&self, dir: &Vector3<f64>) -> Option<f64> {
        Some(self.eval(dir))
    }
}

impl RadialGeometry for ScalarPano {
    fn radial_distance(&self, dir: &Vector3<f64>) -> Option<f64> {
        let px = crate::pano::direction_to_pixel(
            &nalgebra::Unit::new_normalize(*dir),
            self.width(),
            self.height(),
        );
        let d = self
            .grid()
            .sample_bilinear(px.u + 0.5, px.v + 0.5, crate::grid::WrapMode::WrapU);
        (d > 0.0).then_some(d as f64)
    }
}

/// Mesh-backed radial geometry (ray casting from the origin).
pub struct MeshGeometry {
    bvh: Bvh,
}

impl MeshGeometry {
    pub fn new(mesh: &SceneMesh) -> Self {
        MeshGeometry { bvh: mesh.build_bvh() }
    }
}

impl RadialGeometry for MeshGeometry {
    fn radial_distance(&self, dir: &Vector3<f64>) -> Option<f64> {
        self.bvh.closest_hit(&Ray::new(Vector3::zeros(), *dir), 1e-9).map(|h| h.t)
    }
}

/// Equatorial distance of a geometry at a given azimuth.
fn equator_distance(geometry: &dyn RadialGeometry, azimuth: f64) -> Option<f64> {
    let dir = Vector3::new(azimuth.cos(), 0.0, azimuth.sin());
    geometry.radial_distance(&dir)
}

/// Base trajectory: p_l = gamma * D(phi_l, 0) * (cos phi_l, 0, sin phi_l)
/// over L uniformly spaced azimuths. D is the equator row of the distance
/// panorama, bilinearly interpolated in azimuth.
pub fn base_trajectory(dist: &ScalarPano, gamma: f64, count: usize) -> Result<TrajectoryKnots> {
    base_trajectory_from(dist, gamma, count)
}

/// Same construction over any radial geometry.
pub fn base_trajectory_from(
    geometry: &dyn RadialGeometry,
    gamma: f64,
    count: usize,
) -> Result<TrajectoryKnots> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if count < 4 {
        return Err(Error::domain(format!("need at least 4 knots, got {count}")));
    }
    let mut positions = Vec::with_capacity(count);
    let mut azimuths = Vec::with_capacity(count);
    for l in 0..count {
        let phi = TAU * l as f64 / count as f64;
        let d = equator_distance(geometry, phi)
            .ok_or_else(|| Error::contract(format!("no equatorial surface at azimuth {phi}")))?;
        if !(d > 0.0) {
            return Err(Error::contract(format!("non-positive equatorial distance {d}")));
        }
        positions.push(Vector3::new(phi.cos(), 0.0, phi.sin()) * (gamma * d));
        azimuths.push(phi);
    }
    Ok(TrajectoryKnots { positions, azimuths })
}

/// Result of knot modulation: adapted knots plus the indices left
/// unmodified because their deformation direction was degenerate.
#[derive(Debug, Clone)]
pub struct ModulatedKnots {
    pub knots: TrajectoryKnots,
    pub degenerate: Vec<usize>,
}

/// Deflects each knot laterally around its nearest salient object with
/// the Gaussian-derivative profile; an empty salient set returns the
/// knots unchanged.
pub fn modulate_knots(
    knots: &TrajectoryKnots,
    salient: &[SalientObject],
    params: &ModulationParams,
) -> ModulatedKnots {
    if salient.is_empty() {
        return ModulatedKnots { knots: knots.clone(), degenerate: Vec::new() };
    }
    let mean_radius = knots.mean_radius();
    let mut out = knots.clone();
    let mut degenerate = Vec::new();
    for (l, p) in knots.positions.iter().enumerate() {
        let obj = salient
            .iter()
            .min_by(|a, b| {
                let da = horizontal_distance(&a.centroid, p);
                let db = horizontal_distance(&b.centroid, p);
                da.partial_cmp(&db).unwrap()
            })
            .expect("non-empty salient set");
        let dphi = wrap_angle(knots.azimuths[l] - obj.azimuth);
        let sigma = params.sigma(obj.diag_scale, mean_radius);
        let lambda = params.lambda(obj.diag_scale);
        let weight = modulation_weight(dphi, sigma);
        let view = obj.centroid - p;
        let cross = view.cross(&Vector3::y());
        if cross.norm() < 1e-12 {
            degenerate.push(l);
            continue;
        }
        let u = cross / cross.norm();
        let mut deflection = -(lambda * weight);
        // Cap the deflection so the knot keeps its clearance margin from
        // the object box (multiplicative shrink keeps scale equivariance).
        let mut candidate = p + u * deflection;
        let mut rounds = 0;
        while obj.bbox.distance_to_point(&candidate) < params.margin && rounds < 60 {
            deflection *= 0.7;
            candidate = p + u * deflection;
            rounds += 1;
        }
        if obj.bbox.distance_to_point(&candidate) < params.margin {
            candidate = *p;
        }
        out.positions[l] = candidate;
    }
    ModulatedKnots { knots: out, degenerate }
}

fn horizontal_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    ((a.x - b.x) * (a.x - b.x) + (a.z - b.z) * (a.z - b.z)).sqrt()
}

/// Closed periodic cubic spline through 3D knots, chord-length
/// parameterized over s in [0, 1).
#[derive(Debug, Clone)]
pub struct ClosedSpline {
    /// Segment boundaries: ts[0] = 0, ts[n] = 1.
    ts: Vec<f64>,
    /// Knot values per coordinate.
    ys: [Vec<f64>; 3],
    /// Second derivatives per coordinate (periodic).
    ms: [Vec<f64>; 3],
}

impl ClosedSpline {
    pub fn knot_count(&self) -> usize {
        self.ts.len() - 1
    }

    /// Parameter of knot `i`.
    pub fn knot_param(&self, i: usize) -> f64 {
        self.ts[i]
    }

    pub fn eval(&self, s: f64) -> Vector3<f64> {
        self.eval_d(s, 0)
    }

    pub fn eval_d1(&self, s: f64) -> Vector3<f64> {
        self.eval_d(s, 1)
    }

    pub fn eval_d2(&self, s: f64) -> Vector3<f64> {
        self.eval_d(s, 2)
    }

    fn eval_d(&self, s: f64, order: usize) -> Vector3<f64> {
        let s = s.rem_euclid(1.0);
        let n = self.knot_count();
        // Locate the segment.
        let mut i = match self.ts.binary_search_by(|t| t.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= n {
            i = n - 1;
        }
        let (t0, t1) = (self.ts[i], self.ts[i + 1]);
        let h = t1 - t0;
        let i1 = (i + 1) % n;
        let mut out = Vector3::zeros();
        for c in 0..3 {
            let (y0, y1) = (self.ys[c][i], self.ys[c][i1]);
            let (m0, m1) = (self.ms[c][i], self.ms[c][i1]);
            let a = t1 - s;
            let b = s - t0;
            out[c] = match order {
                0 => {
                    m0 * a * a * a / (6.0 * h)
                        + m1 * b * b * b / (6.0 * h)
                        + (y0 / h - m0 * h / 6.0) * a
                        + (y1 / h - m1 * h / 6.0) * b
                }
                1 => {
                    -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (y0 / h - m0 * h / 6.0)
                        + (y1 / h - m1 * h / 6.0)
                }
                _ => m0 * a / h + m1 * b / h,
            };
        }
        out
    }
}

/// Fits a closed periodic cubic spline through the knots (C2 across the
/// wrap point). Duplicate consecutive knots are merged with a warning.
pub fn fit_closed_spline(knots: &TrajectoryKnots) -> Result<ClosedSpline> {
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(knots.len());
    for p in &knots.positions {
        if let Some(last) = pts.last() {
            if (p - last).norm() < 1e-12 {
                log::warn!("duplicate consecutive knot merged");
                continue;
            }
        }
        pts.push(*p);
    }
    while pts.len() > 1 && (pts[0] - pts[pts.len() - 1]).norm() < 1e-12 {
        log::warn!("duplicate wrap knot merged");
        pts.pop();
    }
    let n = pts.len();
    if n < 4 {
        return Err(Error::contract(format!("need at least 4 distinct knots, got {n}")));
    }

    // Chord-length parameterization over the closed polygon.
    let mut ts = Vec::with_capacity(n + 1);
    ts.push(0.0);
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += (pts[j] - pts[i]).norm();
        ts.push(acc);
    }
    let total = ts[n];
    if total <= 0.0 {
        return Err(Error::contract("degenerate knot polygon"));
    }
    for t in ts.iter_mut() {
        *t /= total;
    }
    let h: Vec<f64> = (0..n).map(|i| ts[i + 1] - ts[i]).collect();

    // Periodic tridiagonal system for the second derivatives, solved
    // densely (the knot counts here are tiny).
    let mut ys: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut ms: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for c in 0..3 {
        ys[c] = pts.iter().map(|p| p[c]).collect();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        for i in 0..n {
            let prev = (i + n - 1) % n;
            let next = (i + 1) % n;
            let h_prev = h[prev];
            let h_i = h[i];
            a[(i, prev)] += h_prev / 6.0;
            a[(i, i)] += (h_prev + h_i) / 3.0;
            a[(i, next)] += h_i / 6.0;
            rhs[i] = (ys[c][next] - ys[c][i]) / h_i - (ys[c][i] - ys[c][prev]) / h_prev;
        }
        let solved = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::contract("singular spline system"))?;
        ms[c] = solved.iter().copied().collect();
    }
    Ok(ClosedSpline { ts, ys, ms })
}

/// Trajectory generation configuration. `knots` is the Eq.-6
/// discretization; `views` the number of spline samples.
#[derive(Debug, Clone)]
pub struct TrajectoryConfig {
    pub gamma: f64,
    pub knots: usize,
    pub views: usize,
    pub modulation: ModulationParams,
    /// Minimum clearance from scene geometry for every pose.
    pub margin: f64,
    /// Lateral perturbation offset as a fraction of lambda(S).
    pub perturb_lateral: f64,
    /// Vertical perturbation offset as a fraction of the mean base radius.
    pub perturb_vertical: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            gamma: 0.4,
            knots: 48,
            views: 24,
            modulation: ModulationParams::default(),
            margin: 0.15,
            perturb_lateral: 0.25,
            perturb_vertical: 0.1,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::domain(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.knots < 4 || self.views == 0 {
            return Err(Error::domain("need at least 4 knots and 1 view"));
        }
        Ok(())
    }
}

/// A planned camera pose: spline parameter, pose, and whether it is a
/// perturbation view.
#[derive(Debug, Clone)]
pub struct PlannedPose {
    pub s: f64,
    pub pose: CameraPose,
    pub perturbation: bool,
}

/// Clearance outcome per pose.
#[derive(Debug, Clone, Default)]
pub struct ClearanceReport {
    /// Pose indices pulled back along their origin ray.
    pub pulled_back: Vec<usize>,
    /// Knot indices whose deformation direction was degenerate.
    pub degenerate_knots: Vec<usize>,
    pub min_radial_clearance: f64,
}

/// The full plan.
#[derive(Debug, Clone)]
pub struct TrajectoryPlan {
    pub base: TrajectoryKnots,
    pub adapted: TrajectoryKnots,
    pub spline: ClosedSpline,
    pub poses: Vec<PlannedPose>,
    pub report: ClearanceReport,
}

/// Plans the full adaptive trajectory: base curve, modulation, closed
/// spline, uniform sampling, perturbation views near salient objects,
/// clearance enforcement and look-at orientations.
pub fn generate_trajectory(
    geometry: &dyn RadialGeometry,
    salient: &[SalientObject],
    config: &TrajectoryConfig,
) -> Result<TrajectoryPlan> {
    config.validate()?;
    let base = base_trajectory_from(geometry, config.gamma, config.knots)?;
    let rho_bar = base.mean_radius();
    let modulated = modulate_knots(&base, salient, &config.modulation);
    let spline = fit_closed_spline(&modulated.knots)?;

    let mut positions: Vec<(f64, Vector3<f64>, bool)> = (0..config.views)
        .map(|i| {
            let s = i as f64 / config.views as f64;
            (s, spline.eval(s), false)
        })
        .collect();

    // Perturbation views: for each salient object, the nearest sample
    // gains two laterally offset, slightly raised poses.
    for obj in salient {
        let (nearest_idx, _) = positions
            .iter()
            .take(config.views)
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                horizontal_distance(&obj.centroid, &a.1)
                    .partial_cmp(&horizontal_distance(&obj.centroid, &b.1))
                    .unwrap()
            })
            .expect("views >= 1");
        let (s, p, _) = positions[nearest_idx];
        let view = obj.centroid - p;
        let cross = view.cross(&Vector3::y());
        let u = if cross.norm() < 1e-12 { Vector3::z() } else { cross / cross.norm() };
        let lateral = config.perturb_lateral * config.modulation.lambda(obj.diag_scale);
        let lift = Vector3::y() * (config.perturb_vertical * rho_bar);
        positions.push((s, p + u * lateral + lift, true));
        positions.push((s, p - u * lateral + lift, true));
    }

    // Clearance: every pose keeps `margin` from the radial surface and
    // from every salient box, pulled back toward the origin until clear.
    let mut report = ClearanceReport {
        degenerate_knots: modulated.degenerate.clone(),
        min_radial_clearance: f64::INFINITY,
        ..ClearanceReport::default()
    };
    for (idx, (_, p, _)) in positions.iter_mut().enumerate() {
        let rho = p.norm();
        if rho < 1e-12 {
            continue;
        }
        let dir = *p / rho;
        let surf = geometry
            .radial_distance(&dir)
            .ok_or_else(|| Error::Planning(format!("pose {idx}: no surface along origin ray")))?;
        let mut new_rho = rho;
        if rho > surf - config.margin {
            new_rho = surf - config.margin;
            if new_rho <= 0.0 {
                return Err(Error::Planning(format!(
                    "pose {idx}: margin {} exceeds surface distance {surf}",
                    config.margin
                )));
            }
        }
        let mut rounds = 0;
        while salient.iter().any(|o| o.bbox.distance_to_point(&(dir * new_rho)) < config.margin) {
            new_rho *= 0.95;
            rounds += 1;
            if rounds > 200 {
                return Err(Error::Planning(format!(
                    "pose {idx}: cannot clear salient boxes (trajectory inside an object?)"
                )));
            }
        }
        if new_rho != rho {
            report.pulled_back.push(idx);
            *p = dir * new_rho;
        }
        report.min_radial_clearance = report.min_radial_clearance.min(surf - new_rho);
    }

    // Orientations: face the nearest salient centroid, else the
    // trajectory tangent.
    let poses: Vec<PlannedPose> = positions
        .into_iter()
        .map(|(s, p, perturbation)| {
            let rotation = if salient.is_empty() {
                let tangent = spline.eval_d1(s);
                crate::pano::rotation_facing(&tangent)
            } else {
                let obj = salient
                    .iter()
                    .min_by(|a, b| {
                        horizontal_distance(&a.centroid, &p)
                            .partial_cmp(&horizontal_distance(&b.centroid, &p))
                            .unwrap()
                    })
                    .expect("non-empty");
                let look = obj.centroid - p;
                if look.norm() < 1e-12 {
                    Rotation3::identity()
                } else {
                    crate::pano::rotation_facing(&look)
                }
            };
            PlannedPose { s, pose: CameraPose { position: p, rotation }, perturbation }
        })
        .collect();

    Ok(TrajectoryPlan { base, adapted: modulated.knots, spline, poses, report })
}

/// CSV export: s, position, orientation quaternion (w, x, y, z).
pub fn write_trajectory_csv(path: &Path, plan: &TrajectoryPlan) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "s,x,y,z,qw,qx,qy,qz")?;
    for p in &plan.poses {
        let q = UnitQuaternion::from_rotation_matrix(&p.pose.rotation);
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            p.s,
            p.pose.position.x,
            p.pose.position.y,
            p.pose.position.z,
            q.w,
            q.i,
            q.j,
            q.k
        )?;
    }
    Ok(())
}

/// Overhead (x-z plane) SVG of the plan for inspection: base knots,
/// adapted spline, poses and salient boxes.
pub fn write_overhead_svg(path: &Path, plan: &TrajectoryPlan, salient: &[SalientObject]) -> Result<()> {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    let mut grow = |p: &Vector3<f64>| {
        min = min.inf(p);
        max = max.sup(p);
    };
    for p in &plan.base.positions {
        grow(p);
    }
    for o in salient {
        grow(&o.bbox.min);
        grow(&o.bbox.max);
    }
    for p in &plan.poses {
        grow(&p.pose.position);
    }
    let pad = 0.1 * ((max.x - min.x).max(max.z - min.z)).max(1.0);
    let (x0, z0) = (min.x - pad, min.z - pad);
    let (w, h) = (max.x - min.x + 2.0 * pad, max.z - min.z + 2.0 * pad);
    let size = 640.0;
    let scale = size / w.max(h);
    let map = |p: &Vector3<f64>| ((p.x - x0) * scale, (p.z - z0) * scale);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
        size as i64
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for o in salient {
        let (ax, az) = map(&o.bbox.min);
        let (bx, bz) = map(&o.bbox.max);
        svg.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#ffd9a0\" stroke=\"#c88\"/>\n",
            ax.min(bx),
            az.min(bz),
            (bx - ax).abs(),
            (bz - az).abs()
        ));
    }
    let polyline = |pts: &[(f64, f64)], style: &str| {
        let coords: Vec<String> = pts.iter().map(|(x, z)| format!("{x:.1},{z:.1}")).collect();
        format!("<polyline points=\"{}\" fill=\"none\" {style}/>\n", coords.join(" "))
    };
    let mut base_pts: Vec<(f64, f64)> = plan.base.positions.iter().map(&map).collect();
    if let Some(&first) = base_pts.first() {
        base_pts.push(first);
    }
    svg.push_str(&polyline(&base_pts, "stroke=\"#999\" stroke-dasharray=\"4 3\""));
    let dense: Vec<(f64, f64)> =
        (0..=400).map(|i| map(&plan.spline.eval(i as f64 / 400.0))).collect();
    svg.push_str(&polyline(&dense, "stroke=\"black\" stroke-width=\"1.5\""));
    for p in &plan.poses {
        let (x, z) = map(&p.pose.position);
        let color = if p.perturbation { "#e06" } else { "#06c" };
        svg.push_str(&format!("<circle cx=\"{x:.1}\" cy=\"{z:.1}\" r=\"3\" fill=\"{color}\"/>\n"));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::raycast::Aabb;
    use approx::assert_relative_eq;

    fn constant_pano(r: f32, h: usize) -> ScalarPano {
        ScalarPano::new_distance(Grid::filled(2 * h, h, r)).unwrap()
    }

    fn salient_at(x: f64, z: f64, half: f64) -> SalientObject {
        let c = Vector3::new(x, 0.0, z);
        SalientObject {
            id: "obj".into(),
            bbox: Aabb::new(
                c - Vector3::new(half, 0.5, half),
                c + Vector3::new(half, 0.5, half),
            ),
            centroid: c,
            diag_scale: 2.0 * half * 2.0_f64.sqrt(),
            azimuth: crate::pano::azimuth_of(&c),
        }
    }

    #[test]
    fn circle_base_trajectory_exact() {
        // D = 5, gamma = 0.4 -> circle of radius 2 with knot (2, 0, 0).
        let knots = base_trajectory(&constant_pano(5.0, 16), 0.4, 24).unwrap();
        assert_eq!(knots.len(), 24);
        assert!((knots.positions[0] - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-9);
        // Knot at phi = pi/2 is (0, 0, 2).
        assert!((knots.positions[6] - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-9);
        for p in &knots.positions {
            assert_relative_eq!(p.norm(), 2.0, epsilon = 1e-9);
            assert_eq!(p.y, 0.0);
        }
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        assert!(base_trajectory(&constant_pano(5.0, 16), 1.5, 24).is_err());
        assert!(base_trajectory(&constant_pano(5.0, 16), 0.4, 3).is_err());
    }

    #[test]
    fn elliptical_room_knots_match_analytic_distance() {
        // W = 14, L = 7 puts every sample azimuth exactly on a pixel
        // center, so the bilinear equator sample equals the analytic D.
        let (w, h, l) = (14usize, 7usize, 7usize);
        let d_of = |phi: f64| {
            let (a, b) = (3.0, 2.0);
            a * b / ((b * phi.cos()).powi(2) + (a * phi.sin()).powi(2)).sqrt()
        };
        let pano = ScalarPano::new_distance(Grid::from_fn(w, h, |u, _| {
            let phi = TAU * (u as f64 + 0.5) / w as f64 - std::f64::consts::FRAC_PI_2;
            d_of(phi) as f32
        }))
        .unwrap();
        let knots = base_trajectory(&pano, 0.4, l).unwrap();
        for (p, phi) in knots.positions.iter().zip(knots.azimuths.iter()) {
            let expected = 0.4 * d_of(*phi) as f32 as f64;
            assert_relative_eq!(p.norm(), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn modulation_zero_at_object_azimuth() {
        let knots = base_trajectory(&constant_pano(5.0, 16), 0.4, 24).unwrap();
        // Object exactly at knot 0's azimuth (phi = 0).
        let obj = salient_at(1.4, 0.0, 0.3);
        let m = modulate_knots(&knots, &[obj], &ModulationParams::default());
        assert!((m.knots.positions[0] - knots.positions[0]).norm() < 1e-12);
    }

    #[test]
    fn modulation_antisymmetric_around_object() {
        let knots = base_trajectory(&constant_pano(5.0, 16), 0.4, 24).unwrap();
        let obj = salient_at(1.4, 0.0, 0.3);
        let m = modulate_knots(&knots, &[obj.clone()], &ModulationParams::default());
        // Knots 1 and 23 sit at +-15 degrees around the object azimuth.
        for (a, b) in [(1usize, 23usize), (2, 22), (3, 21)] {
            let da = m.knots.positions[a] - knots.positions[a];
            let db = m.knots.positions[b] - knots.positions[b];
            assert_relative_eq!(da.norm(), db.norm(), epsilon = 1e-9);
            // Opposite sign along each knot's own deformation direction.
            let ua = (obj.centroid - knots.positions[a]).cross(&Vector3::y()).normalize();
            let ub = (obj.centroid - knots.positions[b]).cross(&Vector3::y()).normalize();
            let sa = da.dot(&ua);
            let sb = db.dot(&ub);
            assert!(sa * sb < 0.0, "offsets not anti-symmetric: {sa} vs {sb}");
        }
        // The deformation has no component toward the object or along
        // e_y (absolute projection below 1e-9 scene units).
        for l in 0..24 {
            let d = m.knots.positions[l] - knots.positions[l];
            if d.norm() < 1e-15 {
                continue;
            }
            let v = (obj.centroid - knots.positions[l]).normalize();
            assert!(d.dot(&v).abs() < 1e-9, "component toward object: {}", d.dot(&v));
            assert!(d.y.abs() < 1e-12);
        }
    }

    #[test]
    fn modulation_weight_profile() {
        // |W| at dphi = 0.5, sigma = 0.5 is 0.5 * exp(-1/2).
        let w = modulation_weight(0.5, 0.5);
        assert_relative_eq!(w, 0.5 * (-0.5f64).exp(), epsilon = 1e-12);
        // Anti-symmetry.
        assert_eq!(modulation_weight(-0.5, 0.5), -w);
        // Peak at |dphi| = sigma (dense scan).
        let sigma = 0.37;
        let mut best = (0.0, 0.0);
        for i in 0..20000 {
            let x = 4.0 * sigma * i as f64 / 20000.0;
            let val = modulation_weight(x, sigma).abs();
            if val > best.1 {
                best = (x, val);
            }
        }
        assert!((best.0 - sigma).abs() < 0.01 * sigma, "peak at {} vs sigma {sigma}", best.0);
    }

    #[test]
    fn modulation_locality_tail_bound() {
        let knots = base_trajectory(&constant_pano(5.0, 64), 0.4, 96).unwrap();
        let obj = salient_at(1.4, 0.0, 0.3);
        let params = ModulationParams::default();
        let m = modulate_knots(&knots, &[obj.clone()], &params);
        let sigma = params.sigma(obj.diag_scale, knots.mean_radius());
        let lambda = params.lambda(obj.diag_scale);
        for l in 0..96 {
            let dphi = wrap_angle(knots.azimuths[l] - obj.azimuth);
            if dphi.abs() > 4.0 * sigma {
                let moved = (m.knots.positions[l] - knots.positions[l]).norm();
                assert!(moved < 1e-3 * lambda, "knot {l} moved {moved}");
            }
        }
    }

    #[test]
    fn spline_interpolates_circle() {
        let knots = base_trajectory(&constant_pano(5.0, 16), 0.4, 24).unwrap();
        let spline = fit_closed_spline(&knots).unwrap();
        // Interpolation at knot parameters.
        for i in 0..24 {
            let s = spline.knot_param(i);
            assert!((spline.eval(s) - knots.positions[i]).norm() < 1e-9);
        }
        // Dense radial deviation below 0.1% of the radius.
        let mut max_dev = 0.0f64;
        for i in 0..1000 {
            let p = spline.eval(i as f64 / 1000.0);
            max_dev = max_dev.max((p.norm() - 2.0).abs());
        }
        assert!(max_dev < 0.002, "radial deviation {max_dev}");
    }

    #[test]
    fn spline_closure_and_c2_seam() {
        let knots = base_trajectory(&constant_pano(5.0, 16), 0.4, 24).unwrap();
        let obj = salient_at(1.4, 0.2, 0.3);
        let m = modulate_knots(&knots, &[obj], &ModulationParams::default());
        let spline = fit_closed_spline(&m.knots).unwrap();
        let eps = 1e-9;
        assert!((spline.eval(0.0) - spline.eval(1.0 - 1e-12)).norm() < 1e-9);
        assert!((spline.eval_d1(eps) - spline.eval_d1(1.0 - eps)).norm() < 1e-6);
        // Second-derivative jump at the wrap, relative to the max |Tr''|.
        let max_d2 = (0..1000)
            .map(|i| spline.eval_d2(i as f64 / 1000.0).norm())
            .fold(0.0f64, f64::max);
        let jump = (spline.eval_d2(eps) - spline.eval_d2(1.0 - eps)).norm();
        assert!(jump < 1e-6 * max_d2.max(1e-12), "C2 jump {jump} vs max {max_d2}");
    }

    #[test]
    fn duplicate_knots_merged() {
        let mut knots = base_trajectory(&constant_pano(5.0, 16), 0.4, 8).unwrap();
        knots.positions.insert(3, knots.positions[3]);
        knots.azimuths.insert(3, knots.azimuths[3]);
        let spline = fit_closed_spline(&knots).unwrap();
        assert_eq!(spline.knot_count(), 8);
    }

    #[test]
    fn too_few_knots_rejected() {
        let knots = TrajectoryKnots {
            positions: vec![Vector3::x(), Vector3::z(), -Vector3::x()],
            azimuths: vec![0.0, 1.0, 2.0],
        };
        assert!(fit_closed_spline(&knots).is_err());
    }

    #[test]
    fn empty_salient_set_degrades_to_base_spline() {
        let pano = constant_pano(5.0, 16);
        let plan = generate_trajectory(&pano, &[], &TrajectoryConfig::default()).unwrap();
        assert_eq!(plan.poses.len(), 24);
        assert!(plan.poses.iter().all(|p| !p.perturbation));
        for p in &plan.poses {
            assert_relative_eq!(p.pose.position.norm(), 2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn pose_count_contract_with_salient_objects() {
        let pano = constant_pano(5.0, 16);
        let objs = vec![salient_at(1.4, 0.0, 0.25), salient_at(-1.0, 0.8, 0.2)];
        let plan = generate_trajectory(&pano, &objs, &TrajectoryConfig::default()).unwrap();
        assert_eq!(plan.poses.len(), 24 + 2 * objs.len());
        assert_eq!(plan.poses.iter().filter(|p| p.perturbation).count(), 4);
    }

    #[test]
    fn clearance_respected_in_box_room() {
        use crate::scene::{capture_panorama, SyntheticScene};
        let obj_box = Aabb::new(Vector3::new(0.8, -1.25, -0.5), Vector3::new(1.6, 0.0, 0.5));
        let scene = SyntheticScene::box_room(4.0, 2.5, 3.0).with_object("crate", &[], obj_box);
        let cap = capture_panorama(&scene, &crate::pano::CameraPose::identity(), 64);
        let pano = ScalarPano::new_distance(cap.dist).unwrap();
        let salient = vec![SalientObject {
            id: "crate".into(),
            bbox: obj_box,
            centroid: obj_box.center(),
            diag_scale: {
                let e = obj_box.extent();
                (e.x * e.x + e.z * e.z).sqrt()
            },
            azimuth: crate::pano::azimuth_of(&obj_box.center()),
        }];
        let config = TrajectoryConfig { margin: 0.12, ..TrajectoryConfig::default() };
        let plan = generate_trajectory(&pano, &salient, &config).unwrap();
        for (i, p) in plan.poses.iter().enumerate() {
            let c = scene.clearance(&p.pose.position);
            assert!(c >= config.margin - 0.02, "pose {i}: clearance {c}");
        }
        assert!(plan.report.min_radial_clearance >= config.margin - 1e-9);
    }

    #[test]
    fn orientations_are_valid_rotations() {
        let pano = constant_pano(5.0, 16);
        let objs = vec![salient_at(1.4, 0.0, 0.25)];
        let plan = generate_trajectory(&pano, &objs, &TrajectoryConfig::default()).unwrap();
        for p in &plan.poses {
            let m = p.pose.rotation.matrix();
            assert!((m.determinant() - 1.0).abs() < 1e-9);
            // Forward axis points at the object centroid.
            let fwd = p.pose.rotation * Vector3::x();
            let look = (objs[0].centroid - p.pose.position).normalize();
            assert!(fwd.dot(&look) > 0.999);
        }
    }

    #[test]
    fn scale_equivariance_exact() {
        let d_of = |phi: f64| 4.0 + 1.2 * phi.sin() + 0.5 * (2.0 * phi).cos();
        let make_pano = |c: f32| {
            ScalarPano::new_distance(Grid::from_fn(64, 32, |u, _| {
                let phi = TAU * (u as f64 + 0.5) / 64.0 - std::f64::consts::FRAC_PI_2;
                c * d_of(phi) as f32
            }))
            .unwrap()
        };
        let scale_obj = |o: &SalientObject, c: f64| SalientObject {
            id: o.id.clone(),
            bbox: Aabb::new(o.bbox.min * c, o.bbox.max * c),
            centroid: o.centroid * c,
            diag_scale: o.diag_scale * c,
            azimuth: o.azimuth,
        };
        let obj = salient_at(1.2, 0.4, 0.3);
        let c = 2.0; // power of two: float scaling is exact
        let cfg1 = TrajectoryConfig::default();
        let cfg2 = TrajectoryConfig {
            margin: cfg1.margin * c,
            modulation: ModulationParams { margin: cfg1.modulation.margin * c, ..cfg1.modulation.clone() },
            ..cfg1.clone()
        };
        let plan1 = generate_trajectory(&make_pano(1.0), &[obj.clone()], &cfg1).unwrap();
        let plan2 = generate_trajectory(&make_pano(c as f32), &[scale_obj(&obj, c)], &cfg2).unwrap();
        assert_eq!(plan1.poses.len(), plan2.poses.len());
        for (a, b) in plan1.poses.iter().zip(plan2.poses.iter()) {
            let scaled = a.pose.position * c;
            let rel = (scaled - b.pose.position).norm() / scaled.norm().max(1e-12);
            assert!(rel < 1e-9, "positions not equivariant: {rel}");
        }
    }

    #[test]
    fn planning_is_deterministic() {
        let pano = constant_pano(5.0, 16);
        let objs = vec![salient_at(1.4, 0.0, 0.25)];
        let a = generate_trajectory(&pano, &objs, &TrajectoryConfig::default()).unwrap();
        let b = generate_trajectory(&pano, &objs, &TrajectoryConfig::default()).unwrap();
        for (x, y) in a.poses.iter().zip(b.poses.iter()) {
            assert_eq!(x.pose.position, y.pose.position);
            assert_eq!(x.pose.rotation.matrix(), y.pose.rotation.matrix());
        }
    }

    #[test]
    fn exports_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let pano = constant_pano(5.0, 16);
        let objs = vec![salient_at(1.4, 0.0, 0.25)];
        let plan = generate_trajectory(&pano, &objs, &TrajectoryConfig::default()).unwrap();
        let csv = dir.path().join("traj.csv");
        let svg = dir.path().join("traj.svg");
        write_trajectory_csv(&csv, &plan).unwrap();
        write_overhead_svg(&svg, &plan, &objs).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("s,x,y,z,qw,qx,qy,qz"));
        assert_eq!(text.lines().count(), 1 + plan.poses.len());
        assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
    }
}
