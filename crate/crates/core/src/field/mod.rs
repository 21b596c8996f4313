//! Sphere distance field: a positive scalar field over unit viewing
//! directions, fitted jointly with per-view affine alignment parameters
//! from multi-view distance/normal predictions.
//!
//! The field is a multi-resolution bilinear feature lattice over the
//! (azimuth, polar) chart feeding a small MLP with a softplus output, so
//! f(d) > 0 everywhere and the field is evaluable and differentiable at
//! any direction. On-sphere gradients for the surface-tangent construction
//! are central finite differences along geodesic steps.

mod fit;
mod lattice;

pub use fit::{
    fit_field, loss_and_grad, sample_pixels, AffineState, FitConfig, FitResult, LossBreakdown,
    ViewAffineParams, ViewPrediction,
};
pub use lattice::{FieldConfig, FieldGrad, SphereDistanceField};

use nalgebra::Vector3;

/// Geodesic step (radians) for on-sphere finite differences.
pub const GRAD_STEP: f64 = 5e-4;

/// Anything evaluable as a scalar field over unit directions.
pub trait SphereField {
    fn eval(&self, d: &Vector3<f64>) -> f64;
}

/// Analytic field wrapper for closures (used heavily in tests).
pub struct FnField<F: Fn(&Vector3<f64>) -> f64>(pub F);

impl<F: Fn(&Vector3<f64>) -> f64> SphereField for FnField<F> {
    fn eval(&self, d: &Vector3<f64>) -> f64 {
        (self.0)(d)
    }
}

/// Deterministic orthonormal tangent frame at a direction:
/// o_a = normalize(d x e_y) (d x e_x when |d_y| > 0.999), o_b = d x o_a.
pub fn tangent_frame(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let o_a = if d.y.abs() > 0.999 {
        d.cross(&Vector3::x()).normalize()
    } else {
        d.cross(&Vector3::y()).normalize()
    };
    let o_b = d.cross(&o_a);
    (o_a, o_b)
}

/// Geodesic step from `d` along tangent direction `o` by angle `h`.
#[inline]
pub fn geodesic_step(d: &Vector3<f64>, o: &Vector3<f64>, h: f64) -> Vector3<f64> {
    d * h.cos() + o * h.sin()
}

/// Field value and directional derivatives along the deterministic
/// tangent frame, by central differences with step [`GRAD_STEP`].
pub fn eval_with_gradient(field: &impl SphereField, d: &Vector3<f64>) -> (f64, [f64; 2]) {
    let (o_a, o_b) = tangent_frame(d);
    let r = field.eval(d);
    let h = GRAD_STEP;
    let ga = (field.eval(&geodesic_step(d, &o_a, h)) - field.eval(&geodesic_step(d, &o_a, -h)))
        / (2.0 * h);
    let gb = (field.eval(&geodesic_step(d, &o_b, h)) - field.eval(&geodesic_step(d, &o_b, -h)))
        / (2.0 * h);
    (r, [ga, gb])
}

/// Unit surface-tangent vectors at the point f(d) * d:
/// v_a = (((grad f . o_a) / f) d + o_a) / ||.||, v_b analogous.
///
/// The derivative of the surface curve t -> f(d(t)) d(t) is
/// (grad f . o) d + f o, so the directional derivative must be taken of
/// ln f for the vector to span the surface tangent plane; with a constant
/// field this reduces to the frame itself.
pub fn tangent_vectors(
    field: &impl SphereField,
    d: &Vector3<f64>,
    o_a: &Vector3<f64>,
    o_b: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let h = GRAD_STEP;
    let f = field.eval(d);
    let ga = (field.eval(&geodesic_step(d, o_a, h)) - field.eval(&geodesic_step(d, o_a, -h)))
        / (2.0 * h);
    let gb = (field.eval(&geodesic_step(d, o_b, h)) - field.eval(&geodesic_step(d, o_b, -h)))
        / (2.0 * h);
    (tangent_from_gradient(ga, f, d, o_a), tangent_from_gradient(gb, f, d, o_b))
}

/// v = (q d + o) / sqrt(1 + q^2) with q = g / f; the norm is closed-form
/// since d and o are orthonormal.
#[inline]
pub(crate) fn tangent_from_gradient(
    g: f64,
    f: f64,
    d: &Vector3<f64>,
    o: &Vector3<f64>,
) -> Vector3<f64> {
    let q = g / f;
    (d * q + o) / (1.0 + q * q).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random_direction(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn frame_is_orthonormal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let d = random_direction(&mut rng);
            let (oa, ob) = tangent_frame(&d);
            assert_relative_eq!(oa.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(ob.norm(), 1.0, epsilon = 1e-12);
            assert!(oa.dot(&d).abs() < 1e-12);
            assert!(ob.dot(&d).abs() < 1e-12);
            assert!(oa.dot(&ob).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let f = FnField(|_: &Vector3<f64>| 3.7);
        let d = Vector3::new(0.5, 0.3, -0.2).normalize();
        let (r, g) = eval_with_gradient(&f, &d);
        assert_relative_eq!(r, 3.7, epsilon = 1e-12);
        assert!(g[0].abs() < 1e-9 && g[1].abs() < 1e-9);
    }

    #[test]
    fn linear_field_gradient_matches_closed_form() {
        // f(d) = 2 + 0.5 d_y: the tangent derivative along o is 0.5 o_y.
        let f = FnField(|d: &Vector3<f64>| 2.0 + 0.5 * d.y);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let d = random_direction(&mut rng);
            if d.y.abs() > 0.99 {
                continue;
            }
            let (oa, ob) = tangent_frame(&d);
            let (_, g) = eval_with_gradient(&f, &d);
            assert!((g[0] - 0.5 * oa.y).abs() < 1e-3, "{} vs {}", g[0], 0.5 * oa.y);
            assert!((g[1] - 0.5 * ob.y).abs() < 1e-3);
        }
    }

    #[test]
    fn gradient_matches_fine_central_differences() {
        // Oracle uses a finer, independent step (1e-4 rad).
        let f = FnField(|d: &Vector3<f64>| 2.0 + 0.4 * (3.0 * d.x).sin() + 0.2 * d.y * d.z);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let d = random_direction(&mut rng);
            let (oa, ob) = tangent_frame(&d);
            let (_, g) = eval_with_gradient(&f, &d);
            let h = 1e-4;
            let fd_a = (f.eval(&geodesic_step(&d, &oa, h)) - f.eval(&geodesic_step(&d, &oa, -h)))
                / (2.0 * h);
            let fd_b = (f.eval(&geodesic_step(&d, &ob, h)) - f.eval(&geodesic_step(&d, &ob, -h)))
                / (2.0 * h);
            assert!((g[0] - fd_a).abs() / (fd_a.abs() + 1e-6) < 1e-2);
            assert!((g[1] - fd_b).abs() / (fd_b.abs() + 1e-6) < 1e-2);
        }
    }

    #[test]
    fn zero_gradient_tangents_reduce_to_frame() {
        let f = FnField(|_: &Vector3<f64>| 2.0);
        let d = Vector3::new(0.2, -0.5, 0.7).normalize();
        let (oa, ob) = tangent_frame(&d);
        let (va, vb) = tangent_vectors(&f, &d, &oa, &ob);
        assert!((va - oa).norm() < 1e-9);
        assert!((vb - ob).norm() < 1e-9);
    }

    #[test]
    fn sphere_scene_tangents_orthogonal_to_radius() {
        let f = FnField(|_: &Vector3<f64>| 1.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let d = random_direction(&mut rng);
            let (oa, ob) = tangent_frame(&d);
            let (va, vb) = tangent_vectors(&f, &d, &oa, &ob);
            assert!(va.dot(&d).abs() < 1e-9);
            assert!(vb.dot(&d).abs() < 1e-9);
        }
    }

    #[test]
    fn plane_scene_tangents_orthogonal_to_plane_normal() {
        // Floor at height -h seen from the origin: f(d) = h / (-d_y) for
        // downward directions; the surface normal is e_y.
        let h = 1.3;
        let f = FnField(move |d: &Vector3<f64>| h / (-d.y));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let mut checked = 0;
        while checked < 100 {
            let d = random_direction(&mut rng);
            if d.y > -0.2 || d.y < -0.98 {
                continue;
            }
            checked += 1;
            let (oa, ob) = tangent_frame(&d);
            let (va, vb) = tangent_vectors(&f, &d, &oa, &ob);
            assert!(va.y.abs() < 1e-3, "va.y = {}", va.y);
            assert!(vb.y.abs() < 1e-3, "vb.y = {}", vb.y);
        }
    }
}
