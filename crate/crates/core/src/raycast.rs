//! Rays, boxes, triangles and a bounding-volume hierarchy.
//!
//! Equirectangular projection is non-linear in screen space, so panoramas
//! are rendered by per-pixel ray casting against a BVH over mesh triangles.
//! Hits at shared edges are resolved deterministically: within a 1e-9
//! relative window the smallest triangle index wins, independent of
//! traversal order.

use nalgebra::Vector3;

/// Relative tie window for resolving coincident triangle hits.
const HIT_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, dir: Vector3<f64>) -> Self {
        Ray { origin, dir }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn empty() -> Self {
        Aabb {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn grow_point(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn grow(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Euclidean distance from a point to the box surface; 0 inside.
    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let d = (self.min[i] - p[i]).max(0.0).max(p[i] - self.max[i]);
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Signed distance to the box surface: negative inside.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        if self.contains(p) {
            let mut m = f64::INFINITY;
            for i in 0..3 {
                m = m.min(p[i] - self.min[i]).min(self.max[i] - p[i]);
            }
            -m
        } else {
            self.distance_to_point(p)
        }
    }

    /// Slab intersection: parameter interval [t0, t1] where the ray is
    /// inside the box, or None.
    pub fn ray_interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if ray.dir[i].abs() < 1e-300 {
                if ray.origin[i] < self.min[i] || ray.origin[i] > self.max[i] {
                    return None;
                }
            } else {
                let inv = 1.0 / ray.dir[i];
                let mut a = (self.min[i] - ray.origin[i]) * inv;
                let mut b = (self.max[i] - ray.origin[i]) * inv;
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }
}

/// Closest-hit record for a triangle mesh query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: u32,
    /// Barycentric weights of the second and third face vertices.
    pub bary: (f64, f64),
}

/// Moeller-Trumbore ray/triangle intersection with a watertightness
/// epsilon of 1e-9 on the barycentric bounds.
pub fn ray_triangle(
    ray: &Ray,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
    t_min: f64,
) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = ray.dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(-HIT_TIE_EPS..=1.0 + HIT_TIE_EPS).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = ray.dir.dot(&qvec) * inv_det;
    if v < -HIT_TIE_EPS || u + v > 1.0 + HIT_TIE_EPS {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t <= t_min {
        return None;
    }
    Some((t, u, v))
}

enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Bounding-volume hierarchy over a triangle soup (median split on the
/// longest centroid axis, leaves of at most 4 triangles).
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle order after partitioning; values index the original faces.
    order: Vec<u32>,
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
}

impl Bvh {
    pub fn build(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> Self {
        let mut order: Vec<u32> = (0..faces.len() as u32).collect();
        let centroids: Vec<Vector3<f64>> = faces
            .iter()
            .map(|f| {
                (vertices[f[0] as usize] + vertices[f[1] as usize] + vertices[f[2] as usize]) / 3.0
            })
            .collect();
        let bounds: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                for &i in f {
                    b.grow_point(&vertices[i as usize]);
                }
                b
            })
            .collect();
        let mut nodes = Vec::with_capacity(faces.len() / 2 + 1);
        if !faces.is_empty() {
            Self::split(&mut nodes, &mut order, &centroids, &bounds, 0, faces.len());
        }
        Bvh { nodes, order, vertices: vertices.to_vec(), faces: faces.to_vec() }
    }

    fn split(
        nodes: &mut Vec<Node>,
        order: &mut [u32],
        centroids: &[Vector3<f64>],
        bounds: &[Aabb],
        start: usize,
        count: usize,
    ) -> u32 {
        let mut node_bounds = Aabb::empty();
        for &f in &order[start..start + count] {
            node_bounds.grow(&bounds[f as usize]);
        }
        let idx = nodes.len() as u32;
        if count <= 4 {
            nodes.push(Node {
                bounds: node_bounds,
                kind: NodeKind::Leaf { start: start as u32, count: count as u32 },
            });
            return idx;
        }
        let mut cb = Aabb::empty();
        for &f in &order[start..start + count] {
            cb.grow_point(&centroids[f as usize]);
        }
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = count / 2;
        order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        nodes.push(Node {
            bounds: node_bounds,
            kind: NodeKind::Inner { left: 0, right: 0 },
        });
        let left = Self::split(nodes, order, centroids, bounds, start, mid);
        let right = Self::split(nodes, order, centroids, bounds, start + mid, count - mid);
        nodes[idx as usize].kind = NodeKind::Inner { left, right };
        idx
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Nearest hit with t > t_min; ties within the relative window resolve
    /// to the smallest original face index.
    pub fn closest_hit(&self, ray: &Ray, t_min: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<Hit> = None;
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let Some((t0, t1)) = node.bounds.ray_interval(ray) else { continue };
            if t1 < t_min {
                continue;
            }
            if let Some(b) = &best {
                // Keep the tie window open so index-based resolution stays
                // independent of traversal order.
                if t0 > b.t * (1.0 + HIT_TIE_EPS) + HIT_TIE_EPS {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &fi in &self.order[start as usize..(start + count) as usize] {
                        let f = self.faces[fi as usize];
                        if let Some((t, u, v)) = ray_triangle(
                            ray,
                            &self.vertices[f[0] as usize],
                            &self.vertices[f[1] as usize],
                            &self.vertices[f[2] as usize],
                            t_min,
                        ) {
                            let cand = Hit { t, face: fi, bary: (u, v) };
                            best = Some(match best {
                                None => cand,
                                Some(b) => resolve_hit(b, cand),
                            });
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }
}

fn resolve_hit(a: Hit, b: Hit) -> Hit {
    let eps = HIT_TIE_EPS * a.t.abs().max(b.t.abs()).max(1.0);
    if (a.t - b.t).abs() <= eps {
        if a.face <= b.face {
            a
        } else {
            b
        }
    } else if a.t < b.t {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aabb_interval_inside() {
        let b = Aabb::new(Vector3::new(-1.0, -1.0, -1.0), Vector3::new(1.0, 1.0, 1.0));
        let ray = Ray::new(Vector3::zeros(), Vector3::x());
        let (t0, t1) = b.ray_interval(&ray).unwrap();
        assert!(t0 <= 0.0 && (t1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aabb_distance() {
        let b = Aabb::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(b.distance_to_point(&Vector3::new(0.5, 0.5, 0.5)), 0.0);
        assert!((b.distance_to_point(&Vector3::new(2.0, 0.5, 0.5)) - 1.0).abs() < 1e-12);
        assert!((b.signed_distance(&Vector3::new(0.5, 0.5, 0.9)) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn triangle_hit_and_miss() {
        let a = Vector3::new(1.0, -1.0, -1.0);
        let b = Vector3::new(1.0, 1.0, -1.0);
        let c = Vector3::new(1.0, 0.0, 1.0);
        let ray = Ray::new(Vector3::zeros(), Vector3::x());
        let (t, _, _) = ray_triangle(&ray, &a, &b, &c, 1e-9).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        let ray = Ray::new(Vector3::zeros(), Vector3::y());
        assert!(ray_triangle(&ray, &a, &b, &c, 1e-9).is_none());
    }

    #[test]
    fn bvh_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for _ in 0..300 {
            let base = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let i = vertices.len() as u32;
            for _ in 0..3 {
                vertices.push(
                    base + Vector3::new(
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                    ),
                );
            }
            faces.push([i, i + 1, i + 2]);
        }
        let bvh = Bvh::build(&vertices, &faces);
        for _ in 0..500 {
            let origin = Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if dir.norm() < 1e-3 {
                continue;
            }
            let ray = Ray::new(origin, dir.normalize());
            let fast = bvh.closest_hit(&ray, 1e-9);
            let mut slow: Option<Hit> = None;
            for (fi, f) in faces.iter().enumerate() {
                if let Some((t, u, v)) = ray_triangle(
                    &ray,
                    &vertices[f[0] as usize],
                    &vertices[f[1] as usize],
                    &vertices[f[2] as usize],
                    1e-9,
                ) {
                    let cand = Hit { t, face: fi as u32, bary: (u, v) };
                    slow = Some(match slow {
                        None => cand,
                        Some(b) => resolve_hit(b, cand),
                    });
                }
            }
            match (fast, slow) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert_eq!(a.face, b.face, "bvh and brute force disagree");
                    assert!((a.t - b.t).abs() < 1e-9);
                }
                (a, b) => panic!("hit mismatch: bvh={a:?} brute={b:?}"),
            }
        }
    }

    #[test]
    fn shared_edge_tie_breaks_to_smaller_index() {
        // Two triangles sharing the edge x=1, y in [-1,1], z=0.
        let vertices = vec![
            Vector3::new(1.0, -1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, -1.0),
        ];
        let faces = vec![[0, 1, 2], [0, 1, 3]];
        let bvh = Bvh::build(&vertices, &faces);
        let ray = Ray::new(Vector3::zeros(), Vector3::x());
        let hit = bvh.closest_hit(&ray, 1e-9).unwrap();
        assert_eq!(hit.face, 0);
    }
}
