//! Closest-point and ray queries against a triangle mesh.
//!
//! [`MeshDistanceIndex`] is an axis-aligned-bounding-box tree. Queries give
//! bit-identical results to the brute-force scan ([`closest_point_brute`]):
//! per-triangle arithmetic goes through the same [`closest_point_on_triangle`]
//! routine and ties in squared distance resolve to the lowest triangle index,
//! so the winner is the unique lexicographic minimum of `(distance², index)`
//! no matter the traversal order.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::{GeometryError, TriangleMesh};
use crate::Real;

/// Closest point `p` on triangle `abc` (Ericson's region method).
pub fn closest_point_on_triangle<T: Real>(
    p: &Vector3<T>,
    a: &Vector3<T>,
    b: &Vector3<T>,
    c: &Vector3<T>,
) -> Vector3<T> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= T::zero() && d2 <= T::zero() {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= T::zero() && d4 <= d3 {
        return *b;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= T::zero() && d5 <= d6 {
        return *c;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = va + vb + vc;
    if denom <= T::zero() {
        // numerically degenerate (collinear) triangle: fall back to the
        // nearest of the three edges so we never divide by zero
        let on_ab = closest_point_on_segment(p, a, b);
        let on_ac = closest_point_on_segment(p, a, c);
        let on_bc = closest_point_on_segment(p, b, c);
        let mut best = on_ab;
        let mut best_d = (p - on_ab).norm_squared();
        for cand in [on_ac, on_bc] {
            let d = (p - cand).norm_squared();
            if d < best_d {
                best_d = d;
                best = cand;
            }
        }
        return best;
    }
    let inv = T::one() / denom;
    let v = vb * inv;
    let w = vc * inv;
    a + ab * v + ac * w
}

fn closest_point_on_segment<T: Real>(
    p: &Vector3<T>,
    a: &Vector3<T>,
    b: &Vector3<T>,
) -> Vector3<T> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= T::zero() {
        return *a;
    }
    let t = (p - a).dot(&ab) / len2;
    let t = t.clamp(T::zero(), T::one());
    a + ab * t
}

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit<T: Real> {
    pub distance: T,
    pub point: Vector3<T>,
    pub triangle: usize,
}

/// Reference implementation: linear scan over all faces, lowest face index
/// winning ties.
pub fn closest_point_brute<T: Real>(mesh: &TriangleMesh<T>, p: &Vector3<T>) -> ClosestHit<T> {
    let mut best = ClosestHit {
        distance: T::of(f64::INFINITY),
        point: *p,
        triangle: usize::MAX,
    };
    let mut best_d2 = T::of(f64::INFINITY);
    for f in 0..mesh.n_faces() {
        let [a, b, c] = mesh.triangle(f);
        let cp = closest_point_on_triangle(p, &a, &b, &c);
        let d2 = (p - cp).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            best = ClosestHit {
                distance: d2.sqrt(),
                point: cp,
                triangle: f,
            };
        }
    }
    best
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    lo: Vector3<T>,
    hi: Vector3<T>,
    /// Leaf: `(start, count)` into the triangle order; internal: children.
    kind: NodeKind,
}

#[derive(Debug, Clone, Copy)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Split { left: u32, right: u32 },
}

const LEAF_SIZE: usize = 8;

/// Bounding-volume tree over a mesh for closest-point, signed-distance, and
/// ray-crossing queries. Holds its own copy of the geometry.
#[derive(Debug, Clone)]
pub struct MeshDistanceIndex<T: Real> {
    vertices: Vec<Vector3<T>>,
    faces: Vec<[u32; 3]>,
    nodes: Vec<Node<T>>,
    order: Vec<u32>,
    root: u32,
    /// Unit face normals (zero vector for degenerate faces).
    face_normals: Vec<Vector3<T>>,
    /// Angle-weighted vertex normals, unnormalized.
    vertex_pseudo: Vec<Vector3<T>>,
    /// Sum of the two incident unit face normals per undirected edge.
    edge_pseudo: HashMap<(u32, u32), Vector3<T>>,
}

impl<T: Real> MeshDistanceIndex<T> {
    pub fn build(mesh: &TriangleMesh<T>) -> Result<Self, GeometryError> {
        if mesh.n_vertices() == 0 || mesh.n_faces() == 0 {
            return Err(GeometryError::EmptyMesh);
        }
        let vertices = mesh.vertices().to_vec();
        let faces = mesh.faces().to_vec();

        let centroids: Vec<Vector3<T>> = (0..faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / T::of(3.0)
            })
            .collect();
        let mut order: Vec<u32> = (0..faces.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = build_node(&vertices, &faces, &centroids, &mut order, 0, &mut nodes);

        let mut face_normals = Vec::with_capacity(faces.len());
        let mut vertex_pseudo = vec![Vector3::zeros(); vertices.len()];
        let mut edge_pseudo: HashMap<(u32, u32), Vector3<T>> = HashMap::new();
        for f in &faces {
            let a = vertices[f[0] as usize];
            let b = vertices[f[1] as usize];
            let c = vertices[f[2] as usize];
            let raw = (b - a).cross(&(c - a));
            let len = raw.norm();
            let n = if len > T::of(1e-30) { raw / len } else { Vector3::zeros() };
            face_normals.push(n);
            let corners = [a, b, c];
            for k in 0..3 {
                let p = corners[k];
                let q = corners[(k + 1) % 3] - p;
                let r = corners[(k + 2) % 3] - p;
                let denom = q.norm() * r.norm();
                let angle = if denom > T::zero() {
                    (q.dot(&r) / denom).clamp(-T::one(), T::one()).acos()
                } else {
                    T::zero()
                };
                vertex_pseudo[f[k] as usize] += n * angle;
                let (u, v) = (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3]));
                *edge_pseudo.entry((u, v)).or_insert_with(Vector3::zeros) += n;
            }
        }

        Ok(Self {
            vertices,
            faces,
            nodes,
            order,
            root,
            face_normals,
            vertex_pseudo,
            edge_pseudo,
        })
    }

    fn triangle(&self, f: usize) -> [Vector3<T>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unsigned closest point on the surface.
    pub fn closest(&self, p: &Vector3<T>) -> ClosestHit<T> {
        let mut best = ClosestHit {
            distance: T::of(f64::INFINITY),
            point: *p,
            triangle: usize::MAX,
        };
        let mut best_d2 = T::of(f64::INFINITY);
        let mut stack = vec![self.root];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            // equal lower bounds must still be visited: an unexplored node
            // can hide an equally distant triangle with a lower index
            if aabb_dist2(p, &node.lo, &node.hi) > best_d2 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start as usize..(start + count) as usize] {
                        let f = f as usize;
                        let [a, b, c] = self.triangle(f);
                        let cp = closest_point_on_triangle(p, &a, &b, &c);
                        let d2 = (p - cp).norm_squared();
                        if d2 < best_d2 || (d2 == best_d2 && f < best.triangle) {
                            best_d2 = d2;
                            best = ClosestHit {
                                distance: d2.sqrt(),
                                point: cp,
                                triangle: f,
                            };
                        }
                    }
                }
                NodeKind::Split { left, right } => {
                    // visit the nearer child first for tighter pruning
                    let dl = aabb_dist2(p, &self.nodes[left as usize].lo, &self.nodes[left as usize].hi);
                    let dr = aabb_dist2(p, &self.nodes[right as usize].lo, &self.nodes[right as usize].hi);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }

    /// Signed distance: negative inside, sign decided by the angle-weighted
    /// pseudonormal of the closest surface feature.
    pub fn signed_closest(&self, p: &Vector3<T>) -> (T, ClosestHit<T>) {
        let hit = self.closest(p);
        let n = self.pseudonormal(&hit);
        let sign = if (p - hit.point).dot(&n) < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        (sign * hit.distance, hit)
    }

    /// Outward pseudonormal of the feature (face, edge, or vertex) that the
    /// hit's closest point lies on. Unnormalized but never flipped.
    pub fn pseudonormal(&self, hit: &ClosestHit<T>) -> Vector3<T> {
        let f = self.faces[hit.triangle];
        let [a, b, c] = self.triangle(hit.triangle);
        // barycentric coordinates of the closest point
        let v0 = b - a;
        let v1 = c - a;
        let v2 = hit.point - a;
        let d00 = v0.dot(&v0);
        let d01 = v0.dot(&v1);
        let d11 = v1.dot(&v1);
        let d20 = v2.dot(&v0);
        let d21 = v2.dot(&v1);
        let denom = d00 * d11 - d01 * d01;
        if denom <= T::zero() {
            return self.face_normals[hit.triangle];
        }
        let v = (d11 * d20 - d01 * d21) / denom;
        let w = (d00 * d21 - d01 * d20) / denom;
        let u = T::one() - v - w;
        let eps = T::of(1e-8);
        let near = |x: T| x.abs() <= eps;
        let (zu, zv, zw) = (near(u), near(v), near(w));
        match (zu, zv, zw) {
            (false, true, true) => self.vertex_pseudo[f[0] as usize],
            (true, false, true) => self.vertex_pseudo[f[1] as usize],
            (true, true, false) => self.vertex_pseudo[f[2] as usize],
            (false, false, true) => self.edge_pseudo[&(f[0].min(f[1]), f[0].max(f[1]))],
            (false, true, false) => self.edge_pseudo[&(f[0].min(f[2]), f[0].max(f[2]))],
            (true, false, false) => self.edge_pseudo[&(f[1].min(f[2]), f[1].max(f[2]))],
            _ => self.face_normals[hit.triangle],
        }
    }

    /// Generalized winding number of the surface around `p`: ≈1 inside a
    /// closed mesh, ≈0 outside. Exact solid-angle sum over all faces — slow
    /// but immune to the grazing cases that defeat ray parity.
    pub fn winding_number(&self, p: &Vector3<T>) -> T {
        let mut total = T::zero();
        for f in 0..self.faces.len() {
            let [pa, pb, pc] = self.triangle(f);
            let a = pa - p;
            let b = pb - p;
            let c = pc - p;
            let la = a.norm();
            let lb = b.norm();
            let lc = c.norm();
            let numer = a.dot(&b.cross(&c));
            let denom =
                la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += T::of(2.0) * numer.atan2(denom);
        }
        total / (T::two_pi() * T::of(2.0))
    }

    /// Counts ray-surface crossings with `t > 0`. `None` means the ray
    /// grazed an edge, vertex, or coplanar face and the parity cannot be
    /// trusted; retry with another direction.
    pub fn ray_crossings(&self, origin: &Vector3<T>, dir: &Vector3<T>) -> Option<usize> {
        let mut count = 0usize;
        let mut stack = vec![self.root];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if !ray_hits_aabb(origin, dir, &node.lo, &node.hi) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count: c } => {
                    for &f in &self.order[start as usize..(start + c) as usize] {
                        let [a, b, c] = self.triangle(f as usize);
                        match ray_triangle(origin, dir, &a, &b, &c) {
                            RayHit::Miss => {}
                            RayHit::Crossing => count += 1,
                            RayHit::Grazing => return None,
                        }
                    }
                }
                NodeKind::Split { left, right } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        Some(count)
    }
}

enum RayHit {
    Miss,
    Crossing,
    Grazing,
}

fn ray_triangle<T: Real>(
    origin: &Vector3<T>,
    dir: &Vector3<T>,
    a: &Vector3<T>,
    b: &Vector3<T>,
    c: &Vector3<T>,
) -> RayHit {
    let beps = T::of(1e-9);
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < T::of(1e-12) {
        // parallel; only a worry if the origin lies in the triangle's plane
        let n = e1.cross(&e2);
        let nn = n.norm();
        if nn < T::of(1e-30) || ((origin - a).dot(&n) / nn).abs() < T::of(1e-9) {
            return RayHit::Grazing;
        }
        return RayHit::Miss;
    }
    let inv_det = T::one() / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if u < -beps || u > T::one() + beps {
        return RayHit::Miss;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -beps || u + v > T::one() + beps {
        return RayHit::Miss;
    }
    // inside the inflated triangle; near-boundary hits are unreliable
    if u < beps || v < beps || u + v > T::one() - beps {
        return RayHit::Grazing;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t.abs() <= beps {
        return RayHit::Grazing; // origin sits on the surface
    }
    if t > T::zero() {
        RayHit::Crossing
    } else {
        RayHit::Miss
    }
}

fn ray_hits_aabb<T: Real>(
    origin: &Vector3<T>,
    dir: &Vector3<T>,
    lo: &Vector3<T>,
    hi: &Vector3<T>,
) -> bool {
    // slab test, inflated a hair so grazing rays still descend to the
    // triangle test that classifies them
    let pad = T::of(1e-9);
    let mut tmin = T::zero();
    let mut tmax = T::of(f64::INFINITY);
    for k in 0..3 {
        if dir[k] == T::zero() {
            if origin[k] < lo[k] - pad || origin[k] > hi[k] + pad {
                return false;
            }
        } else {
            let inv = T::one() / dir[k];
            let mut t0 = (lo[k] - pad - origin[k]) * inv;
            let mut t1 = (hi[k] + pad - origin[k]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            tmin = tmin.max(t0);
            tmax = tmax.min(t1);
            if tmin > tmax {
                return false;
            }
        }
    }
    true
}

fn aabb_dist2<T: Real>(p: &Vector3<T>, lo: &Vector3<T>, hi: &Vector3<T>) -> T {
    let mut d2 = T::zero();
    for k in 0..3 {
        let c = p[k].clamp(lo[k], hi[k]);
        let d = p[k] - c;
        d2 += d * d;
    }
    d2
}

fn build_node<T: Real>(
    vertices: &[Vector3<T>],
    faces: &[[u32; 3]],
    centroids: &[Vector3<T>],
    order: &mut [u32],
    offset: u32,
    nodes: &mut Vec<Node<T>>,
) -> u32 {
    let mut lo = Vector3::repeat(T::of(f64::INFINITY));
    let mut hi = Vector3::repeat(T::of(f64::NEG_INFINITY));
    for &f in order.iter() {
        for &vi in &faces[f as usize] {
            let v = vertices[vi as usize];
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
    }
    if order.len() <= LEAF_SIZE {
        nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf {
                start: offset,
                count: order.len() as u32,
            },
        });
        return nodes.len() as u32 - 1;
    }
    // split on the widest centroid axis at the median
    let mut clo = Vector3::repeat(T::of(f64::INFINITY));
    let mut chi = Vector3::repeat(T::of(f64::NEG_INFINITY));
    for &f in order.iter() {
        let c = centroids[f as usize];
        for k in 0..3 {
            clo[k] = clo[k].min(c[k]);
            chi[k] = chi[k].max(c[k]);
        }
    }
    let mut axis = 0;
    for k in 1..3 {
        if chi[k] - clo[k] > chi[axis] - clo[axis] {
            axis = k;
        }
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        let ca = centroids[a as usize][axis];
        let cb = centroids[b as usize][axis];
        ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
    });
    let (left_half, right_half) = order.split_at_mut(mid);
    let left = build_node(vertices, faces, centroids, left_half, offset, nodes);
    let right = build_node(
        vertices,
        faces,
        centroids,
        right_half,
        offset + mid as u32,
        nodes,
    );
    nodes.push(Node {
        lo,
        hi,
        kind: NodeKind::Split { left, right },
    });
    nodes.len() as u32 - 1
}
