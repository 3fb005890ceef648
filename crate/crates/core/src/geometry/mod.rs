//! Triangle meshes in physical (millimetre) coordinates, similarity
//! transforms, mirroring, and surface-to-surface distance queries.
//!
//! Winding convention: counter-clockwise seen from outside, so
//! `cross(b - a, c - a)` points outward.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};

use crate::Real;

mod closest;
mod obj;

pub use closest::{closest_point_brute, closest_point_on_triangle, ClosestHit, MeshDistanceIndex};
pub use obj::{read_obj, write_obj};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("face {face} references vertex {index} but mesh has {n_vertices} vertices")]
    IndexOutOfRange {
        face: usize,
        index: u32,
        n_vertices: usize,
    },
    #[error("face {face} repeats vertex {index}")]
    RepeatedVertex { face: usize, index: u32 },
    #[error("vertex {index} has no incident faces or a degenerate normal")]
    DegenerateVertex { index: usize },
    #[error("mesh has no vertices or no faces")]
    EmptyMesh,
    #[error("line {line}: face with {arity} vertices; only triangles are supported")]
    NonTriangular { line: usize, arity: usize },
    #[error("{what} count mismatch: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("rotation matrix is not orthonormal (max deviation {deviation})")]
    NotOrthonormal { deviation: f64 },
    #[error("scale must be finite and positive, got {scale}")]
    BadScale { scale: f64 },
    #[error("plane normal has zero length")]
    ZeroNormal,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Indexed triangle mesh. Faces are validated on construction: indices in
/// range and no vertex repeated within a face.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh<T: Real> {
    vertices: Vec<Vector3<T>>,
    faces: Vec<[u32; 3]>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn new(vertices: Vec<Vector3<T>>, faces: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        for (fi, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx as usize >= vertices.len() {
                    return Err(GeometryError::IndexOutOfRange {
                        face: fi,
                        index: idx,
                        n_vertices: vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                let dup = if f[0] == f[1] || f[0] == f[2] { f[0] } else { f[1] };
                return Err(GeometryError::RepeatedVertex { face: fi, index: dup });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same topology, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vector3<T>>) -> Result<Self, GeometryError> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::LengthMismatch {
                what: "vertex",
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Corner positions of face `f`.
    pub fn triangle(&self, f: usize) -> [Vector3<T>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn centroid(&self) -> Vector3<T> {
        let mut sum = Vector3::zeros();
        for v in &self.vertices {
            sum += v;
        }
        sum / T::from_usize(self.vertices.len().max(1)).unwrap()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> Option<(Vector3<T>, Vector3<T>)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        Some((lo, hi))
    }

    /// Maps every vertex through `t`; connectivity is untouched.
    pub fn transformed(&self, t: &SimilarityTransform<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Reflects the mesh through `plane` and flips every face so windings
    /// stay outward-coherent.
    pub fn mirrored(&self, plane: &MirrorPlane<T>) -> Self {
        let vertices = self.vertices.iter().map(|v| plane.reflect(v)).collect();
        let faces = self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect();
        Self { vertices, faces }
    }

    /// Area-weighted outward vertex normals. Fails with the offending index
    /// if a vertex has no incident faces or its accumulated normal vanishes.
    pub fn vertex_normals(&self) -> Result<Vec<Vector3<T>>, GeometryError> {
        let mut acc = vec![Vector3::<T>::zeros(); self.vertices.len()];
        for f in &self.faces {
            let a = self.vertices[f[0] as usize];
            let b = self.vertices[f[1] as usize];
            let c = self.vertices[f[2] as usize];
            // cross product magnitude = 2 * area, so summing it directly
            // gives area weighting for free
            let n = (b - a).cross(&(c - a));
            for &idx in f {
                acc[idx as usize] += n;
            }
        }
        acc.into_iter()
            .enumerate()
            .map(|(index, n)| {
                let len = n.norm();
                if len <= T::of(1e-12) {
                    Err(GeometryError::DegenerateVertex { index })
                } else {
                    Ok(n / len)
                }
            })
            .collect()
    }

    /// Signed enclosed volume by the divergence theorem; positive for
    /// outward-coherent windings.
    pub fn signed_volume(&self) -> T {
        let six = T::of(6.0);
        let mut total = T::zero();
        for f in &self.faces {
            let a = self.vertices[f[0] as usize];
            let b = self.vertices[f[1] as usize];
            let c = self.vertices[f[2] as usize];
            total += a.dot(&b.cross(&c)) / six;
        }
        total
    }

    /// True when every undirected edge is shared by exactly two faces with
    /// opposite directions (closed, orientable, coherent windings).
    pub fn is_closed(&self) -> bool {
        use std::collections::HashMap;
        let mut edges: HashMap<(u32, u32), (u32, u32)> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let u = f[e];
                let v = f[(e + 1) % 3];
                let slot = edges.entry((u.min(v), u.max(v))).or_insert((0, 0));
                if u < v {
                    slot.0 += 1;
                } else {
                    slot.1 += 1;
                }
            }
        }
        !self.faces.is_empty() && edges.values().all(|&(fwd, rev)| fwd == 1 && rev == 1)
    }
}

/// Rigid or similarity transform `p -> scale * R * p + t` with `R` a proper
/// rotation. Construction validates orthonormality, `det(R) = +1`, and a
/// positive finite scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
    scale: T,
}

impl<T: Real> SimilarityTransform<T> {
    pub fn new(
        rotation: Matrix3<T>,
        translation: Vector3<T>,
        scale: T,
    ) -> Result<Self, GeometryError> {
        let tol = T::orthonormal_tol();
        let gram = rotation.transpose() * rotation;
        let mut dev = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                let e = (gram[(i, j)] - target).abs();
                // written so that NaN poisons `dev` instead of vanishing
                if !(e <= dev) {
                    dev = e;
                }
            }
        }
        let det_err = (rotation.determinant() - T::one()).abs();
        if !(det_err <= dev) {
            dev = det_err;
        }
        if !(dev <= tol) {
            return Err(GeometryError::NotOrthonormal {
                deviation: dev.as_f64(),
            });
        }
        if !(scale > T::zero() && scale.as_f64().is_finite()) {
            return Err(GeometryError::BadScale {
                scale: scale.as_f64(),
            });
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: T::one(),
        }
    }

    pub fn rigid(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeometryError> {
        Self::new(rotation, translation, T::one())
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
            scale: T::one(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn is_rigid(&self) -> bool {
        (self.scale - T::one()).abs() <= T::orthonormal_tol()
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p * self.scale + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = T::one() / self.scale;
        let rot_t = self.rotation.transpose();
        Self {
            rotation: rot_t,
            translation: -(rot_t * self.translation * inv_scale),
            scale: inv_scale,
        }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> T {
        rotation_axis_angle(&self.rotation).1
    }

    /// Row-major 4x4 homogeneous matrix of `scale * R | t`.
    pub fn to_matrix_rows(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = (self.rotation[(r, c)] * self.scale).as_f64();
            }
            m[r][3] = self.translation[r].as_f64();
        }
        m[3][3] = 1.0;
        m
    }

    /// Inverse of [`Self::to_matrix_rows`]. The linear block must factor as
    /// `scale * R` with `R` a proper rotation.
    pub fn from_matrix_rows(m: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        let linear = Matrix3::<T>::from_fn(|r, c| T::of(m[r][c]));
        let det = linear.determinant();
        if !(det > T::zero() && det.as_f64().is_finite()) {
            return Err(GeometryError::BadScale {
                scale: det.as_f64(),
            });
        }
        let scale = det.powf(T::one() / T::of(3.0));
        let rotation = linear / scale;
        let translation = Vector3::from_fn(|r, _| T::of(m[r][3]));
        Self::new(rotation, translation, scale)
    }
}

/// Extracts `(axis, angle)` with `angle` in `[0, π]` from a proper rotation.
/// The identity maps to `(+z, 0)`.
pub fn rotation_axis_angle<T: Real>(r: &Matrix3<T>) -> (Vector3<T>, T) {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    match q.axis_angle() {
        None => (Vector3::z(), T::zero()),
        Some((axis, angle)) => {
            let (mut axis, mut angle) = (axis.into_inner(), angle);
            if angle < T::zero() {
                axis = -axis;
                angle = -angle;
            }
            if angle > T::pi() {
                angle = T::two_pi() - angle;
                axis = -axis;
            }
            (axis, angle)
        }
    }
}

/// Proper rotation about `axis` (normalized internally) by `angle` radians.
pub fn rotation_from_axis_angle<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Reflection plane given by a point and a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorPlane<T: Real> {
    point: Vector3<T>,
    normal: Vector3<T>,
}

impl<T: Real> MirrorPlane<T> {
    /// Normalizes `normal`; fails if it has (near-)zero length.
    pub fn new(point: Vector3<T>, normal: Vector3<T>) -> Result<Self, GeometryError> {
        let len = normal.norm();
        if len <= T::of(1e-12) {
            return Err(GeometryError::ZeroNormal);
        }
        Ok(Self {
            point,
            normal: normal / len,
        })
    }

    /// The sagittal plane x = 0.
    pub fn yz() -> Self {
        Self {
            point: Vector3::zeros(),
            normal: Vector3::x(),
        }
    }

    pub fn point(&self) -> &Vector3<T> {
        &self.point
    }

    pub fn normal(&self) -> &Vector3<T> {
        &self.normal
    }

    /// Signed distance of `p` from the plane, positive on the normal side.
    pub fn signed_distance(&self, p: &Vector3<T>) -> T {
        (p - self.point).dot(&self.normal)
    }

    pub fn reflect(&self, p: &Vector3<T>) -> Vector3<T> {
        p - self.normal * (T::of(2.0) * self.signed_distance(p))
    }
}

/// Summary of vertex-to-surface distances.
#[derive(Debug, Clone)]
pub struct SurfaceDistanceStats<T: Real> {
    pub mean: T,
    pub rms: T,
    /// Maximum distance; the Hausdorff distance when `symmetric`.
    pub max: T,
    /// One entry per source vertex; both directions concatenated
    /// (source-to-target then target-to-source) when `symmetric`.
    pub per_vertex: Vec<T>,
    pub symmetric: bool,
}

fn directed_distances<T: Real>(
    from: &TriangleMesh<T>,
    to_index: &MeshDistanceIndex<T>,
) -> Vec<T> {
    use rayon::prelude::*;
    from.vertices()
        .par_iter()
        .map(|v| to_index.closest(v).distance)
        .collect()
}

fn distance_summary<T: Real>(d: &[T]) -> (T, T, T) {
    let n = T::from_usize(d.len()).unwrap();
    let mut sum = T::zero();
    let mut sq = T::zero();
    let mut max = T::zero();
    for &x in d {
        sum += x;
        sq += x * x;
        max = max.max(x);
    }
    (sum / n, (sq / n).sqrt(), max)
}

/// Distances from the vertices of `source` to the surface of `target`;
/// with `symmetric`, both directions are measured and the means/RMS are
/// averaged while `max` becomes the symmetric Hausdorff distance.
pub fn surface_distance<T: Real>(
    source: &TriangleMesh<T>,
    target: &TriangleMesh<T>,
    symmetric: bool,
) -> Result<SurfaceDistanceStats<T>, GeometryError> {
    if source.n_vertices() == 0 || target.n_vertices() == 0 || target.n_faces() == 0 {
        return Err(GeometryError::EmptyMesh);
    }
    let target_index = MeshDistanceIndex::build(target)?;
    let mut per_vertex = directed_distances(source, &target_index);
    let (mut mean, mut rms, mut max) = distance_summary(&per_vertex);
    if symmetric {
        if source.n_faces() == 0 {
            return Err(GeometryError::EmptyMesh);
        }
        let source_index = MeshDistanceIndex::build(source)?;
        let back = directed_distances(target, &source_index);
        let (mean_b, rms_b, max_b) = distance_summary(&back);
        let half = T::of(0.5);
        mean = (mean + mean_b) * half;
        rms = (rms + rms_b) * half;
        max = max.max(max_b);
        per_vertex.extend(back);
    }
    Ok(SurfaceDistanceStats {
        mean,
        rms,
        max,
        per_vertex,
        symmetric,
    })
}
