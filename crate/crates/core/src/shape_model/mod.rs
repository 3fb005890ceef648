//! Point-distribution shape models.
//!
//! Training shapes with identical topology are brought into a common frame
//! by generalized Procrustes alignment, then principal component analysis
//! yields a linear model `x ≈ mean + modes · b`. With N training shapes the
//! eigendecomposition runs on the N×N Gram matrix rather than the 3n×3n
//! covariance, so cost scales with the corpus, not the landmark count.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, SimilarityTransform, TriangleMesh};
use crate::pointreg::{umeyama, PointCloud, RegistrationError};
use crate::Real;

mod io;

pub use io::{load_model, save_model};

#[derive(Debug, thiserror::Error)]
pub enum ShapeModelError {
    #[error("need at least {need} training shapes, got {got}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("shape {index} does not share the reference topology")]
    TopologyMismatch { index: usize },
    #[error("{what} length mismatch: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unsupported schema version {found:?} (expected \"1\")")]
    SchemaVersionMismatch { found: String },
    #[error("model file is inconsistent: {reason}")]
    CorruptModel { reason: String },
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct GpaConfig<T: Real> {
    /// Align with similarity transforms (true) or rigid only (false).
    pub with_scale: bool,
    /// Stop when the RMS movement of the mean shape falls below this.
    pub tol: T,
    pub max_iters: usize,
}

impl<T: Real> Default for GpaConfig<T> {
    fn default() -> Self {
        Self {
            with_scale: true,
            tol: T::of(1e-9),
            max_iters: 100,
        }
    }
}

/// Training set after generalized Procrustes alignment.
#[derive(Debug, Clone)]
pub struct AlignedTrainingSet<T: Real> {
    /// Aligned vertex sets, one per training shape, all in the mean frame.
    pub aligned: Vec<Vec<Vector3<T>>>,
    /// Per-shape transform mapping the *original* shape into the mean frame.
    pub transforms: Vec<SimilarityTransform<T>>,
    /// Mean of the aligned shapes; centered at the origin, and normalized to
    /// unit centroid size when `with_scale` alignment was used.
    pub mean: Vec<Vector3<T>>,
    pub faces: Vec<[u32; 3]>,
    pub with_scale: bool,
    /// Average centroid size of the original shapes (mm); records the
    /// physical scale that unit-size normalization divides out.
    pub mean_centroid_size: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> AlignedTrainingSet<T> {
    pub fn mean_mesh(&self) -> Result<TriangleMesh<T>, GeometryError> {
        TriangleMesh::new(self.mean.clone(), self.faces.clone())
    }
}

/// Root sum of squared deviations from the centroid (the morphometric
/// "centroid size").
pub fn centroid_size<T: Real>(vertices: &[Vector3<T>]) -> T {
    let mut c = Vector3::zeros();
    for v in vertices {
        c += v;
    }
    c /= T::from_usize(vertices.len().max(1)).unwrap();
    let mut sq = T::zero();
    for v in vertices {
        sq += (v - c).norm_squared();
    }
    sq.sqrt()
}

fn center_and_normalize<T: Real>(vertices: &mut [Vector3<T>], with_scale: bool) {
    let mut c = Vector3::zeros();
    for v in vertices.iter() {
        c += v;
    }
    c /= T::from_usize(vertices.len().max(1)).unwrap();
    for v in vertices.iter_mut() {
        *v -= c;
    }
    if with_scale {
        let s = centroid_size(vertices);
        if s > T::zero() {
            for v in vertices.iter_mut() {
                *v /= s;
            }
        }
    }
}

fn rms_vertex_distance<T: Real>(a: &[Vector3<T>], b: &[Vector3<T>]) -> T {
    let mut sq = T::zero();
    for (x, y) in a.iter().zip(b) {
        sq += (x - y).norm_squared();
    }
    (sq / T::from_usize(a.len().max(1)).unwrap()).sqrt()
}

/// Iteratively aligns all shapes to their evolving mean.
///
/// All inputs must share vertex count and face list exactly. The returned
/// mean is centered (and unit-size when scaling is enabled) and equals the
/// average of the aligned shapes.
pub fn generalized_procrustes<T: Real>(
    shapes: &[TriangleMesh<T>],
    config: &GpaConfig<T>,
) -> Result<AlignedTrainingSet<T>, ShapeModelError> {
    if shapes.len() < 2 {
        return Err(ShapeModelError::InsufficientSamples {
            got: shapes.len(),
            need: 2,
        });
    }
    let faces = shapes[0].faces().to_vec();
    let n_vertices = shapes[0].n_vertices();
    for (index, s) in shapes.iter().enumerate() {
        if s.n_vertices() != n_vertices || s.faces() != faces.as_slice() {
            return Err(ShapeModelError::TopologyMismatch { index });
        }
    }

    let originals: Vec<&[Vector3<T>]> = shapes.iter().map(|s| s.vertices()).collect();
    let mut mean_size = T::zero();
    for o in &originals {
        mean_size += centroid_size(o);
    }
    mean_size /= T::from_usize(shapes.len()).unwrap();

    // initial reference: first shape, centered / normalized
    let mut reference: Vec<Vector3<T>> = originals[0].to_vec();
    center_and_normalize(&mut reference, config.with_scale);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        let ref_cloud = PointCloud::new(reference.clone());
        let mut new_mean = vec![Vector3::<T>::zeros(); n_vertices];
        for o in &originals {
            let t = umeyama(
                &PointCloud::new(o.to_vec()),
                &ref_cloud,
                config.with_scale,
            )?;
            for (acc, v) in new_mean.iter_mut().zip(o.iter()) {
                *acc += t.apply(v);
            }
        }
        let inv_n = T::one() / T::from_usize(shapes.len()).unwrap();
        for v in &mut new_mean {
            *v *= inv_n;
        }
        center_and_normalize(&mut new_mean, config.with_scale);
        let movement = rms_vertex_distance(&new_mean, &reference);
        reference = new_mean;
        if movement < config.tol {
            converged = true;
            break;
        }
    }

    // final pass pins the invariants exactly: every shape aligned to the
    // final reference, mean recomputed, recentered, renormalized
    let ref_cloud = PointCloud::new(reference.clone());
    let mut transforms = Vec::with_capacity(shapes.len());
    let mut aligned: Vec<Vec<Vector3<T>>> = Vec::with_capacity(shapes.len());
    for o in &originals {
        let t = umeyama(
            &PointCloud::new(o.to_vec()),
            &ref_cloud,
            config.with_scale,
        )?;
        aligned.push(o.iter().map(|v| t.apply(v)).collect());
        transforms.push(t);
    }
    let inv_n = T::one() / T::from_usize(shapes.len()).unwrap();
    let mut mean = vec![Vector3::<T>::zeros(); n_vertices];
    for a in &aligned {
        for (acc, v) in mean.iter_mut().zip(a) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v *= inv_n;
    }
    // recenter everything by the mean's centroid (and rescale to unit mean
    // size) so `mean` is exactly centered while staying the exact average
    let mut centroid = Vector3::zeros();
    for v in &mean {
        centroid += v;
    }
    centroid /= T::from_usize(n_vertices.max(1)).unwrap();
    for v in &mut mean {
        *v -= centroid;
    }
    let mut scale_fix = T::one();
    if config.with_scale {
        let s = centroid_size(&mean);
        if s > T::zero() {
            scale_fix = T::one() / s;
            for v in &mut mean {
                *v *= scale_fix;
            }
        }
    }
    let fix = SimilarityTransform::new(
        nalgebra::Matrix3::identity(),
        -centroid * scale_fix,
        scale_fix,
    )
    .expect("translation/scale fix is always valid");
    for (a, t) in aligned.iter_mut().zip(&mut transforms) {
        for v in a.iter_mut() {
            *v = fix.apply(v);
        }
        *t = fix.compose(t);
    }

    Ok(AlignedTrainingSet {
        aligned,
        transforms,
        mean,
        faces,
        with_scale: config.with_scale,
        mean_centroid_size: mean_size,
        iterations,
        converged,
    })
}

/// How many principal modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeRule<T: Real> {
    /// Exactly this many modes (clamped to the available rank).
    Fixed(usize),
    /// Smallest count whose cumulative variance reaches this fraction.
    VarianceFraction(T),
}

/// Alignment bookkeeping stored with a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesMeta {
    pub with_scale: bool,
    /// Mean centroid size of the training shapes in mm.
    pub centroid_size: f64,
}

/// Linear point-distribution model `x = mean + modes · b`.
#[derive(Debug, Clone)]
pub struct ShapeModel<T: Real> {
    pub bone_name: String,
    pub n_landmarks: usize,
    /// Flattened mean shape, length `3 * n_landmarks`, xyz interleaved.
    pub mean: DVector<T>,
    /// Orthonormal columns, one per mode; `3 n_landmarks × n_modes`.
    pub modes: DMatrix<T>,
    /// Per-mode variance (descending), sample-covariance normalization.
    pub eigenvalues: DVector<T>,
    pub faces: Vec<[u32; 3]>,
    pub procrustes: ProcrustesMeta,
}

impl<T: Real> ShapeModel<T> {
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn mean_mesh(&self) -> Result<TriangleMesh<T>, ShapeModelError> {
        Ok(TriangleMesh::new(
            unflatten(self.mean.as_slice()),
            self.faces.clone(),
        )?)
    }

    /// Instantiates the shape for coefficient vector `b`.
    pub fn synthesize(&self, coeffs: &[T]) -> Result<TriangleMesh<T>, ShapeModelError> {
        if coeffs.len() != self.n_modes() {
            return Err(ShapeModelError::LengthMismatch {
                what: "coefficient",
                expected: self.n_modes(),
                got: coeffs.len(),
            });
        }
        let b = DVector::from_column_slice(coeffs);
        let x = &self.mean + &self.modes * b;
        Ok(TriangleMesh::new(unflatten(x.as_slice()), self.faces.clone())?)
    }

    /// Least-squares coefficients for a shape in model frame, plus the
    /// per-vertex RMS of the out-of-subspace remainder.
    pub fn project(&self, mesh: &TriangleMesh<T>) -> Result<(Vec<T>, T), ShapeModelError> {
        if mesh.n_vertices() != self.n_landmarks || mesh.faces() != self.faces.as_slice() {
            return Err(ShapeModelError::TopologyMismatch { index: 0 });
        }
        let x = flatten(mesh.vertices());
        let centered = x - &self.mean;
        let b = self.modes.transpose() * &centered;
        let residual_vec = centered - &self.modes * &b;
        let rms = (residual_vec.norm_squared() / T::from_usize(self.n_landmarks).unwrap()).sqrt();
        Ok((b.as_slice().to_vec(), rms))
    }

    /// Clamps each coefficient to `±k·sqrt(eigenvalue)`.
    pub fn clamp_coefficients(&self, coeffs: &[T], k: T) -> Vec<T> {
        coeffs
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let lim = k * self.eigenvalues[i].max(T::zero()).sqrt();
                b.clamp(-lim, lim)
            })
            .collect()
    }

    /// Structural invariants: dimensions agree, modes orthonormal (1e-8),
    /// eigenvalues non-negative and descending, faces in range.
    pub fn validate(&self) -> Result<(), ShapeModelError> {
        let dim = 3 * self.n_landmarks;
        let t = self.n_modes();
        if self.mean.len() != dim {
            return Err(ShapeModelError::CorruptModel {
                reason: format!("mean length {} != 3*n_landmarks {}", self.mean.len(), dim),
            });
        }
        if self.modes.nrows() != dim {
            return Err(ShapeModelError::CorruptModel {
                reason: format!("mode rows {} != 3*n_landmarks {}", self.modes.nrows(), dim),
            });
        }
        if self.eigenvalues.len() != t {
            return Err(ShapeModelError::CorruptModel {
                reason: format!("{} eigenvalues for {} modes", self.eigenvalues.len(), t),
            });
        }
        for i in 0..t {
            let l = self.eigenvalues[i];
            if !(l >= T::zero()) {
                return Err(ShapeModelError::CorruptModel {
                    reason: format!("eigenvalue {i} is negative"),
                });
            }
            if i > 0 && l > self.eigenvalues[i - 1] {
                return Err(ShapeModelError::CorruptModel {
                    reason: format!("eigenvalues not descending at index {i}"),
                });
            }
        }
        let gram = self.modes.transpose() * &self.modes;
        for i in 0..t {
            for j in 0..t {
                let target = if i == j { T::one() } else { T::zero() };
                if (gram[(i, j)] - target).abs() > T::of(1e-8) {
                    return Err(ShapeModelError::CorruptModel {
                        reason: format!("modes not orthonormal at ({i},{j})"),
                    });
                }
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v as usize >= self.n_landmarks {
                    return Err(ShapeModelError::CorruptModel {
                        reason: format!("face {fi} references landmark {v}"),
                    });
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn flatten<T: Real>(vertices: &[Vector3<T>]) -> DVector<T> {
    let mut out = DVector::zeros(vertices.len() * 3);
    for (i, v) in vertices.iter().enumerate() {
        out[3 * i] = v[0];
        out[3 * i + 1] = v[1];
        out[3 * i + 2] = v[2];
    }
    out
}

pub(crate) fn unflatten<T: Real>(x: &[T]) -> Vec<Vector3<T>> {
    x.chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

/// Principal component analysis of an aligned training set.
pub fn build_model<T: Real>(
    aligned: &AlignedTrainingSet<T>,
    rule: ModeRule<T>,
) -> Result<ShapeModel<T>, ShapeModelError> {
    let n = aligned.aligned.len();
    if n < 2 {
        return Err(ShapeModelError::InsufficientSamples { got: n, need: 2 });
    }
    let dim = aligned.mean.len() * 3;
    let mean = flatten(&aligned.mean);

    // centered data, one shape per row
    let mut rows = DMatrix::<T>::zeros(n, dim);
    for (r, shape) in aligned.aligned.iter().enumerate() {
        if shape.len() != aligned.mean.len() {
            return Err(ShapeModelError::TopologyMismatch { index: r });
        }
        for (i, v) in shape.iter().enumerate() {
            for k in 0..3 {
                rows[(r, 3 * i + k)] = v[k] - mean[3 * i + k];
            }
        }
    }

    // Gram trick: eigenvectors of (C Cᵀ)/(N-1) lift to covariance modes
    let gram = (&rows * rows.transpose()) / T::from_usize(n - 1).unwrap();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let lambda_max = eig.eigenvalues[order[0]].max(T::zero());
    let floor = lambda_max * T::of(1e-12);
    let mut kept: Vec<(T, DVector<T>)> = Vec::new();
    for &i in order.iter().take(n - 1) {
        let l = eig.eigenvalues[i];
        if l <= floor || !(l > T::zero()) {
            break;
        }
        kept.push((l, eig.eigenvectors.column(i).into_owned()));
    }
    if kept.is_empty() {
        return Err(ShapeModelError::CorruptModel {
            reason: "training shapes are identical; no variance to model".into(),
        });
    }

    let mut total = T::zero();
    for &(l, _) in &kept {
        total += l;
    }
    let t = match rule {
        ModeRule::Fixed(t) => t.min(kept.len()).max(1),
        ModeRule::VarianceFraction(f) => {
            let mut acc = T::zero();
            let mut t = kept.len();
            for (i, &(l, _)) in kept.iter().enumerate() {
                acc += l;
                if acc >= f * total {
                    t = i + 1;
                    break;
                }
            }
            t
        }
    };

    let mut modes = DMatrix::<T>::zeros(dim, t);
    let mut eigenvalues = DVector::<T>::zeros(t);
    for (k, (l, w)) in kept.into_iter().take(t).enumerate() {
        // lift: Cᵀ w has squared norm (N-1)·λ
        let mut col = rows.transpose() * w;
        let norm = (T::from_usize(n - 1).unwrap() * l).sqrt();
        col /= norm;
        // sign convention: the largest-magnitude entry is positive
        let mut max_abs = T::zero();
        let mut max_idx = 0;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                max_idx = i;
            }
        }
        if col[max_idx] < T::zero() {
            col = -col;
        }
        modes.set_column(k, &col);
        eigenvalues[k] = l;
    }

    let model = ShapeModel {
        bone_name: String::from("bone"),
        n_landmarks: aligned.mean.len(),
        mean,
        modes,
        eigenvalues,
        faces: aligned.faces.clone(),
        procrustes: ProcrustesMeta {
            with_scale: aligned.with_scale,
            centroid_size: aligned.mean_centroid_size.as_f64(),
        },
    };
    model.validate()?;
    Ok(model)
}
