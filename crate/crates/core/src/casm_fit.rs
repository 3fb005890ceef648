//! Coupled fitting of shape models to gradient volumes.
//!
//! The pipeline blurs the volume, takes its gradient magnitude, rigidly
//! registers the union of all mean shapes onto the strong-gradient voxels,
//! then alternates per-bone profile search, closed-form pose + coefficient
//! updates, and a cross-bone proximity projection until the surfaces stop
//! moving. Each sub-step is closed form, so the loop is deterministic and
//! independent of thread count.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    GeometryError, MeshDistanceIndex, SimilarityTransform, TriangleMesh,
};
use crate::pointreg::{cpd_rigid, umeyama, CpdConfig, PointCloud, RegistrationError};
use crate::shape_model::{ShapeModel, ShapeModelError};
use crate::volume::{Volume3, VolumeError};
use crate::Real;

/// Mode coefficients of a fitted shape, in mm.
pub type ShapeCoefficients<T> = Vec<T>;

/// Bones whose profile search targets fewer vertices than this fraction are
/// declared failed for the run; they would otherwise drift freely.
const MIN_TARGETED_FRACTION: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("invalid fit config: {reason}")]
    BadConfig { reason: String },
    #[error("edge cloud has {found} points, need at least {need}")]
    InsufficientEdges { found: usize, need: usize },
    #[error("{targeted} usable profile targets, pose fitting needs at least {need}")]
    TooFewTargets { targeted: usize, need: usize },
    #[error("coupled model set: {reason}")]
    BadModelSet { reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Model(#[from] ShapeModelError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Tuning knobs for [`fit_coupled`] and its sub-steps. All distances in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Search extent each way along the vertex normal.
    pub profile_half_length: f64,
    /// Sampling step along the profile.
    pub profile_step: f64,
    /// Volume-wide gradient percentile a sample must strictly exceed to
    /// count as an edge.
    pub gradient_threshold_percentile: f64,
    /// Coefficient clamp in standard deviations per mode.
    pub clamp_k: f64,
    pub max_iters: usize,
    /// Stop when the mean vertex movement of one iteration falls below this.
    pub convergence_tol: f64,
    /// Gaussian blur applied to the volume before the gradient (0 = none).
    pub blur_sigma: f64,
    /// Minimum edge-cloud size for coarse initialization.
    pub min_edge_points: usize,
    /// Edge clouds larger than this are strided down before registration.
    pub max_edge_points: usize,
    /// Fraction of each proximity violation corrected per iteration (0–1).
    pub proximity_strength: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            profile_half_length: 6.0,
            profile_step: 0.5,
            gradient_threshold_percentile: 80.0,
            clamp_k: 3.0,
            max_iters: 50,
            convergence_tol: 0.05,
            blur_sigma: 1.0,
            min_edge_points: 500,
            max_edge_points: 4000,
            proximity_strength: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let fail = |reason: String| Err(FitError::BadConfig { reason });
        if !(self.profile_step > 0.0) {
            return fail(format!("profile_step {} must be > 0", self.profile_step));
        }
        if self.profile_half_length < self.profile_step {
            return fail(format!(
                "profile_half_length {} must be at least one step ({})",
                self.profile_half_length, self.profile_step
            ));
        }
        if !(self.gradient_threshold_percentile > 0.0
            && self.gradient_threshold_percentile < 100.0)
        {
            return fail(format!(
                "gradient_threshold_percentile {} must lie strictly between 0 and 100",
                self.gradient_threshold_percentile
            ));
        }
        if !(self.clamp_k > 0.0) {
            return fail(format!("clamp_k {} must be > 0", self.clamp_k));
        }
        if !(self.convergence_tol >= 0.0) {
            return fail(format!(
                "convergence_tol {} must be non-negative",
                self.convergence_tol
            ));
        }
        if !(self.blur_sigma >= 0.0) {
            return fail(format!("blur_sigma {} must be non-negative", self.blur_sigma));
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        if self.min_edge_points == 0 || self.max_edge_points < self.min_edge_points {
            return fail(format!(
                "edge point bounds {}..{} are not a valid range",
                self.min_edge_points, self.max_edge_points
            ));
        }
        if !(0.0..=1.0).contains(&self.proximity_strength) {
            return fail(format!(
                "proximity_strength {} must lie in [0, 1]",
                self.proximity_strength
            ));
        }
        Ok(())
    }
}

/// Minimum allowed surface separation between two bones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityConstraint {
    pub bone_a: String,
    pub bone_b: String,
    /// Articular joint width in mm.
    pub min_gap: f64,
}

/// Shape models of adjacent bones sharing one joint frame.
#[derive(Debug, Clone)]
pub struct CoupledModelSet<T: Real> {
    pub models: BTreeMap<String, ShapeModel<T>>,
    pub constraints: Vec<ProximityConstraint>,
    /// Placement of each model-frame mean shape in the joint frame.
    pub rest_offsets: BTreeMap<String, SimilarityTransform<T>>,
}

impl<T: Real> CoupledModelSet<T> {
    /// Checks referential integrity and that the rest configuration already
    /// satisfies every constraint (gaps measured vertex-to-surface).
    pub fn validate(&self) -> Result<(), FitError> {
        let fail = |reason: String| Err(FitError::BadModelSet { reason });
        for name in self.models.keys() {
            if !self.rest_offsets.contains_key(name) {
                return fail(format!("bone {name} has no rest offset"));
            }
        }
        for c in &self.constraints {
            if c.bone_a == c.bone_b {
                return fail(format!("constraint pairs {} with itself", c.bone_a));
            }
            if !(c.min_gap >= 0.0) {
                return fail(format!(
                    "constraint {}–{} has negative min_gap {}",
                    c.bone_a, c.bone_b, c.min_gap
                ));
            }
            for bone in [&c.bone_a, &c.bone_b] {
                if !self.models.contains_key(bone) {
                    return fail(format!("constraint references unknown bone {bone}"));
                }
            }
        }
        let rest = self.rest_meshes()?;
        for c in &self.constraints {
            let gap = min_vertex_gap(&rest[&c.bone_a], &rest[&c.bone_b])?;
            if gap.as_f64() < c.min_gap - 1e-9 {
                return fail(format!(
                    "rest gap {} between {} and {} violates min_gap {}",
                    gap.as_f64(),
                    c.bone_a,
                    c.bone_b,
                    c.min_gap
                ));
            }
        }
        Ok(())
    }

    /// Mean meshes placed at their rest offsets.
    pub fn rest_meshes(&self) -> Result<BTreeMap<String, TriangleMesh<T>>, FitError> {
        let mut out = BTreeMap::new();
        for (name, model) in &self.models {
            let mesh = model.mean_mesh()?.transformed(&self.rest_offsets[name]);
            out.insert(name.clone(), mesh);
        }
        Ok(out)
    }
}

/// Smallest vertex-to-surface distance between two meshes, negative if any
/// vertex lies inside the partner.
fn min_vertex_gap<T: Real>(
    a: &TriangleMesh<T>,
    b: &TriangleMesh<T>,
) -> Result<T, FitError> {
    let index_b = MeshDistanceIndex::build(b)?;
    let index_a = MeshDistanceIndex::build(a)?;
    let mut gap = T::of(f64::INFINITY);
    for v in a.vertices() {
        gap = gap.min(index_b.signed_closest(v).0);
    }
    for v in b.vertices() {
        gap = gap.min(index_a.signed_closest(v).0);
    }
    Ok(gap)
}

/// Nearest-rank percentile of the volume's values.
pub fn gradient_percentile<T: Real>(volume: &Volume3<T>, percentile: f64) -> T {
    let mut values: Vec<T> = volume.data().to_vec();
    let n = values.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, nth, _) = values.select_nth_unstable_by(rank, |a, b| {
        a.partial_cmp(b).expect("volume values must not be NaN")
    });
    *nth
}

/// Centers of voxels whose value strictly exceeds the percentile threshold,
/// strided down to `max_edge_points`. Returns the cloud and the threshold.
pub fn extract_edge_cloud<T: Real>(
    grad: &Volume3<T>,
    config: &FitConfig,
) -> Result<(PointCloud<T>, T), FitError> {
    let threshold = gradient_percentile(grad, config.gradient_threshold_percentile);
    let [nx, ny, nz] = grad.dims();
    let mut points = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if grad.value(i, j, k) > threshold {
                    points.push(grad.world_from_voxel(&Vector3::new(
                        T::from_usize(i).unwrap(),
                        T::from_usize(j).unwrap(),
                        T::from_usize(k).unwrap(),
                    )));
                }
            }
        }
    }
    if points.len() < config.min_edge_points {
        return Err(FitError::InsufficientEdges {
            found: points.len(),
            need: config.min_edge_points,
        });
    }
    Ok((
        PointCloud::new(points).strided(config.max_edge_points),
        threshold,
    ))
}

/// Rigidly registers a mean mesh onto the gradient's edge cloud (scale
/// enabled) and returns the mesh→world transform.
pub fn coarse_initialize<T: Real>(
    mean_mesh: &TriangleMesh<T>,
    grad: &Volume3<T>,
    config: &FitConfig,
) -> Result<SimilarityTransform<T>, FitError> {
    config.validate()?;
    let (edges, _) = extract_edge_cloud(grad, config)?;
    let src = PointCloud::new(mean_mesh.vertices().to_vec());
    let report = cpd_rigid(
        &src,
        &edges,
        &CpdConfig {
            with_scale: true,
            ..CpdConfig::default()
        },
    )?;
    Ok(report.transform)
}

/// Best edge position along each vertex normal, or `None` when no sample
/// strictly exceeds the volume-wide gradient threshold.
///
/// Offsets are visited in the order 0, −s, +s, −2s, +2s, … and a candidate
/// must be strictly better to replace the current best, so ties resolve
/// toward the smaller |offset| and, between equal offsets, toward the inward
/// (−normal) side.
pub fn profile_search<T: Real>(
    mesh: &TriangleMesh<T>,
    grad: &Volume3<T>,
    config: &FitConfig,
) -> Result<Vec<Option<Vector3<T>>>, FitError> {
    config.validate()?;
    let threshold = gradient_percentile(grad, config.gradient_threshold_percentile);
    profile_search_thresholded(mesh, grad, config, threshold)
}

fn profile_search_thresholded<T: Real>(
    mesh: &TriangleMesh<T>,
    grad: &Volume3<T>,
    config: &FitConfig,
    threshold: T,
) -> Result<Vec<Option<Vector3<T>>>, FitError> {
    let normals = mesh.vertex_normals()?;
    let step = T::of(config.profile_step);
    let n_steps = (config.profile_half_length / config.profile_step).floor() as i64;
    let targets: Vec<Option<Vector3<T>>> = mesh
        .vertices()
        .par_iter()
        .zip(normals.par_iter())
        .map(|(v, n)| {
            let mut best: Option<(T, Vector3<T>)> = None;
            let mut consider = |k: i64| {
                let p = v + n * (step * T::of(k as f64));
                let g = grad.sample_trilinear(&p, T::zero());
                if g > threshold && best.map_or(true, |(bg, _)| g > bg) {
                    best = Some((g, p));
                }
            };
            consider(0);
            for k in 1..=n_steps {
                consider(-k);
                consider(k);
            }
            best.map(|(_, p)| p)
        })
        .collect();
    Ok(targets)
}

/// One alternating update: refit the pose to the targeted vertices by a
/// closed-form similarity fit, pull the targets back into the model frame
/// (untargeted vertices keep their current model-frame positions), then
/// project onto the modes and clamp to ±clamp_k·√λ.
///
/// Degenerate target sets (fewer than 4, or all coplanar) report
/// [`FitError::TooFewTargets`].
pub fn constrain_to_model<T: Real>(
    model: &ShapeModel<T>,
    current_coeffs: &[T],
    targets: &[Option<Vector3<T>>],
    clamp_k: T,
) -> Result<(SimilarityTransform<T>, ShapeCoefficients<T>), FitError> {
    let current_shape = model.synthesize(current_coeffs)?;
    if targets.len() != current_shape.n_vertices() {
        return Err(FitError::BadModelSet {
            reason: format!(
                "{} targets for a model with {} landmarks",
                targets.len(),
                current_shape.n_vertices()
            ),
        });
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (v, t) in current_shape.vertices().iter().zip(targets) {
        if let Some(t) = t {
            src.push(*v);
            dst.push(*t);
        }
    }
    let targeted = src.len();
    if targeted < 4 {
        return Err(FitError::TooFewTargets { targeted, need: 4 });
    }
    let pose = match umeyama(&PointCloud::new(src), &PointCloud::new(dst), true) {
        Ok(t) => t,
        Err(RegistrationError::DegenerateConfiguration { .. }) => {
            return Err(FitError::TooFewTargets { targeted, need: 4 })
        }
        Err(e) => return Err(e.into()),
    };

    let inverse = pose.inverse();
    let pulled: Vec<Vector3<T>> = current_shape
        .vertices()
        .iter()
        .zip(targets)
        .map(|(v, t)| match t {
            Some(t) => inverse.apply(t),
            None => *v,
        })
        .collect();
    let (raw, _) = model.project(&current_shape.with_vertices(pulled)?)?;
    let coeffs = model.clamp_coefficients(&raw, clamp_k);
    Ok((pose, coeffs))
}

/// One projection pass of the proximity constraints: every vertex closer to
/// a constrained partner than `min_gap` (inside counts as negative) moves
/// away along the closest-point direction by `strength × (min_gap − d)`.
/// All displacements are computed against the input meshes, then applied,
/// so the pass is symmetric and order-independent.
pub fn enforce_proximity<T: Real>(
    meshes: &BTreeMap<String, TriangleMesh<T>>,
    constraints: &[ProximityConstraint],
    strength: T,
) -> Result<BTreeMap<String, TriangleMesh<T>>, FitError> {
    let mut displacement: BTreeMap<String, Vec<Vector3<T>>> = meshes
        .iter()
        .map(|(name, m)| (name.clone(), vec![Vector3::zeros(); m.n_vertices()]))
        .collect();

    for c in &self_checked(constraints, meshes)? {
        let (a, b) = (&meshes[&c.bone_a], &meshes[&c.bone_b]);
        let min_gap = T::of(c.min_gap);
        push_apart(a, b, min_gap, strength, displacement.get_mut(&c.bone_a).unwrap())?;
        push_apart(b, a, min_gap, strength, displacement.get_mut(&c.bone_b).unwrap())?;
    }

    let mut out = BTreeMap::new();
    for (name, mesh) in meshes {
        let moved: Vec<Vector3<T>> = mesh
            .vertices()
            .iter()
            .zip(&displacement[name])
            .map(|(v, d)| v + d)
            .collect();
        out.insert(name.clone(), mesh.with_vertices(moved)?);
    }
    Ok(out)
}

fn self_checked<'c, T: Real>(
    constraints: &'c [ProximityConstraint],
    meshes: &BTreeMap<String, TriangleMesh<T>>,
) -> Result<Vec<&'c ProximityConstraint>, FitError> {
    let mut out = Vec::new();
    for c in constraints {
        for bone in [&c.bone_a, &c.bone_b] {
            if !meshes.contains_key(bone) {
                return Err(FitError::BadModelSet {
                    reason: format!("proximity constraint references missing bone {bone}"),
                });
            }
        }
        out.push(c);
    }
    Ok(out)
}

/// Accumulates the push on `mover`'s vertices away from `anchor`.
fn push_apart<T: Real>(
    mover: &TriangleMesh<T>,
    anchor: &TriangleMesh<T>,
    min_gap: T,
    strength: T,
    displacement: &mut [Vector3<T>],
) -> Result<(), FitError> {
    let index = MeshDistanceIndex::build(anchor)?;
    let pushes: Vec<Option<Vector3<T>>> = mover
        .vertices()
        .par_iter()
        .map(|v| {
            let (d, hit) = index.signed_closest(v);
            if d >= min_gap {
                return None;
            }
            let offset = v - hit.point;
            let dir = if offset.norm() > T::of(1e-12) {
                // away from the partner: outward for outside vertices,
                // back through the surface for inside ones
                offset.normalize() * d.signum()
            } else {
                let n = index.pseudonormal(&hit);
                n.normalize()
            };
            Some(dir * (strength * (min_gap - d)))
        })
        .collect();
    for (slot, push) in displacement.iter_mut().zip(pushes) {
        if let Some(p) = push {
            *slot += p;
        }
    }
    Ok(())
}

/// Per-bone outcome of a coupled fit.
#[derive(Debug, Clone)]
pub struct BoneFit<T: Real> {
    /// Final surface in world frame, including proximity adjustments.
    pub mesh: TriangleMesh<T>,
    /// Model frame → world frame.
    pub pose: SimilarityTransform<T>,
    pub coeffs: ShapeCoefficients<T>,
    /// RMS distance from the final surface to its profile targets; `None`
    /// when the bone failed before producing targets.
    pub residual: Option<T>,
    /// Fraction of vertices whose profile found an edge.
    pub targeted_fraction: T,
    /// Iterations this bone participated in.
    pub iterations: usize,
    pub converged: bool,
    /// Why the bone was abandoned, when it was.
    pub failure: Option<String>,
}

/// Result of [`fit_coupled`]: per-bone fits plus the movement trace.
#[derive(Debug, Clone)]
pub struct FitResult<T: Real> {
    pub bones: BTreeMap<String, BoneFit<T>>,
    /// Mean vertex movement (mm) of each iteration, over live bones.
    pub movement_log: Vec<T>,
}

impl<T: Real> FitResult<T> {
    pub fn all_failed(&self) -> bool {
        self.bones.values().all(|b| b.failure.is_some())
    }
}

struct BoneState<T: Real> {
    pose: SimilarityTransform<T>,
    coeffs: Vec<T>,
    mesh: TriangleMesh<T>,
    targeted_fraction: T,
    iterations: usize,
    failure: Option<String>,
}

/// Fits every model of the set to the volume.
///
/// Pipeline: blur → gradient magnitude → joint rigid initialization of all
/// bones as one assembly → iterate [profile search per bone; pose +
/// coefficient update per bone; proximity projection across bones] until the
/// mean vertex movement drops below `convergence_tol` or `max_iters` is
/// reached. A bone that cannot produce enough targets is marked failed and
/// the others continue; constraints touching failed bones are suspended.
pub fn fit_coupled<T: Real>(
    set: &CoupledModelSet<T>,
    volume: &Volume3<T>,
    config: &FitConfig,
) -> Result<FitResult<T>, FitError> {
    config.validate()?;
    set.validate()?;

    let blurred;
    let working = if config.blur_sigma > 0.0 {
        blurred = volume.gaussian_blur(T::of(config.blur_sigma));
        &blurred
    } else {
        volume
    };
    let grad = working.gradient_magnitude()?;

    // a failed edge extraction or joint registration fails every bone
    let fail_all = |message: String| -> Result<FitResult<T>, FitError> {
        let mut bones = BTreeMap::new();
        for (name, model) in &set.models {
            bones.insert(
                name.clone(),
                BoneFit {
                    mesh: model.mean_mesh()?.transformed(&set.rest_offsets[name]),
                    pose: set.rest_offsets[name].clone(),
                    coeffs: vec![T::zero(); model.n_modes()],
                    residual: None,
                    targeted_fraction: T::zero(),
                    iterations: 0,
                    converged: false,
                    failure: Some(message.clone()),
                },
            );
        }
        Ok(FitResult {
            bones,
            movement_log: Vec::new(),
        })
    };

    let (edges, threshold) = match extract_edge_cloud(&grad, config) {
        Ok(pair) => pair,
        Err(e @ FitError::InsufficientEdges { .. }) => return fail_all(e.to_string()),
        Err(e) => return Err(e),
    };

    // joint initialization: register the whole rest assembly as one cloud,
    // then seed each bone with assembly ∘ rest offset
    let mut union = Vec::new();
    for (name, model) in &set.models {
        let offset = &set.rest_offsets[name];
        union.extend(model.mean_mesh()?.vertices().iter().map(|v| offset.apply(v)));
    }
    let assembly = match cpd_rigid(
        &PointCloud::new(union),
        &edges,
        &CpdConfig {
            with_scale: true,
            ..CpdConfig::default()
        },
    ) {
        Ok(report) => report.transform,
        Err(e) => return fail_all(format!("joint initialization failed: {e}")),
    };

    let clamp_k = T::of(config.clamp_k);
    let mut states: BTreeMap<String, BoneState<T>> = BTreeMap::new();
    for (name, model) in &set.models {
        let pose = assembly.compose(&set.rest_offsets[name]);
        let mesh = model.mean_mesh()?.transformed(&pose);
        states.insert(
            name.clone(),
            BoneState {
                pose,
                coeffs: vec![T::zero(); model.n_modes()],
                mesh,
                targeted_fraction: T::zero(),
                iterations: 0,
                failure: None,
            },
        );
    }

    let mut movement_log = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let previous: BTreeMap<String, TriangleMesh<T>> = states
            .iter()
            .filter(|(_, s)| s.failure.is_none())
            .map(|(n, s)| (n.clone(), s.mesh.clone()))
            .collect();
        if previous.is_empty() {
            break;
        }

        for (name, state) in states.iter_mut() {
            if state.failure.is_some() {
                continue;
            }
            state.iterations += 1;
            let model = &set.models[name];
            let targets =
                match profile_search_thresholded(&state.mesh, &grad, config, threshold) {
                    Ok(t) => t,
                    Err(e) => {
                        state.failure = Some(e.to_string());
                        continue;
                    }
                };
            let targeted = targets.iter().filter(|t| t.is_some()).count();
            state.targeted_fraction =
                T::from_usize(targeted).unwrap() / T::from_usize(targets.len()).unwrap();
            if state.targeted_fraction.as_f64() < MIN_TARGETED_FRACTION {
                state.failure = Some(format!(
                    "targeted fraction {:.3} below minimum {MIN_TARGETED_FRACTION}",
                    state.targeted_fraction.as_f64()
                ));
                continue;
            }
            match constrain_to_model(model, &state.coeffs, &targets, clamp_k) {
                Ok((pose, coeffs)) => {
                    state.mesh = model.synthesize(&coeffs)?.transformed(&pose);
                    state.pose = pose;
                    state.coeffs = coeffs;
                }
                Err(e @ FitError::TooFewTargets { .. }) => {
                    state.failure = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
        }

        // proximity projection across the bones that are still live
        let live: BTreeMap<String, TriangleMesh<T>> = states
            .iter()
            .filter(|(_, s)| s.failure.is_none())
            .map(|(n, s)| (n.clone(), s.mesh.clone()))
            .collect();
        if live.is_empty() {
            break;
        }
        let active: Vec<ProximityConstraint> = set
            .constraints
            .iter()
            .filter(|c| live.contains_key(&c.bone_a) && live.contains_key(&c.bone_b))
            .cloned()
            .collect();
        let adjusted = enforce_proximity(&live, &active, T::of(config.proximity_strength))?;
        for (name, mesh) in adjusted {
            states.get_mut(&name).unwrap().mesh = mesh;
        }

        // mean movement across all live vertices, previous → current
        let mut total = T::zero();
        let mut count = 0usize;
        for (name, prev) in &previous {
            let state = &states[name];
            if state.failure.is_some() {
                continue;
            }
            for (a, b) in prev.vertices().iter().zip(state.mesh.vertices()) {
                total += (a - b).norm();
                count += 1;
            }
        }
        if count == 0 {
            break;
        }
        let mean_movement = total / T::from_usize(count).unwrap();
        movement_log.push(mean_movement);
        if mean_movement.as_f64() < config.convergence_tol {
            converged = true;
            break;
        }
    }

    let mut bones = BTreeMap::new();
    for (name, state) in states {
        let (residual, fraction) = if state.failure.is_none() {
            let targets =
                profile_search_thresholded(&state.mesh, &grad, config, threshold)?;
            let mut sq = T::zero();
            let mut hits = 0usize;
            for (v, t) in state.mesh.vertices().iter().zip(&targets) {
                if let Some(t) = t {
                    sq += (v - t).norm_squared();
                    hits += 1;
                }
            }
            let fraction =
                T::from_usize(hits).unwrap() / T::from_usize(targets.len()).unwrap();
            let residual = if hits > 0 {
                Some((sq / T::from_usize(hits).unwrap()).sqrt())
            } else {
                None
            };
            (residual, fraction)
        } else {
            (None, state.targeted_fraction)
        };
        let failed = state.failure.is_some();
        bones.insert(
            name,
            BoneFit {
                mesh: state.mesh,
                pose: state.pose,
                coeffs: state.coeffs,
                residual,
                targeted_fraction: fraction,
                iterations: state.iterations,
                converged: converged && !failed,
                failure: state.failure,
            },
        );
    }
    Ok(FitResult {
        bones,
        movement_log,
    })
}
