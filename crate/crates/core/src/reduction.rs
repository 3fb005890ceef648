//! Reduction planning: mirror the healthy contralateral bone across the
//! sagittal plane and rigidly register the injured bone onto the mirrored
//! template. The resulting transform repositions the injured bone; plan
//! quality is summarized by symmetric surface distance against the template.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    rotation_axis_angle, surface_distance, GeometryError, MirrorPlane, SimilarityTransform,
    SurfaceDistanceStats, TriangleMesh,
};
use crate::pointreg::{
    cpd_rigid, icp_rigid, CpdConfig, IcpConfig, PointCloud, RegistrationError,
};
use crate::Real;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("{which} mesh has no vertices")]
    EmptyMesh { which: &'static str },
    #[error("transform is not rigid: scale {scale}")]
    NotRigid { scale: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

/// Point-set algorithm used to align the injured bone onto the template.
/// CPD tolerates the imperfect left/right correspondence better and is the
/// default; ICP is kept for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationBackend {
    Icp,
    #[default]
    Cpd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionConfig {
    pub registration: RegistrationBackend,
    /// Mean-residual threshold (mm) for `within_tolerance`. The 2 mm default
    /// is the clinical malreduction cutoff.
    pub tolerance_mm: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            registration: RegistrationBackend::Cpd,
            tolerance_mm: 2.0,
        }
    }
}

/// Where a plan's inputs came from; filled in by callers that know.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub inputs: Vec<String>,
    pub config_sha256: String,
}

/// A computed repositioning instruction for the injured bone.
///
/// Serializes with the transform as a row-major homogeneous matrix and the
/// residual reduced to its summary statistics; the per-vertex distances are
/// not round-tripped.
#[derive(Debug, Clone)]
pub struct ReductionPlan<T: Real> {
    /// Rigid map (scale exactly 1) taking the injured bone to its reduced
    /// position.
    pub transform: SimilarityTransform<T>,
    pub translation_mm: Vector3<T>,
    /// Unit rotation axis; `(0, 0, 1)` by convention when the angle is zero.
    pub rotation_axis: Vector3<T>,
    /// Rotation angle in `[0, 180]` degrees.
    pub rotation_deg: T,
    /// Symmetric surface distance, repositioned injured vs mirrored healthy.
    pub residual: SurfaceDistanceStats<T>,
    pub within_tolerance: bool,
    pub provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct PlanRepr {
    transform: [[f64; 4]; 4],
    translation_mm: [f64; 3],
    rotation_axis: [f64; 3],
    rotation_deg: f64,
    residual: ResidualRepr,
    within_tolerance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct ResidualRepr {
    mean: f64,
    rms: f64,
    max: f64,
    symmetric: bool,
}

impl<T: Real> Serialize for ReductionPlan<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let v3 = |v: &Vector3<T>| [v.x.as_f64(), v.y.as_f64(), v.z.as_f64()];
        PlanRepr {
            transform: self.transform.to_matrix_rows(),
            translation_mm: v3(&self.translation_mm),
            rotation_axis: v3(&self.rotation_axis),
            rotation_deg: self.rotation_deg.as_f64(),
            residual: ResidualRepr {
                mean: self.residual.mean.as_f64(),
                rms: self.residual.rms.as_f64(),
                max: self.residual.max.as_f64(),
                symmetric: self.residual.symmetric,
            },
            within_tolerance: self.within_tolerance,
            provenance: self.provenance.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de, T: Real> Deserialize<'de> for ReductionPlan<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PlanRepr::deserialize(deserializer)?;
        let transform =
            SimilarityTransform::from_matrix_rows(&repr.transform).map_err(serde::de::Error::custom)?;
        let v3 = |a: [f64; 3]| Vector3::new(T::of(a[0]), T::of(a[1]), T::of(a[2]));
        Ok(Self {
            transform,
            translation_mm: v3(repr.translation_mm),
            rotation_axis: v3(repr.rotation_axis),
            rotation_deg: T::of(repr.rotation_deg),
            residual: SurfaceDistanceStats {
                mean: T::of(repr.residual.mean),
                rms: T::of(repr.residual.rms),
                max: T::of(repr.residual.max),
                per_vertex: Vec::new(),
                symmetric: repr.residual.symmetric,
            },
            within_tolerance: repr.within_tolerance,
            provenance: repr.provenance,
        })
    }
}

/// Splits a rigid transform into `(translation_mm, rotation_axis,
/// rotation_deg)` with the angle in `[0, 180]` and the `(0, 0, 1)` axis
/// convention at zero angle. Rejects transforms whose scale deviates from 1.
pub fn decompose_transform<T: Real>(
    t: &SimilarityTransform<T>,
) -> Result<(Vector3<T>, Vector3<T>, T), ReductionError> {
    if !t.is_rigid() {
        return Err(ReductionError::NotRigid {
            scale: t.scale().as_f64(),
        });
    }
    let (axis, angle) = rotation_axis_angle(t.rotation());
    let degrees = angle / T::pi() * T::of(180.0);
    Ok((*t.translation(), axis, degrees))
}

/// Computes the reduction transform: mirrors the healthy bone across
/// `plane`, rigidly registers the injured bone onto the mirrored template
/// (never with scale — the reduction is physical repositioning), and
/// evaluates the symmetric surface distance of the repositioned bone
/// against the template.
pub fn plan_reduction<T: Real>(
    injured: &TriangleMesh<T>,
    healthy: &TriangleMesh<T>,
    plane: &MirrorPlane<T>,
    config: &ReductionConfig,
) -> Result<ReductionPlan<T>, ReductionError> {
    if injured.n_vertices() == 0 {
        return Err(ReductionError::EmptyMesh { which: "injured" });
    }
    if healthy.n_vertices() == 0 {
        return Err(ReductionError::EmptyMesh { which: "healthy" });
    }
    let template = healthy.mirrored(plane);
    let src = PointCloud::new(injured.vertices().to_vec());
    let dst = PointCloud::new(template.vertices().to_vec());
    let transform = match config.registration {
        RegistrationBackend::Cpd => {
            let cpd = CpdConfig {
                with_scale: false,
                ..CpdConfig::default()
            };
            cpd_rigid(&src, &dst, &cpd)?.transform
        }
        RegistrationBackend::Icp => {
            icp_rigid(&src, &dst, &SimilarityTransform::identity(), &IcpConfig::default())?
                .transform
        }
    };
    let residual = surface_distance(&injured.transformed(&transform), &template, true)?;
    let (translation_mm, rotation_axis, rotation_deg) = decompose_transform(&transform)?;
    let within_tolerance = residual.mean.as_f64() <= config.tolerance_mm;
    Ok(ReductionPlan {
        transform,
        translation_mm,
        rotation_axis,
        rotation_deg,
        residual,
        within_tolerance,
        provenance: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanValidation {
    pub passed: bool,
    /// One entry per violated criterion; empty exactly when `passed`.
    pub reasons: Vec<String>,
}

/// Checks a plan against a tolerance: mean residual within `tolerance_mm`,
/// Hausdorff distance within twice that, and every reported number finite.
/// Every violated criterion is listed, not just the first.
pub fn validate_plan<T: Real>(plan: &ReductionPlan<T>, tolerance_mm: f64) -> PlanValidation {
    let mut reasons = Vec::new();
    let r = &plan.residual;

    let mut scalars = vec![
        r.mean.as_f64(),
        r.rms.as_f64(),
        r.max.as_f64(),
        plan.rotation_deg.as_f64(),
    ];
    for i in 0..3 {
        scalars.push(plan.translation_mm[i].as_f64());
        scalars.push(plan.rotation_axis[i].as_f64());
    }
    if scalars.iter().any(|v| !v.is_finite()) {
        reasons.push("plan contains non-finite values".to_string());
    }

    if !(r.mean.as_f64() <= tolerance_mm) {
        reasons.push(format!(
            "mean residual {:.3} mm exceeds tolerance {:.3} mm",
            r.mean.as_f64(),
            tolerance_mm
        ));
    }
    let cap = 2.0 * tolerance_mm;
    if !(r.max.as_f64() <= cap) {
        reasons.push(format!(
            "Hausdorff distance {:.3} mm exceeds cap {:.3} mm (2x tolerance)",
            r.max.as_f64(),
            cap
        ));
    }

    PlanValidation {
        passed: reasons.is_empty(),
        reasons,
    }
}
