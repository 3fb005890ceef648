//! Synthetic bone phantoms with known ground truth.
//!
//! Populations of corresponded meshes are generated from a base shape plus
//! analytic displacement fields scaled by seeded Gaussian coefficients; the
//! true coefficients, the orthonormalized fields, and any resampling events
//! are all recorded so downstream estimates can be checked against exact
//! answers. Volumes are rendered from the meshes at two quality tiers, and
//! fractures are produced by slicing a mesh with a transverse plane and
//! displacing one fragment by a known rigid transform.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, SimilarityTransform, TriangleMesh};
use crate::volume::{voxelize, GridSpec, Volume3, VolumeError};
use crate::Real;

/// Voxel intensity assigned to bone interior before blur and noise.
pub const BONE_INTENSITY: f64 = 1000.0;

/// Attempts per population member before self-intersecting samples become a
/// hard error.
const MAX_ATTEMPTS: u64 = 64;

/// Stream id reserved for volume noise, far above any member substream.
const NOISE_STREAM: u64 = 1 << 40;

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("member {member} still self-intersects after {attempts} resampling attempts")]
    SelfIntersection { member: usize, attempts: u64 },
    #[error("cut plane does not intersect the mesh")]
    PlaneMisses,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Base solid for a phantom population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseShape {
    /// Elongated bone along z: round cross-section of `radius`, rounded ends,
    /// total half-length `half_length`.
    Tube { radius: f64, half_length: f64 },
    /// Superellipsoid |x/a|^p + |y/b|^p + |z/c|^p = 1 with semi-axes (a,b,c).
    Superellipsoid { semi_axes: [f64; 3], exponent: f64 },
    /// Two parallel tube bones separated by the spec's joint gap along x.
    TwoBoneJoint {
        radius_a: f64,
        half_length_a: f64,
        radius_b: f64,
        half_length_b: f64,
    },
}

/// Analytic displacement field evaluated on the base mesh. All fields are
/// defined per bone component in its local frame (ζ = z/half-extent) and are
/// orthogonalized against rigid motions and uniform scaling before use, so a
/// mode's coefficient survives Procrustes alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Radial widening concentrated at mid-shaft.
    AxialBulge,
    /// Quadratic lateral bow along x.
    Bend,
    /// Cross-sections rotate linearly with height.
    Torsion,
    /// Linear change of cross-section size with height.
    Taper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub field: FieldKind,
    /// Coefficient variance in mm².
    pub variance: f64,
}

/// Deterministic recipe for a phantom population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub base_shape: BaseShape,
    /// Landmarks per bone; rounded up to the icosphere ladder (42, 162, 642,
    /// 2562).
    pub n_landmarks: usize,
    /// Empty list = zero-variance population (every member is the base).
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
    /// Surface-to-surface separation for `TwoBoneJoint` (mm).
    #[serde(default)]
    pub joint_gap: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.n_landmarks < 42 {
            return Err(PhantomError::InvalidSpec {
                reason: format!(
                    "n_landmarks {} below the icosphere floor of 42",
                    self.n_landmarks
                ),
            });
        }
        if self.joint_gap < 0.0 {
            return Err(PhantomError::InvalidSpec {
                reason: format!("joint_gap {} is negative", self.joint_gap),
            });
        }
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.variance > 0.0) {
                return Err(PhantomError::InvalidSpec {
                    reason: format!("mode {i} variance {} must be > 0", m.variance),
                });
            }
        }
        let positive = |name: &str, v: f64| -> Result<(), PhantomError> {
            if v > 0.0 {
                Ok(())
            } else {
                Err(PhantomError::InvalidSpec {
                    reason: format!("{name} must be > 0, got {v}"),
                })
            }
        };
        match self.base_shape {
            BaseShape::Tube {
                radius,
                half_length,
            } => {
                positive("radius", radius)?;
                positive("half_length", half_length)?;
            }
            BaseShape::Superellipsoid {
                semi_axes,
                exponent,
            } => {
                for a in semi_axes {
                    positive("semi-axis", a)?;
                }
                if exponent < 2.0 {
                    return Err(PhantomError::InvalidSpec {
                        reason: format!("exponent {exponent} must be at least 2"),
                    });
                }
            }
            BaseShape::TwoBoneJoint {
                radius_a,
                half_length_a,
                radius_b,
                half_length_b,
            } => {
                positive("radius_a", radius_a)?;
                positive("half_length_a", half_length_a)?;
                positive("radius_b", radius_b)?;
                positive("half_length_b", half_length_b)?;
            }
        }
        Ok(())
    }
}

/// Icosphere vertex count at subdivision `level`: 10·4^level + 2.
fn ladder_count(level: usize) -> usize {
    10 * (1usize << (2 * level)) + 2
}

/// Unit icosahedron subdivided `level` times and scaled to `radius`.
pub fn icosphere<T: Real>(radius: T, level: usize) -> TriangleMesh<T> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut vertices: Vec<Vector3<T>> = raw
        .iter()
        .map(|v| Vector3::new(T::of(v[0]), T::of(v[1]), T::of(v[2])).normalize())
        .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoints.entry(key).or_insert_with(|| {
                    vertices
                        .push((vertices[a as usize] + vertices[b as usize]).normalize());
                    (vertices.len() - 1) as u32
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push(mid);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriangleMesh::new(vertices, faces).expect("icosphere construction is static")
}

/// Smallest subdivision level whose vertex count reaches `n`.
fn ladder_level(n: usize) -> Result<usize, PhantomError> {
    (0..=6)
        .find(|&l| ladder_count(l) >= n)
        .ok_or_else(|| PhantomError::InvalidSpec {
            reason: format!("n_landmarks {n} exceeds {}", ladder_count(6)),
        })
}

/// Radial map sending a unit direction onto |x/a|^p + |y/b|^p + |z/c|^p = 1.
fn superellipsoid_point<T: Real>(u: &Vector3<T>, semi: [T; 3], p: T) -> Vector3<T> {
    let mut s = T::zero();
    for k in 0..3 {
        s += (u[k].abs() / semi[k]).powf(p);
    }
    u * s.powf(-T::one() / p)
}

/// Round-cross-section tube: (√(x²+y²)/r)^p + |z/L|^p = 1 with p = 6.
fn tube_point<T: Real>(u: &Vector3<T>, radius: T, half_length: T) -> Vector3<T> {
    let p = T::of(6.0);
    let perp = (u.x * u.x + u.y * u.y).sqrt();
    let s = (perp / radius).powf(p) + (u.z.abs() / half_length).powf(p);
    u * s.powf(-T::one() / p)
}

/// One bone's vertex range plus its local frame for field evaluation.
struct Component<T: Real> {
    start: usize,
    end: usize,
    center: Vector3<T>,
    half_z: T,
}

fn base_mesh<T: Real>(
    spec: &PhantomSpec,
) -> Result<(TriangleMesh<T>, Vec<Component<T>>), PhantomError> {
    let level = ladder_level(spec.n_landmarks)?.max(1);
    let unit = icosphere::<T>(T::one(), level);
    let shaped = |map: &dyn Fn(&Vector3<T>) -> Vector3<T>| -> Vec<Vector3<T>> {
        unit.vertices().iter().map(map).collect()
    };
    match spec.base_shape {
        BaseShape::Tube {
            radius,
            half_length,
        } => {
            let (r, l) = (T::of(radius), T::of(half_length));
            let vertices = shaped(&|u| tube_point(u, r, l));
            let mesh = TriangleMesh::new(vertices, unit.faces().to_vec())?;
            let comp = Component {
                start: 0,
                end: mesh.n_vertices(),
                center: Vector3::zeros(),
                half_z: l,
            };
            Ok((mesh, vec![comp]))
        }
        BaseShape::Superellipsoid {
            semi_axes,
            exponent,
        } => {
            let semi = [
                T::of(semi_axes[0]),
                T::of(semi_axes[1]),
                T::of(semi_axes[2]),
            ];
            let p = T::of(exponent);
            let vertices = shaped(&|u| superellipsoid_point(u, semi, p));
            let mesh = TriangleMesh::new(vertices, unit.faces().to_vec())?;
            let comp = Component {
                start: 0,
                end: mesh.n_vertices(),
                center: Vector3::zeros(),
                half_z: semi[2],
            };
            Ok((mesh, vec![comp]))
        }
        BaseShape::TwoBoneJoint {
            radius_a,
            half_length_a,
            radius_b,
            half_length_b,
        } => {
            let gap = T::of(spec.joint_gap);
            let (ra, la) = (T::of(radius_a), T::of(half_length_a));
            let (rb, lb) = (T::of(radius_b), T::of(half_length_b));
            let half = T::of(0.5);
            let ca = Vector3::new(-(ra + gap * half), T::zero(), T::zero());
            let cb = Vector3::new(rb + gap * half, T::zero(), T::zero());
            let n = unit.n_vertices() as u32;
            let mut vertices: Vec<Vector3<T>> = unit
                .vertices()
                .iter()
                .map(|u| tube_point(u, ra, la) + ca)
                .collect();
            vertices.extend(unit.vertices().iter().map(|u| tube_point(u, rb, lb) + cb));
            let mut faces = unit.faces().to_vec();
            faces.extend(unit.faces().iter().map(|f| [f[0] + n, f[1] + n, f[2] + n]));
            let mesh = TriangleMesh::new(vertices, faces)?;
            Ok((
                mesh,
                vec![
                    Component {
                        start: 0,
                        end: n as usize,
                        center: ca,
                        half_z: la,
                    },
                    Component {
                        start: n as usize,
                        end: 2 * n as usize,
                        center: cb,
                        half_z: lb,
                    },
                ],
            ))
        }
    }
}

/// Raw (pre-orthogonalization) field evaluation over all components.
fn evaluate_field<T: Real>(
    kind: FieldKind,
    base: &TriangleMesh<T>,
    components: &[Component<T>],
) -> DVector<T> {
    let mut out = DVector::zeros(base.n_vertices() * 3);
    for comp in components {
        // radial extent sets the displacement scale for bend fields
        let mut radial = T::zero();
        for v in &base.vertices()[comp.start..comp.end] {
            let l = v - comp.center;
            radial = radial.max((l.x * l.x + l.y * l.y).sqrt());
        }
        for (i, v) in base.vertices()[comp.start..comp.end].iter().enumerate() {
            let l = v - comp.center;
            let zeta = l.z / comp.half_z;
            let d: Vector3<T> = match kind {
                FieldKind::AxialBulge => {
                    let g = (-(zeta / T::of(0.35)).powi(2)).exp();
                    Vector3::new(l.x * g, l.y * g, T::zero())
                }
                FieldKind::Bend => Vector3::new(zeta * zeta * radial, T::zero(), T::zero()),
                FieldKind::Torsion => Vector3::new(-l.y * zeta, l.x * zeta, T::zero()),
                FieldKind::Taper => Vector3::new(l.x * zeta, l.y * zeta, T::zero()),
            };
            let row = (comp.start + i) * 3;
            out[row] = d.x;
            out[row + 1] = d.y;
            out[row + 2] = d.z;
        }
    }
    out
}

/// Orthonormal basis of infinitesimal similarity motions (3 translations,
/// 3 rotations, 1 scaling) evaluated on the mesh vertices.
fn similarity_basis<T: Real>(base: &TriangleMesh<T>) -> Vec<DVector<T>> {
    let n = base.n_vertices();
    let centroid = base.centroid();
    let mut raw: Vec<DVector<T>> = Vec::with_capacity(7);
    for axis in 0..3 {
        let mut v = DVector::zeros(3 * n);
        for i in 0..n {
            v[3 * i + axis] = T::one();
        }
        raw.push(v);
    }
    for axis in 0..3 {
        let mut omega = Vector3::zeros();
        omega[axis] = T::one();
        let mut v = DVector::zeros(3 * n);
        for (i, p) in base.vertices().iter().enumerate() {
            let d = omega.cross(&(p - centroid));
            for k in 0..3 {
                v[3 * i + k] = d[k];
            }
        }
        raw.push(v);
    }
    let mut scale = DVector::zeros(3 * n);
    for (i, p) in base.vertices().iter().enumerate() {
        let d = p - centroid;
        for k in 0..3 {
            scale[3 * i + k] = d[k];
        }
    }
    raw.push(scale);

    let mut basis: Vec<DVector<T>> = Vec::with_capacity(7);
    for mut v in raw {
        for b in &basis {
            let d = b.dot(&v);
            v -= b * d;
        }
        let norm = v.norm();
        if norm > T::of(1e-12) {
            basis.push(v / norm);
        }
    }
    basis
}

/// Population of corresponded meshes with recorded ground truth.
#[derive(Debug, Clone)]
pub struct Population<T: Real> {
    pub base: TriangleMesh<T>,
    pub members: Vec<TriangleMesh<T>>,
    /// True mode coefficients per member (mm), one entry per mode.
    pub coefficients: Vec<Vec<T>>,
    /// Sampling attempts consumed per member (1 = no resampling).
    pub attempts: Vec<u64>,
    /// Orthonormalized displacement fields actually applied, one column per
    /// mode; columns have unit 3n-norm and are orthogonal to all similarity
    /// motions of the base mesh.
    pub fields: DMatrix<T>,
}

/// Deterministically samples `count` deformed copies of the base shape.
///
/// Member `i`, attempt `a` draws its coefficients from ChaCha12 stream
/// `i·64 + a` of `spec.seed`, so any member can be regenerated in isolation
/// and parallel generation cannot change results. Samples whose deformation
/// folds the surface (flipped or collapsed faces) are rejected and redrawn
/// from the next attempt stream, up to 64 tries.
pub fn generate_population<T: Real>(
    spec: &PhantomSpec,
    count: usize,
) -> Result<Population<T>, PhantomError> {
    spec.validate()?;
    let (base, components) = base_mesh::<T>(spec)?;
    let dim = base.n_vertices() * 3;

    // orthogonalize the analytic fields against similarity motions and each
    // other so recorded coefficients are exactly what alignment + PCA can see
    let basis = similarity_basis(&base);
    let mut fields = DMatrix::<T>::zeros(dim, spec.modes.len());
    let mut kept: Vec<DVector<T>> = Vec::new();
    for (j, mode) in spec.modes.iter().enumerate() {
        let mut f = evaluate_field(mode.field, &base, &components);
        let original = f.norm();
        for b in &basis {
            let d = b.dot(&f);
            f -= b * d;
        }
        for k in &kept {
            let d = k.dot(&f);
            f -= k * d;
        }
        let norm = f.norm();
        if norm <= original * T::of(1e-9) {
            return Err(PhantomError::InvalidSpec {
                reason: format!(
                    "mode {j} ({:?}) collapses to a similarity motion on this shape",
                    mode.field
                ),
            });
        }
        let f = f / norm;
        fields.set_column(j, &f);
        kept.push(f);
    }

    let base_normals = face_normals(&base);
    let mut members = Vec::with_capacity(count);
    let mut coefficients = Vec::with_capacity(count);
    let mut attempts = Vec::with_capacity(count);
    for member in 0..count {
        let mut accepted = None;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
            rng.set_stream(member as u64 * MAX_ATTEMPTS + attempt);
            let coeffs: Vec<T> = spec
                .modes
                .iter()
                .map(|m| {
                    let gauss = Normal::new(0.0, m.variance.sqrt()).unwrap();
                    T::of(gauss.sample(&mut rng))
                })
                .collect();
            let mut vertices = base.vertices().to_vec();
            for (j, &c) in coeffs.iter().enumerate() {
                let col = fields.column(j);
                for (i, v) in vertices.iter_mut().enumerate() {
                    *v += Vector3::new(col[3 * i], col[3 * i + 1], col[3 * i + 2]) * c;
                }
            }
            let mesh = base.with_vertices(vertices)?;
            if surface_folds(&mesh, &base_normals) {
                continue;
            }
            accepted = Some((mesh, coeffs, attempt + 1));
            break;
        }
        match accepted {
            Some((mesh, coeffs, used)) => {
                members.push(mesh);
                coefficients.push(coeffs);
                attempts.push(used);
            }
            None => {
                return Err(PhantomError::SelfIntersection {
                    member,
                    attempts: MAX_ATTEMPTS,
                })
            }
        }
    }

    Ok(Population {
        base,
        members,
        coefficients,
        attempts,
        fields,
    })
}

fn face_normals<T: Real>(mesh: &TriangleMesh<T>) -> Vec<Vector3<T>> {
    (0..mesh.n_faces())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            (b - a).cross(&(c - a))
        })
        .collect()
}

/// Fold detector: any face whose normal flips against the base orientation
/// or collapses to near-zero area marks the sample as self-intersecting.
fn surface_folds<T: Real>(mesh: &TriangleMesh<T>, base_normals: &[Vector3<T>]) -> bool {
    for (f, base_n) in base_normals.iter().enumerate() {
        let [a, b, c] = mesh.triangle(f);
        let n = (b - a).cross(&(c - a));
        if n.dot(base_n) <= base_n.norm_squared() * T::of(1e-6) {
            return true;
        }
    }
    false
}

/// Image quality tier for synthesized volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    /// Noise σ = 10 HU-ish, blur 0.5 mm.
    High,
    /// Noise σ = 50, blur 1.5 mm.
    Low,
}

impl Quality {
    pub fn noise_sigma(self) -> f64 {
        match self {
            Quality::High => 10.0,
            Quality::Low => 50.0,
        }
    }

    pub fn blur_mm(self) -> f64 {
        match self {
            Quality::High => 0.5,
            Quality::Low => 1.5,
        }
    }
}

/// Renders meshes into a scalar volume: bone interior 1000 (capped where
/// meshes overlap), background 0, then quality-tier blur and additive
/// Gaussian noise drawn from the dedicated noise stream of `seed`.
pub fn synthesize_volume<T: Real>(
    meshes: &[TriangleMesh<T>],
    grid: &GridSpec<T>,
    quality: Quality,
    seed: u64,
) -> Result<Volume3<T>, PhantomError> {
    let bone = T::of(BONE_INTENSITY);
    let mut acc = vec![T::zero(); grid.n_voxels()];
    for mesh in meshes {
        let v = voxelize(mesh, grid, bone, T::zero())?;
        for (a, &x) in acc.iter_mut().zip(v.data()) {
            *a = (*a + x).min(bone);
        }
    }
    let volume = Volume3::new(*grid, acc)?;
    let blurred = volume.gaussian_blur(T::of(quality.blur_mm()));

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let gauss = Normal::new(0.0, quality.noise_sigma()).unwrap();
    let noisy: Vec<T> = blurred
        .data()
        .iter()
        .map(|&x| x + T::of(gauss.sample(&mut rng)))
        .collect();
    Ok(Volume3::new(*grid, noisy)?)
}

/// Which side of the cut keeps the ground-truth displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fragment {
    /// Below the cut plane (smaller z).
    Distal,
    /// Above the cut plane.
    Proximal,
}

/// A transverse fracture with a known displacement of one fragment.
#[derive(Debug, Clone)]
pub struct FractureScenario<T: Real> {
    /// Cut plane z = cut_height in the bone frame.
    pub cut_height: T,
    /// Rigid displacement applied to the chosen fragment.
    pub displacement: SimilarityTransform<T>,
    pub fragment: Fragment,
}

/// Fracture output: both capped fragments and the applied transform.
#[derive(Debug, Clone)]
pub struct FractureResult<T: Real> {
    pub proximal: TriangleMesh<T>,
    pub distal: TriangleMesh<T>,
    /// The displacement that was applied; its inverse is the reduction
    /// target.
    pub ground_truth: SimilarityTransform<T>,
}

/// Splits `bone` at the scenario's cut plane, caps both halves watertight,
/// and displaces the selected fragment by the scenario transform.
pub fn apply_fracture<T: Real>(
    bone: &TriangleMesh<T>,
    scenario: &FractureScenario<T>,
) -> Result<FractureResult<T>, PhantomError> {
    if !scenario.displacement.is_rigid() {
        return Err(PhantomError::InvalidSpec {
            reason: "fracture displacement must be rigid (scale 1)".into(),
        });
    }
    // nudge the plane off any vertex so every triangle classifies cleanly
    let mut height = scenario.cut_height;
    for _ in 0..16 {
        let grazes = bone
            .vertices()
            .iter()
            .any(|v| (v.z - height).abs() < T::of(1e-9));
        if !grazes {
            break;
        }
        height += T::of(1.31e-7) * (T::one() + height.abs());
    }
    let below_any = bone.vertices().iter().any(|v| v.z < height);
    let above_any = bone.vertices().iter().any(|v| v.z > height);
    if !below_any || !above_any {
        return Err(PhantomError::PlaneMisses);
    }

    let distal = clip_below(bone, height, false)?;
    let proximal = clip_below(bone, height, true)?;
    let (distal, proximal) = match scenario.fragment {
        Fragment::Distal => (distal.transformed(&scenario.displacement), proximal),
        Fragment::Proximal => (distal, proximal.transformed(&scenario.displacement)),
    };
    Ok(FractureResult {
        proximal,
        distal,
        ground_truth: scenario.displacement,
    })
}

/// Keeps the part of a closed mesh on one side of z = height and seals each
/// cut loop with a triangle fan around its centroid.
fn clip_below<T: Real>(
    mesh: &TriangleMesh<T>,
    height: T,
    keep_above: bool,
) -> Result<TriangleMesh<T>, PhantomError> {
    let side = |v: &Vector3<T>| -> bool {
        if keep_above {
            v.z > height
        } else {
            v.z < height
        }
    };
    let mut vertices: Vec<Vector3<T>> = Vec::new();
    let mut remap: HashMap<u32, u32> = HashMap::new();
    for (i, v) in mesh.vertices().iter().enumerate() {
        if side(v) {
            remap.insert(i as u32, vertices.len() as u32);
            vertices.push(*v);
        }
    }
    // intersection vertices shared across faces via their undirected edge
    let mut cut_vertex: HashMap<(u32, u32), u32> = HashMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut boundary: Vec<(u32, u32)> = Vec::new();

    let mut intersect = |a: u32, b: u32, vertices: &mut Vec<Vector3<T>>| -> u32 {
        let key = (a.min(b), a.max(b));
        *cut_vertex.entry(key).or_insert_with(|| {
            let pa = mesh.vertices()[a as usize];
            let pb = mesh.vertices()[b as usize];
            let t = (height - pa.z) / (pb.z - pa.z);
            vertices.push(pa + (pb - pa) * t);
            (vertices.len() - 1) as u32
        })
    };

    for f in mesh.faces() {
        let kept: Vec<usize> = (0..3)
            .filter(|&k| side(&mesh.vertices()[f[k] as usize]))
            .collect();
        match kept.len() {
            3 => faces.push([remap[&f[0]], remap[&f[1]], remap[&f[2]]]),
            2 => {
                // quad a→b→x_bc→x_ca, split into two triangles; the cut edge
                // x_bc→x_ca lies on the plane and bounds the cap
                let c_local = (0..3).find(|k| !kept.contains(k)).unwrap();
                let a = f[(c_local + 1) % 3];
                let b = f[(c_local + 2) % 3];
                let c = f[c_local];
                let x_bc = intersect(b, c, &mut vertices);
                let x_ca = intersect(c, a, &mut vertices);
                faces.push([remap[&a], remap[&b], x_bc]);
                faces.push([remap[&a], x_bc, x_ca]);
                boundary.push((x_bc, x_ca));
            }
            1 => {
                let a_local = kept[0];
                let a = f[a_local];
                let b = f[(a_local + 1) % 3];
                let c = f[(a_local + 2) % 3];
                let x_ab = intersect(a, b, &mut vertices);
                let x_ca = intersect(c, a, &mut vertices);
                faces.push([remap[&a], x_ab, x_ca]);
                boundary.push((x_ab, x_ca));
            }
            _ => {}
        }
    }

    // each directed boundary edge appears once; walk successor links into
    // loops and fan-cap each one around its centroid
    let mut succ: HashMap<u32, u32> = HashMap::new();
    for &(u, v) in &boundary {
        if succ.insert(u, v).is_some() {
            return Err(PhantomError::InvalidSpec {
                reason: "cut boundary is not a simple loop".into(),
            });
        }
    }
    let mut starts: Vec<u32> = succ.keys().copied().collect();
    starts.sort_unstable();
    let mut visited: std::collections::HashSet<u32> = std::collections::HashSet::new();
    for start in starts {
        if visited.contains(&start) {
            continue;
        }
        let mut loop_vertices = vec![start];
        let mut cur = succ[&start];
        while cur != start {
            visited.insert(cur);
            loop_vertices.push(cur);
            cur = *succ.get(&cur).ok_or_else(|| PhantomError::InvalidSpec {
                reason: "cut boundary does not close".into(),
            })?;
        }
        visited.insert(start);
        let mut centroid = Vector3::zeros();
        for &v in &loop_vertices {
            centroid += vertices[v as usize];
        }
        centroid /= T::from_usize(loop_vertices.len()).unwrap();
        let c_idx = vertices.len() as u32;
        vertices.push(centroid);
        for w in 0..loop_vertices.len() {
            let u = loop_vertices[w];
            let v = loop_vertices[(w + 1) % loop_vertices.len()];
            // reversed against the surface boundary so the cap faces outward
            faces.push([v, u, c_idx]);
        }
    }

    Ok(TriangleMesh::new(vertices, faces)?)
}
