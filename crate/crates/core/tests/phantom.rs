//! Ground-truth checks for the phantom generator: population determinism and
//! recorded coefficients, displacement-field orthogonality, model recovery,
//! volume synthesis, and plane fractures.

use nalgebra::{DVector, Vector3};

use ankle_reduce_core::geometry::{rotation_from_axis_angle, SimilarityTransform, TriangleMesh};
use ankle_reduce_core::phantom::{
    apply_fracture, generate_population, icosphere, synthesize_volume, BaseShape, FieldKind,
    Fragment, FractureScenario, ModeSpec, PhantomError, PhantomSpec, Quality,
};
use ankle_reduce_core::shape_model::{build_model, generalized_procrustes, GpaConfig, ModeRule};
use ankle_reduce_core::volume::{voxelize, GridSpec};

fn tube_spec(modes: Vec<ModeSpec>, seed: u64) -> PhantomSpec {
    PhantomSpec {
        base_shape: BaseShape::Tube {
            radius: 6.0,
            half_length: 25.0,
        },
        n_landmarks: 162,
        modes,
        joint_gap: 0.0,
        seed,
    }
}

fn mode(field: FieldKind, variance: f64) -> ModeSpec {
    ModeSpec { field, variance }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn meshes_bit_equal(a: &TriangleMesh<f64>, b: &TriangleMesh<f64>) -> bool {
    a.faces() == b.faces()
        && a.n_vertices() == b.n_vertices()
        && a.vertices()
            .iter()
            .zip(b.vertices())
            .all(|(p, q)| (0..3).all(|k| p[k].to_bits() == q[k].to_bits()))
}

// ---------------------------------------------------------------- icosphere

#[test]
fn icosphere_ladder_counts_and_closedness() {
    for (level, count) in [(0usize, 12usize), (1, 42), (2, 162), (3, 642)] {
        let s = icosphere::<f64>(1.0, level);
        assert_eq!(s.n_vertices(), count);
        assert_eq!(s.n_faces(), 20 * 4usize.pow(level as u32));
        assert!(s.is_closed());
        assert!(s.signed_volume() > 0.0, "outward orientation at level {level}");
        for v in s.vertices() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn icosphere_volume_approaches_sphere() {
    let truth = 4.0 / 3.0 * std::f64::consts::PI * 8.0f64.powi(3);
    let coarse = (icosphere::<f64>(8.0, 2).signed_volume() - truth).abs();
    let fine = (icosphere::<f64>(8.0, 4).signed_volume() - truth).abs();
    assert!(fine < coarse);
    assert!(fine < 0.01 * truth);
}

// --------------------------------------------------------------- spec rules

#[test]
fn spec_validation_rejects_bad_inputs() {
    let ok = tube_spec(vec![mode(FieldKind::Bend, 1.0)], 1);
    assert!(ok.validate().is_ok());

    let mut s = ok.clone();
    s.n_landmarks = 41;
    assert!(matches!(s.validate(), Err(PhantomError::InvalidSpec { .. })));

    let mut s = ok.clone();
    s.joint_gap = -0.5;
    assert!(matches!(s.validate(), Err(PhantomError::InvalidSpec { .. })));

    let mut s = ok.clone();
    s.modes[0].variance = 0.0;
    assert!(matches!(s.validate(), Err(PhantomError::InvalidSpec { .. })));

    let mut s = ok.clone();
    s.base_shape = BaseShape::Superellipsoid {
        semi_axes: [12.0, 10.0, 8.0],
        exponent: 1.2,
    };
    assert!(matches!(s.validate(), Err(PhantomError::InvalidSpec { .. })));

    let mut s = ok;
    s.base_shape = BaseShape::Tube {
        radius: -1.0,
        half_length: 25.0,
    };
    assert!(matches!(s.validate(), Err(PhantomError::InvalidSpec { .. })));
}

#[test]
fn spec_json_roundtrip_and_snake_case_tags() {
    let spec = PhantomSpec {
        base_shape: BaseShape::TwoBoneJoint {
            radius_a: 6.0,
            half_length_a: 25.0,
            radius_b: 10.0,
            half_length_b: 22.0,
        },
        n_landmarks: 162,
        modes: vec![mode(FieldKind::AxialBulge, 4.0), mode(FieldKind::Torsion, 1.0)],
        joint_gap: 3.0,
        seed: 99,
    };
    let text = serde_json::to_string_pretty(&spec).unwrap();
    assert!(text.contains("two_bone_joint"));
    assert!(text.contains("axial_bulge"));
    let back: PhantomSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(back, spec);

    let literal = r#"{
        "base_shape": {"kind": "tube", "radius": 6.0, "half_length": 25.0},
        "n_landmarks": 42,
        "modes": [{"field": "bend", "variance": 2.5}],
        "seed": 7
    }"#;
    let parsed: PhantomSpec = serde_json::from_str(literal).unwrap();
    assert_eq!(parsed.joint_gap, 0.0, "joint_gap defaults to zero");
    assert_eq!(parsed.n_landmarks, 42);
}

// --------------------------------------------------------------- population

#[test]
fn zero_variance_spec_reproduces_the_base_exactly() {
    let spec = tube_spec(vec![], 3);
    let pop = generate_population::<f64>(&spec, 5).unwrap();
    assert_eq!(pop.members.len(), 5);
    for (m, c) in pop.members.iter().zip(&pop.coefficients) {
        assert!(meshes_bit_equal(m, &pop.base));
        assert!(c.is_empty());
    }
    assert!(pop.attempts.iter().all(|&a| a == 1));
}

#[test]
fn same_spec_and_seed_is_bit_identical() {
    let spec = tube_spec(
        vec![mode(FieldKind::AxialBulge, 4.0), mode(FieldKind::Bend, 1.0)],
        11,
    );
    let a = generate_population::<f64>(&spec, 8).unwrap();
    let b = generate_population::<f64>(&spec, 8).unwrap();
    for (ma, mb) in a.members.iter().zip(&b.members) {
        assert!(meshes_bit_equal(ma, mb));
    }
    assert_eq!(a.coefficients, b.coefficients);
    assert_eq!(a.attempts, b.attempts);

    let other = generate_population::<f64>(&tube_spec(spec.modes.clone(), 12), 8).unwrap();
    assert!(
        !meshes_bit_equal(&a.members[0], &other.members[0]),
        "a different seed must change the population"
    );
}

#[test]
fn members_keep_base_topology_and_stay_closed() {
    let spec = tube_spec(
        vec![mode(FieldKind::Torsion, 4.0), mode(FieldKind::Taper, 1.0)],
        21,
    );
    let pop = generate_population::<f64>(&spec, 6).unwrap();
    for m in &pop.members {
        assert_eq!(m.faces(), pop.base.faces(), "face list must be bit-equal");
        assert!(m.is_closed());
        assert!(m.signed_volume() > 0.0);
    }
}

#[test]
fn members_equal_base_plus_recorded_field_combination() {
    let spec = tube_spec(
        vec![mode(FieldKind::AxialBulge, 4.0), mode(FieldKind::Bend, 1.0)],
        5,
    );
    let pop = generate_population::<f64>(&spec, 4).unwrap();
    for (m, coeffs) in pop.members.iter().zip(&pop.coefficients) {
        for (i, v) in m.vertices().iter().enumerate() {
            let mut expect = pop.base.vertices()[i];
            for (j, &c) in coeffs.iter().enumerate() {
                let col = pop.fields.column(j);
                expect += Vector3::new(col[3 * i], col[3 * i + 1], col[3 * i + 2]) * c;
            }
            assert!((v - expect).norm() < 1e-12);
        }
    }
}

#[test]
fn applied_fields_are_orthonormal_and_free_of_similarity_motion() {
    let spec = tube_spec(
        vec![
            mode(FieldKind::AxialBulge, 4.0),
            mode(FieldKind::Bend, 2.0),
            mode(FieldKind::Torsion, 1.0),
            mode(FieldKind::Taper, 0.5),
        ],
        13,
    );
    let pop = generate_population::<f64>(&spec, 1).unwrap();
    let f = &pop.fields;
    assert_eq!(f.ncols(), 4);
    for i in 0..4 {
        for j in 0..4 {
            let dot = f.column(i).dot(&f.column(j));
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expect).abs() < 1e-9, "field gram ({i},{j}) = {dot}");
        }
    }

    // independent restatement of the similarity motions on the base mesh
    let n = pop.base.n_vertices();
    let centroid = pop.base.centroid();
    let mut motions: Vec<DVector<f64>> = Vec::new();
    for axis in 0..3 {
        let mut t = DVector::zeros(3 * n);
        for i in 0..n {
            t[3 * i + axis] = 1.0;
        }
        motions.push(t);
        let mut omega = Vector3::zeros();
        omega[axis] = 1.0;
        let mut r = DVector::zeros(3 * n);
        for (i, p) in pop.base.vertices().iter().enumerate() {
            let d = omega.cross(&(p - centroid));
            for k in 0..3 {
                r[3 * i + k] = d[k];
            }
        }
        motions.push(r);
    }
    let mut s = DVector::zeros(3 * n);
    for (i, p) in pop.base.vertices().iter().enumerate() {
        for k in 0..3 {
            s[3 * i + k] = (p - centroid)[k];
        }
    }
    motions.push(s);
    for (mi, m) in motions.iter().enumerate() {
        let unit = m / m.norm();
        for j in 0..4 {
            let dot = unit.dot(&f.column(j).into_owned()).abs();
            assert!(dot < 1e-9, "motion {mi} leaks into field {j}: {dot}");
        }
    }
}

#[test]
fn coefficient_sample_variance_matches_spec_at_n200() {
    let spec = tube_spec(vec![mode(FieldKind::AxialBulge, 4.0)], 2);
    let pop = generate_population::<f64>(&spec, 200).unwrap();
    let coeffs: Vec<f64> = pop.coefficients.iter().map(|c| c[0]).collect();
    let var = sample_variance(&coeffs);
    assert!(
        (var - 4.0).abs() < 0.15 * 4.0,
        "sample variance {var} not within 15% of 4.0"
    );
}

#[test]
fn model_built_from_population_recovers_recorded_variances() {
    let spec = tube_spec(
        vec![mode(FieldKind::AxialBulge, 4.0), mode(FieldKind::Bend, 1.0)],
        17,
    );
    let pop = generate_population::<f64>(&spec, 50).unwrap();

    let gpa = GpaConfig {
        with_scale: false,
        ..GpaConfig::default()
    };
    let aligned = generalized_procrustes(&pop.members, &gpa).unwrap();
    let model = build_model(&aligned, ModeRule::VarianceFraction(0.995)).unwrap();

    // eigenvalues of the recorded-coefficient sample covariance are what a
    // lossless pipeline can recover
    let c1: Vec<f64> = pop.coefficients.iter().map(|c| c[0]).collect();
    let c2: Vec<f64> = pop.coefficients.iter().map(|c| c[1]).collect();
    let (m1, m2) = (
        c1.iter().sum::<f64>() / 50.0,
        c2.iter().sum::<f64>() / 50.0,
    );
    let (mut v11, mut v22, mut v12) = (0.0, 0.0, 0.0);
    for (a, b) in c1.iter().zip(&c2) {
        v11 += (a - m1).powi(2);
        v22 += (b - m2).powi(2);
        v12 += (a - m1) * (b - m2);
    }
    let (v11, v22, v12) = (v11 / 49.0, v22 / 49.0, v12 / 49.0);
    let tr = v11 + v22;
    let disc = ((v11 - v22).powi(2) + 4.0 * v12 * v12).sqrt();
    let lam_hi = (tr + disc) / 2.0;
    let lam_lo = (tr - disc) / 2.0;

    assert!(model.n_modes() >= 2);
    let e1 = model.eigenvalues[0];
    let e2 = model.eigenvalues[1];
    assert!(
        (e1 - lam_hi).abs() < 0.05 * lam_hi,
        "λ1 {e1} vs coefficient eigenvalue {lam_hi}"
    );
    assert!(
        (e2 - lam_lo).abs() < 0.05 * lam_lo,
        "λ2 {e2} vs coefficient eigenvalue {lam_lo}"
    );
    // generating variances sit in the statistical envelope of N = 50
    assert!((e1 - 4.0).abs() < 0.35 * 4.0);
    assert!((e2 - 1.0).abs() < 0.35 * 1.0);
    // any further mode is alignment leakage, far below the real ones
    if model.n_modes() > 2 {
        assert!(model.eigenvalues[2] < 0.01 * e2);
    }
}

#[test]
fn extreme_variance_reports_self_intersection_after_resampling() {
    let spec = tube_spec(vec![mode(FieldKind::Taper, 1e12)], 23);
    match generate_population::<f64>(&spec, 1) {
        Err(PhantomError::SelfIntersection { member, attempts }) => {
            assert_eq!(member, 0);
            assert_eq!(attempts, 64);
        }
        other => panic!("expected SelfIntersection, got {other:?}"),
    }
}

#[test]
fn moderate_folding_is_resampled_and_recorded() {
    let spec = tube_spec(vec![mode(FieldKind::Taper, 2500.0)], 29);
    let pop = generate_population::<f64>(&spec, 20).unwrap();
    assert!(
        pop.attempts.iter().any(|&a| a > 1),
        "expected at least one resampled member, attempts = {:?}",
        pop.attempts
    );
    for m in &pop.members {
        assert!(m.is_closed());
        assert!(m.signed_volume() > 0.0);
    }
}

#[test]
fn two_bone_joint_respects_the_gap() {
    let spec = PhantomSpec {
        base_shape: BaseShape::TwoBoneJoint {
            radius_a: 6.0,
            half_length_a: 25.0,
            radius_b: 10.0,
            half_length_b: 22.0,
        },
        n_landmarks: 162,
        modes: vec![],
        joint_gap: 3.0,
        seed: 1,
    };
    let pop = generate_population::<f64>(&spec, 1).unwrap();
    let base = &pop.base;
    assert_eq!(base.n_vertices(), 324, "two bones of 162 landmarks each");
    assert!(base.is_closed());

    // facing surfaces: bone a peaks at x = -gap/2, bone b starts at +gap/2
    let max_a = base.vertices()[..162]
        .iter()
        .map(|v| v.x)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_b = base.vertices()[162..]
        .iter()
        .map(|v| v.x)
        .fold(f64::INFINITY, f64::min);
    assert!((max_a - (-1.5)).abs() < 1e-9, "bone a surface at {max_a}");
    assert!((min_b - 1.5).abs() < 1e-9, "bone b surface at {min_b}");
}

// ------------------------------------------------------------------ volumes

#[test]
fn sphere_volume_interior_mean_is_bone_intensity() {
    let sphere = icosphere::<f64>(8.0, 3);
    let grid = GridSpec::enclosing(&[&sphere], 1.0, 5.0).unwrap();
    let vol = synthesize_volume(&[sphere], &grid, Quality::High, 7).unwrap();

    let [nx, ny, nz] = vol.dims();
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = vol.world_from_voxel(&Vector3::new(i as f64, j as f64, k as f64));
                if p.norm() < 6.0 {
                    sum += vol.value(i, j, k);
                    count += 1;
                }
            }
        }
    }
    assert!(count > 500);
    let mean = sum / count as f64;
    assert!(
        (mean - 1000.0).abs() < 0.02 * 1000.0,
        "interior mean {mean} not within 2% of 1000"
    );
}

#[test]
fn volume_synthesis_is_deterministic_per_seed() {
    let sphere = icosphere::<f64>(6.0, 2);
    let grid = GridSpec::enclosing(&[&sphere], 1.5, 4.0).unwrap();
    let a = synthesize_volume(&[sphere.clone()], &grid, Quality::Low, 42).unwrap();
    let b = synthesize_volume(&[sphere.clone()], &grid, Quality::Low, 42).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));

    let c = synthesize_volume(&[sphere], &grid, Quality::Low, 43).unwrap();
    assert!(a.data().iter().zip(c.data()).any(|(x, y)| x != y));
}

#[test]
fn low_quality_flattens_the_surface_gradient() {
    let sphere = icosphere::<f64>(8.0, 3);
    let grid = GridSpec::enclosing(&[&sphere], 1.0, 6.0).unwrap();
    let high = synthesize_volume(&[sphere.clone()], &grid, Quality::High, 7).unwrap();
    let low = synthesize_volume(&[sphere], &grid, Quality::Low, 7).unwrap();

    let g_high = high.gradient_magnitude().unwrap();
    let g_low = low.gradient_magnitude().unwrap();
    let [nx, ny, nz] = g_high.dims();
    let (mut sum_h, mut sum_l, mut count) = (0.0, 0.0, 0usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = g_high.world_from_voxel(&Vector3::new(i as f64, j as f64, k as f64));
                if (p.norm() - 8.0).abs() < 1.0 {
                    sum_h += g_high.value(i, j, k);
                    sum_l += g_low.value(i, j, k);
                    count += 1;
                }
            }
        }
    }
    assert!(count > 500);
    let (mean_h, mean_l) = (sum_h / count as f64, sum_l / count as f64);
    assert!(
        mean_l < mean_h,
        "surface gradient: low {mean_l} must sit below high {mean_h}"
    );
}

#[test]
fn overlapping_bones_cap_at_bone_intensity() {
    let a = icosphere::<f64>(6.0, 2);
    let b = a.transformed(&SimilarityTransform::from_translation(Vector3::new(
        4.0, 0.0, 0.0,
    )));
    let grid = GridSpec::enclosing(&[&a, &b], 1.0, 4.0).unwrap();
    let vol = synthesize_volume(&[a, b], &grid, Quality::High, 3).unwrap();

    let [nx, ny, nz] = vol.dims();
    let mut peak = f64::NEG_INFINITY;
    let (mut sum, mut count) = (0.0, 0usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = vol.value(i, j, k);
                peak = peak.max(v);
                let p = vol.world_from_voxel(&Vector3::new(i as f64, j as f64, k as f64));
                // deep inside the lens covered by both spheres
                if p.norm() < 3.5 && (p - Vector3::new(4.0, 0.0, 0.0)).norm() < 3.5 {
                    sum += v;
                    count += 1;
                }
            }
        }
    }
    assert!(count > 20);
    let mean = sum / count as f64;
    assert!(
        (mean - 1000.0).abs() < 0.02 * 1000.0,
        "overlap mean {mean} must cap at 1000"
    );
    assert!(peak < 1150.0, "peak {peak} exceeds capped intensity plus noise");
}

// ---------------------------------------------------------------- fractures

fn test_tube() -> TriangleMesh<f64> {
    let spec = tube_spec(vec![], 1);
    generate_population::<f64>(&spec, 1).unwrap().base
}

#[test]
fn identity_fracture_reassembles_the_bone() {
    let bone = test_tube();
    let scenario = FractureScenario {
        cut_height: 4.0,
        displacement: SimilarityTransform::identity(),
        fragment: Fragment::Distal,
    };
    let result = apply_fracture(&bone, &scenario).unwrap();

    assert!(result.distal.is_closed());
    assert!(result.proximal.is_closed());
    assert!(result.distal.signed_volume() > 0.0);
    assert!(result.proximal.signed_volume() > 0.0);

    for v in result.distal.vertices() {
        assert!(v.z <= 4.0 + 1e-6);
    }
    for v in result.proximal.vertices() {
        assert!(v.z >= 4.0 - 1e-6);
    }

    let total = bone.signed_volume();
    let parts = result.distal.signed_volume() + result.proximal.signed_volume();
    assert!(
        (total - parts).abs() < 1e-9 * total,
        "volumes must decompose exactly: {total} vs {parts}"
    );
}

#[test]
fn fractured_fragment_volumes_sum_in_the_voxel_domain() {
    let bone = test_tube();
    let scenario = FractureScenario {
        cut_height: -2.0,
        displacement: SimilarityTransform::identity(),
        fragment: Fragment::Distal,
    };
    let result = apply_fracture(&bone, &scenario).unwrap();

    let grid = GridSpec::enclosing(&[&bone], 0.8, 3.0).unwrap();
    let count = |m: &TriangleMesh<f64>| -> f64 {
        voxelize(m, &grid, 1.0f64, 0.0)
            .unwrap()
            .data()
            .iter()
            .sum::<f64>()
    };
    let whole = count(&bone);
    let split = count(&result.distal) + count(&result.proximal);
    assert!(
        (whole - split).abs() < 0.03 * whole,
        "voxel volumes {whole} vs {split} differ by more than 3%"
    );
}

#[test]
fn displaced_fragment_carries_the_ground_truth_transform() {
    let bone = test_tube();
    let rotation = rotation_from_axis_angle(&Vector3::new(0.0, 1.0, 0.0), 0.2);
    let displacement =
        SimilarityTransform::rigid(rotation, Vector3::new(2.0, 1.0, 0.5)).unwrap();
    let scenario = FractureScenario {
        cut_height: 4.0,
        displacement: displacement.clone(),
        fragment: Fragment::Distal,
    };
    let moved = apply_fracture(&bone, &scenario).unwrap();
    let still = apply_fracture(
        &bone,
        &FractureScenario {
            cut_height: 4.0,
            displacement: SimilarityTransform::identity(),
            fragment: Fragment::Distal,
        },
    )
    .unwrap();

    // the displaced distal is exactly the in-place distal pushed through the
    // scenario transform; the proximal is untouched
    for (v, u) in moved.distal.vertices().iter().zip(still.distal.vertices()) {
        assert!((v - displacement.apply(u)).norm() < 1e-12);
    }
    assert!(meshes_bit_equal(&moved.proximal, &still.proximal));
    assert!((moved.ground_truth.to_matrix_rows()
        .iter()
        .flatten()
        .zip(displacement.to_matrix_rows().iter().flatten())
        .all(|(a, b)| a == b)));

    let swapped = apply_fracture(
        &bone,
        &FractureScenario {
            cut_height: 4.0,
            displacement: displacement.clone(),
            fragment: Fragment::Proximal,
        },
    )
    .unwrap();
    assert!(meshes_bit_equal(&swapped.distal, &still.distal));
    for (v, u) in swapped
        .proximal
        .vertices()
        .iter()
        .zip(still.proximal.vertices())
    {
        assert!((v - displacement.apply(u)).norm() < 1e-12);
    }
}

#[test]
fn fracture_rejects_missing_planes_and_nonrigid_displacements() {
    let bone = test_tube();
    let miss = FractureScenario {
        cut_height: 100.0,
        displacement: SimilarityTransform::identity(),
        fragment: Fragment::Distal,
    };
    assert!(matches!(
        apply_fracture(&bone, &miss),
        Err(PhantomError::PlaneMisses)
    ));

    let scaled = SimilarityTransform::new(
        rotation_from_axis_angle(&Vector3::new(1.0, 0.0, 0.0), 0.0),
        Vector3::zeros(),
        1.1,
    )
    .unwrap();
    let bad = FractureScenario {
        cut_height: 0.0,
        displacement: scaled,
        fragment: Fragment::Distal,
    };
    assert!(matches!(
        apply_fracture(&bone, &bad),
        Err(PhantomError::InvalidSpec { .. })
    ));
}

#[test]
fn fracture_through_vertex_ring_still_produces_closed_fragments() {
    // a cut height grazing mesh vertices must be nudged, not crash
    let bone = test_tube();
    let grazing = bone.vertices()[40].z;
    let result = apply_fracture(
        &bone,
        &FractureScenario {
            cut_height: grazing,
            displacement: SimilarityTransform::identity(),
            fragment: Fragment::Distal,
        },
    )
    .unwrap();
    assert!(result.distal.is_closed());
    assert!(result.proximal.is_closed());
    let total = bone.signed_volume();
    let parts = result.distal.signed_volume() + result.proximal.signed_volume();
    assert!((total - parts).abs() < 1e-9 * total);
}
