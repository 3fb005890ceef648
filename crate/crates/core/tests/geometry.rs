use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use ankle_reduce_core::geometry::{
    closest_point_brute, closest_point_on_triangle, read_obj, rotation_axis_angle,
    rotation_from_axis_angle, surface_distance, write_obj, GeometryError, MeshDistanceIndex,
    MirrorPlane, SimilarityTransform, TriangleMesh,
};

type Mesh = TriangleMesh<f64>;
type V3 = Vector3<f64>;

fn octahedron() -> Mesh {
    let vertices = vec![
        V3::new(1.0, 0.0, 0.0),
        V3::new(-1.0, 0.0, 0.0),
        V3::new(0.0, 1.0, 0.0),
        V3::new(0.0, -1.0, 0.0),
        V3::new(0.0, 0.0, 1.0),
        V3::new(0.0, 0.0, -1.0),
    ];
    let faces = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    Mesh::new(vertices, faces).unwrap()
}

fn random_rotation(rng: &mut ChaCha12Rng) -> Matrix3<f64> {
    let axis = V3::new(
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
    );
    let angle = rng.random::<f64>() * std::f64::consts::PI;
    rotation_from_axis_angle(&axis, angle)
}

#[test]
fn face_validation_rejects_bad_indices() {
    let verts = vec![V3::zeros(), V3::x(), V3::y()];
    match Mesh::new(verts.clone(), vec![[0, 1, 3]]) {
        Err(GeometryError::IndexOutOfRange { face: 0, index: 3, n_vertices: 3 }) => {}
        other => panic!("expected IndexOutOfRange, got {other:?}"),
    }
    match Mesh::new(verts, vec![[0, 1, 1]]) {
        Err(GeometryError::RepeatedVertex { face: 0, .. }) => {}
        other => panic!("expected RepeatedVertex, got {other:?}"),
    }
}

#[test]
fn octahedron_volume_matches_analytic_value() {
    // dual of the cube with vertices at distance 1: V = 4/3
    assert_relative_eq!(octahedron().signed_volume(), 4.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn flipping_one_face_breaks_closedness_and_volume_sign() {
    let m = octahedron();
    assert!(m.is_closed());
    let mut faces = m.faces().to_vec();
    faces[0] = [faces[0][0], faces[0][2], faces[0][1]];
    let broken = Mesh::new(m.vertices().to_vec(), faces).unwrap();
    assert!(!broken.is_closed());

    let all_flipped = Mesh::new(
        m.vertices().to_vec(),
        m.faces().iter().map(|&[a, b, c]| [a, c, b]).collect(),
    )
    .unwrap();
    assert_relative_eq!(all_flipped.signed_volume(), -4.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn octahedron_vertex_normals_point_along_axes() {
    // every vertex sees four congruent faces symmetric about its axis, so
    // the area-weighted normal is exactly the axis direction
    let normals = octahedron().vertex_normals().unwrap();
    let expected = [
        V3::x(),
        -V3::x(),
        V3::y(),
        -V3::y(),
        V3::z(),
        -V3::z(),
    ];
    for (n, e) in normals.iter().zip(&expected) {
        assert_abs_diff_eq!((n - e).norm(), 0.0, epsilon = 1e-12);
    }
}

#[test]
fn unreferenced_vertex_reports_degenerate_normal_with_index() {
    let m = octahedron();
    let mut verts = m.vertices().to_vec();
    verts.push(V3::new(5.0, 5.0, 5.0));
    let m = Mesh::new(verts, m.faces().to_vec()).unwrap();
    match m.vertex_normals() {
        Err(GeometryError::DegenerateVertex { index: 6 }) => {}
        other => panic!("expected DegenerateVertex {{ index: 6 }}, got {other:?}"),
    }
}

#[test]
fn mirror_is_involution_and_preserves_closedness() {
    let m = octahedron();
    let plane = MirrorPlane::new(V3::new(3.0, -1.0, 2.0), V3::new(1.0, 2.0, -0.5)).unwrap();
    let mirrored = m.mirrored(&plane);
    assert!(mirrored.is_closed());
    // outward volume stays positive because windings are repaired
    assert_relative_eq!(mirrored.signed_volume(), 4.0 / 3.0, epsilon = 1e-12);
    let back = mirrored.mirrored(&plane);
    for (a, b) in m.vertices().iter().zip(back.vertices()) {
        assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
    }
    assert_eq!(m.faces(), back.faces());
}

#[test]
fn mirror_plane_normalizes_and_rejects_zero_normal() {
    let p = MirrorPlane::new(V3::zeros(), V3::new(0.0, 0.0, 3.0)).unwrap();
    assert_abs_diff_eq!(p.normal().norm(), 1.0, epsilon = 1e-15);
    assert!(matches!(
        MirrorPlane::<f64>::new(V3::zeros(), V3::zeros()),
        Err(GeometryError::ZeroNormal)
    ));
}

#[test]
fn closest_point_on_triangle_hand_cases() {
    let a = V3::new(0.0, 0.0, 0.0);
    let b = V3::new(1.0, 0.0, 0.0);
    let c = V3::new(0.0, 1.0, 0.0);
    // face region: straight projection
    let cp = closest_point_on_triangle(&V3::new(0.25, 0.25, 1.0), &a, &b, &c);
    assert_abs_diff_eq!((cp - V3::new(0.25, 0.25, 0.0)).norm(), 0.0, epsilon = 1e-15);
    // vertex region
    let cp = closest_point_on_triangle(&V3::new(-1.0, -1.0, 0.5), &a, &b, &c);
    assert_abs_diff_eq!((cp - a).norm(), 0.0, epsilon = 1e-15);
    // edge ab region
    let cp = closest_point_on_triangle(&V3::new(0.5, -2.0, 0.0), &a, &b, &c);
    assert_abs_diff_eq!((cp - V3::new(0.5, 0.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
    // diagonal edge region: (1,1,0) projects to the edge midpoint
    let cp = closest_point_on_triangle(&V3::new(1.0, 1.0, 0.0), &a, &b, &c);
    assert_abs_diff_eq!((cp - V3::new(0.5, 0.5, 0.0)).norm(), 0.0, epsilon = 1e-15);
}

fn random_soup(rng: &mut ChaCha12Rng, n_tris: usize) -> Mesh {
    // disconnected triangle soup spanning a 40mm cube
    let mut verts = Vec::with_capacity(n_tris * 3);
    let mut faces = Vec::with_capacity(n_tris);
    for f in 0..n_tris {
        let base = V3::new(
            rng.random::<f64>() * 40.0 - 20.0,
            rng.random::<f64>() * 40.0 - 20.0,
            rng.random::<f64>() * 40.0 - 20.0,
        );
        for _ in 0..3 {
            verts.push(
                base + V3::new(
                    rng.random::<f64>() * 4.0 - 2.0,
                    rng.random::<f64>() * 4.0 - 2.0,
                    rng.random::<f64>() * 4.0 - 2.0,
                ),
            );
        }
        faces.push([3 * f as u32, 3 * f as u32 + 1, 3 * f as u32 + 2]);
    }
    Mesh::new(verts, faces).unwrap()
}

#[test]
fn index_matches_brute_force_bitwise_on_random_soup() {
    let mut rng = ChaCha12Rng::seed_from_u64(71);
    let mesh = random_soup(&mut rng, 500);
    let index = MeshDistanceIndex::build(&mesh).unwrap();
    for _ in 0..300 {
        let p = V3::new(
            rng.random::<f64>() * 60.0 - 30.0,
            rng.random::<f64>() * 60.0 - 30.0,
            rng.random::<f64>() * 60.0 - 30.0,
        );
        let fast = index.closest(&p);
        let slow = closest_point_brute(&mesh, &p);
        assert_eq!(fast.triangle, slow.triangle, "winning triangle differs at {p:?}");
        assert_eq!(fast.distance.to_bits(), slow.distance.to_bits());
        assert_eq!(fast.point, slow.point);
    }
}

#[test]
fn signed_distance_is_negative_inside_positive_outside() {
    let index = MeshDistanceIndex::build(&octahedron()).unwrap();
    // center: every face plane x+y+z=1 (octant-symmetric) is 1/sqrt(3) away
    let (d, _) = index.signed_closest(&V3::zeros());
    assert_relative_eq!(d, -1.0 / 3.0_f64.sqrt(), epsilon = 1e-12);
    let (d, _) = index.signed_closest(&V3::new(2.0, 0.0, 0.0));
    assert_relative_eq!(d, 1.0, epsilon = 1e-12);
    // near a vertex, outside along the axis: vertex feature, positive
    let (d, hit) = index.signed_closest(&V3::new(1.5, 0.0, 0.0));
    assert_relative_eq!(d, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!((hit.point - V3::x()).norm(), 0.0, epsilon = 1e-12);
}

#[test]
fn surface_distance_between_offset_octahedra() {
    let m = octahedron();
    let shift = SimilarityTransform::from_translation(V3::new(0.05, 0.0, 0.0));
    let moved = m.transformed(&shift);
    let stats = surface_distance(&m, &moved, false).unwrap();
    assert!(stats.mean <= 0.05 + 1e-12, "mean {} too large", stats.mean);
    assert!(stats.max <= 0.05 + 1e-12);
    assert_eq!(stats.per_vertex.len(), 6);
    let sym = surface_distance(&m, &moved, true).unwrap();
    assert_eq!(sym.per_vertex.len(), 12);
    assert!(sym.symmetric);

    // oracle: two parallel unit right triangles 2mm apart
    let a = Mesh::new(
        vec![V3::zeros(), V3::x(), V3::y()],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let b = a.transformed(&SimilarityTransform::from_translation(V3::new(0.0, 0.0, 2.0)));
    let s = surface_distance(&a, &b, true).unwrap();
    assert_relative_eq!(s.mean, 2.0, epsilon = 1e-12);
    assert_relative_eq!(s.rms, 2.0, epsilon = 1e-12);
    assert_relative_eq!(s.max, 2.0, epsilon = 1e-12);
}

#[test]
fn surface_distance_rejects_empty_meshes() {
    let m = octahedron();
    let empty = Mesh::new(vec![], vec![]).unwrap();
    assert!(matches!(
        surface_distance(&m, &empty, false),
        Err(GeometryError::EmptyMesh)
    ));
}

#[test]
fn transform_compose_inverse_roundtrip() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    for _ in 0..50 {
        let t1 = SimilarityTransform::new(
            random_rotation(&mut rng),
            V3::new(rng.random(), rng.random(), rng.random()),
            0.5 + rng.random::<f64>(),
        )
        .unwrap();
        let t2 = SimilarityTransform::new(
            random_rotation(&mut rng),
            V3::new(rng.random(), rng.random(), rng.random()),
            0.5 + rng.random::<f64>(),
        )
        .unwrap();
        let p = V3::new(rng.random(), rng.random(), rng.random());
        let composed = t1.compose(&t2);
        assert_abs_diff_eq!(
            (composed.apply(&p) - t1.apply(&t2.apply(&p))).norm(),
            0.0,
            epsilon = 1e-12
        );
        let inv = t1.inverse();
        assert_abs_diff_eq!((inv.apply(&t1.apply(&p)) - p).norm(), 0.0, epsilon = 1e-9);
        // matrix round trip
        let back = SimilarityTransform::from_matrix_rows(&t1.to_matrix_rows()).unwrap();
        assert_abs_diff_eq!((back.apply(&p) - t1.apply(&p)).norm(), 0.0, epsilon = 1e-9);
    }
}

#[test]
fn transform_rejects_reflections_and_bad_scale() {
    let reflection = Matrix3::from_diagonal(&V3::new(-1.0, 1.0, 1.0));
    assert!(matches!(
        SimilarityTransform::new(reflection, V3::zeros(), 1.0),
        Err(GeometryError::NotOrthonormal { .. })
    ));
    assert!(matches!(
        SimilarityTransform::new(Matrix3::identity(), V3::zeros(), 0.0),
        Err(GeometryError::BadScale { .. })
    ));
    assert!(matches!(
        SimilarityTransform::new(Matrix3::identity(), V3::zeros(), f64::NAN),
        Err(GeometryError::BadScale { .. })
    ));
}

#[test]
fn axis_angle_survives_edge_angles() {
    // identity
    let (axis, angle) = rotation_axis_angle(&Matrix3::<f64>::identity());
    assert_eq!(angle, 0.0);
    assert_relative_eq!(axis.norm(), 1.0, epsilon = 1e-12);
    // half turn about an arbitrary axis
    let ax = V3::new(1.0, -2.0, 0.5).normalize();
    for &theta in &[1e-7, 0.3, std::f64::consts::FRAC_PI_2, 3.1, std::f64::consts::PI] {
        let r = rotation_from_axis_angle(&ax, theta);
        let (axis, angle) = rotation_axis_angle(&r);
        let rebuilt = rotation_from_axis_angle(&axis, angle);
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                dev = dev.max((rebuilt[(i, j)] - r[(i, j)]).abs());
            }
        }
        assert!(dev < 1e-9, "recomposition off by {dev} at theta={theta}");
        assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&angle));
    }
}

#[test]
fn obj_roundtrip_preserves_geometry_and_topology() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("oct.obj");
    let m = octahedron();
    // second roundtrip is bit-identical (9 significant digits is enough to
    // re-read what we wrote the first time)
    write_obj(&m, &path).unwrap();
    let r1: Mesh = read_obj(&path).unwrap();
    write_obj(&r1, &path).unwrap();
    let r2: Mesh = read_obj(&path).unwrap();
    assert_eq!(r1.faces(), m.faces());
    assert_eq!(r1.vertices(), r2.vertices());
    for (a, b) in m.vertices().iter().zip(r1.vertices()) {
        assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-8);
    }
}

#[test]
fn obj_reader_rejects_quads_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quad.obj");
    std::fs::write(
        &path,
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
    )
    .unwrap();
    match read_obj::<f64>(&path) {
        Err(GeometryError::NonTriangular { line: 5, arity: 4 }) => {}
        other => panic!("expected NonTriangular at line 5, got {other:?}"),
    }
}

#[test]
fn obj_reader_accepts_slash_entries_and_comments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("slash.obj");
    std::fs::write(
        &path,
        "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n",
    )
    .unwrap();
    let m: Mesh = read_obj(&path).unwrap();
    assert_eq!(m.n_vertices(), 3);
    assert_eq!(m.faces(), &[[0, 1, 2]]);
}
