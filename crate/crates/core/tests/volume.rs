use approx::assert_abs_diff_eq;
use byteorder::{ByteOrder, LittleEndian};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;

use ankle_reduce_core::geometry::TriangleMesh;
use ankle_reduce_core::volume::{
    read_nifti, voxelize, write_nifti, GridSpec, Volume3, VolumeError,
};

type V3 = Vector3<f64>;

fn cube_mesh(half: f64, center: V3) -> TriangleMesh<f64> {
    let signs = [-1.0, 1.0];
    let mut vertices = Vec::new();
    for &sz in &signs {
        for &sy in &signs {
            for &sx in &signs {
                vertices.push(center + V3::new(sx * half, sy * half, sz * half));
            }
        }
    }
    // outward-facing triangles, two per cube face
    let faces: Vec<[u32; 3]> = vec![
        [0, 2, 1],
        [1, 2, 3], // z = -half
        [4, 5, 6],
        [5, 7, 6], // z = +half
        [0, 1, 4],
        [1, 5, 4], // y = -half
        [2, 6, 3],
        [3, 6, 7], // y = +half
        [0, 4, 2],
        [2, 4, 6], // x = -half
        [1, 3, 5],
        [3, 7, 5], // x = +half
    ];
    TriangleMesh::new(vertices, faces).unwrap()
}

/// Octahedron subdivided `level` times, vertices projected to `radius`.
fn octasphere(radius: f64, level: usize) -> TriangleMesh<f64> {
    let mut vertices = vec![
        V3::new(1.0, 0.0, 0.0),
        V3::new(-1.0, 0.0, 0.0),
        V3::new(0.0, 1.0, 0.0),
        V3::new(0.0, -1.0, 0.0),
        V3::new(0.0, 0.0, 1.0),
        V3::new(0.0, 0.0, -1.0),
    ];
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
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
                    vertices.push((vertices[a as usize] + vertices[b as usize]).normalize());
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
    TriangleMesh::new(vertices, faces).unwrap()
}

fn field_volume(
    grid: GridSpec<f64>,
    f: impl Fn(&V3) -> f64,
) -> Volume3<f64> {
    let [nx, ny, nz] = grid.dims;
    let shell = Volume3::filled(grid, 0.0).unwrap();
    let mut data = Vec::with_capacity(grid.n_voxels());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = shell.world_from_voxel(&V3::new(i as f64, j as f64, k as f64));
                data.push(f(&p));
            }
        }
    }
    Volume3::new(grid, data).unwrap()
}

#[test]
fn gradient_of_constant_volume_is_zero() {
    let grid = GridSpec::axis_aligned([5, 5, 5], V3::new(1.0, 1.0, 1.0), V3::zeros());
    let v = Volume3::filled(grid, 7.0).unwrap();
    let g = v.gradient_magnitude().unwrap();
    assert!(g.data().iter().all(|&x| x == 0.0));
}

#[test]
fn gradient_is_exact_on_affine_fields() {
    // anisotropic spacing and a shifted origin; one-sided boundary stencils
    // are also exact on affine fields, so every voxel must match
    let grid = GridSpec::axis_aligned(
        [7, 6, 5],
        V3::new(0.5, 1.0, 2.0),
        V3::new(-3.0, 11.0, 0.25),
    );
    let ramp = field_volume(grid, |p| 2.5 * p.x);
    let g = ramp.gradient_magnitude().unwrap();
    for &x in g.data() {
        assert_abs_diff_eq!(x, 2.5, epsilon = 1e-9);
    }
    let affine = field_volume(grid, |p| 2.0 * p.x + 3.0 * p.y - p.z + 4.0);
    let g = affine.gradient_magnitude().unwrap();
    let expected = 14.0f64.sqrt();
    for &x in g.data() {
        assert_abs_diff_eq!(x, expected, epsilon = 1e-9);
    }
}

#[test]
fn gradient_peaks_adjacent_to_a_step() {
    let grid = GridSpec::axis_aligned([9, 5, 5], V3::new(1.0, 1.0, 1.0), V3::zeros());
    let step = 4usize; // f = 0 for i < 4, 100 for i >= 4
    let v = field_volume(grid, |p| if p.x < step as f64 { 0.0 } else { 100.0 });
    let g = v.gradient_magnitude().unwrap();
    for i in 0..9 {
        let got = g.value(i, 2, 2);
        // central difference sees the jump from the two adjacent layers only
        let want = if i == step - 1 || i == step { 50.0 } else { 0.0 };
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }
}

#[test]
fn gradient_rejects_thin_volumes() {
    let grid = GridSpec::axis_aligned([2, 5, 5], V3::new(1.0, 1.0, 1.0), V3::zeros());
    let v = Volume3::filled(grid, 0.0).unwrap();
    assert!(matches!(
        v.gradient_magnitude(),
        Err(VolumeError::TooSmall { need: 3, .. })
    ));
}

#[test]
fn trilinear_reproduces_voxel_centers_everywhere() {
    let angle = 0.6f64;
    let (s, c) = angle.sin_cos();
    let direction = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let grid = GridSpec {
        dims: [6, 5, 4],
        spacing: V3::new(0.8, 1.2, 2.0),
        origin: V3::new(5.0, -2.0, 1.5),
        direction,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let data: Vec<f64> = (0..grid.n_voxels()).map(|_| rng.random::<f64>()).collect();
    let v = Volume3::new(grid, data).unwrap();
    for k in 0..4 {
        for j in 0..5 {
            for i in 0..6 {
                let p = v.world_from_voxel(&V3::new(i as f64, j as f64, k as f64));
                assert_abs_diff_eq!(
                    v.sample_trilinear(&p, f64::NAN),
                    v.value(i, j, k),
                    epsilon = 1e-9
                );
            }
        }
    }
}

#[test]
fn trilinear_midpoint_averages_neighbors() {
    let grid = GridSpec::axis_aligned([2, 2, 2], V3::new(1.0, 1.0, 1.0), V3::zeros());
    let v = Volume3::new(grid, (1..=8).map(f64::from).collect()).unwrap();
    // midpoint along x between values 1 and 2
    assert_abs_diff_eq!(
        v.sample_trilinear(&V3::new(0.5, 0.0, 0.0), f64::NAN),
        1.5,
        epsilon = 1e-12
    );
    // the cell center averages all eight corners
    assert_abs_diff_eq!(
        v.sample_trilinear(&V3::new(0.5, 0.5, 0.5), f64::NAN),
        4.5,
        epsilon = 1e-12
    );
}

#[test]
fn trilinear_outside_returns_outside_value() {
    let grid = GridSpec::axis_aligned([3, 3, 3], V3::new(1.0, 1.0, 1.0), V3::zeros());
    let v = Volume3::filled(grid, 9.0).unwrap();
    assert_eq!(v.sample_trilinear(&V3::new(100.0, 0.0, 0.0), 0.0), 0.0);
    assert_eq!(v.sample_trilinear(&V3::new(1.0, 1.0, -0.51), -3.25), -3.25);
    // just inside the voxel-center box still interpolates
    assert_eq!(v.sample_trilinear(&V3::new(1.0, 1.0, 0.25), -3.25), 9.0);
}

#[test]
fn gaussian_blur_preserves_constants_and_affine_interior() {
    let grid = GridSpec::axis_aligned([11, 11, 11], V3::new(1.0, 1.0, 1.0), V3::zeros());
    let c = Volume3::filled(grid, 3.75).unwrap().gaussian_blur(1.0);
    for &x in c.data() {
        assert_abs_diff_eq!(x, 3.75, epsilon = 1e-12);
    }
    // symmetric normalized kernel leaves affine fields untouched away from
    // the replicated edges (3σ = 3 voxels here)
    let v = field_volume(grid, |p| 0.5 * p.x - 2.0 * p.y + p.z).gaussian_blur(1.0);
    let truth = field_volume(grid, |p| 0.5 * p.x - 2.0 * p.y + p.z);
    for k in 3..8 {
        for j in 3..8 {
            for i in 3..8 {
                assert_abs_diff_eq!(v.value(i, j, k), truth.value(i, j, k), epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn gaussian_blur_impulse_is_symmetric_and_mass_preserving() {
    let grid = GridSpec::axis_aligned([9, 9, 9], V3::new(1.0, 1.0, 1.0), V3::zeros());
    let mut data = vec![0.0; grid.n_voxels()];
    data[4 + 9 * (4 + 9 * 4)] = 1.0;
    let v = Volume3::new(grid, data).unwrap().gaussian_blur(1.0);
    let total: f64 = v.data().iter().sum();
    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    assert!(v.value(4, 4, 4) > v.value(5, 4, 4));
    for k in 0..9 {
        for j in 0..9 {
            for i in 0..9 {
                let mirrored = v.value(8 - i, 8 - j, 8 - k);
                assert_abs_diff_eq!(v.value(i, j, k), mirrored, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn voxelize_cube_count_matches_analytic_volume() {
    // 10 mm cube; voxel centers land on half-integers so exactly 10³ of
    // them fall strictly inside
    let mesh = cube_mesh(5.0, V3::zeros());
    assert_abs_diff_eq!(mesh.signed_volume(), 1000.0, epsilon = 1e-9);
    let grid = GridSpec::axis_aligned(
        [20, 20, 20],
        V3::new(1.0, 1.0, 1.0),
        V3::new(-9.5, -9.5, -9.5),
    );
    let v = voxelize(&mesh, &grid, 1.0, 0.0).unwrap();
    let count = v.data().iter().filter(|&&x| x == 1.0).count();
    assert_eq!(count, 1000);
}

#[test]
fn voxelize_sphere_volume_within_two_percent() {
    let mesh = octasphere(8.0, 4);
    let grid = GridSpec::enclosing(&[&mesh], 0.5, 2.0).unwrap();
    let v = voxelize(&mesh, &grid, 1.0, 0.0).unwrap();
    let count = v.data().iter().filter(|&&x| x == 1.0).count();
    let measured = count as f64 * 0.5f64.powi(3);
    let analytic = 4.0 / 3.0 * std::f64::consts::PI * 8.0f64.powi(3);
    let rel = (measured - analytic).abs() / analytic;
    assert!(rel < 0.02, "sphere volume off by {:.3}%", rel * 100.0);
}

#[test]
fn voxelize_mesh_outside_grid_is_all_outside() {
    let mesh = cube_mesh(2.0, V3::new(100.0, 100.0, 100.0));
    let grid = GridSpec::axis_aligned([8, 8, 8], V3::new(1.0, 1.0, 1.0), V3::zeros());
    let v = voxelize(&mesh, &grid, 1.0, -1.0).unwrap();
    assert!(v.data().iter().all(|&x| x == -1.0));
}

#[test]
fn voxelize_rejects_open_meshes() {
    let m = cube_mesh(3.0, V3::zeros());
    let open = TriangleMesh::new(
        m.vertices().to_vec(),
        m.faces()[..m.n_faces() - 1].to_vec(),
    )
    .unwrap();
    assert!(matches!(
        voxelize(&open, &GridSpec::axis_aligned([4, 4, 4], V3::new(1.0, 1.0, 1.0), V3::zeros()), 1.0, 0.0),
        Err(VolumeError::OpenMesh)
    ));
}

#[test]
fn voxelize_is_invariant_under_vertex_reordering() {
    let mesh = octasphere(4.0, 2);
    let n = mesh.n_vertices() as u32;
    // reverse the vertex array and remap faces accordingly
    let vertices: Vec<V3> = mesh.vertices().iter().rev().copied().collect();
    let faces: Vec<[u32; 3]> = mesh
        .faces()
        .iter()
        .map(|f| [n - 1 - f[0], n - 1 - f[1], n - 1 - f[2]])
        .collect();
    let permuted = TriangleMesh::new(vertices, faces).unwrap();
    let grid = GridSpec::enclosing(&[&mesh], 0.5, 1.0).unwrap();
    let a = voxelize(&mesh, &grid, 1.0, 0.0).unwrap();
    let b = voxelize(&permuted, &grid, 1.0, 0.0).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn nifti_roundtrip_is_exact_for_float32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.nii");
    let grid = GridSpec::axis_aligned(
        [8, 9, 10],
        V3::new(0.7, 1.1, 1.3),
        V3::new(-12.5, 3.0, 40.0),
    );
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    // values generated at f32 precision so the float32 file loses nothing
    let data: Vec<f64> = (0..grid.n_voxels())
        .map(|_| f64::from(rng.random::<f32>() * 100.0 - 50.0))
        .collect();
    let v = Volume3::new(grid, data).unwrap();
    write_nifti(&v, &path).unwrap();
    let back: Volume3<f64> = read_nifti(&path).unwrap();
    assert_eq!(back.dims(), [8, 9, 10]);
    for k in 0..3 {
        assert_abs_diff_eq!(back.grid().spacing[k], grid.spacing[k], epsilon = 1e-6);
        assert_abs_diff_eq!(back.grid().origin[k], grid.origin[k], epsilon = 1e-5);
    }
    assert_eq!(v.data(), back.data());
    // every grid corner keeps its world position
    for &ci in &[0.0, 7.0] {
        for &cj in &[0.0, 8.0] {
            for &ck in &[0.0, 9.0] {
                let c = V3::new(ci, cj, ck);
                let d = (v.world_from_voxel(&c) - back.world_from_voxel(&c)).norm();
                assert!(d < 1e-5, "corner {c:?} moved {d} mm");
            }
        }
    }
}

#[test]
fn nifti_preserves_rotated_direction() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rot.nii");
    // 90° about z: +x voxel axis maps to world +y
    let direction = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let grid = GridSpec {
        dims: [4, 4, 4],
        spacing: V3::new(1.5, 1.0, 2.0),
        origin: V3::new(10.0, -4.0, 2.0),
        direction,
    };
    let v = Volume3::filled(grid, 1.0).unwrap();
    write_nifti(&v, &path).unwrap();
    let back: Volume3<f64> = read_nifti(&path).unwrap();
    let p = V3::new(1.0, 0.0, 0.0);
    let d = (v.world_from_voxel(&p) - back.world_from_voxel(&p)).norm();
    assert!(d < 1e-5);
}

#[test]
fn nifti_rejects_two_file_magic_and_corrupt_headers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.nii");
    let grid = GridSpec::axis_aligned([3, 3, 3], V3::new(1.0, 1.0, 1.0), V3::zeros());
    write_nifti(&Volume3::filled(grid, 0.0).unwrap(), &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[344..348].copy_from_slice(b"ni1\0");
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        read_nifti::<f64>(&path),
        Err(VolumeError::BadMagic { found }) if &found == b"ni1\0"
    ));

    let mut bad = good.clone();
    LittleEndian::write_i16(&mut bad[70..], 8); // int32: unsupported
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        read_nifti::<f64>(&path),
        Err(VolumeError::UnsupportedDatatype { code: 8 })
    ));

    let mut bad = good.clone();
    LittleEndian::write_i16(&mut bad[40..], 4); // 4-D volume
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        read_nifti::<f64>(&path),
        Err(VolumeError::DimensionError { ndim: 4 })
    ));

    let mut bad = good;
    LittleEndian::write_f32(&mut bad[108..], 100.0); // vox_offset inside header
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        read_nifti::<f64>(&path),
        Err(VolumeError::BadHeader { .. })
    ));
}

#[test]
fn nifti_reads_hand_built_int16_with_scaling() {
    // minimal header assembled byte by byte: 2×3×2 int16 volume with
    // scl_slope 2, scl_inter -1, spacing (2,2,2), origin (1,-2,3)
    let mut h = vec![0u8; 348];
    LittleEndian::write_i32(&mut h[0..], 348);
    for (k, d) in [3i16, 2, 3, 2, 1, 1, 1, 1].iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * k..], *d);
    }
    LittleEndian::write_i16(&mut h[70..], 4); // int16
    LittleEndian::write_i16(&mut h[72..], 16); // bitpix
    LittleEndian::write_f32(&mut h[108..], 352.0); // vox_offset
    LittleEndian::write_f32(&mut h[112..], 2.0); // scl_slope
    LittleEndian::write_f32(&mut h[116..], -1.0); // scl_inter
    LittleEndian::write_i16(&mut h[254..], 1); // sform_code
    let srow: [[f32; 4]; 3] = [
        [2.0, 0.0, 0.0, 1.0],
        [0.0, 2.0, 0.0, -2.0],
        [0.0, 0.0, 2.0, 3.0],
    ];
    for (r, row) in srow.iter().enumerate() {
        for (c, val) in row.iter().enumerate() {
            LittleEndian::write_f32(&mut h[280 + 16 * r + 4 * c..], *val);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    let mut file = h;
    file.extend_from_slice(&[0u8; 4]);
    for v in 0..12i16 {
        let mut b = [0u8; 2];
        LittleEndian::write_i16(&mut b, v);
        file.extend_from_slice(&b);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.nii");
    std::fs::write(&path, file).unwrap();
    let v: Volume3<f64> = read_nifti(&path).unwrap();
    assert_eq!(v.dims(), [2, 3, 2]);
    assert_eq!(v.grid().spacing, V3::new(2.0, 2.0, 2.0));
    assert_eq!(v.grid().origin, V3::new(1.0, -2.0, 3.0));
    for (idx, &x) in v.data().iter().enumerate() {
        assert_eq!(x, 2.0 * idx as f64 - 1.0);
    }
}

#[test]
fn nifti_falls_back_to_pixdim_without_sform() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.nii");
    let grid = GridSpec::axis_aligned([3, 3, 3], V3::new(0.5, 0.25, 2.0), V3::zeros());
    write_nifti(&Volume3::filled(grid, 4.0).unwrap(), &path).unwrap();
    let mut raw = std::fs::read(&path).unwrap();
    LittleEndian::write_i16(&mut raw[254..], 0); // drop the sform
    std::fs::write(&path, raw).unwrap();
    let v: Volume3<f64> = read_nifti(&path).unwrap();
    assert_abs_diff_eq!(v.grid().spacing.x, 0.5, epsilon = 1e-6);
    assert_abs_diff_eq!(v.grid().spacing.y, 0.25, epsilon = 1e-6);
    assert_abs_diff_eq!(v.grid().spacing.z, 2.0, epsilon = 1e-6);
    assert_eq!(v.grid().origin, V3::zeros());
    assert_eq!(v.grid().direction, Matrix3::identity());
}

#[test]
fn grid_enclosing_covers_meshes_with_margin() {
    let a = octasphere(3.0, 1);
    let b = cube_mesh(2.0, V3::new(15.0, 0.0, -5.0));
    let grid = GridSpec::enclosing(&[&a, &b], 1.0, 3.0).unwrap();
    let shell = Volume3::filled(grid, 0.0).unwrap();
    for mesh in [&a, &b] {
        for v in mesh.vertices() {
            let c = shell.voxel_from_world(v);
            for k in 0..3 {
                assert!(
                    c[k] > 1.0 && c[k] < grid.dims[k] as f64 - 2.0,
                    "vertex {v:?} too close to the grid edge: voxel {c:?}"
                );
            }
        }
    }
}

#[test]
fn volume_constructors_validate() {
    let ok = V3::new(1.0, 1.0, 1.0);
    assert!(matches!(
        Volume3::new(GridSpec::axis_aligned([0, 3, 3], ok, V3::zeros()), vec![]),
        Err(VolumeError::TooSmall { .. })
    ));
    assert!(matches!(
        Volume3::new(
            GridSpec::axis_aligned([2, 2, 2], ok, V3::zeros()),
            vec![0.0; 7]
        ),
        Err(VolumeError::DataLength {
            expected: 8,
            got: 7,
            ..
        })
    ));
    assert!(matches!(
        Volume3::filled(
            GridSpec::axis_aligned([2, 2, 2], V3::new(1.0, -0.5, 1.0), V3::zeros()),
            0.0
        ),
        Err(VolumeError::BadSpacing { .. })
    ));
    let mut skewed = GridSpec::axis_aligned([2, 2, 2], ok, V3::zeros());
    skewed.direction[(0, 0)] = 1.01;
    assert!(matches!(
        Volume3::filled(skewed, 0.0),
        Err(VolumeError::BadDirection { .. })
    ));
}
