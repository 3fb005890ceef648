//! Regular scalar volumes in physical coordinates.
//!
//! Data is laid out x-fastest (`idx = i + nx*(j + ny*k)`). The grid places
//! `origin` at the *center* of voxel `(0,0,0)`; `direction` columns are the
//! world-space directions of the voxel axes.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::geometry::{GeometryError, MeshDistanceIndex, TriangleMesh};
use crate::Real;

mod nifti;

pub use nifti::{read_nifti, write_nifti};

#[derive(Debug, thiserror::Error)]
pub enum VolumeError {
    #[error("volume dims {dims:?} too small; every axis needs at least {need} voxels")]
    TooSmall { dims: [usize; 3], need: usize },
    #[error("data length {got} does not match dims {dims:?} ({expected} voxels)")]
    DataLength {
        dims: [usize; 3],
        expected: usize,
        got: usize,
    },
    #[error("voxel spacing must be positive, got {spacing:?}")]
    BadSpacing { spacing: [f64; 3] },
    #[error("direction matrix is not orthonormal (max deviation {deviation})")]
    BadDirection { deviation: f64 },
    #[error("mesh is not closed; voxelization needs a watertight surface")]
    OpenMesh,
    #[error("not a NIfTI-1 file (magic {found:?})")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported NIfTI datatype code {code}; only int16 (4) and float32 (16) are read")]
    UnsupportedDatatype { code: i16 },
    #[error("expected a 3-D volume, header declares {ndim} dimensions")]
    DimensionError { ndim: i16 },
    #[error("bad NIfTI header: {reason}")]
    BadHeader { reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grid geometry without the data: dimensions, spacing, pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T: Real> {
    pub dims: [usize; 3],
    pub spacing: Vector3<T>,
    /// World position of the center of voxel (0,0,0).
    pub origin: Vector3<T>,
    pub direction: Matrix3<T>,
}

impl<T: Real> GridSpec<T> {
    pub fn axis_aligned(dims: [usize; 3], spacing: Vector3<T>, origin: Vector3<T>) -> Self {
        Self {
            dims,
            spacing,
            origin,
            direction: Matrix3::identity(),
        }
    }

    /// Smallest axis-aligned grid covering all meshes plus `margin` (mm) on
    /// every side.
    pub fn enclosing(
        meshes: &[&TriangleMesh<T>],
        spacing: T,
        margin: T,
    ) -> Result<Self, VolumeError> {
        let mut lo = Vector3::repeat(T::of(f64::INFINITY));
        let mut hi = Vector3::repeat(T::of(f64::NEG_INFINITY));
        for m in meshes {
            if let Some((mlo, mhi)) = m.bounds() {
                for k in 0..3 {
                    lo[k] = lo[k].min(mlo[k]);
                    hi[k] = hi[k].max(mhi[k]);
                }
            }
        }
        if !(lo[0] <= hi[0]) {
            return Err(VolumeError::TooSmall {
                dims: [0, 0, 0],
                need: 1,
            });
        }
        let mut dims = [0usize; 3];
        for k in 0..3 {
            let extent = hi[k] - lo[k] + margin * T::of(2.0);
            dims[k] = ((extent / spacing).ceil().as_f64() as usize).max(2);
        }
        let half = T::of(0.5);
        let origin = Vector3::from_fn(|k, _| lo[k] - margin + spacing * half);
        Ok(Self {
            dims,
            spacing: Vector3::repeat(spacing),
            origin,
            direction: Matrix3::identity(),
        })
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    fn validate(&self) -> Result<(), VolumeError> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::TooSmall {
                dims: self.dims,
                need: 1,
            });
        }
        for k in 0..3 {
            if !(self.spacing[k] > T::zero()) {
                return Err(VolumeError::BadSpacing {
                    spacing: [
                        self.spacing[0].as_f64(),
                        self.spacing[1].as_f64(),
                        self.spacing[2].as_f64(),
                    ],
                });
            }
        }
        let gram = self.direction.transpose() * self.direction;
        let mut dev = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                let e = (gram[(i, j)] - target).abs();
                if !(e <= dev) {
                    dev = e;
                }
            }
        }
        // 1e-6, not 1e-9: direction cosines often come from f32 headers
        if !(dev <= T::of(1e-6)) {
            return Err(VolumeError::BadDirection {
                deviation: dev.as_f64(),
            });
        }
        Ok(())
    }
}

/// Scalar volume over a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3<T: Real> {
    grid: GridSpec<T>,
    data: Vec<T>,
}

impl<T: Real> Volume3<T> {
    pub fn new(grid: GridSpec<T>, data: Vec<T>) -> Result<Self, VolumeError> {
        grid.validate()?;
        if data.len() != grid.n_voxels() {
            return Err(VolumeError::DataLength {
                dims: grid.dims,
                expected: grid.n_voxels(),
                got: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: GridSpec<T>, value: T) -> Result<Self, VolumeError> {
        let n = grid.n_voxels();
        Self::new(grid, vec![value; n])
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.grid.dims[0] * (j + self.grid.dims[1] * k)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.flat_index(i, j, k)]
    }

    /// World position of a (possibly fractional) voxel coordinate.
    pub fn world_from_voxel(&self, c: &Vector3<T>) -> Vector3<T> {
        self.grid.origin + self.grid.direction * c.component_mul(&self.grid.spacing)
    }

    /// Continuous voxel coordinate of a world position.
    pub fn voxel_from_world(&self, p: &Vector3<T>) -> Vector3<T> {
        (self.grid.direction.transpose() * (p - self.grid.origin))
            .component_div(&self.grid.spacing)
    }

    /// Trilinear interpolation at a world position. Points outside the box
    /// spanned by the outermost voxel centers return `outside`.
    pub fn sample_trilinear(&self, p: &Vector3<T>, outside: T) -> T {
        let c = self.voxel_from_world(p);
        let eps = T::of(1e-9);
        let [nx, ny, nz] = self.grid.dims;
        let hi = [nx - 1, ny - 1, nz - 1];
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for k in 0..3 {
            let top = T::from_usize(hi[k]).unwrap();
            if c[k] < -eps || c[k] > top + eps {
                return outside;
            }
            let cc = c[k].clamp(T::zero(), top);
            let mut i0 = cc.floor().as_f64() as usize;
            if i0 >= hi[k] && hi[k] > 0 {
                i0 = hi[k] - 1;
            }
            base[k] = i0;
            frac[k] = if hi[k] == 0 {
                T::zero()
            } else {
                cc - T::from_usize(i0).unwrap()
            };
        }
        let step = |k: usize, d: usize| -> usize {
            if hi[k] == 0 {
                base[k]
            } else {
                base[k] + d
            }
        };
        let mut acc = T::zero();
        for dz in 0..2usize {
            for dy in 0..2usize {
                for dx in 0..2usize {
                    let wx = if dx == 0 { T::one() - frac[0] } else { frac[0] };
                    let wy = if dy == 0 { T::one() - frac[1] } else { frac[1] };
                    let wz = if dz == 0 { T::one() - frac[2] } else { frac[2] };
                    let v = self.value(step(0, dx), step(1, dy), step(2, dz));
                    acc += v * wx * wy * wz;
                }
            }
        }
        acc
    }

    /// Separable Gaussian blur with physical standard deviation `sigma` (mm),
    /// kernel truncated at 3σ, edges clamped. `sigma <= 0` is a no-op copy.
    pub fn gaussian_blur(&self, sigma: T) -> Self {
        if !(sigma > T::zero()) {
            return self.clone();
        }
        let mut data = self.data.clone();
        for axis in 0..3 {
            let h = self.grid.spacing[axis];
            let radius = (T::of(3.0) * sigma / h).ceil().as_f64() as i64;
            if radius == 0 {
                continue;
            }
            let mut weights = Vec::with_capacity(2 * radius as usize + 1);
            let mut total = T::zero();
            for o in -radius..=radius {
                let x = T::from_i64(o).unwrap() * h;
                let w = (-(x * x) / (T::of(2.0) * sigma * sigma)).exp();
                weights.push(w);
                total += w;
            }
            for w in &mut weights {
                *w /= total;
            }
            data = self.convolve_axis(&data, axis, &weights, radius);
        }
        Self {
            grid: self.grid,
            data,
        }
    }

    fn convolve_axis(&self, src: &[T], axis: usize, weights: &[T], radius: i64) -> Vec<T> {
        let [nx, ny, _] = self.grid.dims;
        let n_axis = self.grid.dims[axis] as i64;
        let stride = match axis {
            0 => 1,
            1 => nx,
            _ => nx * ny,
        };
        (0..src.len())
            .into_par_iter()
            .map(|idx| {
                let i = idx % nx;
                let j = (idx / nx) % ny;
                let k = idx / (nx * ny);
                let coord = [i, j, k][axis] as i64;
                let line_start = idx - [i, j, k][axis] * stride;
                let mut acc = T::zero();
                for (wi, &w) in weights.iter().enumerate() {
                    let o = wi as i64 - radius;
                    let c = (coord + o).clamp(0, n_axis - 1) as usize;
                    acc += src[line_start + c * stride] * w;
                }
                acc
            })
            .collect()
    }

    /// Gradient magnitude in physical units: central differences inside,
    /// one-sided at the boundaries. Needs at least 2 voxels per axis.
    pub fn gradient_magnitude(&self) -> Result<Self, VolumeError> {
        let [nx, ny, nz] = self.grid.dims;
        if nx < 3 || ny < 3 || nz < 3 {
            return Err(VolumeError::TooSmall {
                dims: self.grid.dims,
                need: 3,
            });
        }
        let data: Vec<T> = (0..self.data.len())
            .into_par_iter()
            .map(|idx| {
                let i = idx % nx;
                let j = (idx / nx) % ny;
                let k = idx / (nx * ny);
                let coords = [i, j, k];
                let mut g2 = T::zero();
                for axis in 0..3 {
                    let n = self.grid.dims[axis];
                    let h = self.grid.spacing[axis];
                    let c = coords[axis];
                    let sample = |v: usize| -> T {
                        let mut ijk = coords;
                        ijk[axis] = v;
                        self.value(ijk[0], ijk[1], ijk[2])
                    };
                    let d = if c == 0 {
                        (sample(1) - sample(0)) / h
                    } else if c == n - 1 {
                        (sample(n - 1) - sample(n - 2)) / h
                    } else {
                        (sample(c + 1) - sample(c - 1)) / (T::of(2.0) * h)
                    };
                    g2 += d * d;
                }
                g2.sqrt()
            })
            .collect();
        Ok(Self {
            grid: self.grid,
            data,
        })
    }
}

/// Ray directions tried in order for the parity test; chosen irrational-ish
/// so axis-aligned geometry never grazes all of them.
const PARITY_DIRS: [[f64; 3]; 4] = [
    [0.5381290971314569, 0.2796323089609107, 0.7951905784101678],
    [-0.38172310889021836, 0.8642154126771065, 0.3276635626217113],
    [0.7093918879793242, -0.14120574565374447, 0.6905420811016873],
    [0.18267342537409394, 0.5793461529365609, -0.7943268776336786],
];

/// Rasterizes a watertight mesh: voxel centers strictly inside get
/// `inside`, everything else `outside`. Inside/outside is decided by ray
/// parity with grazing-robust retries and a winding-number fallback.
pub fn voxelize<T: Real>(
    mesh: &TriangleMesh<T>,
    grid: &GridSpec<T>,
    inside: T,
    outside: T,
) -> Result<Volume3<T>, VolumeError> {
    grid.validate()?;
    if !mesh.is_closed() {
        return Err(VolumeError::OpenMesh);
    }
    let index = MeshDistanceIndex::build(mesh)?;
    let dirs: Vec<Vector3<T>> = PARITY_DIRS
        .iter()
        .map(|d| Vector3::new(T::of(d[0]), T::of(d[1]), T::of(d[2])).normalize())
        .collect();
    let shell = Volume3 {
        grid: *grid,
        data: vec![T::zero(); grid.n_voxels()],
    };
    let [nx, ny, _] = grid.dims;
    let data: Vec<T> = (0..grid.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let i = idx % nx;
            let j = (idx / nx) % ny;
            let k = idx / (nx * ny);
            let center = shell.world_from_voxel(&Vector3::new(
                T::from_usize(i).unwrap(),
                T::from_usize(j).unwrap(),
                T::from_usize(k).unwrap(),
            ));
            let mut is_inside = None;
            for dir in &dirs {
                if let Some(crossings) = index.ray_crossings(&center, dir) {
                    is_inside = Some(crossings % 2 == 1);
                    break;
                }
            }
            let is_inside =
                is_inside.unwrap_or_else(|| index.winding_number(&center) > T::of(0.5));
            if is_inside {
                inside
            } else {
                outside
            }
        })
        .collect();
    Ok(Volume3 { grid: *grid, data })
}
