//! Point-set registration: closed-form similarity alignment of paired sets,
//! iterative closest point for unpaired sets, and a coherent-point-drift
//! variant that tolerates outliers and recovers scale.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::geometry::SimilarityTransform;
use crate::Real;

mod cpd;
mod icp;
mod kdtree;
mod umeyama;

pub use cpd::{cpd_rigid, CpdConfig};
pub use icp::{icp_rigid, IcpConfig};
pub use kdtree::{nearest_brute, KdTree};
pub use umeyama::umeyama;

#[derive(Debug, thiserror::Error)]
pub enum RegistrationError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("paired clouds differ in size: {src} vs {dst}")]
    LengthMismatch { src: usize, dst: usize },
    #[error("degenerate configuration: {reason}")]
    DegenerateConfiguration { reason: String },
    #[error("initial transform must be rigid (scale 1), got scale {scale}")]
    RigidInitRequired { scale: f64 },
    #[error("variance collapsed to {sigma2} mm² before convergence; point sets may be inconsistent")]
    NumericalCollapse {
        sigma2: f64,
        /// Last stable estimate (row-major homogeneous matrix) so callers
        /// can still inspect where the registration was heading.
        last_transform: Box<[[f64; 4]; 4]>,
    },
    #[error("invalid configuration: {reason}")]
    BadConfig { reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unordered set of 3-D points in millimetres.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T: Real> {
    points: Vec<Vector3<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[Vector3<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<T> {
        let mut sum = Vector3::zeros();
        for p in &self.points {
            sum += p;
        }
        sum / T::from_usize(self.points.len().max(1)).unwrap()
    }

    pub fn transformed(&self, t: &SimilarityTransform<T>) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }

    /// Deterministic subsample: every k-th point so at most `max` remain.
    pub fn strided(&self, max: usize) -> Self {
        if self.points.len() <= max || max == 0 {
            return self.clone();
        }
        let stride = self.points.len().div_ceil(max);
        Self {
            points: self.points.iter().step_by(stride).copied().collect(),
        }
    }

    /// Root-mean-square distance from the centroid.
    pub fn rms_radius(&self) -> T {
        if self.points.is_empty() {
            return T::zero();
        }
        let c = self.centroid();
        let mut sq = T::zero();
        for p in &self.points {
            sq += (p - c).norm_squared();
        }
        (sq / T::from_usize(self.points.len()).unwrap()).sqrt()
    }
}

impl<T: Real> From<Vec<Vector3<T>>> for PointCloud<T> {
    fn from(points: Vec<Vector3<T>>) -> Self {
        Self { points }
    }
}

/// Reads a whitespace-separated `x y z` per line; blank lines and `#`
/// comments are skipped.
pub fn read_xyz<T: Real>(path: impl AsRef<Path>) -> Result<PointCloud<T>, RegistrationError> {
    let reader = BufReader::new(File::open(path)?);
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut coords = [T::zero(); 3];
        let mut tokens = trimmed.split_whitespace();
        for c in &mut coords {
            let tok = tokens.next().ok_or_else(|| RegistrationError::Parse {
                line: lineno + 1,
                reason: "expected 3 coordinates".into(),
            })?;
            let x: f64 = tok.parse().map_err(|_| RegistrationError::Parse {
                line: lineno + 1,
                reason: format!("bad coordinate {tok:?}"),
            })?;
            *c = T::of(x);
        }
        points.push(Vector3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud { points })
}

pub fn write_xyz<T: Real>(
    cloud: &PointCloud<T>,
    path: impl AsRef<Path>,
) -> Result<(), RegistrationError> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in cloud.points() {
        writeln!(
            out,
            "{:.16e} {:.16e} {:.16e}",
            p[0].as_f64(),
            p[1].as_f64(),
            p[2].as_f64()
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Outcome of an iterative registration.
#[derive(Debug, Clone)]
pub struct RegistrationReport<T: Real> {
    pub transform: SimilarityTransform<T>,
    /// RMS distance from transformed source points to their nearest target.
    pub rms_residual: T,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration objective: RMS residual for ICP, negative log-likelihood
    /// for CPD. Non-increasing up to floating-point slack.
    pub trace: Vec<T>,
}

pub(crate) fn cross_covariance<T: Real>(
    src: &[Vector3<T>],
    dst: &[Vector3<T>],
    mu_src: &Vector3<T>,
    mu_dst: &Vector3<T>,
) -> Matrix3<T> {
    let mut m = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        m += (d - mu_dst) * (s - mu_src).transpose();
    }
    m / T::from_usize(src.len()).unwrap()
}
