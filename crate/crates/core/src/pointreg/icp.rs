//! Rigid iterative-closest-point registration.

use super::{umeyama, KdTree, PointCloud, RegistrationError, RegistrationReport};
use crate::geometry::SimilarityTransform;
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub struct IcpConfig<T: Real> {
    pub max_iters: usize,
    /// Stop when the RMS residual changes by less than this (mm).
    pub tol: T,
}

impl<T: Real> Default for IcpConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: T::of(1e-6),
        }
    }
}

/// Rigid ICP: alternates nearest-neighbour correspondences (transformed
/// source against target) with a closed-form rigid re-fit on the pairs.
///
/// The per-iteration RMS over current correspondences is recorded in the
/// report trace and is non-increasing apart from floating-point noise.
pub fn icp_rigid<T: Real>(
    src: &PointCloud<T>,
    dst: &PointCloud<T>,
    init: &SimilarityTransform<T>,
    config: &IcpConfig<T>,
) -> Result<RegistrationReport<T>, RegistrationError> {
    if !init.is_rigid() {
        return Err(RegistrationError::RigidInitRequired {
            scale: init.scale().as_f64(),
        });
    }
    if src.len() < 3 || dst.len() < 3 {
        return Err(RegistrationError::TooFewPoints {
            got: src.len().min(dst.len()),
            need: 3,
        });
    }
    if config.max_iters == 0 {
        return Err(RegistrationError::BadConfig {
            reason: "max_iters must be at least 1".into(),
        });
    }

    let tree = KdTree::build(dst.points())?;
    let mut transform = *init;
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        iterations += 1;
        let moved = src.transformed(&transform);
        let pairs = tree.nearest_many(moved.points());
        let matched: Vec<_> = pairs.iter().map(|&(i, _)| *tree.point(i)).collect();
        transform = umeyama(src, &PointCloud::new(matched.clone()), false)?;

        // residual of the fresh transform against the same correspondences
        let mut sq = T::zero();
        for (s, d) in src.points().iter().zip(&matched) {
            sq += (transform.apply(s) - d).norm_squared();
        }
        let rms = (sq / T::from_usize(src.len()).unwrap()).sqrt();
        if let Some(&prev) = trace.last() {
            if (prev - rms).abs() < config.tol {
                trace.push(rms);
                converged = true;
                break;
            }
        }
        trace.push(rms);
    }

    let moved = src.transformed(&transform);
    let final_pairs = tree.nearest_many(moved.points());
    let mut sq = T::zero();
    for &(_, d) in &final_pairs {
        sq += d * d;
    }
    let rms_residual = (sq / T::from_usize(src.len()).unwrap()).sqrt();

    Ok(RegistrationReport {
        transform,
        rms_residual,
        iterations,
        converged,
        trace,
    })
}
