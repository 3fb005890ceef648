//! Rigid / similarity coherent point drift.
//!
//! The moving set is modelled as a Gaussian mixture fit to the fixed set by
//! expectation-maximization, with a uniform component absorbing outliers.
//! Correspondences stay soft, which is what makes this robust where
//! closest-point matching gets stuck. The M-step is the closed-form weighted
//! similarity fit on the mixture moments; the variance is re-estimated
//! from the same posteriors every iteration.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::umeyama::sorted_svd;
use super::{KdTree, PointCloud, RegistrationError, RegistrationReport};
use crate::geometry::SimilarityTransform;
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub struct CpdConfig<T: Real> {
    /// Estimate a global scale factor alongside the rotation.
    pub with_scale: bool,
    /// Prior probability that a fixed point is an outlier, in `[0, 1)`.
    pub outlier_weight: T,
    /// Stop when the variance update falls below this (mm²).
    pub tol: T,
    pub max_iters: usize,
}

impl<T: Real> Default for CpdConfig<T> {
    fn default() -> Self {
        Self {
            with_scale: false,
            outlier_weight: T::of(0.1),
            tol: T::of(1e-6),
            max_iters: 150,
        }
    }
}

/// Per-target-point soft-assignment moments accumulated in the E-step.
struct Moments<T: Real> {
    /// Σ_m p(m|n) — total responsibility mass on target point n.
    mass: T,
    /// Σ_m p(m|n) · y_m — responsibility-weighted source points.
    first: Vector3<T>,
    /// Σ_m p(m|n) · |y_m|².
    second: T,
    /// Negative log-likelihood contribution of point n.
    nll: T,
}

/// Registers `src` onto `dst` with a rigid (or similarity) transform.
///
/// The report trace holds the negative log-likelihood at the start of each
/// iteration; EM guarantees it is non-increasing up to rounding.
pub fn cpd_rigid<T: Real>(
    src: &PointCloud<T>,
    dst: &PointCloud<T>,
    config: &CpdConfig<T>,
) -> Result<RegistrationReport<T>, RegistrationError> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(RegistrationError::TooFewPoints {
            got: src.len().min(dst.len()),
            need: 3,
        });
    }
    if !(config.outlier_weight >= T::zero() && config.outlier_weight < T::one()) {
        return Err(RegistrationError::BadConfig {
            reason: format!(
                "outlier_weight must be in [0, 1), got {}",
                config.outlier_weight.as_f64()
            ),
        });
    }
    if config.max_iters == 0 {
        return Err(RegistrationError::BadConfig {
            reason: "max_iters must be at least 1".into(),
        });
    }

    let x = dst.points();
    let y = src.points();
    let n_t = T::from_usize(x.len()).unwrap();
    let m_t = T::from_usize(y.len()).unwrap();

    // blind initialization: match centroids, roughly match spread
    let mut transform = {
        let scale = if config.with_scale {
            let sr = src.rms_radius();
            let dr = dst.rms_radius();
            if sr > T::zero() && dr > T::zero() {
                dr / sr
            } else {
                T::one()
            }
        } else {
            T::one()
        };
        let translation = dst.centroid() - src.centroid() * scale;
        SimilarityTransform::new(Matrix3::identity(), translation, scale).map_err(|e| {
            RegistrationError::DegenerateConfiguration {
                reason: format!("initialization failed: {e}"),
            }
        })?
    };

    // σ² from the full cross pairing under the initial transform, computed
    // via sums of squares rather than the O(N·M) double loop
    let mut sigma2 = {
        let moved: Vec<Vector3<T>> = y.iter().map(|p| transform.apply(p)).collect();
        let mut sum_x = Vector3::zeros();
        let mut sum_x2 = T::zero();
        for p in x {
            sum_x += p;
            sum_x2 += p.norm_squared();
        }
        let mut sum_y = Vector3::zeros();
        let mut sum_y2 = T::zero();
        for p in &moved {
            sum_y += p;
            sum_y2 += p.norm_squared();
        }
        (m_t * sum_x2 + n_t * sum_y2 - T::of(2.0) * sum_x.dot(&sum_y))
            / (T::of(3.0) * n_t * m_t)
    };
    if sigma2 <= T::zero() {
        sigma2 = T::of(1e-6);
    }

    let w = config.outlier_weight;
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    let mut floored = false;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        iterations += 1;
        let moved: Vec<Vector3<T>> = y.iter().map(|p| transform.apply(p)).collect();

        // constant balancing the uniform outlier bin against the mixture:
        // the Gaussian term keeps its 1/(M (2πσ²)^{3/2}) normalization
        let two_pi_sigma = (T::two_pi() * sigma2).powf(T::of(1.5));
        let c = if w > T::zero() {
            w / (T::one() - w) * m_t / n_t * two_pi_sigma
        } else {
            T::zero()
        };
        let inv_two_sigma2 = T::one() / (T::of(2.0) * sigma2);
        let log_norm = (T::one() - w).ln() - m_t.ln() - T::of(1.5) * (T::two_pi() * sigma2).ln();

        // E-step: per fixed point, soft-assignment moments over the moving
        // set. Parallel across fixed points, sequential reduction below, so
        // results do not depend on the thread count.
        let moments: Vec<Moments<T>> = x
            .par_iter()
            .map(|xn| {
                let mut sum_g = T::zero();
                let mut sum_gy = Vector3::zeros();
                let mut sum_gy2 = T::zero();
                for ym in &moved {
                    let g = (-(xn - ym).norm_squared() * inv_two_sigma2).exp();
                    sum_g += g;
                    sum_gy += ym * g;
                    sum_gy2 += ym.norm_squared() * g;
                }
                // -ln p(x_n) where p = (1-w)/(M (2πσ²)^{3/2}) Σ g + w/N
                let nll = if sum_g > T::of(1e-300) {
                    -(sum_g.ln() + log_norm + (T::one() + c / sum_g).ln())
                } else if w > T::zero() {
                    -(w.ln() - n_t.ln())
                } else {
                    T::of(690.0) // ≈ -ln(1e-300): all likelihood underflowed
                };
                let denom = sum_g + c;
                if denom > T::zero() {
                    Moments {
                        mass: sum_g / denom,
                        first: sum_gy / denom,
                        second: sum_gy2 / denom,
                        nll,
                    }
                } else {
                    Moments {
                        mass: T::zero(),
                        first: Vector3::zeros(),
                        second: T::zero(),
                        nll,
                    }
                }
            })
            .collect();

        let mut nll = T::zero();
        for m in &moments {
            nll += m.nll;
        }
        trace.push(nll);

        // M-step moments (sequential, fixed order)
        let mut n_p = T::zero();
        let mut mu_x = Vector3::zeros();
        let mut mu_y = Vector3::zeros();
        for (m, xn) in moments.iter().zip(x) {
            n_p += m.mass;
            mu_x += xn * m.mass;
            mu_y += m.first;
        }
        if n_p <= T::of(1e-12) {
            return Err(RegistrationError::DegenerateConfiguration {
                reason: "all fixed points classified as outliers".into(),
            });
        }
        mu_x /= n_p;
        mu_y /= n_p;

        let mut a = Matrix3::zeros();
        let mut den_y = T::zero();
        for (m, xn) in moments.iter().zip(x) {
            a += (xn - mu_x) * (m.first - mu_y * m.mass).transpose();
            den_y += m.second - T::of(2.0) * m.first.dot(&mu_y) + m.mass * mu_y.norm_squared();
        }

        let (u, d, v_t) = sorted_svd(&a)?;
        let det_uv = u.determinant() * v_t.determinant();
        let flip = if det_uv < T::zero() { -T::one() } else { T::one() };
        let rotation = u * Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), flip)) * v_t;
        let trace_dc = d[0] + d[1] + flip * d[2];
        let scale = if config.with_scale && den_y > T::zero() {
            trace_dc / den_y
        } else {
            T::one()
        };
        if !(scale > T::zero()) {
            return Err(RegistrationError::DegenerateConfiguration {
                reason: "scale estimate collapsed to zero".into(),
            });
        }
        let translation = mu_x - rotation * mu_y * scale;

        // note: `moved` (and the moments) still refer to the previous
        // transform composed on top of src, so the new estimate here maps
        // *previous moved* points; compose to get the src -> dst transform
        let step = SimilarityTransform::new(rotation, translation, scale).map_err(|e| {
            RegistrationError::DegenerateConfiguration {
                reason: format!("update produced invalid transform: {e}"),
            }
        })?;
        transform = step.compose(&transform);

        // σ² from the same posteriors at the *new* pose, expanded so only
        // the stored moments are needed
        let mut sq = T::zero();
        for (m, xn) in moments.iter().zip(x) {
            let ty_first = rotation * m.first * scale + translation * m.mass;
            let ty2 = scale * scale * m.second
                + T::of(2.0) * scale * translation.dot(&(rotation * m.first))
                + m.mass * translation.norm_squared();
            sq += m.mass * xn.norm_squared() - T::of(2.0) * xn.dot(&ty_first) + ty2;
        }
        let new_sigma2 = (sq / (T::of(3.0) * n_p)).max(T::zero());
        let delta = (sigma2 - new_sigma2).abs();
        sigma2 = new_sigma2;

        if delta < config.tol {
            converged = true;
            break;
        }
        if sigma2 < T::of(1e-12) {
            // a perfect fit drives σ² to zero faster than any sane tol can
            // catch, so hold it at the floor for one more pass; only if that
            // still cannot satisfy tol is the run genuinely collapsing
            if floored {
                return Err(RegistrationError::NumericalCollapse {
                    sigma2: sigma2.as_f64(),
                    last_transform: Box::new(transform.to_matrix_rows()),
                });
            }
            floored = true;
            sigma2 = T::of(1e-12);
        }
    }

    // hard-assignment residual for reporting
    let tree = KdTree::build(x)?;
    let moved = src.transformed(&transform);
    let pairs = tree.nearest_many(moved.points());
    let mut sq = T::zero();
    for &(_, d) in &pairs {
        sq += d * d;
    }
    let rms_residual = (sq / m_t).sqrt();

    Ok(RegistrationReport {
        transform,
        rms_residual,
        iterations,
        converged,
        trace,
    })
}
