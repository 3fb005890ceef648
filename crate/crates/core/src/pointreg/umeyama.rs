//! Closed-form least-squares similarity alignment of paired point sets
//! (SVD of the cross-covariance with reflection correction).

use nalgebra::{Matrix3, Vector3};

use super::{cross_covariance, PointCloud, RegistrationError};
use crate::geometry::SimilarityTransform;
use crate::Real;

/// Least-squares `dst ≈ scale * R * src + t` over index-paired points.
///
/// With `with_scale` false the scale is pinned to exactly 1. Fails on fewer
/// than 3 points or on (near-)collinear/coincident configurations where the
/// rotation is not unique.
pub fn umeyama<T: Real>(
    src: &PointCloud<T>,
    dst: &PointCloud<T>,
    with_scale: bool,
) -> Result<SimilarityTransform<T>, RegistrationError> {
    if src.len() != dst.len() {
        return Err(RegistrationError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(RegistrationError::TooFewPoints {
            got: src.len(),
            need: 3,
        });
    }
    let mu_s = src.centroid();
    let mu_d = dst.centroid();
    let sigma = cross_covariance(src.points(), dst.points(), &mu_s, &mu_d);

    let n = T::from_usize(src.len()).unwrap();
    let mut var_src = T::zero();
    for p in src.points() {
        var_src += (p - mu_s).norm_squared();
    }
    var_src /= n;
    if var_src <= T::zero() {
        return Err(RegistrationError::DegenerateConfiguration {
            reason: "source points are coincident".into(),
        });
    }

    let (u, d, v_t) = sorted_svd(&sigma)?;
    // rotation is only unique when the second singular value is nonzero
    let tol = T::default_epsilon() * T::of(1e4);
    if d[1] <= d[0] * tol {
        return Err(RegistrationError::DegenerateConfiguration {
            reason: "points are (near-)collinear; rotation is ambiguous".into(),
        });
    }

    let det_uv = u.determinant() * v_t.determinant();
    let flip = if det_uv < T::zero() { -T::one() } else { T::one() };
    let s_diag = Vector3::new(T::one(), T::one(), flip);
    let rotation = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let scale = if with_scale {
        (d[0] + d[1] + flip * d[2]) / var_src
    } else {
        T::one()
    };
    if !(scale > T::zero()) {
        return Err(RegistrationError::DegenerateConfiguration {
            reason: format!("non-positive scale {}", scale.as_f64()),
        });
    }
    let translation = mu_d - rotation * mu_s * scale;
    SimilarityTransform::new(rotation, translation, scale).map_err(|e| {
        RegistrationError::DegenerateConfiguration {
            reason: format!("assembled transform invalid: {e}"),
        }
    })
}

/// SVD with singular values (and matching columns) sorted descending.
pub(crate) fn sorted_svd<T: Real>(
    m: &Matrix3<T>,
) -> Result<(Matrix3<T>, Vector3<T>, Matrix3<T>), RegistrationError> {
    let svd = nalgebra::SVD::try_new(*m, true, true, T::default_epsilon(), 0).ok_or_else(
        || RegistrationError::DegenerateConfiguration {
            reason: "SVD failed to converge".into(),
        },
    )?;
    let (u, v_t, d) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t, svd.singular_values),
        _ => {
            return Err(RegistrationError::DegenerateConfiguration {
                reason: "SVD failed to converge".into(),
            })
        }
    };
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap().then(a.cmp(&b)));
    let u_s = Matrix3::from_columns(&[
        u.column(idx[0]).into_owned(),
        u.column(idx[1]).into_owned(),
        u.column(idx[2]).into_owned(),
    ]);
    let v_ts = Matrix3::from_rows(&[
        v_t.row(idx[0]).into_owned(),
        v_t.row(idx[1]).into_owned(),
        v_t.row(idx[2]).into_owned(),
    ]);
    let d_s = Vector3::new(d[idx[0]], d[idx[1]], d[idx[2]]);
    Ok((u_s, d_s, v_ts))
}
