use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{centroid, Point, PointCloud};
use crate::error::{Error, Result};

/// Proper rigid transform `x -> R x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Residual RMSD after applying the transform.
    pub rmse: f64,
    /// The cross-covariance had rank < 2 (coincident or collinear points);
    /// the rotation is still a minimizer but not unique.
    pub degenerate: bool,
}

impl Alignment {
    pub fn apply(&self, p: &Point) -> Point {
        let v = self.rotation * Vector3::from(*p) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply_all(&self, pts: &[Point]) -> Vec<Point> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    pub alignment: Alignment,
    pub aligned: PointCloud,
}

/// Best proper rigid transform of `mobile` onto `target` (positional
/// correspondence), by SVD of the cross-covariance with a sign correction on
/// the weakest singular direction.
pub fn kabsch(target: &[Point], mobile: &[Point]) -> Result<Alignment> {
    if target.len() != mobile.len() {
        return Err(Error::invalid(format!(
            "kabsch: {} target points vs {} mobile points",
            target.len(),
            mobile.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::Empty("kabsch input".into()));
    }
    let ct = Vector3::from(centroid(target));
    let cm = Vector3::from(centroid(mobile));
    let mut h = Matrix3::zeros();
    for (t, m) in target.iter().zip(mobile) {
        let dm = Vector3::from(*m) - cm;
        let dt = Vector3::from(*t) - ct;
        h += dm * dt.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let sv = svd.singular_values;
    let mut v = v_t.transpose();
    let weakest = sv.imin();
    if (v * u.transpose()).determinant() < 0.0 {
        let mut col = v.column_mut(weakest);
        col.neg_mut();
    }
    let rotation = v * u.transpose();
    let translation = ct - rotation * cm;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-9 * smax.max(1e-300)).count();
    let mut alignment = Alignment {
        rotation,
        translation,
        rmse: 0.0,
        degenerate: rank < 2,
    };
    alignment.rmse = super::rmse(target, &alignment.apply_all(mobile))?;
    Ok(alignment)
}

/// Superposes `mobile` onto `target`.
pub fn kabsch_align(target: &PointCloud, mobile: &PointCloud) -> Result<AlignmentResult> {
    let alignment = kabsch(&target.coords, &mobile.coords)?;
    let aligned = mobile.with_coords(alignment.apply_all(&mobile.coords))?;
    Ok(AlignmentResult { alignment, aligned })
}

/// Uniform rotation from a uniform unit quaternion (Shoemake's method).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y, z, w) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(Error::invalid(format!("unknown axis {s:?}; expected x, y or z"))),
        }
    }
}

/// Right-handed rotation by `angle` radians about a coordinate axis.
pub fn rotation_about(axis: Axis, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}
