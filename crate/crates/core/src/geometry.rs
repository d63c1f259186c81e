//! Rigid 6-DoF poses.
//!
//! A [`Pose6DoF`] carries three translations (mm) and three Euler angles
//! (degrees) together with the pivot about which the rotation acts. The
//! rotation is `Rz(gamma) * Ry(beta) * Rx(alpha)` (intrinsic Z-Y-X) and a
//! point maps as
//!
//! ```text
//! p' = R (p - pivot) + pivot + t
//! ```
//!
//! This order is used by every other module in the crate.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euler convention tag written next to every serialized pose.
pub const EULER_CONVENTION: &str = "ZYX-intrinsic";

/// Pivots closer than this are considered identical.
const PIVOT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6DoF {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub r_alpha: f64,
    pub r_beta: f64,
    pub r_gamma: f64,
    pub pivot: [f64; 3],
}

/// Rotation block plus translation, acting as `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMatrix {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidMatrix {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidMatrix) -> RigidMatrix {
        RigidMatrix {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidMatrix {
        let rt = self.rotation.transpose();
        RigidMatrix {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Rotation matrix for intrinsic Z-Y-X Euler angles given in degrees.
pub fn euler_to_rotation(alpha_deg: f64, beta_deg: f64, gamma_deg: f64) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), alpha_deg.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), beta_deg.to_radians());
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), gamma_deg.to_radians());
    (rz * ry * rx).into_inner()
}

/// Inverse of [`euler_to_rotation`]; `beta` is returned in [-90, 90].
pub fn rotation_to_euler(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let sb = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let beta = sb.asin();
    let alpha = r[(2, 1)].atan2(r[(2, 2)]);
    let gamma = r[(1, 0)].atan2(r[(0, 0)]);
    (alpha.to_degrees(), beta.to_degrees(), gamma.to_degrees())
}

/// Absolute angular difference folded into [0, 180].
pub fn wrapped_angle_difference(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

impl Pose6DoF {
    pub fn identity(pivot: [f64; 3]) -> Self {
        Self::from_params(&[0.0; 6], pivot)
    }

    /// Builds a pose from `[tx, ty, tz, r_alpha, r_beta, r_gamma]`.
    pub fn from_params(p: &[f64], pivot: [f64; 3]) -> Self {
        assert_eq!(p.len(), 6, "pose parameter vector must have 6 entries");
        Self {
            tx: p[0],
            ty: p[1],
            tz: p[2],
            r_alpha: p[3],
            r_beta: p[4],
            r_gamma: p[5],
            pivot,
        }
    }

    pub fn params(&self) -> [f64; 6] {
        [
            self.tx,
            self.ty,
            self.tz,
            self.r_alpha,
            self.r_beta,
            self.r_gamma,
        ]
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }

    pub fn pivot_vec(&self) -> Vector3<f64> {
        Vector3::from(self.pivot)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.params().iter().chain(self.pivot.iter()).all(|v| v.is_finite());
        if all_finite {
            Ok(())
        } else {
            Err(Error::InvalidPose(format!("non-finite field in {self:?}")))
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_rotation(self.r_alpha, self.r_beta, self.r_gamma)
    }

    pub fn to_matrix(&self) -> Result<RigidMatrix> {
        self.validate()?;
        Ok(self.matrix_unchecked())
    }

    pub(crate) fn matrix_unchecked(&self) -> RigidMatrix {
        let r = self.rotation();
        let c = self.pivot_vec();
        RigidMatrix {
            rotation: r,
            translation: c + self.translation() - r * c,
        }
    }

    /// Recovers the pose parameters of `m` for the given pivot.
    pub fn from_matrix(m: &RigidMatrix, pivot: [f64; 3]) -> Self {
        let (alpha, beta, gamma) = rotation_to_euler(&m.rotation);
        let c = Vector3::from(pivot);
        // t_m = c + t - R c
        let t = m.translation - c + m.rotation * c;
        Self {
            tx: t.x,
            ty: t.y,
            tz: t.z,
            r_alpha: alpha,
            r_beta: beta,
            r_gamma: gamma,
            pivot,
        }
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.to_matrix()?.apply(point))
    }

    /// Pose whose matrix is `self.matrix * other.matrix`, expressed about `self.pivot`.
    pub fn compose(&self, other: &Pose6DoF) -> Result<Pose6DoF> {
        let m = self.to_matrix()?.compose(&other.to_matrix()?);
        Ok(Pose6DoF::from_matrix(&m, self.pivot))
    }

    pub fn inverse(&self) -> Result<Pose6DoF> {
        Ok(Pose6DoF::from_matrix(&self.to_matrix()?.inverse(), self.pivot))
    }

    pub fn same_pivot(&self, other: &Pose6DoF) -> bool {
        self.pivot
            .iter()
            .zip(other.pivot.iter())
            .all(|(a, b)| (a - b).abs() <= PIVOT_TOLERANCE)
    }
}

/// Per-axis absolute errors `(tx, ty, tz, r_alpha, r_beta, r_gamma)`; angles wrapped into [0, 180].
pub fn pose_difference(a: &Pose6DoF, b: &Pose6DoF) -> Result<[f64; 6]> {
    a.validate()?;
    b.validate()?;
    if !a.same_pivot(b) {
        return Err(Error::PivotMismatch {
            a: a.pivot,
            b: b.pivot,
        });
    }
    let pa = a.params();
    let pb = b.params();
    let mut out = [0.0; 6];
    for i in 0..3 {
        out[i] = (pa[i] - pb[i]).abs();
    }
    for i in 3..6 {
        out[i] = wrapped_angle_difference(pa[i], pb[i]);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct PoseUnits {
    trans: String,
    rot: String,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    tx: f64,
    ty: f64,
    tz: f64,
    r_alpha: f64,
    r_beta: f64,
    r_gamma: f64,
    pivot: [f64; 3],
    convention: String,
    units: PoseUnits,
}

impl Serialize for Pose6DoF {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRecord {
            tx: self.tx,
            ty: self.ty,
            tz: self.tz,
            r_alpha: self.r_alpha,
            r_beta: self.r_beta,
            r_gamma: self.r_gamma,
            pivot: self.pivot,
            convention: EULER_CONVENTION.to_string(),
            units: PoseUnits {
                trans: "mm".into(),
                rot: "deg".into(),
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose6DoF {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = PoseRecord::deserialize(d)?;
        if r.convention != EULER_CONVENTION {
            return Err(D::Error::custom(format!(
                "unsupported Euler convention {:?}, expected {EULER_CONVENTION:?}",
                r.convention
            )));
        }
        if r.units.trans != "mm" || r.units.rot != "deg" {
            return Err(D::Error::custom("pose units must be mm / deg"));
        }
        Ok(Pose6DoF {
            tx: r.tx,
            ty: r.ty,
            tz: r.tz,
            r_alpha: r.r_alpha,
            r_beta: r.r_beta,
            r_gamma: r.r_gamma,
            pivot: r.pivot,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn homogeneous_oracle(p: &Pose6DoF, x: &Vector3<f64>) -> Vector3<f64> {
        // translate(pivot + t) * Rz * Ry * Rx * translate(-pivot), built entry by entry
        let (a, b, g) = (
            p.r_alpha.to_radians(),
            p.r_beta.to_radians(),
            p.r_gamma.to_radians(),
        );
        let rx = Matrix4::new(
            1.0, 0.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0,
            0.0, 1.0,
        );
        let ry = Matrix4::new(
            b.cos(), 0.0, b.sin(), 0.0, 0.0, 1.0, 0.0, 0.0, -b.sin(), 0.0, b.cos(), 0.0, 0.0, 0.0,
            0.0, 1.0,
        );
        let rz = Matrix4::new(
            g.cos(), -g.sin(), 0.0, 0.0, g.sin(), g.cos(), 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
            0.0, 1.0,
        );
        let c = p.pivot;
        let to_origin = Matrix4::new_translation(&Vector3::new(-c[0], -c[1], -c[2]));
        let back = Matrix4::new_translation(&Vector3::new(
            c[0] + p.tx,
            c[1] + p.ty,
            c[2] + p.tz,
        ));
        let m = back * rz * ry * rx * to_origin;
        let h = m * nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
        Vector3::new(h.x, h.y, h.z)
    }

    #[test]
    fn identity_pose_is_identity_matrix() {
        let m = Pose6DoF::identity([3.0, -2.0, 7.0]).to_matrix().unwrap();
        assert_relative_eq!(m.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(m.translation, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn pure_translation() {
        let p = Pose6DoF::from_params(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0], [5.0, 5.0, 5.0]);
        let m = p.to_matrix().unwrap();
        assert_relative_eq!(m.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(m.translation, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = Pose6DoF::from_params(&[0.0, 0.0, 0.0, 0.0, 0.0, 90.0], [0.0; 3]);
        let q = p.apply(&Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(q, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn half_turn_about_offset_pivot() {
        let p = Pose6DoF::from_params(&[0.0, 0.0, 0.0, 0.0, 0.0, 180.0], [1.0, 0.0, 0.0]);
        let q = p.apply(&Vector3::new(1.0, 1.0, 0.0)).unwrap();
        assert_relative_eq!(q, Vector3::new(1.0, -1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn identity_leaves_point() {
        let q = Pose6DoF::identity([0.0; 3])
            .apply(&Vector3::new(5.0, 5.0, 5.0))
            .unwrap();
        assert_eq!(q, Vector3::new(5.0, 5.0, 5.0));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut p = Pose6DoF::identity([0.0; 3]);
        p.r_beta = f64::NAN;
        assert!(matches!(p.to_matrix(), Err(Error::InvalidPose(_))));
        p.r_beta = 0.0;
        p.pivot[1] = f64::INFINITY;
        assert!(p.apply(&Vector3::zeros()).is_err());
    }

    #[test]
    fn difference_wraps_angles() {
        let a = Pose6DoF::from_params(&[0.0, 0.0, 0.0, 359.0, 0.0, 0.0], [0.0; 3]);
        let b = Pose6DoF::from_params(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0], [0.0; 3]);
        let d = pose_difference(&a, &b).unwrap();
        assert_relative_eq!(d[3], 2.0, epsilon = 1e-12);
        assert_eq!(pose_difference(&a, &a).unwrap(), [0.0; 6]);
    }

    #[test]
    fn difference_rejects_pivot_mismatch() {
        let a = Pose6DoF::identity([0.0; 3]);
        let b = Pose6DoF::identity([0.0, 0.0, 1.0]);
        assert!(matches!(
            pose_difference(&a, &b),
            Err(Error::PivotMismatch { .. })
        ));
    }

    #[test]
    fn json_carries_convention() {
        let p = Pose6DoF::from_params(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [0.5, 0.5, 0.5]);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"convention\":\"ZYX-intrinsic\""));
        assert!(s.contains("\"units\":{\"trans\":\"mm\",\"rot\":\"deg\"}"));
        let back: Pose6DoF = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = s.replace("ZYX-intrinsic", "XYZ-extrinsic");
        assert!(serde_json::from_str::<Pose6DoF>(&bad).is_err());
    }

    fn pose_strategy(max_angle: f64) -> impl Strategy<Value = Pose6DoF> {
        (
            prop::array::uniform3(-50.0..50.0f64),
            prop::array::uniform3(-max_angle..max_angle),
            prop::array::uniform3(-30.0..30.0f64),
        )
            .prop_map(|(t, r, c)| Pose6DoF::from_params(&[t[0], t[1], t[2], r[0], r[1], r[2]], c))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn apply_matches_homogeneous_oracle(p in pose_strategy(180.0), x in prop::array::uniform3(-100.0..100.0f64)) {
            let x = Vector3::from(x);
            let got = p.apply(&x).unwrap();
            let want = homogeneous_oracle(&p, &x);
            prop_assert!((got - want).norm() < 1e-9);
        }

        #[test]
        fn matrix_round_trip(p in pose_strategy(89.0)) {
            let back = Pose6DoF::from_matrix(&p.to_matrix().unwrap(), p.pivot);
            for (a, b) in p.params().iter().zip(back.params().iter()) {
                prop_assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", p, back);
            }
        }

        #[test]
        fn composition_matches_matrix_product(a in pose_strategy(40.0), b in pose_strategy(40.0)) {
            let c = a.compose(&b).unwrap();
            let lhs = c.to_matrix().unwrap().to_homogeneous();
            let rhs = a.to_matrix().unwrap().to_homogeneous() * b.to_matrix().unwrap().to_homogeneous();
            prop_assert!((lhs - rhs).abs().max() < 1e-9);
            let r = lhs.fixed_view::<3, 3>(0, 0).into_owned();
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn difference_matches_scalar_oracle(a in pose_strategy(720.0), b in pose_strategy(720.0)) {
            let b = Pose6DoF { pivot: a.pivot, ..b };
            let d = pose_difference(&a, &b).unwrap();
            let d2 = pose_difference(&b, &a).unwrap();
            let (pa, pb) = (a.params(), b.params());
            for i in 0..6 {
                let want = if i < 3 {
                    (pa[i] - pb[i]).abs()
                } else {
                    // brute force: smallest |diff + 360 k|
                    (-4..=4)
                        .map(|k| (pa[i] - pb[i] + 360.0 * k as f64).abs())
                        .fold(f64::INFINITY, f64::min)
                };
                prop_assert!((d[i] - want).abs() < 1e-9);
                prop_assert!((d[i] - d2[i]).abs() < 1e-9);
            }
        }
    }
}
