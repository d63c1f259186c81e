//! Tibiofemoral contact kinematics on a registered sequence: plateau plane,
//! lowest condylar points, medial-lateral distance difference and its variance.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::anatomy::Anatomy;
use crate::error::{Error, Result};
use crate::geometry::Pose6DoF;
use crate::registration::SequenceResult;
use crate::volume::{Bone, KneeLandmarks, PrincipalAxis};

/// Plane offset below the plateau anchors for native knees.
pub const PRE_TKA_OFFSET_MM: f64 = 9.0;
/// |MLD| above this marks the sequence as malaligned.
pub const MALALIGNMENT_THRESHOLD_MM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauMode {
    /// Plane on the insert surface, through the plateau anchors.
    #[default]
    PostTka,
    /// Plane 9 mm below the anchors.
    PreTka,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauPlane {
    pub anchor: [f64; 3],
    /// Unit normal pointing toward the femur.
    pub normal: [f64; 3],
    /// Unit in-plane direction from the lateral toward the medial anchor.
    pub medial_axis: [f64; 3],
}

impl PlateauPlane {
    pub fn normal_vec(&self) -> Vector3<f64> {
        Vector3::from(self.normal)
    }

    pub fn medial_vec(&self) -> Vector3<f64> {
        Vector3::from(self.medial_axis)
    }

    /// Second in-plane axis, completing a right-handed frame.
    pub fn secondary_vec(&self) -> Vector3<f64> {
        self.normal_vec().cross(&self.medial_vec())
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - Vector3::from(self.anchor)).dot(&self.normal_vec())
    }

    /// In-plane coordinates (medial axis, secondary axis) of the orthogonal projection.
    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        let d = p - Vector3::from(self.anchor);
        [d.dot(&self.medial_vec()), d.dot(&self.secondary_vec())]
    }
}

pub fn fit_plateau_plane(tibia: &Pose6DoF, landmarks: &KneeLandmarks, mode: PlateauMode) -> Result<PlateauPlane> {
    tibia.validate()?;
    let a = &landmarks.plateau;
    let m = tibia.apply(&Vector3::from(a.medial))?;
    let l = tibia.apply(&Vector3::from(a.lateral))?;
    let ant = tibia.apply(&Vector3::from(a.anterior))?;
    let n = (l - m).cross(&(ant - m));
    let scale = (l - m).norm() * (ant - m).norm();
    if !(scale > 0.0) || n.norm() < 1e-9 * scale {
        return Err(Error::Kinematics("plateau landmarks are collinear".into()));
    }
    let n = n.normalize();
    let mut anchor = (m + l + ant) / 3.0;
    if mode == PlateauMode::PreTka {
        anchor -= PRE_TKA_OFFSET_MM * n;
    }
    let toward = m - l;
    let axis = (toward - toward.dot(&n) * n).normalize();
    Ok(PlateauPlane {
        anchor: anchor.into(),
        normal: n.into(),
        medial_axis: axis.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondyleContact {
    pub distance_mm: f64,
    pub point: [f64; 2],
}

fn lowest_point(femur: &Pose6DoF, plane: &PlateauPlane, region: &[[f64; 3]], side: &str) -> Result<CondyleContact> {
    if region.is_empty() {
        return Err(Error::Kinematics(format!("{side} condyle region is empty")));
    }
    let r = femur.rotation();
    let t = femur.translation();
    let c = Vector3::from(femur.pivot);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for p in region {
        let q = r * (Vector3::from(*p) - c) + c + t;
        let d = plane.signed_distance(&q);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, q));
        }
    }
    let (d, q) = best.expect("region is nonempty");
    Ok(CondyleContact {
        distance_mm: d,
        point: plane.project(&q),
    })
}

/// Lowest medial and lateral condylar points of the posed femur.
pub fn condyle_distances(
    femur: &Pose6DoF,
    plane: &PlateauPlane,
    medial_region: &[[f64; 3]],
    lateral_region: &[[f64; 3]],
) -> Result<(CondyleContact, CondyleContact)> {
    femur.validate()?;
    Ok((
        lowest_point(femur, plane, medial_region, "medial")?,
        lowest_point(femur, plane, lateral_region, "lateral")?,
    ))
}

/// Flexion away from neutral: the angle through which the femoral principal
/// axis has turned, seen from the tibia's frame. Zero at neutral.
pub fn extension_angle(femur: &Pose6DoF, tibia: &Pose6DoF, femur_axis: &PrincipalAxis) -> Result<f64> {
    femur.validate()?;
    tibia.validate()?;
    let a = femur_axis.direction_vec().normalize();
    let rel = tibia.rotation().transpose() * femur.rotation() * a;
    let cos = (rel.dot(&a) / rel.norm()).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSample {
    pub frame: usize,
    pub extension_deg: f64,
    pub medial_mm: f64,
    pub lateral_mm: f64,
    pub medial_point: [f64; 2],
    pub lateral_point: [f64; 2],
}

impl ContactSample {
    pub fn mld(&self) -> f64 {
        self.medial_mm - self.lateral_mm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicReport {
    pub mode: PlateauMode,
    pub samples: Vec<ContactSample>,
    pub mld_mm: Vec<f64>,
    /// Population variance of the MLD series.
    pub ddv_mm2: f64,
    pub max_abs_mld_mm: f64,
    pub malaligned: bool,
    /// Medial-to-lateral projection point segments, one per frame.
    pub linkage: Vec<[[f64; 2]; 2]>,
}

/// Femur and tibia poses of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePair {
    pub frame: usize,
    pub femur: Pose6DoF,
    pub tibia: Pose6DoF,
}

pub fn report_from_poses(anatomy: &Anatomy, frames: &[FramePair], mode: PlateauMode) -> Result<KinematicReport> {
    if frames.is_empty() {
        return Err(Error::Kinematics("no frames with both femur and tibia poses".into()));
    }
    let lm = anatomy
        .landmarks
        .as_ref()
        .ok_or_else(|| Error::Kinematics("anatomy has no knee landmarks".into()))?;
    let femur_axis = &anatomy.model(Bone::Femur)?.axis;
    let mut samples = Vec::with_capacity(frames.len());
    for f in frames {
        let plane = fit_plateau_plane(&f.tibia, lm, mode)?;
        let (med, lat) = condyle_distances(&f.femur, &plane, &lm.medial_condyle_region, &lm.lateral_condyle_region)?;
        samples.push(ContactSample {
            frame: f.frame,
            extension_deg: extension_angle(&f.femur, &f.tibia, femur_axis)?,
            medial_mm: med.distance_mm,
            lateral_mm: lat.distance_mm,
            medial_point: med.point,
            lateral_point: lat.point,
        });
    }
    Ok(summarize_samples(samples, mode))
}

pub fn summarize_samples(samples: Vec<ContactSample>, mode: PlateauMode) -> KinematicReport {
    let mld: Vec<f64> = samples.iter().map(ContactSample::mld).collect();
    let n = mld.len() as f64;
    let mean = mld.iter().sum::<f64>() / n;
    let ddv = mld.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let max_abs = mld.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let linkage = samples.iter().map(|s| [s.medial_point, s.lateral_point]).collect();
    KinematicReport {
        mode,
        samples,
        mld_mm: mld,
        ddv_mm2: ddv,
        max_abs_mld_mm: max_abs,
        malaligned: max_abs > MALALIGNMENT_THRESHOLD_MM,
        linkage,
    }
}

/// Report over the frames where both femur and tibia registered.
pub fn build_report(sequence: &SequenceResult, anatomy: &Anatomy, mode: PlateauMode) -> Result<KinematicReport> {
    let frames: Vec<FramePair> = sequence
        .frames
        .iter()
        .filter_map(|r| {
            Some(FramePair {
                frame: r.frame,
                femur: r.pose(Bone::Femur)?,
                tibia: r.pose(Bone::TibiaFibula)?,
            })
        })
        .collect();
    report_from_poses(anatomy, &frames, mode)
}

pub const CSV_HEADER: &str = "frame,extension_deg,medial_mm,lateral_mm,MLD_mm,med_px,med_py,lat_px,lat_py";

impl KinematicReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for (s, mld) in self.samples.iter().zip(&self.mld_mm) {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                s.frame,
                s.extension_deg,
                s.medial_mm,
                s.lateral_mm,
                mld,
                s.medial_point[0],
                s.medial_point[1],
                s.lateral_point[0],
                s.lateral_point[1]
            )?;
        }
        Ok(())
    }

    pub fn save(&self, csv: &Path, json: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        std::fs::write(csv, buf).map_err(|source| Error::Io {
            path: csv.to_path_buf(),
            source,
        })?;
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: json.to_path_buf(),
            source,
        })?;
        std::fs::write(json, text).map_err(|source| Error::Io {
            path: json.to_path_buf(),
            source,
        })
    }
}

/// Rows of a report CSV as `(frame, [extension, medial, lateral, MLD, med_px, med_py, lat_px, lat_py])`.
pub fn parse_csv(text: &str) -> Result<Vec<(usize, [f64; 8])>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Kinematics("unexpected CSV header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != 9 {
                return Err(Error::Kinematics(format!("expected 9 columns: {l}")));
            }
            let bad = |c: &str| Error::Kinematics(format!("bad number {c:?}"));
            let frame = cols[0].parse().map_err(|_| bad(cols[0]))?;
            let mut vals = [0.0; 8];
            for (v, c) in vals.iter_mut().zip(&cols[1..]) {
                *v = c.parse().map_err(|_| bad(c))?;
            }
            Ok((frame, vals))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::rotation_about_line;
    use crate::volume::{make_knee_phantom, PhantomConfig};
    use std::sync::OnceLock;

    fn anatomy() -> &'static Anatomy {
        static A: OnceLock<Anatomy> = OnceLock::new();
        A.get_or_init(|| Anatomy::from_phantom(&make_knee_phantom(&PhantomConfig::default()).unwrap()).unwrap())
    }

    fn lm() -> &'static KneeLandmarks {
        anatomy().landmarks.as_ref().unwrap()
    }

    fn neutral(bone: Bone) -> Pose6DoF {
        anatomy().model(bone).unwrap().identity_pose()
    }

    fn close(a: Vector3<f64>, b: Vector3<f64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn plane_at_identity_is_phantom_plateau() {
        let p = fit_plateau_plane(&neutral(Bone::TibiaFibula), lm(), PlateauMode::PostTka).unwrap();
        assert!(close(p.normal_vec(), Vector3::z(), 1e-6));
        assert!((p.anchor[2] + 2.0).abs() < 1e-12);
        assert!(p.normal_vec().dot(&p.medial_vec()).abs() < 1e-12);
        assert!((p.medial_vec().norm() - 1.0).abs() < 1e-12);
        // medial is -x in the phantom
        assert!(close(p.medial_vec(), -Vector3::x(), 1e-6));
    }

    #[test]
    fn pre_tka_is_offset_nine_mm() {
        let t = Pose6DoF::from_params(&[1.0, 2.0, -3.0, 4.0, -5.0, 6.0], neutral(Bone::TibiaFibula).pivot);
        let post = fit_plateau_plane(&t, lm(), PlateauMode::PostTka).unwrap();
        let pre = fit_plateau_plane(&t, lm(), PlateauMode::PreTka).unwrap();
        let expect = Vector3::from(post.anchor) - 9.0 * post.normal_vec();
        assert!(close(Vector3::from(pre.anchor), expect, 1e-12));
        assert_eq!(pre.normal, post.normal);
    }

    #[test]
    fn plane_rotates_with_tibia() {
        let pivot = neutral(Bone::TibiaFibula).pivot;
        let t = Pose6DoF::from_params(&[0.0, 0.0, 0.0, 12.0, -7.0, 25.0], pivot);
        let p0 = fit_plateau_plane(&Pose6DoF::identity(pivot), lm(), PlateauMode::PostTka).unwrap();
        let p1 = fit_plateau_plane(&t, lm(), PlateauMode::PostTka).unwrap();
        assert!(close(p1.normal_vec(), t.rotation() * p0.normal_vec(), 1e-9));
        assert!(close(p1.medial_vec(), t.rotation() * p0.medial_vec(), 1e-9));
    }

    #[test]
    fn collinear_landmarks_rejected() {
        let mut l = lm().clone();
        l.plateau.anterior = [0.0, 0.0, l.plateau.medial[2]];
        let e = fit_plateau_plane(&neutral(Bone::TibiaFibula), &l, PlateauMode::PostTka);
        assert!(matches!(e, Err(Error::Kinematics(_))));
    }

    #[test]
    fn sphere_gap_and_symmetry_at_neutral() {
        let plane = fit_plateau_plane(&neutral(Bone::TibiaFibula), lm(), PlateauMode::PostTka).unwrap();
        let (m, l) = condyle_distances(
            &neutral(Bone::Femur),
            &plane,
            &lm().medial_condyle_region,
            &lm().lateral_condyle_region,
        )
        .unwrap();
        // condyle centers 15 mm above the plateau, radius 11
        assert!((m.distance_mm - 4.0).abs() < 0.5, "{}", m.distance_mm);
        assert!((m.distance_mm - l.distance_mm).abs() < 0.2);
        assert!((m.point[0] + l.point[0]).abs() < 0.2 && m.point[0] > 0.0);
    }

    #[test]
    fn translation_along_normal_shifts_distances() {
        let plane = fit_plateau_plane(&neutral(Bone::TibiaFibula), lm(), PlateauMode::PostTka).unwrap();
        let f0 = neutral(Bone::Femur);
        let mut f1 = f0;
        f1.tz += 2.0;
        let (m0, l0) = condyle_distances(&f0, &plane, &lm().medial_condyle_region, &lm().lateral_condyle_region).unwrap();
        let (m1, l1) = condyle_distances(&f1, &plane, &lm().medial_condyle_region, &lm().lateral_condyle_region).unwrap();
        assert!((m1.distance_mm - m0.distance_mm - 2.0).abs() < 1e-12);
        assert!((l1.distance_mm - l0.distance_mm - 2.0).abs() < 1e-12);
        assert_eq!(m1.point, m0.point);
    }

    #[test]
    fn empty_region_rejected() {
        let plane = fit_plateau_plane(&neutral(Bone::TibiaFibula), lm(), PlateauMode::PostTka).unwrap();
        assert!(condyle_distances(&neutral(Bone::Femur), &plane, &[], &lm().lateral_condyle_region).is_err());
    }

    #[test]
    fn extension_angle_cases() {
        let a = anatomy();
        let fa = &a.model(Bone::Femur).unwrap().axis;
        let f = neutral(Bone::Femur);
        let t = neutral(Bone::TibiaFibula);
        assert!(extension_angle(&f, &t, fa).unwrap() < 0.5);
        let c = (Vector3::from(lm().medial_condyle_center) + Vector3::from(lm().lateral_condyle_center)) / 2.0;
        let flexed = rotation_about_line(lm().medial_lateral_axis(), c, 30.0, f.pivot);
        assert!((extension_angle(&flexed, &t, fa).unwrap() - 30.0).abs() < 0.5);
        // common rigid motion leaves the relative angle unchanged
        let g = rotation_about_line(Vector3::new(0.3, -1.0, 0.4), Vector3::new(5.0, 1.0, -2.0), 40.0, f.pivot);
        let compose = |p: &Pose6DoF| {
            let m = g.to_matrix().unwrap().compose(&p.to_matrix().unwrap());
            Pose6DoF::from_matrix(&m, p.pivot)
        };
        let e0 = extension_angle(&flexed, &t, fa).unwrap();
        let e1 = extension_angle(&compose(&flexed), &compose(&t), fa).unwrap();
        assert!((e0 - e1).abs() < 1e-9);
    }

    fn constant_pairs(n: usize, femur: Pose6DoF) -> Vec<FramePair> {
        (0..n)
            .map(|frame| FramePair {
                frame,
                femur,
                tibia: neutral(Bone::TibiaFibula),
            })
            .collect()
    }

    #[test]
    fn constant_sequence_has_zero_ddv() {
        let r = report_from_poses(anatomy(), &constant_pairs(6, neutral(Bone::Femur)), PlateauMode::PostTka).unwrap();
        assert_eq!(r.ddv_mm2, 0.0);
        assert!(r.mld_mm.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9));
        assert_eq!(r.linkage.len(), 6);
        assert!(!r.malaligned);
    }

    #[test]
    fn mld_flag_threshold() {
        let s = |frame, medial_mm| ContactSample {
            frame,
            extension_deg: 0.0,
            medial_mm,
            lateral_mm: 0.0,
            medial_point: [0.0; 2],
            lateral_point: [0.0; 2],
        };
        let r = summarize_samples(vec![s(0, 1.0), s(1, 3.0)], PlateauMode::PostTka);
        assert_eq!(r.max_abs_mld_mm, 3.0);
        assert!(r.malaligned);
        assert!((r.ddv_mm2 - 1.0).abs() < 1e-15);
        let r = summarize_samples(vec![s(0, 2.0), s(1, -2.0)], PlateauMode::PostTka);
        assert!(!r.malaligned);
    }

    #[test]
    fn csv_columns_are_consistent() {
        let c = (Vector3::from(lm().medial_condyle_center) + Vector3::from(lm().lateral_condyle_center)) / 2.0;
        let pivot = neutral(Bone::Femur).pivot;
        let pairs: Vec<FramePair> = (0..4)
            .map(|i| FramePair {
                frame: i,
                femur: rotation_about_line(Vector3::new(1.0, 0.1, 0.0), c, -15.0 * i as f64, pivot),
                tibia: neutral(Bone::TibiaFibula),
            })
            .collect();
        let r = report_from_poses(anatomy(), &pairs, PlateauMode::PreTka).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let rows = parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(rows.len(), 4);
        for ((_, v), mld) in rows.iter().zip(&r.mld_mm) {
            assert!((v[1] - v[2] - v[3]).abs() < 1e-12);
            assert_eq!(v[3], *mld);
        }
    }

    #[test]
    fn no_frames_is_an_error() {
        assert!(report_from_poses(anatomy(), &[], PlateauMode::PostTka).is_err());
    }
}
