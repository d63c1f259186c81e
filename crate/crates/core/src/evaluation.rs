//! Registration scoring: per-axis pose errors, TRE, success rate and summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::anatomy::Anatomy;
use crate::error::{Error, Result};
use crate::geometry::{pose_difference, Pose6DoF};
use crate::registration::SequenceResult;
use crate::volume::{mask_to_pointcloud, Bone, BoneMask3D};

/// Default cap on mask points used for TRE.
pub const DEFAULT_TRE_POINTS: usize = 10_000;
pub const DEFAULT_THRESHOLD_MM: f64 = 1.5;

/// Mean distance between mask points mapped by `gt` and by `est`.
pub fn compute_tre(gt: &Pose6DoF, est: &Pose6DoF, mask: &BoneMask3D, max_points: usize) -> Result<f64> {
    if !gt.same_pivot(est) {
        return Err(Error::PivotMismatch {
            a: gt.pivot,
            b: est.pivot,
        });
    }
    let a = gt.to_matrix()?;
    let b = est.to_matrix()?;
    let pts = mask_to_pointcloud(mask, max_points)?;
    let sum: f64 = pts.iter().map(|p| (a.apply(p) - b.apply(p)).norm()).sum();
    Ok(sum / pts.len() as f64)
}

/// Inclusive threshold test.
pub fn success(tre_mm: f64, threshold_mm: f64) -> bool {
    tre_mm <= threshold_mm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub label: String,
    pub bone: Bone,
    pub ground_truth: Pose6DoF,
    /// `None` when registration failed for this trial.
    pub estimated: Option<Pose6DoF>,
    pub tre_mm: Option<f64>,
    /// Absolute `(tx, ty, tz, r_alpha, r_beta, r_gamma)` errors.
    pub errors: Option<[f64; 6]>,
    pub success: bool,
}

impl TrialRecord {
    pub fn new(
        label: impl Into<String>,
        mask: &BoneMask3D,
        ground_truth: Pose6DoF,
        estimated: Option<Pose6DoF>,
        threshold_mm: f64,
    ) -> Result<Self> {
        let (tre_mm, errors) = match &estimated {
            Some(est) => (
                Some(compute_tre(&ground_truth, est, mask, DEFAULT_TRE_POINTS)?),
                Some(pose_difference(est, &ground_truth)?),
            ),
            None => (None, None),
        };
        Ok(Self {
            label: label.into(),
            bone: mask.bone(),
            ground_truth,
            estimated,
            tre_mm,
            errors,
            success: tre_mm.is_some_and(|t| success(t, threshold_mm)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub trials: usize,
    /// Trials without an estimate; they count as failures in the RSR only.
    pub failed: usize,
    pub threshold_mm: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
    pub r_alpha: f64,
    pub r_beta: f64,
    pub r_gamma: f64,
    pub mean_tre_mm: f64,
    pub median_tre_mm: f64,
    pub rsr_percent: f64,
    pub m_trans_mm: f64,
    pub m_rot_deg: f64,
}

impl MetricSummary {
    pub fn axis_errors(&self) -> [f64; 6] {
        [self.t_x, self.t_y, self.t_z, self.r_alpha, self.r_beta, self.r_gamma]
    }

    /// Values in table column order.
    pub fn table_values(&self) -> [f64; 8] {
        let e = self.axis_errors();
        [e[0], e[1], e[2], e[3], e[4], e[5], self.mean_tre_mm, self.rsr_percent]
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn summarize(trials: &[TrialRecord], threshold_mm: f64) -> Result<MetricSummary> {
    if trials.is_empty() {
        return Err(Error::Evaluation("no trials to summarize".into()));
    }
    if !(threshold_mm > 0.0) {
        return Err(Error::Evaluation(format!("threshold must be positive, got {threshold_mm}")));
    }
    let scored: Vec<(&[f64; 6], f64)> = trials
        .iter()
        .filter_map(|t| Some((t.errors.as_ref()?, t.tre_mm?)))
        .collect();
    let n = scored.len() as f64;
    let mut axis = [0.0; 6];
    let mut tres: Vec<f64> = Vec::with_capacity(scored.len());
    for (e, tre) in &scored {
        for (a, x) in axis.iter_mut().zip(e.iter()) {
            *a += x;
        }
        tres.push(*tre);
    }
    let (mean_tre, median_tre) = if scored.is_empty() {
        (0.0, 0.0)
    } else {
        for a in axis.iter_mut() {
            *a /= n;
        }
        (tres.iter().sum::<f64>() / n, median(&mut tres))
    };
    let successes = scored.iter().filter(|(_, t)| success(*t, threshold_mm)).count();
    Ok(MetricSummary {
        trials: trials.len(),
        failed: trials.len() - scored.len(),
        threshold_mm,
        t_x: axis[0],
        t_y: axis[1],
        t_z: axis[2],
        r_alpha: axis[3],
        r_beta: axis[4],
        r_gamma: axis[5],
        mean_tre_mm: mean_tre,
        median_tre_mm: median_tre,
        rsr_percent: 100.0 * successes as f64 / trials.len() as f64,
        m_trans_mm: (axis[0] + axis[1] + axis[2]) / 3.0,
        m_rot_deg: (axis[3] + axis[4] + axis[5]) / 3.0,
    })
}

pub const TABLE_COLUMNS: [&str; 8] = [
    "t_x(mm)", "t_y(mm)", "t_z(mm)", "r_a(deg)", "r_b(deg)", "r_g(deg)", "TRE(mm)", "RSR(%)",
];

/// Aligned text table, one row per labelled summary. Values carry 12 decimals
/// so the table can be parsed back without loss beyond 1e-12.
pub fn format_table(rows: &[(String, MetricSummary)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).chain([6]).max().unwrap_or(6);
    let col_w = 20;
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "method");
    for c in TABLE_COLUMNS {
        let _ = write!(out, " {c:>col_w$}");
    }
    out.push('\n');
    for (label, s) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for v in s.table_values() {
            let _ = write!(out, " {v:>col_w$.12}");
        }
        out.push('\n');
    }
    out
}

/// Reads rows written by [`format_table`]; labels must not contain spaces.
pub fn parse_table(text: &str) -> Result<Vec<(String, [f64; 8])>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Evaluation("empty table".into()))?;
    if header.split_whitespace().skip(1).ne(TABLE_COLUMNS.iter().copied()) {
        return Err(Error::Evaluation(format!("unexpected table header: {header}")));
    }
    lines
        .map(|line| {
            let mut fields = line.split_whitespace();
            let label = fields.next().unwrap_or_default().to_string();
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Evaluation(format!("bad table value in '{line}': {e}")))?;
            let values: [f64; 8] = values
                .try_into()
                .map_err(|_| Error::Evaluation(format!("expected 8 values in '{line}'")))?;
            Ok((label, values))
        })
        .collect()
}

/// Scores every bone of every frame against ground truth.
pub fn evaluate_sequence(
    result: &SequenceResult,
    ground_truth: &[BTreeMap<Bone, Pose6DoF>],
    anatomy: &Anatomy,
    threshold_mm: f64,
) -> Result<Vec<TrialRecord>> {
    if result.frames.len() != ground_truth.len() {
        return Err(Error::Evaluation(format!(
            "{} result frames vs {} ground-truth frames",
            result.frames.len(),
            ground_truth.len()
        )));
    }
    let mut out = Vec::new();
    for (frame, gt) in result.frames.iter().zip(ground_truth) {
        for reg in &frame.bones {
            let Some(gt_pose) = gt.get(&reg.bone) else {
                continue;
            };
            let model = anatomy.model(reg.bone)?;
            out.push(TrialRecord::new(
                format!("frame{:03}", frame.frame),
                &model.mask,
                *gt_pose,
                reg.pose,
                threshold_mm,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use nalgebra::Vector3;

    fn block_mask() -> BoneMask3D {
        let grid = Grid::new([10, 10, 10], [1.0; 3], [-5.0; 3]).unwrap();
        let voxels = (0..grid.len())
            .map(|i| {
                let [a, b, c] = grid.unravel(i);
                (2..8).contains(&a) && (3..6).contains(&b) && (1..9).contains(&c)
            })
            .collect();
        BoneMask3D::new(grid, voxels, Bone::Femur).unwrap()
    }

    #[test]
    fn identical_poses_have_zero_tre() {
        let p = Pose6DoF::from_params(&[1.0, 2.0, 3.0, 10.0, -5.0, 4.0], [0.5, 0.0, -0.5]);
        assert_eq!(compute_tre(&p, &p, &block_mask(), 10).unwrap(), 0.0);
    }

    #[test]
    fn translation_offset_is_exact() {
        let m = block_mask();
        let gt = Pose6DoF::identity([0.0; 3]);
        let est = Pose6DoF::from_params(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(compute_tre(&gt, &est, &m, DEFAULT_TRE_POINTS).unwrap(), 1.0);
    }

    #[test]
    fn rotation_chord_on_ring() {
        // single voxel 100 mm from the pivot
        let grid = Grid::new([1, 1, 1], [1.0; 3], [99.5, -0.5, -0.5]).unwrap();
        let m = BoneMask3D::new(grid, vec![true], Bone::Femur).unwrap();
        let gt = Pose6DoF::identity([0.0; 3]);
        let est = Pose6DoF::from_params(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0], [0.0; 3]);
        let expected = 100.0 * 2.0 * (0.5f64).to_radians().sin();
        assert!((compute_tre(&gt, &est, &m, 10).unwrap() - expected).abs() < 1e-3);
        assert!((expected - 1.745).abs() < 1e-3);
    }

    #[test]
    fn tre_symmetric_and_checks_inputs() {
        let m = block_mask();
        let a = Pose6DoF::from_params(&[1.0, 0.0, 2.0, 3.0, 0.0, 1.0], [0.0; 3]);
        let b = Pose6DoF::from_params(&[0.0, 1.0, 0.0, 0.0, 4.0, 0.0], [0.0; 3]);
        let ab = compute_tre(&a, &b, &m, 50).unwrap();
        let ba = compute_tre(&b, &a, &m, 50).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let c = Pose6DoF::identity([1.0, 0.0, 0.0]);
        assert!(matches!(compute_tre(&a, &c, &m, 50), Err(Error::PivotMismatch { .. })));
        let empty = BoneMask3D::new(*m.grid(), vec![false; m.grid().len()], Bone::Femur).unwrap();
        assert!(compute_tre(&a, &b, &empty, 50).is_err());
    }

    #[test]
    fn success_boundaries() {
        assert!(success(1.4, 1.5));
        assert!(success(1.5, 1.5));
        assert!(!success(1.5000001, 1.5));
        assert!(success(2.9, 3.0));
    }

    fn record(tre: f64, errors: [f64; 6]) -> TrialRecord {
        TrialRecord {
            label: "t".into(),
            bone: Bone::Femur,
            ground_truth: Pose6DoF::identity([0.0; 3]),
            estimated: Some(Pose6DoF::identity([0.0; 3])),
            tre_mm: Some(tre),
            errors: Some(errors),
            success: success(tre, 1.5),
        }
    }

    #[test]
    fn summary_arithmetic() {
        let s = summarize(&[record(1.0, [0.0; 6]), record(2.0, [0.0; 6])], 1.5).unwrap();
        assert_eq!(s.rsr_percent, 50.0);
        assert_eq!(s.mean_tre_mm, 1.5);
        let perfect = summarize(&[record(0.0, [0.0; 6])], 1.5).unwrap();
        assert_eq!(perfect.table_values(), [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 100.0]);
        assert!(summarize(&[], 1.5).is_err());
    }

    #[test]
    fn summary_matches_hand_computation() {
        let trials = [
            record(0.5, [0.1, 0.2, 0.9, 0.3, 0.0, 0.6]),
            record(1.6, [0.4, 0.1, 2.1, 0.6, 0.3, 0.0]),
            record(1.2, [0.7, 0.0, 0.3, 0.0, 0.9, 0.3]),
        ];
        let s = summarize(&trials, 1.5).unwrap();
        // column means by hand
        let tx = (0.1 + 0.4 + 0.7) / 3.0;
        let ty = (0.2 + 0.1 + 0.0) / 3.0;
        let tz = (0.9 + 2.1 + 0.3) / 3.0;
        let ra = (0.3 + 0.6 + 0.0) / 3.0;
        let rb = (0.0 + 0.3 + 0.9) / 3.0;
        let rg = (0.6 + 0.0 + 0.3) / 3.0;
        assert!((s.t_x - tx).abs() < 1e-12 && (s.t_y - ty).abs() < 1e-12 && (s.t_z - tz).abs() < 1e-12);
        assert!((s.m_trans_mm - (tx + ty + tz) / 3.0).abs() < 1e-12);
        assert!((s.m_rot_deg - (ra + rb + rg) / 3.0).abs() < 1e-12);
        assert!((s.mean_tre_mm - 3.3 / 3.0).abs() < 1e-12);
        assert_eq!(s.median_tre_mm, 1.2);
        assert!((s.rsr_percent - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rsr_monotone_in_threshold() {
        let trials: Vec<_> = [0.2, 0.9, 1.4, 1.7, 2.5, 3.1]
            .iter()
            .map(|&t| record(t, [0.0; 6]))
            .collect();
        let mut last = -1.0;
        for th in [0.1, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
            let r = summarize(&trials, th).unwrap().rsr_percent;
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn failed_trials_count_against_rsr_only() {
        let mut failed = record(0.0, [0.0; 6]);
        failed.estimated = None;
        failed.tre_mm = None;
        failed.errors = None;
        failed.success = false;
        let s = summarize(&[record(1.0, [1.0; 6]), failed], 1.5).unwrap();
        assert_eq!(s.failed, 1);
        assert_eq!(s.rsr_percent, 50.0);
        assert_eq!(s.mean_tre_mm, 1.0);
    }

    #[test]
    fn table_round_trip() {
        let trials = [record(0.123456789, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6])];
        let s = summarize(&trials, 1.5).unwrap();
        let text = format_table(&[("ours".into(), s.clone())]);
        let rows = parse_table(&text).unwrap();
        assert_eq!(rows[0].0, "ours");
        for (a, b) in rows[0].1.iter().zip(s.table_values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_cap_is_deterministic() {
        let m = block_mask();
        let a = Pose6DoF::identity(Vector3::zeros().into());
        let b = Pose6DoF::from_params(&[0.0, 0.0, 0.0, 2.0, 3.0, 1.0], [0.0; 3]);
        assert_eq!(
            compute_tre(&a, &b, &m, 37).unwrap(),
            compute_tre(&a, &b, &m, 37).unwrap()
        );
    }
}
