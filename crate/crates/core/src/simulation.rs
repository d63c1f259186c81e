//! Synthetic data with known poses: flexion sequences and randomized single-frame trials.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{Anatomy, FixedFrame};
use crate::error::{Error, Result};
use crate::geometry::{Pose6DoF, RigidMatrix};
use crate::projector::{add_poisson_noise, ProjectionGeometry};
use crate::volume::Bone;

pub type FramePoses = BTreeMap<Bone, Pose6DoF>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub frames: usize,
    /// Femoral flexion reached at the last frame; the first frame is neutral.
    pub max_flexion_deg: f64,
    /// Uniform per-DoF jitter added to every moving bone (mm and degrees); 0 disables.
    pub jitter_translation_mm: f64,
    pub jitter_rotation_deg: f64,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            frames: 10,
            max_flexion_deg: 60.0,
            jitter_translation_mm: 0.0,
            jitter_rotation_deg: 0.0,
            seed: 0,
        }
    }
}

/// Rigid rotation by `angle_deg` about the line through `point` along `axis`,
/// expressed as a pose about `pivot`.
pub fn rotation_about_line(axis: Vector3<f64>, point: Vector3<f64>, angle_deg: f64, pivot: [f64; 3]) -> Pose6DoF {
    let r = *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle_deg.to_radians()).matrix();
    let m = RigidMatrix {
        rotation: r,
        translation: point - r * point,
    };
    Pose6DoF::from_matrix(&m, pivot)
}

/// Knee flexion about the femoral condyle axis with the tibia held still.
/// The patella rides with the femur.
pub fn flexion_trajectory(anatomy: &Anatomy, cfg: &TrajectoryConfig) -> Result<Vec<FramePoses>> {
    if cfg.frames == 0 {
        return Err(Error::Config("trajectory needs at least one frame".into()));
    }
    if !cfg.max_flexion_deg.is_finite() {
        return Err(Error::Config("flexion angle must be finite".into()));
    }
    let lm = anatomy
        .landmarks
        .as_ref()
        .ok_or_else(|| Error::Config("flexion trajectory needs knee landmarks".into()))?;
    let axis = lm.medial_lateral_axis();
    let center = (Vector3::from(lm.medial_condyle_center) + Vector3::from(lm.lateral_condyle_center)) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        let frac = if cfg.frames > 1 {
            f as f64 / (cfg.frames - 1) as f64
        } else {
            0.0
        };
        // negative about +x swings the femoral shaft anteriorly
        let angle = -cfg.max_flexion_deg * frac;
        let mut poses = BTreeMap::new();
        for m in &anatomy.models {
            let mut pose = match m.bone {
                Bone::TibiaFibula => m.identity_pose(),
                Bone::Femur | Bone::Patella => rotation_about_line(axis, center, angle, m.pivot),
            };
            if m.bone != Bone::TibiaFibula {
                let mut p = pose.params();
                for (i, v) in p.iter_mut().enumerate() {
                    let w = if i < 3 {
                        cfg.jitter_translation_mm
                    } else {
                        cfg.jitter_rotation_deg
                    };
                    if w > 0.0 {
                        *v += rng.random_range(-w..=w);
                    }
                }
                pose = Pose6DoF::from_params(&p, m.pivot);
            }
            poses.insert(m.bone, pose);
        }
        out.push(poses);
    }
    Ok(out)
}

/// Renders each set of poses into a frame, optionally with photon noise.
pub fn render_frames(
    anatomy: &Anatomy,
    poses: &[FramePoses],
    g: &ProjectionGeometry,
    noise: Option<&NoiseConfig>,
) -> Result<Vec<FixedFrame>> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let frame = anatomy.synthesize(p, g)?;
            match noise {
                Some(n) => noisy_frame(&frame, n, i as u64),
                None => Ok(frame),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub photons_per_pixel: f64,
    pub seed: u64,
}

/// Independent Poisson noise on every bone image of a frame.
pub fn noisy_frame(frame: &FixedFrame, noise: &NoiseConfig, frame_index: u64) -> Result<FixedFrame> {
    frame.map_images(|bone, img| {
        let idx = Bone::ALL.iter().position(|b| *b == bone).unwrap_or(0) as u64;
        let seed = noise.seed ^ (frame_index << 4 | idx).wrapping_mul(0xD1B5_4A32_D192_ED03);
        add_poisson_noise(img, noise.photons_per_pixel, seed)
    })
}

/// One randomized single-frame registration problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub index: usize,
    pub bone: Bone,
    pub ground_truth: Pose6DoF,
}

/// Poses drawn uniformly within `±max_translation_mm` / `±max_rotation_deg`
/// of neutral on every axis, cycling through `bones`.
pub fn sample_trials(
    anatomy: &Anatomy,
    bones: &[Bone],
    count: usize,
    max_translation_mm: f64,
    max_rotation_deg: f64,
    seed: u64,
) -> Result<Vec<TrialSpec>> {
    if bones.is_empty() {
        return Err(Error::Config("no bones to sample trials for".into()));
    }
    if !(max_translation_mm >= 0.0 && max_rotation_deg >= 0.0) {
        return Err(Error::Config("trial ranges must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|index| {
            let bone = bones[index % bones.len()];
            let model = anatomy.model(bone)?;
            let mut p = [0.0; 6];
            for (i, v) in p.iter_mut().enumerate() {
                let w = if i < 3 {
                    max_translation_mm
                } else {
                    max_rotation_deg
                };
                *v = if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
            }
            Ok(TrialSpec {
                index,
                bone,
                ground_truth: Pose6DoF::from_params(&p, model.pivot),
            })
        })
        .collect()
}
