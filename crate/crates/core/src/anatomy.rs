//! Per-bone models prepared for registration and frame synthesis.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::Pose6DoF;
use crate::projector::{render_drr, render_mask_projection, Image2D, ProjectionGeometry};
use crate::volume::{
    mask_to_pointcloud, principal_axis, Bone, BoneMask3D, KneeLandmarks, KneePhantom,
    PrincipalAxis, Volume,
};

/// Points used for principal-axis estimation.
const AXIS_POINTS: usize = 20_000;

/// A bone's attenuation above the soft-tissue background, cropped to its mask.
#[derive(Debug, Clone)]
pub struct BoneModel {
    pub bone: Bone,
    pub mask: BoneMask3D,
    pub density: Volume,
    /// Rotation pivot: the mask centroid.
    pub pivot: [f64; 3],
    pub axis: PrincipalAxis,
}

impl BoneModel {
    pub fn new(v: &Volume, mask: &BoneMask3D, background: f32) -> Result<Self> {
        let (lo, hi) = mask.bounding_box().ok_or_else(|| {
            Error::EmptyMask(format!("{} mask has no voxels", mask.bone()))
        })?;
        // one voxel of zero padding so trilinear sampling fades out at the crop edge
        let dims = v.grid().dims;
        let lo = lo.map(|x| x.saturating_sub(1));
        let hi = [0, 1, 2].map(|a| (hi[a] + 1).min(dims[a] - 1));
        let density = mask.restrict(v, background)?.crop(lo, hi);
        let c = mask.centroid()?;
        let axis = principal_axis(&mask_to_pointcloud(mask, AXIS_POINTS)?)?;
        Ok(Self {
            bone: mask.bone(),
            mask: mask.clone(),
            density,
            pivot: [c.x, c.y, c.z],
            axis,
        })
    }

    pub fn identity_pose(&self) -> Pose6DoF {
        Pose6DoF::identity(self.pivot)
    }

    /// Projection of the bone alone under `pose`, with its projected mask.
    pub fn render(&self, pose: &Pose6DoF, g: &ProjectionGeometry) -> Result<Image2D> {
        let proj = render_mask_projection(&self.mask, pose, g)?;
        render_drr(&self.density, pose, g)?.with_mask(proj.mask.expect("mask projection carries a mask"))
    }
}

/// Everything the pipeline knows about one static scan.
#[derive(Debug, Clone)]
pub struct Anatomy {
    pub models: Vec<BoneModel>,
    pub background: f32,
    pub landmarks: Option<KneeLandmarks>,
}

/// Median of positive voxels outside every mask.
pub fn estimate_background(v: &Volume, masks: &[BoneMask3D]) -> f32 {
    let mut values: Vec<f32> = v
        .data()
        .iter()
        .enumerate()
        .filter(|(i, x)| **x > 0.0 && !masks.iter().any(|m| m.voxels()[*i]))
        .map(|(_, x)| *x)
        .collect();
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    *values.select_nth_unstable_by(mid, f32::total_cmp).1
}

impl Anatomy {
    pub fn new(
        v: &Volume,
        masks: &[BoneMask3D],
        landmarks: Option<KneeLandmarks>,
        background: Option<f32>,
    ) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::Config("anatomy needs at least one bone mask".into()));
        }
        let background = background.unwrap_or_else(|| estimate_background(v, masks));
        let mut models = masks
            .iter()
            .map(|m| BoneModel::new(v, m, background))
            .collect::<Result<Vec<_>>>()?;
        models.sort_by_key(|m| m.bone);
        Ok(Self {
            models,
            background,
            landmarks,
        })
    }

    pub fn from_phantom(ph: &KneePhantom) -> Result<Self> {
        Self::new(
            &ph.volume,
            &ph.masks,
            Some(ph.landmarks.clone()),
            Some(ph.config.mu_soft_tissue),
        )
    }

    pub fn model(&self, bone: Bone) -> Result<&BoneModel> {
        self.models
            .iter()
            .find(|m| m.bone == bone)
            .ok_or_else(|| Error::Config(format!("no model for {bone}")))
    }

    pub fn bones(&self) -> Vec<Bone> {
        self.models.iter().map(|m| m.bone).collect()
    }

    /// Renders one frame: each bone's own projection under its pose, carrying
    /// the bone's projected mask as its 2D segmentation.
    pub fn synthesize(
        &self,
        poses: &BTreeMap<Bone, Pose6DoF>,
        g: &ProjectionGeometry,
    ) -> Result<FixedFrame> {
        let mut bones = BTreeMap::new();
        for m in &self.models {
            let pose = poses
                .get(&m.bone)
                .ok_or_else(|| Error::Config(format!("no pose for {}", m.bone)))?;
            bones.insert(m.bone, m.render(pose, g)?);
        }
        Ok(FixedFrame { bones })
    }
}

/// Per-bone segmented projections of one X-ray frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedFrame {
    pub bones: BTreeMap<Bone, Image2D>,
}

impl FixedFrame {
    /// `bone`'s image with its 2D mask attached.
    pub fn for_bone(&self, bone: Bone) -> Result<&Image2D> {
        self.bones
            .get(&bone)
            .ok_or_else(|| Error::InvalidImage(format!("frame has no {bone} image")))
    }

    /// Sum of all bone images, i.e. the bone content of the radiograph.
    pub fn composite(&self) -> Result<Image2D> {
        let first = self
            .bones
            .values()
            .next()
            .ok_or_else(|| Error::InvalidImage("frame has no bones".into()))?;
        let mut data = vec![0.0f32; first.len()];
        for img in self.bones.values() {
            if img.nu != first.nu || img.nv != first.nv {
                return Err(Error::DimensionMismatch("bone images differ in size".into()));
            }
            for (acc, x) in data.iter_mut().zip(&img.data) {
                *acc += x;
            }
        }
        Image2D::new(first.nu, first.nv, first.pixel_spacing, data)
    }

    /// Applies `f` to every bone image, keeping masks.
    pub fn map_images<F>(&self, mut f: F) -> Result<FixedFrame>
    where
        F: FnMut(Bone, &Image2D) -> Result<Image2D>,
    {
        let mut bones = BTreeMap::new();
        for (&bone, img) in &self.bones {
            let mut out = f(bone, img)?;
            out.mask = img.mask.clone();
            bones.insert(bone, out);
        }
        Ok(FixedFrame { bones })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_knee_phantom, PhantomConfig};

    #[test]
    fn neutral_frame_matches_bone_content_of_scan() {
        let ph = make_knee_phantom(&PhantomConfig::default()).unwrap();
        let anatomy = Anatomy::from_phantom(&ph).unwrap();
        let g = ProjectionGeometry::lateral(600.0, 1000.0, 64, 64, 4.8);
        let poses = anatomy
            .models
            .iter()
            .map(|m| (m.bone, m.identity_pose()))
            .collect();
        let frame = anatomy.synthesize(&poses, &g).unwrap();
        assert_eq!(frame.bones.len(), 3);
        let mut excess = ph.volume.clone();
        let data: Vec<f32> = ph
            .volume
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if ph.masks.iter().any(|m| m.voxels()[i]) {
                    x - ph.config.mu_soft_tissue
                } else {
                    0.0
                }
            })
            .collect();
        excess = Volume::new(*excess.grid(), data).unwrap();
        let direct = render_drr(&excess, &Pose6DoF::identity([0.0; 3]), &g).unwrap();
        let composite = frame.composite().unwrap();
        let max_dev = composite
            .data
            .iter()
            .zip(&direct.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        let peak = direct.data.iter().fold(0.0f32, |m, &v| m.max(v));
        // crops hold the same voxels, but ray samples start at each crop's box
        assert!(max_dev < 1e-3 * peak, "max deviation {max_dev} peak {peak}");
        for img in frame.bones.values() {
            assert!(img.mask.as_ref().unwrap().iter().any(|&b| b));
        }
    }

    #[test]
    fn background_is_soft_tissue_for_phantom() {
        let ph = make_knee_phantom(&PhantomConfig::default()).unwrap();
        assert_eq!(estimate_background(&ph.volume, &ph.masks), ph.config.mu_soft_tissue);
    }

    #[test]
    fn bone_density_excludes_background() {
        let ph = make_knee_phantom(&PhantomConfig::default()).unwrap();
        let anatomy = Anatomy::from_phantom(&ph).unwrap();
        let femur = anatomy.model(Bone::Femur).unwrap();
        let max = femur.density.max_value();
        assert!((max - (ph.config.mu_cortical - ph.config.mu_soft_tissue)).abs() < 1e-7);
        assert!(femur.density.grid().len() < ph.volume.grid().len() / 10);
    }
}
