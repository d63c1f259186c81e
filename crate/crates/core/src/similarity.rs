//! Normalized cross-correlation and the registration cost built on it.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::anatomy::BoneModel;
use crate::error::{Error, Result};
use crate::geometry::Pose6DoF;
use crate::projector::{dilate_mask, render_pixels, Image2D, ProjectionGeometry};

/// Default dilation of the fixed bone mask that defines the NCC region.
pub const DEFAULT_REGION_DILATION_PX: usize = 3;
/// Cost assigned when NCC is undefined (a constant image over the region).
pub const UNDEFINED_COST: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    pub value: f64,
    pub count: usize,
}

/// NCC of `a` and `b` over `region` (all pixels when `None`).
pub fn ncc(a: &Image2D, b: &Image2D, region: Option<&[bool]>) -> Result<SimilarityScore> {
    if a.nu != b.nu || a.nv != b.nv {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.nu, a.nv, b.nu, b.nv
        )));
    }
    if let Some(r) = region {
        if r.len() != a.len() {
            return Err(Error::DimensionMismatch("region size differs from images".into()));
        }
    }
    let inside = |i: usize| region.is_none_or(|r| r[i]);
    let idx: Vec<usize> = (0..a.len()).filter(|&i| inside(i)).collect();
    if idx.len() < 2 {
        return Err(Error::InvalidImage("NCC region needs at least 2 pixels".into()));
    }
    let n = idx.len() as f64;
    let mean_a = idx.iter().map(|&i| a.data[i] as f64).sum::<f64>() / n;
    let mean_b = idx.iter().map(|&i| b.data[i] as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let da = a.data[i] as f64 - mean_a;
        let db = b.data[i] as f64 - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::UndefinedNcc);
    }
    Ok(SimilarityScore {
        value: (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0),
        count: idx.len(),
    })
}

/// `1 - NCC(fixed, DRR(bone, pose))` over the dilated fixed bone mask.
///
/// The fixed image side is centered once at construction; each evaluation
/// renders only the region's rays.
pub struct Objective<'a> {
    model: &'a BoneModel,
    geometry: ProjectionGeometry,
    pixels: Vec<usize>,
    fixed_centered: Vec<f64>,
    fixed_norm: f64,
    evaluations: AtomicUsize,
}

impl<'a> Objective<'a> {
    pub fn new(
        fixed: &Image2D,
        model: &'a BoneModel,
        geometry: &ProjectionGeometry,
        dilation_px: usize,
    ) -> Result<Self> {
        geometry.validate()?;
        if fixed.nu != geometry.nu || fixed.nv != geometry.nv {
            return Err(Error::DimensionMismatch(format!(
                "fixed image {}x{} vs detector {}x{}",
                fixed.nu, fixed.nv, geometry.nu, geometry.nv
            )));
        }
        let mask = fixed.mask.as_ref().ok_or_else(|| {
            Error::InvalidImage("fixed image carries no bone mask".into())
        })?;
        let region = dilate_mask(mask, fixed.nu, fixed.nv, dilation_px);
        let pixels: Vec<usize> = (0..region.len()).filter(|&i| region[i]).collect();
        if pixels.len() < 2 {
            return Err(Error::InvalidImage(format!(
                "{} region has {} pixels",
                model.bone,
                pixels.len()
            )));
        }
        let n = pixels.len() as f64;
        let mean = pixels.iter().map(|&i| fixed.data[i] as f64).sum::<f64>() / n;
        let fixed_centered: Vec<f64> = pixels.iter().map(|&i| fixed.data[i] as f64 - mean).collect();
        let fixed_norm = fixed_centered.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(Self {
            model,
            geometry: *geometry,
            pixels,
            fixed_centered,
            fixed_norm,
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn region_size(&self) -> usize {
        self.pixels.len()
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn pivot(&self) -> [f64; 3] {
        self.model.pivot
    }

    pub fn ncc(&self, pose: &Pose6DoF) -> Result<f64> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let moving = render_pixels(&self.model.density, pose, &self.geometry, &self.pixels)?;
        let n = moving.len() as f64;
        let mean = moving.iter().sum::<f64>() / n;
        let (mut cross, mut mm) = (0.0, 0.0);
        for (f, m) in self.fixed_centered.iter().zip(&moving) {
            let dm = m - mean;
            cross += f * dm;
            mm += dm * dm;
        }
        if self.fixed_norm <= 0.0 || mm <= 0.0 {
            return Err(Error::UndefinedNcc);
        }
        Ok((cross / (self.fixed_norm * mm.sqrt())).clamp(-1.0, 1.0))
    }

    /// Cost in `[0, 2]`; undefined NCC and invalid poses map to 2.
    pub fn cost(&self, pose: &Pose6DoF) -> f64 {
        match self.ncc(pose) {
            Ok(v) => 1.0 - v,
            Err(_) => UNDEFINED_COST,
        }
    }

    /// Cost of the 6-vector `[tx, ty, tz, r_alpha, r_beta, r_gamma]` about the bone pivot.
    pub fn cost_params(&self, params: &[f64]) -> f64 {
        self.cost(&Pose6DoF::from_params(params, self.model.pivot))
    }
}

/// One-shot cost evaluation; see [`Objective`].
pub fn objective(
    fixed: &Image2D,
    model: &BoneModel,
    geometry: &ProjectionGeometry,
    pose: &Pose6DoF,
) -> Result<f64> {
    pose.validate()?;
    let obj = Objective::new(fixed, model, geometry, DEFAULT_REGION_DILATION_PX)?;
    Ok(obj.cost(pose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(data: Vec<f32>, nu: usize) -> Image2D {
        let nv = data.len() / nu;
        Image2D::new(nu, nv, [1.0, 1.0], data).unwrap()
    }

    /// Raw-moment route, independent of the centered two-pass formula.
    fn raw_moment_ncc(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (x as f64, y as f64);
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
        (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
    }

    #[test]
    fn self_and_negated_correlation() {
        let x = img((0..16).map(|i| ((i * 7) % 5) as f32).collect(), 4);
        assert!((ncc(&x, &x, None).unwrap().value - 1.0).abs() < 1e-12);
        let neg = img(x.data.iter().map(|v| -v).collect(), 4);
        assert!((ncc(&x, &neg, None).unwrap().value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_pairs_match_raw_moment_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<f32> = (0..64).map(|_| rng.random::<f32>()).collect();
            let b: Vec<f32> = (0..64).map(|_| rng.random::<f32>()).collect();
            let got = ncc(&img(a.clone(), 8), &img(b.clone(), 8), None).unwrap().value;
            assert!((got - raw_moment_ncc(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn region_restricts_pixels() {
        let a = img(vec![1.0, 2.0, 3.0, 100.0], 2);
        let b = img(vec![2.0, 4.0, 6.0, -50.0], 2);
        let region = [true, true, true, false];
        let s = ncc(&a, &b, Some(&region)).unwrap();
        assert_eq!(s.count, 3);
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = img(vec![1.0; 4], 2);
        let b = img(vec![1.0, 2.0, 3.0, 4.0], 2);
        assert!(matches!(ncc(&a, &b, None), Err(Error::UndefinedNcc)));
        let c = img(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3);
        assert!(matches!(ncc(&b, &c, None), Err(Error::DimensionMismatch(_))));
        assert!(ncc(&b, &b, Some(&[true, false, false, false])).is_err());
    }

    proptest! {
        #[test]
        fn ncc_properties(
            data in prop::collection::vec(-10.0f32..10.0, 16),
            other in prop::collection::vec(-10.0f32..10.0, 16),
            scale in 0.1f32..10.0,
            offset in -5.0f32..5.0,
        ) {
            let a = img(data.clone(), 4);
            let b = img(other, 4);
            prop_assume!(ncc(&a, &a, None).is_ok() && ncc(&b, &b, None).is_ok());
            let ab = ncc(&a, &b, None).unwrap().value;
            let ba = ncc(&b, &a, None).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            let affine = img(data.iter().map(|v| scale * v + offset).collect(), 4);
            let s = ncc(&a, &affine, None).unwrap().value;
            prop_assert!((s - 1.0).abs() < 1e-5, "affine ncc {}", s);
        }
    }
}
