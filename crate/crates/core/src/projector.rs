//! Cone-beam forward projection.
//!
//! The pose moves the volume while the source and detector stay fixed. Each
//! detector pixel receives the line integral of attenuation along the ray
//! from the source to the pixel center, computed with uniform steps of at
//! most half the smallest voxel spacing and trilinear interpolation.
//!
//! Pixel `(i, j)` is centered at
//! `det_center + (i - (nu-1)/2) * pu * u + (j - (nv-1)/2) * pv * v` and is
//! stored at `j * nu + i`.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose6DoF, RigidMatrix};
use crate::volume::{sidecar_path, BoneMask3D, Grid, Occupancy, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionGeometry {
    pub source_mm: [f64; 3],
    pub det_center_mm: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
    pub nu: usize,
    pub nv: usize,
    pub pu: f64,
    pub pv: f64,
}

impl Default for ProjectionGeometry {
    fn default() -> Self {
        Self::lateral(600.0, 1000.0, 256, 256, 1.2)
    }
}

impl ProjectionGeometry {
    /// Lateral view: the beam travels along `+x` (medial to lateral) through
    /// the isocenter at the world origin; `u` is anterior, `v` superior.
    pub fn lateral(sad: f64, sdd: f64, nu: usize, nv: usize, pixel_mm: f64) -> Self {
        Self {
            source_mm: [-sad, 0.0, 0.0],
            det_center_mm: [sdd - sad, 0.0, 0.0],
            u: [0.0, 1.0, 0.0],
            v: [0.0, 0.0, 1.0],
            nu,
            nv,
            pu: pixel_mm,
            pv: pixel_mm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let u = Vector3::from(self.u);
        let v = Vector3::from(self.v);
        let finite = self
            .source_mm
            .iter()
            .chain(&self.det_center_mm)
            .chain(&self.u)
            .chain(&self.v)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidGeometry("non-finite geometry".into()));
        }
        if (u.norm() - 1.0).abs() > 1e-9 || (v.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidGeometry("detector axes must be unit vectors".into()));
        }
        if u.dot(&v).abs() > 1e-9 {
            return Err(Error::InvalidGeometry("detector axes must be orthogonal".into()));
        }
        if self.nu == 0 || self.nv == 0 {
            return Err(Error::InvalidGeometry("detector must have pixels".into()));
        }
        if !(self.pu > 0.0 && self.pv > 0.0) {
            return Err(Error::InvalidGeometry("pixel spacing must be positive".into()));
        }
        if self.source_to_detector() <= 1e-9 {
            return Err(Error::InvalidGeometry(
                "source must lie in front of the detector plane".into(),
            ));
        }
        Ok(())
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::from(self.u).cross(&Vector3::from(self.v))
    }

    /// Perpendicular source-to-detector distance.
    pub fn source_to_detector(&self) -> f64 {
        (Vector3::from(self.det_center_mm) - Vector3::from(self.source_mm)).dot(&self.normal())
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> Vector3<f64> {
        Vector3::from(self.det_center_mm)
            + (i as f64 - (self.nu as f64 - 1.0) / 2.0) * self.pu * Vector3::from(self.u)
            + (j as f64 - (self.nv as f64 - 1.0) / 2.0) * self.pv * Vector3::from(self.v)
    }

    /// Continuous pixel coordinates `(i, j)` of a world point's shadow.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let s = Vector3::from(self.source_mm);
        let n = self.normal();
        let denom = (p - s).dot(&n);
        if denom <= 1e-12 {
            return None;
        }
        let t = (Vector3::from(self.det_center_mm) - s).dot(&n) / denom;
        let local = s + t * (p - s) - Vector3::from(self.det_center_mm);
        Some((
            local.dot(&Vector3::from(self.u)) / self.pu + (self.nu as f64 - 1.0) / 2.0,
            local.dot(&Vector3::from(self.v)) / self.pv + (self.nv as f64 - 1.0) / 2.0,
        ))
    }

    /// World point on the ray through pixel `(i, j)` at the plane parallel to the
    /// detector containing `depth_point`.
    pub fn back_project(&self, i: f64, j: f64, depth_point: &Vector3<f64>) -> Vector3<f64> {
        let s = Vector3::from(self.source_mm);
        let pix = Vector3::from(self.det_center_mm)
            + (i - (self.nu as f64 - 1.0) / 2.0) * self.pu * Vector3::from(self.u)
            + (j - (self.nv as f64 - 1.0) / 2.0) * self.pv * Vector3::from(self.v);
        let n = self.normal();
        let t = (depth_point - s).dot(&n) / (pix - s).dot(&n);
        s + t * (pix - s)
    }

    /// Geometry whose pixels are `factor x factor` blocks of this one.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.nu.is_multiple_of(factor) || !self.nv.is_multiple_of(factor) {
            return Err(Error::InvalidGeometry(format!(
                "detector {}x{} not divisible by {factor}",
                self.nu, self.nv
            )));
        }
        Ok(Self {
            nu: self.nu / factor,
            nv: self.nv / factor,
            pu: self.pu * factor as f64,
            pv: self.pv * factor as f64,
            ..*self
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub nu: usize,
    pub nv: usize,
    pub pixel_spacing: [f64; 2],
    pub data: Vec<f32>,
    pub mask: Option<Vec<bool>>,
}

impl Image2D {
    pub fn new(nu: usize, nv: usize, pixel_spacing: [f64; 2], data: Vec<f32>) -> Result<Self> {
        if data.len() != nu * nv {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {nu}x{nv}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel".into()));
        }
        Ok(Self {
            nu,
            nv,
            pixel_spacing,
            data,
            mask: None,
        })
    }

    pub fn zeros_like(g: &ProjectionGeometry) -> Self {
        Self {
            nu: g.nu,
            nv: g.nv,
            pixel_spacing: [g.pu, g.pv],
            data: vec![0.0; g.nu * g.nv],
            mask: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[j * self.nu + i]
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(Error::DimensionMismatch("mask size differs from image".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    /// Block-average downsampling; the mask keeps a block if any pixel in it is set.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.nu.is_multiple_of(factor) || !self.nv.is_multiple_of(factor) {
            return Err(Error::InvalidImage(format!(
                "image {}x{} not divisible by {factor}",
                self.nu, self.nv
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (nu, nv) = (self.nu / factor, self.nv / factor);
        let mut data = vec![0.0f32; nu * nv];
        let mut mask = self.mask.as_ref().map(|_| vec![false; nu * nv]);
        let norm = 1.0 / (factor * factor) as f64;
        for bj in 0..nv {
            for bi in 0..nu {
                let mut sum = 0.0f64;
                let mut any = false;
                for dj in 0..factor {
                    for di in 0..factor {
                        let idx = (bj * factor + dj) * self.nu + bi * factor + di;
                        sum += self.data[idx] as f64;
                        if let Some(m) = &self.mask {
                            any |= m[idx];
                        }
                    }
                }
                data[bj * nu + bi] = (sum * norm) as f32;
                if let Some(m) = mask.as_mut() {
                    m[bj * nu + bi] = any;
                }
            }
        }
        Ok(Self {
            nu,
            nv,
            pixel_spacing: [
                self.pixel_spacing[0] * factor as f64,
                self.pixel_spacing[1] * factor as f64,
            ],
            data,
            mask,
        })
    }
}

/// Disk dilation of a binary pixel mask.
pub fn dilate_mask(mask: &[bool], nu: usize, nv: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dj| (-r..=r).map(move |di| (di, dj)))
        .filter(|(di, dj)| di * di + dj * dj <= r * r)
        .collect();
    let mut out = vec![false; mask.len()];
    for j in 0..nv as isize {
        for i in 0..nu as isize {
            if !mask[(j * nu as isize + i) as usize] {
                continue;
            }
            for (di, dj) in &offsets {
                let (x, y) = (i + di, j + dj);
                if x >= 0 && y >= 0 && x < nu as isize && y < nv as isize {
                    out[(y * nu as isize + x) as usize] = true;
                }
            }
        }
    }
    out
}

/// Line integrals through one volume under a fixed pose.
pub(crate) struct PosedRays<'a> {
    grid: Grid,
    data: &'a [f32],
    occupancy: &'a Occupancy,
    step: f64,
    source: Vector3<f64>,
    to_volume: RigidMatrix,
}

impl<'a> PosedRays<'a> {
    pub(crate) fn new(v: &'a Volume, pose: &Pose6DoF, g: &ProjectionGeometry) -> Result<Self> {
        g.validate()?;
        let to_volume = pose.to_matrix()?.inverse();
        let source = to_volume.apply(&Vector3::from(g.source_mm));
        Ok(Self {
            grid: *v.grid(),
            data: v.data(),
            occupancy: v.occupancy(),
            step: v.grid().min_spacing() / 2.0,
            source,
            to_volume,
        })
    }

    /// Integral along the ray from the source to a world-space pixel center.
    pub(crate) fn integrate_to(&self, pixel_world: &Vector3<f64>) -> f64 {
        let target = self.to_volume.apply(pixel_world);
        let delta = target - self.source;
        let length = delta.norm();
        self.integrate(&self.source, &(delta / length), length)
    }

    #[inline]
    fn integrate(&self, s: &Vector3<f64>, d: &Vector3<f64>, max_t: f64) -> f64 {
        let (lo, hi) = self.grid.bounds();
        let mut t0 = 0.0f64;
        let mut t1 = max_t;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if s[a] < lo[a] || s[a] > hi[a] {
                    return 0.0;
                }
            } else {
                let ta = (lo[a] - s[a]) / d[a];
                let tb = (hi[a] - s[a]) / d[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if t1 <= t0 {
            return 0.0;
        }
        let len = t1 - t0;
        let n = (len / self.step).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let sp = self.grid.spacing;
        let org = self.grid.origin;
        let first = s + d * (t0 + 0.5 * h);
        let mut x = (first.x - org[0]) / sp[0] - 0.5;
        let mut y = (first.y - org[1]) / sp[1] - 0.5;
        let mut z = (first.z - org[2]) / sp[2] - 0.5;
        let dx = d.x * h / sp[0];
        let dy = d.y * h / sp[1];
        let dz = d.z * h / sp[2];
        let mut sum = 0.0f64;
        for _ in 0..n {
            sum += self.trilinear(x, y, z);
            x += dx;
            y += dy;
            z += dz;
        }
        sum * h
    }

    #[inline(always)]
    fn trilinear(&self, x: f64, y: f64, z: f64) -> f64 {
        let [nx, ny, nz] = self.grid.dims;
        let (i0, fx) = cell(x, nx);
        let (j0, fy) = cell(y, ny);
        let (k0, fz) = cell(z, nz);
        if !self.occupancy.occupied(i0, j0, k0) {
            return 0.0;
        }
        let di = usize::from(nx > 1);
        let dj = if ny > 1 { nx } else { 0 };
        let dk = if nz > 1 { nx * ny } else { 0 };
        let base = i0 + nx * (j0 + ny * k0);
        let d = &self.data[base..=base + di + dj + dk];
        let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
        let c00 = lerp(d[0], d[di], fx);
        let c10 = lerp(d[dj], d[dj + di], fx);
        let c01 = lerp(d[dk], d[dk + di], fx);
        let c11 = lerp(d[dk + dj], d[dk + dj + di], fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz) as f64
    }
}

/// Lower cell index and fraction, clamping to the edge voxels.
#[inline(always)]
fn cell(x: f64, n: usize) -> (usize, f32) {
    let xc = x.clamp(0.0, (n - 1) as f64);
    let i = (xc as usize).min(n.saturating_sub(2));
    (i, (xc - i as f64) as f32)
}

/// Line integrals for the listed pixel indices.
pub(crate) fn render_pixels(
    v: &Volume,
    pose: &Pose6DoF,
    g: &ProjectionGeometry,
    pixels: &[usize],
) -> Result<Vec<f64>> {
    let rays = PosedRays::new(v, pose, g)?;
    Ok(pixels
        .iter()
        .map(|&p| rays.integrate_to(&g.pixel_center(p % g.nu, p / g.nu)))
        .collect())
}

pub(crate) fn render_full(v: &Volume, pose: &Pose6DoF, g: &ProjectionGeometry) -> Result<Vec<f64>> {
    let rays = PosedRays::new(v, pose, g)?;
    let mut out = vec![0.0f64; g.nu * g.nv];
    out.par_chunks_mut(g.nu).enumerate().for_each(|(j, row)| {
        for (i, px) in row.iter_mut().enumerate() {
            *px = rays.integrate_to(&g.pixel_center(i, j));
        }
    });
    Ok(out)
}

/// Digitally reconstructed radiograph of `v` posed by `pose`.
pub fn render_drr(v: &Volume, pose: &Pose6DoF, g: &ProjectionGeometry) -> Result<Image2D> {
    let values = render_full(v, pose, g)?;
    Image2D::new(
        g.nu,
        g.nv,
        [g.pu, g.pv],
        values.into_iter().map(|x| x as f32).collect(),
    )
}

/// Binary projection: a pixel is set when the ray crosses more than half a voxel of mask.
pub fn render_mask_projection(
    m: &BoneMask3D,
    pose: &Pose6DoF,
    g: &ProjectionGeometry,
) -> Result<Image2D> {
    let half_voxel = m.grid().min_spacing() / 2.0;
    let values = render_full(&m.as_volume(), pose, g)?;
    let mask: Vec<bool> = values.iter().map(|&x| x > half_voxel).collect();
    Image2D::new(
        g.nu,
        g.nv,
        [g.pu, g.pv],
        mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )?
    .with_mask(mask)
}

/// Poisson photon noise on line-integral data, `I0` photons per unattenuated pixel.
pub fn add_poisson_noise(img: &Image2D, photons_per_pixel: f64, seed: u64) -> Result<Image2D> {
    if !(photons_per_pixel > 0.0 && photons_per_pixel.is_finite()) {
        return Err(Error::InvalidImage(format!(
            "photon count must be positive, got {photons_per_pixel}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data
        .iter()
        .map(|&li| {
            let lambda = photons_per_pixel * (-(li as f64)).exp();
            let counts = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map(|d| d.sample(&mut rng))
                    .unwrap_or(lambda)
            } else {
                0.0
            };
            (-(counts.max(1.0) / photons_per_pixel).ln()) as f32
        })
        .collect();
    Ok(Image2D {
        data,
        ..img.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Drr,
    Mask,
}

#[derive(Serialize, Deserialize)]
struct ImageSidecar {
    dims: [usize; 2],
    pixel_spacing_mm: [f64; 2],
    kind: ImageKind,
}

/// Writes raw `f32le` pixels plus a `.json` sidecar. Masks are written as 0/1.
pub fn save_image(img: &Image2D, path: &Path, kind: ImageKind) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let sc = ImageSidecar {
        dims: [img.nu, img.nv],
        pixel_spacing_mm: img.pixel_spacing,
        kind,
    };
    let text = serde_json::to_string_pretty(&sc).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

/// Loads an image; mask-kind images come back with `mask` populated.
pub fn load_image(path: &Path) -> Result<(Image2D, ImageKind)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sc: ImageSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = sc.dims[0] * sc.dims[1] * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut img = Image2D::new(sc.dims[0], sc.dims[1], sc.pixel_spacing_mm, data)?;
    if sc.kind == ImageKind::Mask {
        let mask = img.data.iter().map(|&x| x > 0.5).collect();
        img = img.with_mask(mask)?;
    }
    Ok((img, sc.kind))
}

pub fn save_geometry(g: &ProjectionGeometry, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(g).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_geometry(path: &Path) -> Result<ProjectionGeometry> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let g: ProjectionGeometry = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    g.validate()?;
    Ok(g)
}
