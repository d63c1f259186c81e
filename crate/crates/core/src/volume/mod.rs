//! Voxel volumes, bone masks and their on-disk format.
//!
//! Volumes are stored as raw little-endian `f32` in x-fastest order with a
//! JSON sidecar next to them (`name.vol` + `name.vol.json`). Masks use the
//! same layout with one `u8` per voxel.
//!
//! World coordinates refer to voxel centers: `world = origin + (index + 0.5) * spacing`.

mod pca;
mod phantom;
mod segment;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pca::{mask_to_pointcloud, principal_axis, PrincipalAxis};
pub use phantom::{make_knee_phantom, KneeLandmarks, KneePhantom, PhantomConfig, PlateauAnchors};
pub use segment::{threshold_segment, DEFAULT_MIN_COMPONENT_VOXELS};

/// Bones handled by the registration pipeline, in processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bone {
    Femur,
    Patella,
    TibiaFibula,
}

impl Bone {
    pub const ALL: [Bone; 3] = [Bone::Femur, Bone::Patella, Bone::TibiaFibula];

    pub fn name(&self) -> &'static str {
        match self {
            Bone::Femur => "femur",
            Bone::Patella => "patella",
            Bone::TibiaFibula => "tibia_fibula",
        }
    }
}

impl std::fmt::Display for Bone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Bone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Bone::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown bone {s:?}")))
    }
}

/// Regular grid metadata shared by volumes and masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Self {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (i as f64 + 0.5) * self.spacing[0],
            self.origin[1] + (j as f64 + 0.5) * self.spacing[1],
            self.origin[2] + (k as f64 + 0.5) * self.spacing[2],
        )
    }

    /// Nearest voxel containing `p`, if inside the grid.
    pub fn voxel_at(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.spacing[a]).floor();
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// Lower and upper corners of the grid's bounding box.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let lo = Vector3::from(self.origin);
        let hi = Vector3::new(
            self.origin[0] + self.dims[0] as f64 * self.spacing[0],
            self.origin[1] + self.dims[1] as f64 * self.spacing[1],
            self.origin[2] + self.dims[2] as f64 * self.spacing[2],
        );
        (lo, hi)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Sub-grid covering the inclusive index box `[lo, hi]`.
    pub fn sub_grid(&self, lo: [usize; 3], hi: [usize; 3]) -> Grid {
        let mut dims = [0; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            dims[a] = hi[a] - lo[a] + 1;
            origin[a] = self.origin[a] + lo[a] as f64 * self.spacing[a];
        }
        Grid {
            dims,
            spacing: self.spacing,
            origin,
        }
    }
}

/// Side length, in voxels, of the blocks tracked by [`Occupancy`].
pub(crate) const BLOCK: usize = 4;

/// Which voxel blocks can produce a nonzero trilinear sample.
///
/// A block is indexed by the lower corner `(i0, j0, k0)` of the interpolation
/// cell divided by [`BLOCK`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Occupancy {
    dims: [usize; 3],
    cells: Vec<bool>,
}

impl Occupancy {
    fn new(grid: &Grid, data: &[f32]) -> Self {
        let dims = grid.dims.map(|n| n.div_ceil(BLOCK));
        let mut cells = vec![false; dims[0] * dims[1] * dims[2]];
        for (idx, _) in data.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            let [i, j, k] = grid.unravel(idx);
            // the voxel is read by cells whose lower corner is itself or its predecessor
            for kk in [k.saturating_sub(1), k] {
                for jj in [j.saturating_sub(1), j] {
                    for ii in [i.saturating_sub(1), i] {
                        cells[ii / BLOCK + dims[0] * (jj / BLOCK + dims[1] * (kk / BLOCK))] = true;
                    }
                }
            }
        }
        Self { dims, cells }
    }

    #[inline(always)]
    pub(crate) fn occupied(&self, i0: usize, j0: usize, k0: usize) -> bool {
        self.cells[i0 / BLOCK + self.dims[0] * (j0 / BLOCK + self.dims[1] * (k0 / BLOCK))]
    }
}

/// Linear attenuation (mm^-1) sampled on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f32>,
    occupancy: Occupancy,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidVolume(format!(
                "attenuation values must be finite and >= 0, found {v}"
            )));
        }
        Ok(Self::assemble(grid, data))
    }

    fn assemble(grid: Grid, data: Vec<f32>) -> Self {
        let occupancy = Occupancy::new(&grid, &data);
        Self {
            grid,
            data,
            occupancy,
        }
    }

    pub(crate) fn occupancy(&self) -> &Occupancy {
        &self.occupancy
    }

    pub fn zeros(grid: Grid) -> Result<Self> {
        Self::new(grid, vec![0.0; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().cloned().fold(0.0, f32::max)
    }

    /// Multiplies every voxel by a non-negative factor.
    pub fn scaled(&self, factor: f32) -> Result<Volume> {
        Volume::new(self.grid, self.data.iter().map(|v| v * factor).collect())
    }

    /// Copy of the volume cropped to the inclusive index box `[lo, hi]`.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Volume {
        let grid = self.grid.sub_grid(lo, hi);
        let mut data = Vec::with_capacity(grid.len());
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                let start = self.grid.index(lo[0], j, k);
                let end = self.grid.index(hi[0], j, k);
                data.extend_from_slice(&self.data[start..=end]);
            }
        }
        Volume::assemble(grid, data)
    }
}

/// Binary bone mask aligned with a parent volume.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneMask3D {
    grid: Grid,
    voxels: Vec<bool>,
    bone: Bone,
}

impl BoneMask3D {
    pub fn new(grid: Grid, voxels: Vec<bool>, bone: Bone) -> Result<Self> {
        grid.validate()?;
        if voxels.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "mask length {} does not match dims {:?}",
                voxels.len(),
                grid.dims
            )));
        }
        Ok(Self { grid, voxels, bone })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn bone(&self) -> Bone {
        self.bone
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.voxels.iter().any(|v| *v)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.voxels[self.grid.index(i, j, k)]
    }

    /// Inclusive index bounding box of the true voxels.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, _) in self.voxels.iter().enumerate().filter(|(_, v)| **v) {
            any = true;
            let ijk = self.grid.unravel(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(ijk[a]);
                hi[a] = hi[a].max(ijk[a]);
            }
        }
        any.then_some((lo, hi))
    }

    /// Mean world position of the true voxels.
    pub fn centroid(&self) -> Result<Vector3<f64>> {
        let mut sum = Vector3::zeros();
        let mut n = 0usize;
        for (idx, _) in self.voxels.iter().enumerate().filter(|(_, v)| **v) {
            let [i, j, k] = self.grid.unravel(idx);
            sum += self.grid.voxel_center(i, j, k);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyMask(format!("{} mask has no voxels", self.bone)));
        }
        Ok(sum / n as f64)
    }

    /// Dice overlap with another mask on the same grid.
    pub fn dice(&self, other: &BoneMask3D) -> f64 {
        let inter = self
            .voxels
            .iter()
            .zip(&other.voxels)
            .filter(|(a, b)| **a && **b)
            .count();
        let total = self.count() + other.count();
        if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        }
    }

    /// Volume values inside the mask minus `background`, zero elsewhere.
    pub fn restrict(&self, v: &Volume, background: f32) -> Result<Volume> {
        if v.grid() != &self.grid {
            return Err(Error::DimensionMismatch(
                "mask grid differs from volume grid".into(),
            ));
        }
        let data = v
            .data()
            .iter()
            .zip(&self.voxels)
            .map(|(&mu, &inside)| if inside { (mu - background).max(0.0) } else { 0.0 })
            .collect();
        Volume::new(self.grid, data)
    }

    /// Mask as a 0/1 volume, handy for line-integral projections.
    pub fn as_volume(&self) -> Volume {
        Volume::assemble(
            self.grid,
            self.voxels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    dtype: String,
    order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Bone>,
}

/// Path of the JSON sidecar belonging to a raw data file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_sidecar(path: &Path, grid: &Grid, dtype: &str, label: Option<Bone>) -> Result<()> {
    let sc = Sidecar {
        dims: grid.dims,
        spacing_mm: grid.spacing,
        origin_mm: grid.origin,
        dtype: dtype.into(),
        order: "x-fastest".into(),
        label,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sc).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

fn read_sidecar(path: &Path, dtype: &str) -> Result<(Grid, Option<Bone>)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sc: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
    if sc.dtype != dtype {
        return Err(Error::InvalidVolume(format!(
            "{}: dtype {:?}, expected {dtype:?}",
            side.display(),
            sc.dtype
        )));
    }
    if sc.order != "x-fastest" {
        return Err(Error::InvalidVolume(format!("unsupported order {:?}", sc.order)));
    }
    Ok((Grid::new(sc.dims, sc.spacing_mm, sc.origin_mm)?, sc.label))
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = v.data.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_sidecar(path, &v.grid, "f32le", None)
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let (grid, _) = read_sidecar(path, "f32le")?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = grid.len() * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(grid, data)
}

pub fn save_mask(m: &BoneMask3D, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = m.voxels.iter().map(|&b| b as u8).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_sidecar(path, &m.grid, "u8", Some(m.bone))
}

/// Loads a mask; `bone` is used when the sidecar carries no label.
pub fn load_mask(path: &Path, bone: Bone) -> Result<BoneMask3D> {
    let (grid, label) = read_sidecar(path, "u8")?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != grid.len() {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: grid.len(),
            found: bytes.len(),
        });
    }
    BoneMask3D::new(grid, bytes.iter().map(|&b| b != 0).collect(), label.unwrap_or(bone))
}
