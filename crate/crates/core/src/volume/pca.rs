//! Point clouds from masks and their principal axis.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::BoneMask3D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAxis {
    pub centroid: [f64; 3],
    /// Unit eigenvector of the largest covariance eigenvalue.
    pub direction: [f64; 3],
    /// Covariance eigenvalues in mm^2, descending.
    pub extents: [f64; 3],
}

impl PrincipalAxis {
    pub fn direction_vec(&self) -> Vector3<f64> {
        Vector3::from(self.direction)
    }

    pub fn centroid_vec(&self) -> Vector3<f64> {
        Vector3::from(self.centroid)
    }
}

/// World coordinates of the mask's voxel centers, stride-subsampled to at most `max_points`.
pub fn mask_to_pointcloud(m: &BoneMask3D, max_points: usize) -> Result<Vec<Vector3<f64>>> {
    if max_points == 0 {
        return Err(Error::Config("max_points must be positive".into()));
    }
    let count = m.count();
    if count == 0 {
        return Err(Error::EmptyMask(format!("{} mask has no voxels", m.bone())));
    }
    let stride = count.div_ceil(max_points);
    let g = m.grid();
    Ok(m.voxels()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .step_by(stride)
        .map(|(idx, _)| {
            let [i, j, k] = g.unravel(idx);
            g.voxel_center(i, j, k)
        })
        .collect())
}

/// Sign rule: `d.z >= 0`; ties broken by `d.y >= 0`, then `d.x > 0`.
fn canonical_sign(d: Vector3<f64>) -> Vector3<f64> {
    const EPS: f64 = 1e-12;
    let flip = if d.z.abs() > EPS {
        d.z < 0.0
    } else if d.y.abs() > EPS {
        d.y < 0.0
    } else {
        d.x < 0.0
    };
    if flip {
        -d
    } else {
        d
    }
}

pub fn principal_axis(points: &[Vector3<f64>]) -> Result<PrincipalAxis> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = cov.abs().max().max(f64::MIN_POSITIVE);
    let largest = eig.eigenvalues[order[0]];
    if !(largest > 1e-12 * scale) || largest <= 0.0 {
        return Err(Error::Degenerate("covariance has rank 0".into()));
    }
    let extents = order.map(|i| {
        let e = eig.eigenvalues[i];
        if e.abs() <= 1e-12 * scale {
            0.0
        } else {
            e.max(0.0)
        }
    });
    let dir = canonical_sign(eig.eigenvectors.column(order[0]).normalize());
    Ok(PrincipalAxis {
        centroid: [centroid.x, centroid.y, centroid.z],
        direction: [dir.x, dir.y, dir.z],
        extents,
    })
}
