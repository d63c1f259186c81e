//! Threshold + connected-component bone segmentation.

use super::{Bone, BoneMask3D, Volume};
use crate::error::{Error, Result};

/// Components smaller than this are treated as noise.
pub const DEFAULT_MIN_COMPONENT_VOXELS: usize = 100;

struct Component {
    voxels: Vec<usize>,
    centroid: [f64; 3],
}

/// 6-connected components of `{voxel >= threshold}`.
fn components(v: &Volume, threshold: f32, min_voxels: usize) -> Vec<Component> {
    let g = *v.grid();
    let [nx, ny, nz] = g.dims;
    let above: Vec<bool> = v.data().iter().map(|&x| x >= threshold).collect();
    let mut seen = vec![false; above.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..above.len() {
        if !above[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut voxels = Vec::new();
        while let Some(idx) = stack.pop() {
            voxels.push(idx);
            let [i, j, k] = g.unravel(idx);
            let mut visit = |n: usize| {
                if above[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                visit(idx - 1);
            }
            if i + 1 < nx {
                visit(idx + 1);
            }
            if j > 0 {
                visit(idx - nx);
            }
            if j + 1 < ny {
                visit(idx + nx);
            }
            if k > 0 {
                visit(idx - nx * ny);
            }
            if k + 1 < nz {
                visit(idx + nx * ny);
            }
        }
        if voxels.len() < min_voxels {
            continue;
        }
        voxels.sort_unstable();
        let mut c = [0.0; 3];
        for &idx in &voxels {
            let [i, j, k] = g.unravel(idx);
            let p = g.voxel_center(i, j, k);
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let n = voxels.len() as f64;
        out.push(Component {
            voxels,
            centroid: [c[0] / n, c[1] / n, c[2] / n],
        });
    }
    out
}

/// Segments bones by thresholding and labels the (at most three) largest
/// components: with three, the most anterior is the patella; of the rest the
/// higher one is the femur and the lower the tibia-fibula.
pub fn threshold_segment(v: &Volume, threshold: f32) -> Result<Vec<BoneMask3D>> {
    threshold_segment_with(v, threshold, DEFAULT_MIN_COMPONENT_VOXELS)
}

pub fn threshold_segment_with(
    v: &Volume,
    threshold: f32,
    min_voxels: usize,
) -> Result<Vec<BoneMask3D>> {
    let mut comps = components(v, threshold, min_voxels);
    if comps.is_empty() {
        return Err(Error::EmptySegmentation(format!(
            "no component of at least {min_voxels} voxels above {threshold}"
        )));
    }
    // largest first, ties by first voxel index
    comps.sort_by(|a, b| {
        b.voxels
            .len()
            .cmp(&a.voxels.len())
            .then(a.voxels[0].cmp(&b.voxels[0]))
    });
    comps.truncate(3);

    let mut labeled: Vec<(Bone, Component)> = Vec::new();
    if comps.len() == 3 {
        let patella_idx = (0..3)
            .max_by(|&a, &b| comps[a].centroid[1].total_cmp(&comps[b].centroid[1]))
            .unwrap();
        labeled.push((Bone::Patella, comps.remove(patella_idx)));
    }
    comps.sort_by(|a, b| b.centroid[2].total_cmp(&a.centroid[2]));
    let mut iter = comps.into_iter();
    if let Some(top) = iter.next() {
        let (lo, hi) = v.grid().bounds();
        let lone_and_low = iter.len() == 0 && labeled.is_empty() && top.centroid[2] < (lo.z + hi.z) / 2.0;
        let bone = if lone_and_low {
            Bone::TibiaFibula
        } else {
            Bone::Femur
        };
        labeled.push((bone, top));
    }
    if let Some(bottom) = iter.next() {
        labeled.push((Bone::TibiaFibula, bottom));
    }

    let grid = *v.grid();
    let mut masks = labeled
        .into_iter()
        .map(|(bone, comp)| {
            let mut voxels = vec![false; grid.len()];
            for idx in comp.voxels {
                voxels[idx] = true;
            }
            BoneMask3D::new(grid, voxels, bone)
        })
        .collect::<Result<Vec<_>>>()?;
    masks.sort_by_key(|m| m.bone());
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_knee_phantom, Grid, PhantomConfig};

    #[test]
    fn phantom_segments_into_three_matching_bones() {
        let ph = make_knee_phantom(&PhantomConfig::default()).unwrap();
        let masks = threshold_segment(&ph.volume, ph.config.mu_cortical / 2.0).unwrap();
        assert_eq!(masks.len(), 3);
        for m in &masks {
            let dice = m.dice(ph.mask(m.bone()));
            assert!(dice >= 0.95, "{}: dice {dice}", m.bone());
        }
    }

    #[test]
    fn threshold_above_max_is_empty() {
        let ph = make_knee_phantom(&PhantomConfig::default()).unwrap();
        let err = threshold_segment(&ph.volume, ph.volume.max_value() + 1.0).unwrap_err();
        assert!(matches!(err, Error::EmptySegmentation(_)));
    }

    #[test]
    fn uniform_volume_below_threshold_is_empty() {
        let grid = Grid::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::new(grid, vec![0.01; 512]).unwrap();
        assert!(matches!(
            threshold_segment(&v, 0.02),
            Err(Error::EmptySegmentation(_))
        ));
    }

    #[test]
    fn raising_threshold_never_grows_masks() {
        let ph = make_knee_phantom(&PhantomConfig::default()).unwrap();
        let low = threshold_segment(&ph.volume, 0.025).unwrap();
        let high = threshold_segment(&ph.volume, 0.045).unwrap();
        for h in &high {
            let l = low.iter().find(|m| m.bone() == h.bone()).unwrap();
            assert!(h.count() <= l.count());
            assert!(h
                .voxels()
                .iter()
                .zip(l.voxels())
                .all(|(hv, lv)| !*hv || *lv));
        }
    }
}
