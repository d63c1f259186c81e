//! Analytic knee phantom.
//!
//! World axes: `+z` superior, `+x` lateral, `+y` anterior; the volume is
//! centered on the world origin and the joint line sits at `z = 0`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Bone, BoneMask3D, Grid, Volume};
use crate::error::{Error, Result};

/// Region radius around each condyle landmark used for contact analysis.
pub const CONDYLE_REGION_RADIUS_MM: f64 = 15.0;
const CONDYLE_CAP_SAMPLES: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub mu_cortical: f32,
    pub mu_cancellous: f32,
    pub mu_soft_tissue: f32,
    pub cortical_thickness_mm: f64,
    pub leg_radius_mm: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [128, 128, 128],
            spacing_mm: 1.0,
            mu_cortical: 0.05,
            mu_cancellous: 0.03,
            mu_soft_tissue: 0.02,
            cortical_thickness_mm: 2.5,
            leg_radius_mm: 55.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauAnchors {
    pub medial: [f64; 3],
    pub lateral: [f64; 3],
    pub anterior: [f64; 3],
}

/// Named anatomical landmarks in the neutral (unposed) frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeLandmarks {
    pub medial_condyle_center: [f64; 3],
    pub lateral_condyle_center: [f64; 3],
    /// Points just inside the distal condylar surface, within the cortical shell.
    pub medial_condyle_distal: [f64; 3],
    pub lateral_condyle_distal: [f64; 3],
    pub plateau: PlateauAnchors,
    /// Femoral surface points used to find the lowest condylar point.
    pub medial_condyle_region: Vec<[f64; 3]>,
    pub lateral_condyle_region: Vec<[f64; 3]>,
}

impl KneeLandmarks {
    /// Medial-to-lateral unit direction of the tibial plateau.
    pub fn medial_lateral_axis(&self) -> Vector3<f64> {
        (Vector3::from(self.plateau.lateral) - Vector3::from(self.plateau.medial)).normalize()
    }
}

#[derive(Debug, Clone)]
pub struct KneePhantom {
    pub volume: Volume,
    pub masks: Vec<BoneMask3D>,
    pub landmarks: KneeLandmarks,
    pub config: PhantomConfig,
}

impl KneePhantom {
    pub fn mask(&self, bone: Bone) -> &BoneMask3D {
        self.masks
            .iter()
            .find(|m| m.bone() == bone)
            .expect("phantom carries all three bones")
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    /// Axis along z.
    Cylinder {
        cx: f64,
        cy: f64,
        r: f64,
        z0: f64,
        z1: f64,
    },
    Sphere {
        c: [f64; 3],
        r: f64,
    },
    Ellipsoid {
        c: [f64; 3],
        semi: [f64; 3],
    },
}

impl Primitive {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Primitive::Cylinder { cx, cy, r, z0, z1 } => {
                let (dx, dy) = (p.x - cx, p.y - cy);
                dx * dx + dy * dy <= r * r && p.z >= z0 && p.z <= z1
            }
            Primitive::Sphere { c, r } => (p - Vector3::from(c)).norm_squared() <= r * r,
            Primitive::Ellipsoid { c, semi } => {
                (0..3).map(|a| ((p[a] - c[a]) / semi[a]).powi(2)).sum::<f64>() <= 1.0
            }
        }
    }

    /// The primitive shrunk inward by `t`.
    fn shrunk(&self, t: f64) -> Primitive {
        match *self {
            Primitive::Cylinder { cx, cy, r, z0, z1 } => Primitive::Cylinder {
                cx,
                cy,
                r: r - t,
                z0: z0 + t,
                z1: z1 - t,
            },
            Primitive::Sphere { c, r } => Primitive::Sphere { c, r: r - t },
            Primitive::Ellipsoid { c, semi } => Primitive::Ellipsoid {
                c,
                semi: [semi[0] - t, semi[1] - t, semi[2] - t],
            },
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Primitive::Cylinder { cx, cy, r, z0, z1 } => {
                ([cx - r, cy - r, z0], [cx + r, cy + r, z1])
            }
            Primitive::Sphere { c, r } => (
                [c[0] - r, c[1] - r, c[2] - r],
                [c[0] + r, c[1] + r, c[2] + r],
            ),
            Primitive::Ellipsoid { c, semi } => (
                [c[0] - semi[0], c[1] - semi[1], c[2] - semi[2]],
                [c[0] + semi[0], c[1] + semi[1], c[2] + semi[2]],
            ),
        }
    }
}

const CONDYLE_RADIUS: f64 = 11.0;
const MEDIAL_CONDYLE: [f64; 3] = [-20.0, -4.0, 13.0];
const LATERAL_CONDYLE: [f64; 3] = [20.0, -4.0, 13.0];
const PLATEAU_TOP_Z: f64 = -2.0;

fn bone_primitives(bone: Bone) -> Vec<Primitive> {
    match bone {
        Bone::Femur => vec![
            Primitive::Cylinder {
                cx: 0.0,
                cy: 0.0,
                r: 12.0,
                z0: 8.0,
                z1: 58.0,
            },
            Primitive::Sphere {
                c: MEDIAL_CONDYLE,
                r: CONDYLE_RADIUS,
            },
            Primitive::Sphere {
                c: LATERAL_CONDYLE,
                r: CONDYLE_RADIUS,
            },
        ],
        Bone::Patella => vec![Primitive::Ellipsoid {
            c: [0.0, 27.0, 22.0],
            semi: [16.0, 6.0, 12.0],
        }],
        Bone::TibiaFibula => vec![
            Primitive::Ellipsoid {
                c: [0.0, 0.0, PLATEAU_TOP_Z - 8.0],
                semi: [32.0, 22.0, 8.0],
            },
            Primitive::Cylinder {
                cx: 0.0,
                cy: 0.0,
                r: 11.0,
                z0: -58.0,
                z1: PLATEAU_TOP_Z - 8.0,
            },
            // fibula, lateral and posterior, fused to the plateau
            Primitive::Cylinder {
                cx: 26.0,
                cy: -8.0,
                r: 5.0,
                z0: -58.0,
                z1: PLATEAU_TOP_Z - 10.0,
            },
        ],
    }
}

/// Lower hemisphere of a condyle sphere, pole first, Fibonacci-spaced.
fn condyle_cap(center: [f64; 3], radius: f64, n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let c = Vector3::from(center);
    let mut pts = vec![[center[0], center[1], center[2] - radius]];
    for k in 0..n {
        let z = -1.0 + (k as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = k as f64 * golden;
        let p = c + radius * Vector3::new(r * phi.cos(), r * phi.sin(), z);
        pts.push([p.x, p.y, p.z]);
    }
    pts.retain(|p| (Vector3::from(*p) - c).norm() <= CONDYLE_REGION_RADIUS_MM);
    pts
}

pub fn make_knee_phantom(config: &PhantomConfig) -> Result<KneePhantom> {
    if config.dims.iter().any(|&d| d < 64) {
        return Err(Error::PhantomConfig(format!(
            "dims must be at least 64 per axis, got {:?}",
            config.dims
        )));
    }
    if !(config.spacing_mm > 0.0 && config.spacing_mm <= 2.0) {
        return Err(Error::PhantomConfig(format!(
            "spacing must be in (0, 2] mm, got {}",
            config.spacing_mm
        )));
    }
    let attenuations = [
        config.mu_soft_tissue,
        config.mu_cancellous,
        config.mu_cortical,
    ];
    if attenuations.iter().any(|m| !(m.is_finite() && *m >= 0.0))
        || !(config.mu_soft_tissue < config.mu_cancellous
            && config.mu_cancellous < config.mu_cortical)
    {
        return Err(Error::PhantomConfig(
            "attenuations must satisfy 0 <= soft < cancellous < cortical".into(),
        ));
    }
    if !(config.cortical_thickness_mm > 0.0 && config.cortical_thickness_mm < 5.0) {
        return Err(Error::PhantomConfig(
            "cortical thickness must be in (0, 5) mm".into(),
        ));
    }

    let s = config.spacing_mm;
    let origin = [
        -(config.dims[0] as f64) * s / 2.0,
        -(config.dims[1] as f64) * s / 2.0,
        -(config.dims[2] as f64) * s / 2.0,
    ];
    let grid = Grid::new(config.dims, [s; 3], origin)?;
    let (lo, hi) = grid.bounds();

    let bones: Vec<(Bone, Vec<Primitive>, Vec<Primitive>)> = Bone::ALL
        .iter()
        .map(|&b| {
            let outer = bone_primitives(b);
            let inner = outer
                .iter()
                .map(|p| p.shrunk(config.cortical_thickness_mm))
                .collect();
            (b, outer, inner)
        })
        .collect();

    for (bone, outer, _) in &bones {
        for prim in outer {
            let (plo, phi) = prim.bounds();
            for a in 0..3 {
                if plo[a] < lo[a] + s || phi[a] > hi[a] - s {
                    return Err(Error::PhantomConfig(format!(
                        "{bone} does not fit in a {:?} grid at {s} mm spacing",
                        config.dims
                    )));
                }
            }
        }
    }

    let n = grid.len();
    let mut data = vec![0.0f32; n];
    let mut voxels: Vec<Vec<bool>> = vec![vec![false; n]; bones.len()];
    let leg_r2 = config.leg_radius_mm * config.leg_radius_mm;
    for k in 0..config.dims[2] {
        for j in 0..config.dims[1] {
            for i in 0..config.dims[0] {
                let p = grid.voxel_center(i, j, k);
                let idx = grid.index(i, j, k);
                let mut value = if p.x * p.x + p.y * p.y <= leg_r2 {
                    config.mu_soft_tissue
                } else {
                    0.0
                };
                for (b, (_, outer, inner)) in bones.iter().enumerate() {
                    if outer.iter().any(|prim| prim.contains(&p)) {
                        voxels[b][idx] = true;
                        value = if inner.iter().any(|prim| prim.contains(&p)) {
                            config.mu_cancellous
                        } else {
                            config.mu_cortical
                        };
                        break;
                    }
                }
                data[idx] = value;
            }
        }
    }

    let masks = bones
        .iter()
        .zip(voxels)
        .map(|((bone, _, _), v)| BoneMask3D::new(grid, v, *bone))
        .collect::<Result<Vec<_>>>()?;

    let distal = |c: [f64; 3]| [c[0], c[1], c[2] - CONDYLE_RADIUS + 1.0];
    let landmarks = KneeLandmarks {
        medial_condyle_center: MEDIAL_CONDYLE,
        lateral_condyle_center: LATERAL_CONDYLE,
        medial_condyle_distal: distal(MEDIAL_CONDYLE),
        lateral_condyle_distal: distal(LATERAL_CONDYLE),
        plateau: PlateauAnchors {
            medial: [-16.0, 0.0, PLATEAU_TOP_Z],
            lateral: [16.0, 0.0, PLATEAU_TOP_Z],
            anterior: [0.0, 12.0, PLATEAU_TOP_Z],
        },
        medial_condyle_region: condyle_cap(MEDIAL_CONDYLE, CONDYLE_RADIUS, CONDYLE_CAP_SAMPLES),
        lateral_condyle_region: condyle_cap(LATERAL_CONDYLE, CONDYLE_RADIUS, CONDYLE_CAP_SAMPLES),
    };

    Ok(KneePhantom {
        volume: Volume::new(grid, data)?,
        masks,
        landmarks,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phantom() -> KneePhantom {
        make_knee_phantom(&PhantomConfig::default()).unwrap()
    }

    #[test]
    fn masks_are_disjoint_and_nonempty() {
        let ph = phantom();
        for m in &ph.masks {
            assert!(!m.is_empty(), "{} empty", m.bone());
        }
        for a in 0..3 {
            for b in a + 1..3 {
                let overlap = ph.masks[a]
                    .voxels()
                    .iter()
                    .zip(ph.masks[b].voxels())
                    .any(|(x, y)| *x && *y);
                assert!(!overlap);
            }
        }
    }

    #[test]
    fn masks_lie_inside_bone_attenuation() {
        let ph = phantom();
        let cancellous = ph.config.mu_cancellous;
        for m in &ph.masks {
            for (inside, mu) in m.voxels().iter().zip(ph.volume.data()) {
                if *inside {
                    assert!(*mu >= cancellous);
                }
            }
        }
    }

    #[test]
    fn femur_is_superior_to_tibia() {
        let ph = phantom();
        let f = ph.mask(Bone::Femur).centroid().unwrap();
        let t = ph.mask(Bone::TibiaFibula).centroid().unwrap();
        assert!(f.z > t.z);
        let p = ph.mask(Bone::Patella).centroid().unwrap();
        assert!(p.y > f.y && p.y > t.y);
    }

    #[test]
    fn distal_condyle_landmarks_sit_in_cortical_shell() {
        let ph = phantom();
        let g = ph.volume.grid();
        for lm in [
            ph.landmarks.medial_condyle_distal,
            ph.landmarks.lateral_condyle_distal,
        ] {
            let [i, j, k] = g.voxel_at(&Vector3::from(lm)).unwrap();
            assert_eq!(ph.volume.get(i, j, k), ph.config.mu_cortical);
        }
        for lm in [
            ph.landmarks.medial_condyle_center,
            ph.landmarks.lateral_condyle_center,
        ] {
            let [i, j, k] = g.voxel_at(&Vector3::from(lm)).unwrap();
            assert_eq!(ph.volume.get(i, j, k), ph.config.mu_cancellous);
        }
    }

    #[test]
    fn condyle_regions_start_at_the_pole() {
        let ph = phantom();
        let r = &ph.landmarks.medial_condyle_region;
        assert_eq!(r[0], [-20.0, -4.0, 2.0]);
        assert!(r.len() > 1000);
        assert!(r.iter().all(|p| p[2] <= 13.0 + 1e-9));
    }

    #[test]
    fn small_grid_is_config_error() {
        let cfg = PhantomConfig {
            dims: [32, 128, 128],
            ..Default::default()
        };
        assert!(matches!(make_knee_phantom(&cfg), Err(Error::PhantomConfig(_))));
        let cfg = PhantomConfig {
            dims: [64, 64, 64],
            ..Default::default()
        };
        // 64 mm of extent cannot hold the femur shaft
        assert!(matches!(make_knee_phantom(&cfg), Err(Error::PhantomConfig(_))));
        let cfg = PhantomConfig {
            spacing_mm: 3.0,
            ..Default::default()
        };
        assert!(make_knee_phantom(&cfg).is_err());
    }

    #[test]
    fn coarse_grid_still_fits() {
        let cfg = PhantomConfig {
            dims: [64, 64, 64],
            spacing_mm: 2.0,
            ..Default::default()
        };
        let ph = make_knee_phantom(&cfg).unwrap();
        assert!(ph.masks.iter().all(|m| !m.is_empty()));
    }
}
