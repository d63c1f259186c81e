//! Per-bone pose estimation: global initialization, kinematic prediction and
//! coarse-to-fine local refinement, plus sequence tracking.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anatomy::{Anatomy, BoneModel, FixedFrame};
use crate::error::{Error, Result};
use crate::geometry::{rotation_to_euler, Pose6DoF};
use crate::optimize::{differential_evolution, hybrid_powell_nm, BoxBounds, DeOptions, HybridOptions};
use crate::projector::{Image2D, ProjectionGeometry};
use crate::similarity::{Objective, DEFAULT_REGION_DILATION_PX, UNDEFINED_COST};
use crate::volume::Bone;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpmConfig {
    pub enabled: bool,
    /// Per-frame clamp on each translation component of the velocity.
    pub step_translation_mm: f64,
    /// Per-frame clamp on the flexion-axis rotation.
    pub step_rotation_deg: f64,
    pub velocity_weight: f64,
    /// Half-width of the search box around the prediction once a velocity is known.
    pub window_translation_mm: f64,
    pub window_rotation_deg: f64,
    /// A kinematic result costing more than this is retried with global
    /// initialization; the cheaper of the two is kept.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_cost: Option<f64>,
}

impl Default for KpmConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            step_translation_mm: 5.0,
            step_rotation_deg: 8.0,
            velocity_weight: 1.0,
            window_translation_mm: 2.0,
            window_rotation_deg: 3.0,
            fallback_cost: Some(0.02),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub de: DeOptions,
    /// Optimizer settings for every pyramid level but the last.
    pub coarse: HybridOptions,
    /// Optimizer settings for the full-resolution level.
    pub fine: HybridOptions,
    /// Detector downsampling factors, coarse to fine; must end in 1.
    pub pyramid: Vec<usize>,
    pub translation_bound_mm: f64,
    pub rotation_bound_deg: f64,
    /// Dilation of the fixed bone mask at full resolution.
    pub region_dilation_px: usize,
    pub kpm: KpmConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        let mut coarse = HybridOptions::default();
        coarse.powell.xtol = 0.05;
        coarse.powell.ftol = 1e-6;
        coarse.powell.max_iter = 6;
        coarse.powell.line_step = 2.0;
        coarse.nelder_mead.xtol = 0.05;
        coarse.nelder_mead.ftol = 1e-6;
        coarse.nelder_mead.max_iter = 300;
        coarse.nelder_mead.initial_step = vec![1.0; 6];
        coarse.ftol = 1e-5;
        coarse.max_rounds = 2;

        let mut fine = HybridOptions::default();
        fine.powell.xtol = 0.05;
        fine.powell.ftol = 1e-7;
        fine.powell.max_iter = 3;
        fine.powell.line_step = 0.5;
        fine.nelder_mead.xtol = 0.05;
        fine.nelder_mead.ftol = 1e-7;
        fine.nelder_mead.max_iter = 100;
        fine.nelder_mead.initial_step = vec![0.25; 6];
        fine.ftol = 1e-6;
        fine.max_rounds = 1;

        Self {
            de: DeOptions::default(),
            coarse,
            fine,
            pyramid: vec![4, 1],
            translation_bound_mm: 20.0,
            rotation_bound_deg: 15.0,
            region_dilation_px: DEFAULT_REGION_DILATION_PX,
            kpm: KpmConfig::default(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid.last() != Some(&1) {
            return Err(Error::Config("pyramid must end with factor 1".into()));
        }
        if self.pyramid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config("pyramid factors must be strictly descending".into()));
        }
        let positive = [
            self.translation_bound_mm,
            self.rotation_bound_deg,
            self.kpm.step_translation_mm,
            self.kpm.step_rotation_deg,
            self.kpm.window_translation_mm,
            self.kpm.window_rotation_deg,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("search bounds and KPM steps must be positive".into()));
        }
        if !(self.kpm.velocity_weight.is_finite() && self.kpm.velocity_weight >= 0.0) {
            return Err(Error::Config("KPM velocity weight must be >= 0".into()));
        }
        if self.kpm.fallback_cost.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return Err(Error::Config("KPM fallback cost must be positive".into()));
        }
        if self.de.population < 4 {
            return Err(Error::Config("DE population must be at least 4".into()));
        }
        Ok(())
    }

    fn search_half_widths(&self) -> [f64; 6] {
        let (t, r) = (self.translation_bound_mm, self.rotation_bound_deg);
        [t, t, t, r, r, r]
    }
}

/// What the kinematic prior carries from one frame to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpmState {
    pub previous: Pose6DoF,
    /// `[dt_x, dt_y, dt_z, w_x, w_y, w_z]`: translation change in mm and the
    /// rotation vector (degrees) of `R_n R_{n-1}^T`. `None` until two frames are known.
    pub velocity: Option<[f64; 6]>,
    /// Unit medial-lateral axis in world coordinates.
    pub flexion_axis: [f64; 3],
}

impl KpmState {
    pub fn validate(&self) -> Result<()> {
        self.previous.validate()?;
        if let Some(v) = &self.velocity {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Kinematics("non-finite KPM velocity".into()));
            }
        }
        let n = Vector3::from(self.flexion_axis).norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Kinematics(format!("flexion axis norm {n}, expected 1")));
        }
        Ok(())
    }
}

/// Velocity of the motion `from -> to` in the [`KpmState`] convention.
pub fn pose_velocity(from: &Pose6DoF, to: &Pose6DoF) -> [f64; 6] {
    let dt = to.translation() - from.translation();
    let dr = to.rotation() * from.rotation().transpose();
    let w = Rotation3::from_matrix_unchecked(dr).scaled_axis() * 180.0 / std::f64::consts::PI;
    [dt.x, dt.y, dt.z, w.x, w.y, w.z]
}

/// Picks `angle + 360k` closest to `reference`.
fn unwrap_near(angle: f64, reference: f64) -> f64 {
    angle + 360.0 * ((reference - angle) / 360.0).round()
}

fn pose_from_rotation(r: &Matrix3<f64>, t: Vector3<f64>, pivot: [f64; 3], near: &Pose6DoF) -> Pose6DoF {
    let (a, b, g) = rotation_to_euler(r);
    Pose6DoF {
        tx: t.x,
        ty: t.y,
        tz: t.z,
        r_alpha: unwrap_near(a, near.r_alpha),
        r_beta: unwrap_near(b, near.r_beta),
        r_gamma: unwrap_near(g, near.r_gamma),
        pivot,
    }
}

/// Constant-velocity prediction restricted to flexion, with its search box.
pub fn kpm_predict(state: &KpmState, cfg: &RegistrationConfig) -> Result<(Pose6DoF, BoxBounds)> {
    state.validate()?;
    let k = &cfg.kpm;
    let prev = &state.previous;
    let axis = Vector3::from(state.flexion_axis).normalize();
    let (step_t, step_r, window) = match &state.velocity {
        Some(v) => {
            let w = k.velocity_weight;
            let t = Vector3::new(v[0], v[1], v[2])
                .map(|x| (w * x).clamp(-k.step_translation_mm, k.step_translation_mm));
            let about_axis = w * Vector3::new(v[3], v[4], v[5]).dot(&axis);
            let r = about_axis.clamp(-k.step_rotation_deg, k.step_rotation_deg);
            (t, r, [k.window_translation_mm, k.window_rotation_deg])
        }
        None => (
            Vector3::zeros(),
            0.0,
            [k.step_translation_mm, k.step_rotation_deg],
        ),
    };
    let dr = Rotation3::from_axis_angle(&Unit::new_unchecked(axis), step_r.to_radians());
    let r = dr.matrix() * prev.rotation();
    let predicted = pose_from_rotation(&r, prev.translation() + step_t, prev.pivot, prev);
    let half = [window[0], window[0], window[0], window[1], window[1], window[1]];
    let bounds = BoxBounds::around(&predicted.params(), &half)?;
    Ok((predicted, bounds))
}

/// Centroid (pixel units) and principal direction (mm units) of a 2D mask.
fn mask_moments(img: &Image2D) -> Option<((f64, f64), (f64, f64))> {
    let mask = img.mask.as_ref()?;
    let (pu, pv) = (img.pixel_spacing[0], img.pixel_spacing[1]);
    let pts: Vec<(f64, f64)> = (0..mask.len())
        .filter(|&p| mask[p])
        .map(|p| ((p % img.nu) as f64, (p / img.nu) as f64))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let ci = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cj = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    for (i, j) in &pts {
        let (du, dv) = ((i - ci) * pu, (j - cj) * pv);
        suu += du * du;
        svv += dv * dv;
        suv += du * dv;
    }
    // major axis of the 2x2 scatter matrix
    let theta = 0.5 * (2.0 * suv).atan2(suu - svv);
    Some(((ci, cj), (theta.cos(), theta.sin())))
}

/// Seed pose: pivot moved onto the ray through the fixed-mask centroid (at its
/// own depth), then turned about the viewing direction so the projected bone
/// axis matches the mask's principal axis.
pub fn axis_seed(fixed: &Image2D, model: &BoneModel, g: &ProjectionGeometry) -> Result<Pose6DoF> {
    let ((ci, cj), (eu, ev)) = mask_moments(fixed)
        .ok_or_else(|| Error::Initialization(format!("{} fixed mask is empty", model.bone)))?;
    let c = Vector3::from(model.pivot);
    let target = g.back_project(ci, cj, &c);
    let n = g.normal();
    let a = model.axis.direction_vec();

    let mut angle = 0.0;
    // an axis nearly along the beam has no usable in-plane direction
    if (a - a.dot(&n) * n).norm() > 0.3 {
        let reach = 20.0;
        let p0 = g.project(&c);
        let p1 = g.project(&(c + reach * a));
        if let (Some(p0), Some(p1)) = (p0, p1) {
            let (au, av) = ((p1.0 - p0.0) * g.pu, (p1.1 - p0.1) * g.pv);
            let (mut eu, mut ev) = (eu, ev);
            if au * eu + av * ev < 0.0 {
                eu = -eu;
                ev = -ev;
            }
            angle = (au * ev - av * eu).atan2(au * eu + av * ev);
        }
    }
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(n), angle);
    let identity = Pose6DoF::identity(model.pivot);
    let seed = pose_from_rotation(r.matrix(), target - c, model.pivot, &identity);
    seed.validate()?;
    Ok(seed)
}

/// Coarse levels must keep at least this many fixed-mask pixels; smaller
/// bones get a finer level than configured.
pub const MIN_LEVEL_MASK_PIXELS: usize = 100;

/// Objective at one pyramid level.
struct Level<'a> {
    factor: usize,
    objective: Objective<'a>,
}

/// Largest factor `<= requested`, halving, whose downsampled mask keeps
/// [`MIN_LEVEL_MASK_PIXELS`] pixels.
fn effective_factor(fixed: &Image2D, requested: usize) -> usize {
    let mut f = requested;
    while f > 1 {
        let enough = fixed
            .downsampled(f)
            .ok()
            .and_then(|img| img.mask)
            .is_some_and(|m| m.iter().filter(|&&b| b).count() >= MIN_LEVEL_MASK_PIXELS);
        if enough {
            break;
        }
        f /= 2;
    }
    f.max(1)
}

fn build_level<'a>(
    fixed: &Image2D,
    model: &'a BoneModel,
    g: &ProjectionGeometry,
    requested: usize,
    dilation_px: usize,
) -> Result<Level<'a>> {
    let factor = effective_factor(fixed, requested);
    let (img, geo) = if factor == 1 {
        (fixed.clone(), *g)
    } else {
        (fixed.downsampled(factor)?, g.downsampled(factor)?)
    };
    let dilation = if factor == 1 {
        dilation_px
    } else {
        (dilation_px as f64 / factor as f64).ceil() as usize
    };
    Ok(Level {
        factor,
        objective: Objective::new(&img, model, &geo, dilation)?,
    })
}

fn penalized<'a>(obj: &'a Objective<'_>, bounds: &'a BoxBounds) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |p: &[f64]| {
        if bounds.contains(p) {
            obj.cost_params(p)
        } else {
            UNDEFINED_COST + bounds.excess(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub seed: Pose6DoF,
    pub seed_cost: f64,
    pub pose: Pose6DoF,
    pub cost: f64,
    pub evaluations: usize,
    pub generations: usize,
    /// Search box used by differential evolution and the refinement after it.
    pub bounds: BoxBounds,
}

/// Axis-aligned seed followed by differential evolution on the coarsest level.
pub fn initialize_global(
    fixed: &Image2D,
    model: &BoneModel,
    g: &ProjectionGeometry,
    cfg: &RegistrationConfig,
    seed: u64,
) -> Result<InitReport> {
    cfg.validate()?;
    let start = axis_seed(fixed, model, g)?;
    let level = build_level(fixed, model, g, cfg.pyramid[0], cfg.region_dilation_px)
        .map_err(|e| Error::Initialization(format!("{}: {e}", model.bone)))?;
    let bounds = BoxBounds::around(&start.params(), &cfg.search_half_widths())?;
    let seed_cost = level.objective.cost(&start);
    let opts = DeOptions {
        seed,
        initial_member: Some(start.params().to_vec()),
        ..cfg.de.clone()
    };
    let obj = &level.objective;
    let de = differential_evolution(|p| obj.cost_params(p), &bounds, &opts)?;
    Ok(InitReport {
        seed: start,
        seed_cost,
        pose: Pose6DoF::from_params(&de.best, model.pivot),
        cost: de.best_cost,
        evaluations: de.evaluations,
        generations: de.iterations,
        bounds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub factor: usize,
    pub start_cost: f64,
    pub cost: f64,
    pub evaluations: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub pose: Pose6DoF,
    /// Full-resolution cost of `pose`.
    pub cost: f64,
    pub stages: Vec<StageReport>,
    /// True when no stage beat the start pose at full resolution.
    pub kept_start: bool,
}

/// Hybrid Powell/Nelder-Mead on each pyramid level inside `bounds`.
pub fn refine_local(
    fixed: &Image2D,
    model: &BoneModel,
    g: &ProjectionGeometry,
    start: &Pose6DoF,
    bounds: &BoxBounds,
    cfg: &RegistrationConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    start.validate()?;
    if !start.same_pivot(&model.identity_pose()) {
        return Err(Error::PivotMismatch {
            a: start.pivot,
            b: model.pivot,
        });
    }
    let x0 = start.params();
    if !bounds.contains(&x0) {
        return Err(Error::Refinement("start pose lies outside the search bounds".into()));
    }
    let mut x = x0.to_vec();
    let mut stages = Vec::new();
    let mut fine_start_cost = f64::NAN;
    let mut fine_cost = f64::NAN;
    let last = cfg.pyramid.len() - 1;
    for (li, &factor) in cfg.pyramid.iter().enumerate() {
        let level = build_level(fixed, model, g, factor, cfg.region_dilation_px)?;
        let opts = if li == last { &cfg.fine } else { &cfg.coarse };
        let cost = penalized(&level.objective, bounds);
        let start_cost = cost(&x);
        if !start_cost.is_finite() {
            return Err(Error::Refinement(format!("non-finite cost at level {factor}x")));
        }
        let r = hybrid_powell_nm(&cost, &x, opts)?;
        if li == last {
            fine_start_cost = cost(&x0);
            fine_cost = r.best_cost;
        }
        stages.push(StageReport {
            factor: level.factor,
            start_cost,
            cost: r.best_cost,
            evaluations: r.evaluations,
            rounds: r.iterations,
        });
        x = r.best;
    }
    let kept_start = fine_start_cost <= fine_cost;
    let (pose, cost) = if kept_start {
        (*start, fine_start_cost)
    } else {
        (Pose6DoF::from_params(&x, model.pivot), fine_cost)
    };
    Ok(RefineResult {
        pose,
        cost,
        stages,
        kept_start,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Axis seed plus differential evolution.
    Global,
    /// Kinematic prediction from the previous frame.
    Kinematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneRegistration {
    pub bone: Bone,
    pub route: Route,
    pub pose: Option<Pose6DoF>,
    pub cost: Option<f64>,
    /// Pose the refinement started from (DE best or KPM prediction).
    pub start: Option<Pose6DoF>,
    pub initialization_evaluations: usize,
    pub stages: Vec<StageReport>,
    /// Kinematic route that was retried globally; evaluations of both attempts are counted.
    #[serde(default)]
    pub fell_back: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl BoneRegistration {
    pub fn evaluations(&self) -> usize {
        self.initialization_evaluations + self.stages.iter().map(|s| s.evaluations).sum::<usize>()
    }

    pub fn succeeded(&self) -> bool {
        self.pose.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub frame: usize,
    pub bones: Vec<BoneRegistration>,
    /// Set when any bone failed.
    pub flagged: bool,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RegistrationResult {
    pub fn bone(&self, bone: Bone) -> Option<&BoneRegistration> {
        self.bones.iter().find(|b| b.bone == bone)
    }

    pub fn pose(&self, bone: Bone) -> Option<Pose6DoF> {
        self.bone(bone).and_then(|b| b.pose)
    }

    pub fn evaluations(&self) -> usize {
        self.bones.iter().map(|b| b.evaluations()).sum()
    }
}

/// Seed for one bone in one frame, independent of processing order.
fn bone_seed(base: u64, frame: usize, bone: Bone) -> u64 {
    let idx = Bone::ALL.iter().position(|b| *b == bone).unwrap_or(0) as u64;
    base ^ ((frame as u64) << 8 | idx).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Registers one bone against its segmented image, via the kinematic route
/// when a prior is given and enabled, else via global initialization.
/// Failures are captured in the result rather than returned.
pub fn register_bone(
    fixed: &Image2D,
    model: &BoneModel,
    g: &ProjectionGeometry,
    prior: Option<&KpmState>,
    cfg: &RegistrationConfig,
    frame: usize,
) -> BoneRegistration {
    let t = Instant::now();
    let prior = prior.filter(|_| cfg.kpm.enabled);
    let route = if prior.is_some() {
        Route::Kinematic
    } else {
        Route::Global
    };
    let global = || -> Result<(usize, Pose6DoF, RefineResult)> {
        let seed = bone_seed(cfg.de.seed, frame, model.bone);
        let init = initialize_global(fixed, model, g, cfg, seed)?;
        let r = refine_local(fixed, model, g, &init.pose, &init.bounds, cfg)?;
        Ok((init.evaluations, init.pose, r))
    };
    let mut fell_back = false;
    let outcome = match prior {
        Some(state) => (|| {
            let (start, bounds) = kpm_predict(state, cfg)?;
            let r = refine_local(fixed, model, g, &start, &bounds, cfg)?;
            match cfg.kpm.fallback_cost {
                Some(limit) if r.cost > limit => {
                    fell_back = true;
                    let kin_evals: usize = r.stages.iter().map(|s| s.evaluations).sum();
                    let (init_evals, gstart, gr) = global()?;
                    let evals = init_evals + kin_evals;
                    Ok(if gr.cost < r.cost {
                        (evals, gstart, gr)
                    } else {
                        (evals, start, r)
                    })
                }
                _ => Ok((0, start, r)),
            }
        })(),
        None => global(),
    };
    let mut out = BoneRegistration {
        bone: model.bone,
        route,
        pose: None,
        cost: None,
        start: None,
        initialization_evaluations: 0,
        stages: Vec::new(),
        fell_back,
        error: None,
        wall_time_s: 0.0,
    };
    match outcome {
        Ok((init_evals, start, r)) => {
            out.pose = Some(r.pose);
            out.cost = Some(r.cost);
            out.start = Some(start);
            out.initialization_evaluations = init_evals;
            out.stages = r.stages;
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out.wall_time_s = t.elapsed().as_secs_f64();
    out
}

/// Registers every bone of the frame independently. A bone that fails is
/// reported with its error and flags the frame.
pub fn register_frame(
    frame: &FixedFrame,
    anatomy: &Anatomy,
    g: &ProjectionGeometry,
    priors: &BTreeMap<Bone, KpmState>,
    cfg: &RegistrationConfig,
    index: usize,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    g.validate()?;
    let clock = Instant::now();
    let bones: Vec<BoneRegistration> = anatomy
        .models
        .par_iter()
        .map(|model| match frame.for_bone(model.bone) {
            Ok(img) => register_bone(img, model, g, priors.get(&model.bone), cfg, index),
            Err(e) => BoneRegistration {
                bone: model.bone,
                route: if priors.contains_key(&model.bone) && cfg.kpm.enabled {
                    Route::Kinematic
                } else {
                    Route::Global
                },
                pose: None,
                cost: None,
                start: None,
                initialization_evaluations: 0,
                stages: Vec::new(),
                fell_back: false,
                error: Some(e.to_string()),
                wall_time_s: 0.0,
            },
        })
        .collect();
    let flagged = bones.iter().any(|b| !b.succeeded());
    Ok(RegistrationResult {
        frame: index,
        bones,
        flagged,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub frames: Vec<RegistrationResult>,
    /// Kinematic state handed to each frame (empty where the global route ran).
    pub kpm_states: Vec<BTreeMap<Bone, KpmState>>,
}

impl SequenceResult {
    pub fn poses(&self, bone: Bone) -> Vec<Option<Pose6DoF>> {
        self.frames.iter().map(|f| f.pose(bone)).collect()
    }
}

/// World medial-lateral axis given the tibia's pose, falling back to the beam
/// direction when the anatomy has no plateau landmarks or no tibia.
pub fn flexion_axis(anatomy: &Anatomy, tibia_pose: Option<&Pose6DoF>, g: &ProjectionGeometry) -> [f64; 3] {
    let local = anatomy
        .landmarks
        .as_ref()
        .map(|l| l.medial_lateral_axis())
        .unwrap_or_else(|| g.normal());
    let world = match tibia_pose {
        Some(p) => p.rotation() * local,
        None => local,
    };
    let w = world.normalize();
    [w.x, w.y, w.z]
}

/// Registers frames in order, threading the kinematic state per bone.
pub fn track_sequence(
    frames: &[FixedFrame],
    anatomy: &Anatomy,
    g: &ProjectionGeometry,
    cfg: &RegistrationConfig,
) -> Result<SequenceResult> {
    if frames.is_empty() {
        return Err(Error::Config("sequence has no frames".into()));
    }
    cfg.validate()?;
    // last good pose per bone and whether it came from the immediately preceding frame
    let mut last: BTreeMap<Bone, (Pose6DoF, Option<[f64; 6]>)> = BTreeMap::new();
    let mut results = Vec::with_capacity(frames.len());
    let mut states = Vec::with_capacity(frames.len());
    let mut tibia_pose: Option<Pose6DoF> = None;
    for (i, frame) in frames.iter().enumerate() {
        let axis = flexion_axis(anatomy, tibia_pose.as_ref(), g);
        let priors: BTreeMap<Bone, KpmState> = if cfg.kpm.enabled {
            last.iter()
                .map(|(&b, (pose, velocity))| {
                    (
                        b,
                        KpmState {
                            previous: *pose,
                            velocity: *velocity,
                            flexion_axis: axis,
                        },
                    )
                })
                .collect()
        } else {
            BTreeMap::new()
        };
        let result = register_frame(frame, anatomy, g, &priors, cfg, i)?;
        for b in &result.bones {
            match (b.pose, last.get(&b.bone)) {
                (Some(pose), Some((prev, _))) => {
                    let v = pose_velocity(prev, &pose);
                    last.insert(b.bone, (pose, Some(v)));
                }
                (Some(pose), None) => {
                    last.insert(b.bone, (pose, None));
                }
                (None, Some((prev, _))) => {
                    // keep the last good pose but forget the velocity
                    let prev = *prev;
                    last.insert(b.bone, (prev, None));
                }
                (None, None) => {}
            }
        }
        if let Some((p, _)) = last.get(&Bone::TibiaFibula) {
            tibia_pose = Some(*p);
        }
        results.push(result);
        states.push(priors);
    }
    Ok(SequenceResult {
        frames: results,
        kpm_states: states,
    })
}
