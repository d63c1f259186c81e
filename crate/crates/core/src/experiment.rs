//! Reproducible experiments: config, on-disk layout and the command runners
//! behind the `kneereg` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::anatomy::{Anatomy, FixedFrame};
use crate::error::{Error, Result};
use crate::evaluation::{format_table, summarize, MetricSummary, TrialRecord, DEFAULT_THRESHOLD_MM};
use crate::geometry::Pose6DoF;
use crate::kinematics::{build_report, KinematicReport, PlateauMode};
use crate::projector::{
    add_poisson_noise, load_geometry, load_image, save_geometry, save_image, ImageKind, ProjectionGeometry,
};
use crate::registration::{register_bone, register_frame, track_sequence, BoneRegistration, RegistrationConfig, RegistrationResult, Route, SequenceResult};
use crate::simulation::{flexion_trajectory, render_frames, sample_trials, FramePoses, NoiseConfig, TrajectoryConfig, TrialSpec};
use crate::volume::{
    load_mask, load_volume, make_knee_phantom, save_mask, save_volume, Bone, KneeLandmarks, PhantomConfig,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Directory holding `volume.vol`, `<bone>.mask` and `landmarks.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PathBuf>,
    /// Directory holding frame images, `geometry.json` and `ground_truth.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    /// Tracking result to evaluate or report on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequence: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

/// Randomized single-frame benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub count: usize,
    pub bones: Vec<Bone>,
    pub max_translation_mm: f64,
    pub max_rotation_deg: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            count: 50,
            bones: vec![Bone::Femur],
            max_translation_mm: 10.0,
            max_rotation_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed; overrides the seeds of every stochastic stage.
    pub seed: u64,
    pub paths: Paths,
    pub phantom: PhantomConfig,
    pub geometry: ProjectionGeometry,
    pub registration: RegistrationConfig,
    pub trajectory: TrajectoryConfig,
    /// Photons per pixel for Poisson noise on rendered frames; none for noiseless.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_photons: Option<f64>,
    pub threshold_mm: f64,
    pub plateau_mode: PlateauMode,
    pub trials: TrialConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            phantom: PhantomConfig::default(),
            geometry: ProjectionGeometry::default(),
            registration: RegistrationConfig::default(),
            trajectory: TrajectoryConfig::default(),
            noise_photons: None,
            threshold_mm: DEFAULT_THRESHOLD_MM,
            plateau_mode: PlateauMode::default(),
            trials: TrialConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the master seed into every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.registration.de.seed = seed;
        self.trajectory.seed = seed;
        self
    }

    pub fn noise(&self) -> Option<NoiseConfig> {
        self.noise_photons.map(|photons_per_pixel| NoiseConfig {
            photons_per_pixel,
            seed: self.seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.geometry.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.threshold_mm > 0.0) {
            return Err(Error::Config("threshold must be positive".into()));
        }
        if let Some(p) = self.noise_photons {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Config("noise photons must be positive".into()));
            }
        }
        Ok(())
    }
}

/// True for errors caused by the configuration rather than the data.
pub fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::PhantomConfig(_))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

// ---- on-disk layout ----

pub const VOLUME_FILE: &str = "volume.vol";
pub const LANDMARKS_FILE: &str = "landmarks.json";
pub const GEOMETRY_FILE: &str = "geometry.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const SEQUENCE_FILE: &str = "sequence.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLE_FILE: &str = "metrics.txt";
pub const KINEMATICS_CSV: &str = "kinematics.csv";
pub const KINEMATICS_JSON: &str = "kinematics.json";
pub const RUN_FILE: &str = "run.json";

pub fn mask_file(bone: Bone) -> String {
    format!("{bone}.mask")
}

pub fn frame_image_file(frame: usize, bone: Bone) -> String {
    format!("frame_{frame:03}_{bone}.drr")
}

pub fn frame_mask_file(frame: usize, bone: Bone) -> String {
    format!("frame_{frame:03}_{bone}.mask")
}

pub fn save_phantom_files(cfg: &PhantomConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let ph = make_knee_phantom(cfg)?;
    create_dir(dir)?;
    let mut written = vec![dir.join(VOLUME_FILE)];
    save_volume(&ph.volume, &written[0])?;
    for m in &ph.masks {
        let p = dir.join(mask_file(m.bone()));
        save_mask(m, &p)?;
        written.push(p);
    }
    let lm = dir.join(LANDMARKS_FILE);
    write_json(&lm, &ph.landmarks)?;
    written.push(lm);
    Ok(written)
}

/// Anatomy from a phantom directory. Masks that are absent are skipped;
/// landmarks are optional.
pub fn load_anatomy(dir: &Path) -> Result<Anatomy> {
    let volume = load_volume(&dir.join(VOLUME_FILE))?;
    let mut masks = Vec::new();
    for bone in Bone::ALL {
        let p = dir.join(mask_file(bone));
        if p.exists() {
            masks.push(load_mask(&p, bone)?);
        }
    }
    let lm_path = dir.join(LANDMARKS_FILE);
    let landmarks: Option<KneeLandmarks> = if lm_path.exists() {
        Some(read_json(&lm_path)?)
    } else {
        None
    };
    Anatomy::new(&volume, &masks, landmarks, None)
}

pub fn save_frames(frames: &[FixedFrame], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (i, f) in frames.iter().enumerate() {
        for (&bone, img) in &f.bones {
            save_image(img, &dir.join(frame_image_file(i, bone)), ImageKind::Drr)?;
            let mask = img
                .mask
                .as_ref()
                .ok_or_else(|| Error::InvalidImage(format!("frame {i} {bone} image has no mask")))?;
            let mut m = img.clone();
            m.data = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            save_image(&m, &dir.join(frame_mask_file(i, bone)), ImageKind::Mask)?;
        }
    }
    Ok(())
}

/// Loads consecutive frames starting at 0 until the first missing index.
pub fn load_frames(dir: &Path, bones: &[Bone]) -> Result<Vec<FixedFrame>> {
    let mut frames = Vec::new();
    loop {
        let i = frames.len();
        let mut images = BTreeMap::new();
        for &bone in bones {
            let p = dir.join(frame_image_file(i, bone));
            if !p.exists() {
                continue;
            }
            let (img, _) = load_image(&p)?;
            let (mask, _) = load_image(&dir.join(frame_mask_file(i, bone)))?;
            images.insert(bone, img.with_mask(mask.mask.expect("mask image carries a mask"))?);
        }
        if images.is_empty() {
            break;
        }
        frames.push(FixedFrame { bones: images });
    }
    if frames.is_empty() {
        return Err(Error::Config(format!("no frame images in {}", dir.display())));
    }
    Ok(frames)
}

// ---- commands ----

/// Files written by a command and named stage timings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub timings: BTreeMap<String, f64>,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: ExperimentConfig,
    pub outputs: Vec<PathBuf>,
    pub timings_s: BTreeMap<String, f64>,
}

pub struct Workspace {
    pub out: PathBuf,
}

impl Workspace {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn phantom_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.paths.phantom.clone().unwrap_or_else(|| self.out.join("phantom"))
    }

    pub fn frames_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.paths.frames.clone().unwrap_or_else(|| self.out.join("frames"))
    }

    pub fn sequence_path(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.paths.sequence.clone().unwrap_or_else(|| self.out.join(SEQUENCE_FILE))
    }

    pub fn ground_truth_path(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.paths
            .ground_truth
            .clone()
            .unwrap_or_else(|| self.frames_dir(cfg).join(GROUND_TRUTH_FILE))
    }

    pub fn write_run(&self, command: &str, cfg: &ExperimentConfig, out: &CommandOutput) -> Result<PathBuf> {
        let record = RunRecord {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            threads: rayon::current_num_threads(),
            config: cfg.clone(),
            outputs: out.files.clone(),
            timings_s: out.timings.clone(),
        };
        let p = self.out.join(RUN_FILE);
        write_json(&p, &record)?;
        Ok(p)
    }
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f()?;
    timings.insert(name.into(), t.elapsed().as_secs_f64());
    Ok(r)
}

pub fn cmd_phantom(cfg: &ExperimentConfig, ws: &Workspace) -> Result<CommandOutput> {
    let mut out = CommandOutput::default();
    let dir = ws.phantom_dir(cfg);
    out.files = timed(&mut out.timings, "phantom", || save_phantom_files(&cfg.phantom, &dir))?;
    Ok(out)
}

pub fn cmd_simulate(cfg: &ExperimentConfig, ws: &Workspace) -> Result<CommandOutput> {
    cfg.validate()?;
    let mut out = CommandOutput::default();
    let anatomy = timed(&mut out.timings, "load", || load_anatomy(&ws.phantom_dir(cfg)))?;
    let poses = flexion_trajectory(&anatomy, &cfg.trajectory)?;
    let frames = timed(&mut out.timings, "render", || {
        render_frames(&anatomy, &poses, &cfg.geometry, cfg.noise().as_ref())
    })?;
    let dir = ws.frames_dir(cfg);
    save_frames(&frames, &dir)?;
    save_geometry(&cfg.geometry, &dir.join(GEOMETRY_FILE))?;
    write_json(&dir.join(GROUND_TRUTH_FILE), &poses)?;
    for (i, f) in frames.iter().enumerate() {
        for &bone in f.bones.keys() {
            out.files.push(dir.join(frame_image_file(i, bone)));
            out.files.push(dir.join(frame_mask_file(i, bone)));
        }
    }
    out.files.push(dir.join(GEOMETRY_FILE));
    out.files.push(dir.join(GROUND_TRUTH_FILE));
    Ok(out)
}

fn load_inputs(cfg: &ExperimentConfig, ws: &Workspace) -> Result<(Anatomy, ProjectionGeometry, Vec<FixedFrame>)> {
    let anatomy = load_anatomy(&ws.phantom_dir(cfg))?;
    let dir = ws.frames_dir(cfg);
    let gpath = dir.join(GEOMETRY_FILE);
    let g = if gpath.exists() {
        load_geometry(&gpath)?
    } else {
        cfg.geometry
    };
    let frames = load_frames(&dir, &anatomy.bones())?;
    Ok((anatomy, g, frames))
}

/// Registers a single frame with global initialization for every bone.
pub fn cmd_register(cfg: &ExperimentConfig, ws: &Workspace, frame: usize) -> Result<CommandOutput> {
    cfg.validate()?;
    let mut out = CommandOutput::default();
    let (anatomy, g, frames) = timed(&mut out.timings, "load", || load_inputs(cfg, ws))?;
    let f = frames
        .get(frame)
        .ok_or_else(|| Error::Config(format!("frame {frame} not found ({} frames)", frames.len())))?;
    let result = timed(&mut out.timings, "register", || {
        register_frame(f, &anatomy, &g, &BTreeMap::new(), &cfg.registration, frame)
    })?;
    let p = ws.out.join(format!("register_frame_{frame:03}.json"));
    write_json(&p, &result)?;
    out.files.push(p);
    Ok(out)
}

pub fn cmd_track(cfg: &ExperimentConfig, ws: &Workspace) -> Result<CommandOutput> {
    cfg.validate()?;
    let mut out = CommandOutput::default();
    let (anatomy, g, frames) = timed(&mut out.timings, "load", || load_inputs(cfg, ws))?;
    let seq = timed(&mut out.timings, "track", || track_sequence(&frames, &anatomy, &g, &cfg.registration))?;
    for r in &seq.frames {
        out.timings.insert(format!("frame_{:03}", r.frame), r.wall_time_s);
    }
    let p = ws.out.join(SEQUENCE_FILE);
    write_json(&p, &seq)?;
    out.files.push(p);
    Ok(out)
}

/// Registration diagnostics carried next to the metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub frames: usize,
    pub flagged_frames: usize,
    pub kinematic_registrations: usize,
    pub global_registrations: usize,
    pub objective_evaluations: usize,
}

impl Diagnostics {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a RegistrationResult>) -> Self {
        let mut d = Diagnostics::default();
        for r in results {
            d.frames += 1;
            d.flagged_frames += usize::from(r.flagged);
            for b in &r.bones {
                match b.route {
                    Route::Kinematic => d.kinematic_registrations += 1,
                    Route::Global => d.global_registrations += 1,
                }
            }
            d.objective_evaluations += r.evaluations();
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall: MetricSummary,
    pub per_bone: BTreeMap<Bone, MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    pub trials: Vec<TrialRecord>,
}

impl EvaluationReport {
    pub fn new(trials: Vec<TrialRecord>, threshold_mm: f64, diagnostics: Option<Diagnostics>) -> Result<Self> {
        let overall = summarize(&trials, threshold_mm)?;
        let mut per_bone = BTreeMap::new();
        for bone in Bone::ALL {
            let subset: Vec<TrialRecord> = trials.iter().filter(|t| t.bone == bone).cloned().collect();
            if !subset.is_empty() {
                per_bone.insert(bone, summarize(&subset, threshold_mm)?);
            }
        }
        Ok(Self {
            overall,
            per_bone,
            diagnostics,
            trials,
        })
    }

    /// Aligned text table, one row for all trials and one per bone.
    pub fn table(&self) -> String {
        let mut rows = vec![("all".to_string(), self.overall.clone())];
        rows.extend(self.per_bone.iter().map(|(b, s)| (b.to_string(), s.clone())));
        format_table(&rows)
    }

    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let json = dir.join(SUMMARY_FILE);
        write_json(&json, self)?;
        let table = dir.join(TABLE_FILE);
        fs::write(&table, self.table()).map_err(|e| Error::io(&table, e))?;
        Ok(vec![json, table])
    }
}

/// Estimated poses per frame, from either a tracking result or a plain pose list.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub frames: Vec<BTreeMap<Bone, Option<Pose6DoF>>>,
    pub diagnostics: Option<Diagnostics>,
}

impl Estimates {
    pub fn from_sequence(seq: &SequenceResult) -> Self {
        Self {
            frames: seq
                .frames
                .iter()
                .map(|f| f.bones.iter().map(|b| (b.bone, b.pose)).collect())
                .collect(),
            diagnostics: Some(Diagnostics::from_results(&seq.frames)),
        }
    }

    pub fn from_poses(poses: &[FramePoses]) -> Self {
        Self {
            frames: poses
                .iter()
                .map(|f| f.iter().map(|(&b, &p)| (b, Some(p))).collect())
                .collect(),
            diagnostics: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if let Ok(seq) = serde_json::from_str::<SequenceResult>(&text) {
            return Ok(Self::from_sequence(&seq));
        }
        let poses: Vec<FramePoses> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(Self::from_poses(&poses))
    }
}

pub fn evaluate_estimates(
    est: &Estimates,
    gt: &[FramePoses],
    anatomy: &Anatomy,
    threshold_mm: f64,
) -> Result<EvaluationReport> {
    if est.frames.len() != gt.len() {
        return Err(Error::Evaluation(format!(
            "{} estimated frames vs {} ground-truth frames",
            est.frames.len(),
            gt.len()
        )));
    }
    let mut trials = Vec::new();
    for (i, (e, g)) in est.frames.iter().zip(gt).enumerate() {
        for (&bone, &pose) in e {
            let Some(truth) = g.get(&bone) else {
                continue;
            };
            let model = anatomy.model(bone)?;
            trials.push(TrialRecord::new(format!("frame{i:03}"), &model.mask, *truth, pose, threshold_mm)?);
        }
    }
    EvaluationReport::new(trials, threshold_mm, est.diagnostics.clone())
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, ws: &Workspace) -> Result<CommandOutput> {
    cfg.validate()?;
    let mut out = CommandOutput::default();
    let anatomy = load_anatomy(&ws.phantom_dir(cfg))?;
    let est = Estimates::load(&ws.sequence_path(cfg))?;
    let gt: Vec<FramePoses> = read_json(&ws.ground_truth_path(cfg))?;
    let report = timed(&mut out.timings, "evaluate", || {
        evaluate_estimates(&est, &gt, &anatomy, cfg.threshold_mm)
    })?;
    create_dir(&ws.out)?;
    out.files = report.save(&ws.out)?;
    Ok(out)
}

pub fn cmd_kinematics(cfg: &ExperimentConfig, ws: &Workspace) -> Result<CommandOutput> {
    let mut out = CommandOutput::default();
    let anatomy = load_anatomy(&ws.phantom_dir(cfg))?;
    let seq: SequenceResult = read_json(&ws.sequence_path(cfg))?;
    let report: KinematicReport = build_report(&seq, &anatomy, cfg.plateau_mode)?;
    create_dir(&ws.out)?;
    let (csv, json) = (ws.out.join(KINEMATICS_CSV), ws.out.join(KINEMATICS_JSON));
    report.save(&csv, &json)?;
    out.files = vec![csv, json];
    Ok(out)
}

// ---- benchmarks ----

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// One randomized single-frame trial with its registration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub spec: TrialSpec,
    pub record: TrialRecord,
    pub registration: BoneRegistration,
}

/// Renders each trial's bone at its ground-truth pose and registers it from scratch.
pub fn run_trials(
    anatomy: &Anatomy,
    g: &ProjectionGeometry,
    cfg: &RegistrationConfig,
    specs: &[TrialSpec],
    noise: Option<&NoiseConfig>,
    threshold_mm: f64,
) -> Result<Vec<TrialOutcome>> {
    cfg.validate()?;
    specs
        .par_iter()
        .map(|spec| {
            let model = anatomy.model(spec.bone)?;
            let mut fixed = model.render(&spec.ground_truth, g)?;
            if let Some(n) = noise {
                let mask = fixed.mask.clone();
                fixed = add_poisson_noise(&fixed, n.photons_per_pixel, n.seed ^ spec.index as u64)?;
                fixed.mask = mask;
            }
            let registration = register_bone(&fixed, model, g, None, cfg, spec.index);
            let record = TrialRecord::new(
                format!("trial{:03}", spec.index),
                &model.mask,
                spec.ground_truth,
                registration.pose,
                threshold_mm,
            )?;
            Ok(TrialOutcome {
                spec: spec.clone(),
                record,
                registration,
            })
        })
        .collect()
}

/// The randomized single-frame benchmark configured in `cfg.trials`.
pub fn benchmark(cfg: &ExperimentConfig, anatomy: &Anatomy) -> Result<(EvaluationReport, Vec<TrialOutcome>)> {
    cfg.validate()?;
    let t = &cfg.trials;
    let specs = sample_trials(anatomy, &t.bones, t.count, t.max_translation_mm, t.max_rotation_deg, cfg.seed)?;
    let outcomes = run_trials(
        anatomy,
        &cfg.geometry,
        &cfg.registration,
        &specs,
        cfg.noise().as_ref(),
        cfg.threshold_mm,
    )?;
    let report = EvaluationReport::new(
        outcomes.iter().map(|o| o.record.clone()).collect(),
        cfg.threshold_mm,
        None,
    )?;
    Ok((report, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::Anatomy;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default().with_seed(3);
        cfg.geometry = ProjectionGeometry::lateral(600.0, 1000.0, 64, 64, 4.8);
        cfg.trajectory.frames = 2;
        cfg
    }

    #[test]
    fn seed_reaches_every_stage() {
        let cfg = ExperimentConfig::default().with_seed(42);
        assert_eq!(cfg.registration.de.seed, 42);
        assert_eq!(cfg.trajectory.seed, 42);
        assert!(cfg.noise().is_none());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = small_config();
        cfg.noise_photons = Some(1e4);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 5}"#).unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.trials, TrialConfig::default());
    }

    #[test]
    fn invalid_threshold_is_config_error() {
        let mut cfg = small_config();
        cfg.threshold_mm = 0.0;
        assert!(is_config_error(&cfg.validate().unwrap_err()));
    }

    #[test]
    fn phantom_and_frames_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let ws = Workspace::new(dir.path());
        cmd_phantom(&cfg, &ws).unwrap();
        let a = load_anatomy(&ws.phantom_dir(&cfg)).unwrap();
        let ph = make_knee_phantom(&cfg.phantom).unwrap();
        let b = Anatomy::from_phantom(&ph).unwrap();
        assert_eq!(a.background, b.background);
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.bones(), b.bones());

        let out = cmd_simulate(&cfg, &ws).unwrap();
        assert_eq!(out.files.len(), 2 * 3 * 2 + 2);
        let frames = load_frames(&ws.frames_dir(&cfg), &a.bones()).unwrap();
        assert_eq!(frames.len(), 2);
        let gt: Vec<FramePoses> = read_json(&ws.ground_truth_path(&cfg)).unwrap();
        let again = render_frames(&a, &gt, &cfg.geometry, None).unwrap();
        assert_eq!(again, frames);
    }

    #[test]
    fn ground_truth_as_estimate_scores_perfectly() {
        let ph = make_knee_phantom(&PhantomConfig::default()).unwrap();
        let a = Anatomy::from_phantom(&ph).unwrap();
        let gt = flexion_trajectory(&a, &TrajectoryConfig::default()).unwrap();
        let r = evaluate_estimates(&Estimates::from_poses(&gt), &gt, &a, 1.5).unwrap();
        assert_eq!(r.overall.rsr_percent, 100.0);
        assert_eq!(r.overall.mean_tre_mm, 0.0);
        assert_eq!(r.overall.trials, 30);
        assert_eq!(r.per_bone.len(), 3);
    }

    #[test]
    fn frame_count_mismatch_rejected() {
        let ph = make_knee_phantom(&PhantomConfig::default()).unwrap();
        let a = Anatomy::from_phantom(&ph).unwrap();
        let gt = flexion_trajectory(&a, &TrajectoryConfig::default()).unwrap();
        let est = Estimates::from_poses(&gt[..3]);
        assert!(evaluate_estimates(&est, &gt, &a, 1.5).is_err());
    }
}
