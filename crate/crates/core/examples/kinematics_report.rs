//! Contact kinematics over the simulated flexion sequence: plateau plane,
//! lowest condylar points, medial-lateral difference and its variance.
//! Prints the CSV that the `kinematics` command writes.
//!
//!     cargo run --release --example kinematics_report [--pre-tka] [--varus DEG]

use kneereg::anatomy::Anatomy;
use kneereg::kinematics::{report_from_poses, FramePair, PlateauMode};
use kneereg::simulation::{flexion_trajectory, TrajectoryConfig};
use kneereg::volume::{make_knee_phantom, Bone, PhantomConfig};
use kneereg::Pose6DoF;

fn main() -> kneereg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = if args.iter().any(|a| a == "--pre-tka") {
        PlateauMode::PreTka
    } else {
        PlateauMode::PostTka
    };
    // tilt about the anterior axis lifts one condyle off the plateau
    let varus: f64 = args
        .iter()
        .position(|a| a == "--varus")
        .and_then(|i| args.get(i + 1))
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.0);

    let anatomy = Anatomy::from_phantom(&make_knee_phantom(&PhantomConfig::default())?)?;
    let poses = flexion_trajectory(&anatomy, &TrajectoryConfig::default())?;
    let pairs: Vec<FramePair> = poses
        .iter()
        .enumerate()
        .map(|(frame, p)| {
            let tilt = Pose6DoF::from_params(&[0.0, 0.0, 0.0, 0.0, varus, 0.0], p[&Bone::Femur].pivot);
            Ok(FramePair {
                frame,
                femur: tilt.compose(&p[&Bone::Femur])?,
                tibia: p[&Bone::TibiaFibula],
            })
        })
        .collect::<kneereg::Result<_>>()?;
    let report = report_from_poses(&anatomy, &pairs, mode)?;
    let _ = report.write_csv(std::io::stdout());
    println!();
    println!(
        "DDV {:.6} mm^2, max |MLD| {:.3} mm, malalignment {}",
        report.ddv_mm2,
        report.max_abs_mld_mm,
        if report.malaligned { "yes" } else { "no" }
    );
    Ok(())
}
