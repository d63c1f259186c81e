//! Simulates a 0 to 60 degree flexion sequence and tracks all three bones,
//! with the kinematic prior (default) or with global search every frame.
//!
//!     cargo run --release --example track_sequence [--no-kpm] [--noise PHOTONS]

use std::collections::BTreeMap;

use kneereg::anatomy::Anatomy;
use kneereg::evaluation::{compute_tre, DEFAULT_TRE_POINTS};
use kneereg::projector::ProjectionGeometry;
use kneereg::registration::{track_sequence, RegistrationConfig};
use kneereg::simulation::{flexion_trajectory, render_frames, NoiseConfig, TrajectoryConfig};
use kneereg::volume::{make_knee_phantom, PhantomConfig};

fn main() -> kneereg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let no_kpm = args.iter().any(|a| a == "--no-kpm");
    let noise = args
        .iter()
        .position(|a| a == "--noise")
        .and_then(|i| args.get(i + 1))
        .and_then(|s| s.parse().ok())
        .map(|photons_per_pixel| NoiseConfig {
            photons_per_pixel,
            seed: 1,
        });

    let anatomy = Anatomy::from_phantom(&make_knee_phantom(&PhantomConfig::default())?)?;
    let g = ProjectionGeometry::default();
    let truth = flexion_trajectory(&anatomy, &TrajectoryConfig::default())?;
    let frames = render_frames(&anatomy, &truth, &g, noise.as_ref())?;
    let mut cfg = RegistrationConfig::default();
    cfg.kpm.enabled = !no_kpm;

    let seq = track_sequence(&frames, &anatomy, &g, &cfg)?;
    println!("frame  bone           route       TRE(mm)   evals");
    let mut per_bone: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    for (r, gt) in seq.frames.iter().zip(&truth) {
        for b in &r.bones {
            let tre = match b.pose {
                Some(p) => compute_tre(&gt[&b.bone], &p, &anatomy.model(b.bone)?.mask, DEFAULT_TRE_POINTS)?,
                None => f64::NAN,
            };
            per_bone.entry(b.bone).or_default().push(tre);
            println!(
                "{:5}  {:<13}  {:<10}  {:8.4}  {:6}{}",
                r.frame,
                b.bone.to_string(),
                format!("{:?}", b.route).to_lowercase(),
                tre,
                b.evaluations(),
                if b.fell_back { "  (fell back)" } else { "" }
            );
        }
    }
    for (bone, tres) in per_bone {
        let mean = tres.iter().sum::<f64>() / tres.len() as f64;
        println!("{bone}: mean TRE {mean:.4} mm");
    }
    let evals: Vec<usize> = seq.frames.iter().map(|f| f.evaluations()).collect();
    println!("objective evaluations per frame {evals:?}");
    Ok(())
}
