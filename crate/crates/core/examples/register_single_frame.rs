//! Registers one bone against a synthetic radiograph at a random pose:
//! axis seed, differential evolution, then coarse-to-fine refinement.
//!
//!     cargo run --release --example register_single_frame [bone] [seed]
//!
//! `bone` is one of femur, patella, tibia_fibula.

use std::time::Instant;

use kneereg::anatomy::Anatomy;
use kneereg::evaluation::{compute_tre, DEFAULT_TRE_POINTS};
use kneereg::geometry::pose_difference;
use kneereg::projector::ProjectionGeometry;
use kneereg::registration::{initialize_global, refine_local, RegistrationConfig};
use kneereg::simulation::sample_trials;
use kneereg::volume::{make_knee_phantom, Bone, PhantomConfig};

fn main() -> kneereg::Result<()> {
    let mut args = std::env::args().skip(1);
    let bone: Bone = args.next().map(|s| s.parse()).transpose()?.unwrap_or(Bone::Femur);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let anatomy = Anatomy::from_phantom(&make_knee_phantom(&PhantomConfig::default())?)?;
    let g = ProjectionGeometry::default();
    let cfg = RegistrationConfig::default();
    let model = anatomy.model(bone)?;
    let truth = sample_trials(&anatomy, &[bone], 1, 10.0, 10.0, seed)?[0].ground_truth;
    let fixed = model.render(&truth, &g)?;
    println!("{bone} ground truth {:?}", truth.params().map(|v| (v * 100.0).round() / 100.0));

    let tre = |p| compute_tre(&truth, p, &model.mask, DEFAULT_TRE_POINTS);
    let clock = Instant::now();
    let init = initialize_global(&fixed, model, &g, &cfg, seed)?;
    println!(
        "axis seed        TRE {:7.3} mm   cost {:.4}",
        tre(&init.seed)?,
        init.seed_cost
    );
    println!(
        "diff. evolution  TRE {:7.3} mm   cost {:.4}   {} evals, {:.1} s",
        tre(&init.pose)?,
        init.cost,
        init.evaluations,
        clock.elapsed().as_secs_f64()
    );
    let r = refine_local(&fixed, model, &g, &init.pose, &init.bounds, &cfg)?;
    for s in &r.stages {
        println!(
            "refine {}x        cost {:.2e} -> {:.2e}   {} evals, {} rounds",
            s.factor, s.start_cost, s.cost, s.evaluations, s.rounds
        );
    }
    let err = pose_difference(&truth, &r.pose)?;
    println!(
        "final            TRE {:7.4} mm   |dt| ({:.3}, {:.3}, {:.3}) mm  |dr| ({:.3}, {:.3}, {:.3}) deg   {:.1} s",
        tre(&r.pose)?,
        err[0],
        err[1],
        err[2],
        err[3],
        err[4],
        err[5],
        clock.elapsed().as_secs_f64()
    );
    Ok(())
}
