//! Randomized single-frame benchmark: poses within +-10 mm / +-10 deg of
//! neutral, registered from scratch and scored by TRE and success rate.
//!
//!     cargo run --release --example evaluate_metrics [trials] [--noise PHOTONS] [--bones femur,patella]

use kneereg::anatomy::Anatomy;
use kneereg::experiment::{benchmark, ExperimentConfig};
use kneereg::volume::{make_knee_phantom, Bone};

fn main() -> kneereg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let flag = |name: &str| args.iter().position(|a| a == name).and_then(|i| args.get(i + 1));
    let mut cfg = ExperimentConfig::default().with_seed(11);
    if let Some(n) = args.first().and_then(|s| s.parse().ok()) {
        cfg.trials.count = n;
    } else {
        cfg.trials.count = 10;
    }
    cfg.noise_photons = flag("--noise").and_then(|s| s.parse().ok());
    if let Some(list) = flag("--bones") {
        cfg.trials.bones = list.split(',').map(str::parse).collect::<kneereg::Result<Vec<Bone>>>()?;
    }

    let anatomy = Anatomy::from_phantom(&make_knee_phantom(&cfg.phantom)?)?;
    let (report, outcomes) = benchmark(&cfg, &anatomy)?;
    for o in &outcomes {
        println!(
            "{}  {:<13} TRE {:8.4} mm  {:>5} evals  {}",
            o.record.label,
            o.spec.bone.to_string(),
            o.record.tre_mm.unwrap_or(f64::NAN),
            o.registration.evaluations(),
            if o.record.success { "ok" } else { "FAIL" }
        );
    }
    println!();
    print!("{}", report.table());
    println!(
        "median TRE {:.4} mm, RSR {:.1}% at {} mm",
        report.overall.median_tre_mm, report.overall.rsr_percent, report.overall.threshold_mm
    );
    Ok(())
}
