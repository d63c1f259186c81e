//! Builds the analytic knee phantom, renders a lateral radiograph of it and
//! writes the image as a PGM next to a per-bone summary.
//!
//!     cargo run --release --example phantom_and_drr [out.pgm]

use std::io::Write;

use kneereg::anatomy::Anatomy;
use kneereg::projector::{render_drr, ProjectionGeometry};
use kneereg::volume::{make_knee_phantom, PhantomConfig};
use kneereg::Pose6DoF;

fn main() -> kneereg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "knee_lateral.pgm".into());
    let ph = make_knee_phantom(&PhantomConfig::default())?;
    let anatomy = Anatomy::from_phantom(&ph)?;
    let g = ProjectionGeometry::default();
    println!(
        "volume {:?} voxels, detector {}x{} at {} mm, magnification {:.3}",
        ph.volume.grid().dims,
        g.nu,
        g.nv,
        g.pu,
        g.source_to_detector() / 600.0
    );
    for m in &anatomy.models {
        let lo_hi = m.mask.bounding_box().expect("phantom bones are nonempty");
        println!(
            "{:>13}: {:6} voxels, box {:?}..{:?}, pivot ({:.1}, {:.1}, {:.1})",
            m.bone.to_string(),
            m.mask.count(),
            lo_hi.0,
            lo_hi.1,
            m.pivot[0],
            m.pivot[1],
            m.pivot[2]
        );
    }

    let drr = render_drr(&ph.volume, &Pose6DoF::identity([0.0; 3]), &g)?;
    let max = drr.data.iter().fold(0.0f32, |a, &b| a.max(b));
    let mut f = std::fs::File::create(&out).expect("create output image");
    write!(f, "P5\n{} {}\n255\n", drr.nu, drr.nv).expect("write header");
    // detector row 0 is the top of the image
    let pixels: Vec<u8> = drr.data.iter().map(|&x| (255.0 * x / max).round() as u8).collect();
    f.write_all(&pixels).expect("write pixels");
    println!("line-integral range 0..{max:.3}, wrote {out}");
    Ok(())
}
