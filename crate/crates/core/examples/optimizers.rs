//! The four derivative-free minimizers on textbook functions.
//!
//!     cargo run --release --example optimizers

use kneereg::optimize::{
    differential_evolution, hybrid_powell_nm, nelder_mead, powell, BoxBounds, DeOptions, HybridOptions,
    NelderMeadOptions, OptResult, PowellOptions,
};

fn rosenbrock(x: &[f64]) -> f64 {
    (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
}

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn report(name: &str, r: &OptResult) {
    let best: Vec<String> = r.best.iter().map(|v| format!("{v:.6}")).collect();
    println!(
        "{name:<14} cost {:.3e}  evals {:5}  iters {:4}  best [{}]",
        r.best_cost,
        r.evaluations,
        r.iterations,
        best.join(", ")
    );
}

fn main() -> kneereg::Result<()> {
    let x0 = [-1.2, 1.0];
    let nm = NelderMeadOptions {
        xtol: 1e-9,
        ftol: 1e-14,
        max_iter: 5000,
        initial_step: vec![0.1, 0.1],
    };
    let pw = PowellOptions {
        xtol: 1e-8,
        ftol: 1e-14,
        max_iter: 500,
        line_step: 0.5,
    };
    println!("Rosenbrock from {x0:?}");
    report("nelder-mead", &nelder_mead(rosenbrock, &x0, &nm)?);
    report("powell", &powell(rosenbrock, &x0, &pw)?);
    let hy = HybridOptions {
        powell: pw,
        nelder_mead: nm,
        ftol: 1e-14,
        max_rounds: 3,
    };
    report("hybrid", &hybrid_powell_nm(rosenbrock, &x0, &hy)?);

    println!("6-D sphere in [-5, 5]^6");
    let bounds = BoxBounds::around(&[0.0; 6], &[5.0; 6])?;
    let de = differential_evolution(sphere, &bounds, &DeOptions::default())?;
    report("diff-evol", &de);
    println!("best cost by generation: {:?}", de.trace.iter().step_by(20).map(|c| format!("{c:.1e}")).collect::<Vec<_>>());
    Ok(())
}
