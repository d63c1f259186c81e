//! Powell followed by a warm-started Nelder-Mead, repeated for a few rounds.

use serde::{Deserialize, Serialize};

use super::{check_start, nelder_mead, powell, NelderMeadOptions, OptResult, PowellOptions};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridOptions {
    pub powell: PowellOptions,
    pub nelder_mead: NelderMeadOptions,
    /// A round must lower the cost by more than this to earn another.
    pub ftol: f64,
    pub max_rounds: usize,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            powell: PowellOptions::default(),
            nelder_mead: NelderMeadOptions::default(),
            ftol: 1e-5,
            max_rounds: 3,
        }
    }
}

pub fn hybrid_powell_nm<F>(cost: F, x0: &[f64], opts: &HybridOptions) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64,
{
    let f0 = cost(x0);
    check_start(x0, f0)?;
    let mut best = x0.to_vec();
    let mut best_cost = f0;
    let mut evaluations = 1;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut rounds = 0;

    while rounds < opts.max_rounds.min(3) {
        rounds += 1;
        let round_start = best_cost;
        let p = powell(&cost, &best, &opts.powell)?;
        evaluations += p.evaluations;
        if p.best_cost < best_cost {
            best = p.best;
            best_cost = p.best_cost;
        }
        let nm = nelder_mead(&cost, &best, &opts.nelder_mead)?;
        evaluations += nm.evaluations;
        if nm.best_cost < best_cost {
            best = nm.best;
            best_cost = nm.best_cost;
        }
        trace.push(best_cost);
        if round_start - best_cost <= opts.ftol {
            converged = true;
            break;
        }
    }

    Ok(OptResult {
        best,
        best_cost,
        evaluations,
        converged,
        iterations: rounds,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_functions::*;
    use super::*;

    fn tight() -> HybridOptions {
        HybridOptions {
            powell: PowellOptions {
                xtol: 1e-7,
                ftol: 1e-14,
                max_iter: 500,
                line_step: 0.5,
            },
            nelder_mead: NelderMeadOptions {
                xtol: 1e-8,
                ftol: 1e-14,
                max_iter: 2000,
                initial_step: vec![0.1, 0.1],
            },
            ftol: 1e-14,
            max_rounds: 3,
        }
    }

    #[test]
    fn rosenbrock_optimum() {
        let r = hybrid_powell_nm(rosenbrock, &[-1.2, 1.0], &tight()).unwrap();
        assert!(r.best_cost < 1e-6);
        assert!((r.best[0] - 1.0).abs() < 1e-4 && (r.best[1] - 1.0).abs() < 1e-4, "{r:?}");
        assert!(r.iterations <= 3);
    }

    #[test]
    fn never_worse_than_powell_alone() {
        let opts = HybridOptions::default();
        for start in [[-1.2, 1.0], [2.0, -1.0], [0.3, 0.3]] {
            let p = powell(rastrigin, &start, &opts.powell).unwrap();
            let h = hybrid_powell_nm(rastrigin, &start, &opts).unwrap();
            assert!(h.best_cost <= p.best_cost);
            assert!(h.iterations <= 3);
            assert!(h.trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn round_cap_holds_with_large_request() {
        let opts = HybridOptions {
            max_rounds: 10,
            ftol: -1.0,
            ..Default::default()
        };
        let r = hybrid_powell_nm(sphere, &[1.0, 1.0], &opts).unwrap();
        assert_eq!(r.iterations, 3);
    }
}
