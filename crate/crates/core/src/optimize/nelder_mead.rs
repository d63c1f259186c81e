//! Nelder-Mead downhill simplex.

use serde::{Deserialize, Serialize};

use super::{check_start, sanitize, OptResult};
use crate::error::Result;

const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadOptions {
    /// Simplex diameter (max-norm distance to the best vertex) below which we may stop.
    pub xtol: f64,
    /// Cost spread across the simplex below which we may stop.
    pub ftol: f64,
    pub max_iter: usize,
    /// Per-dimension offsets of the initial simplex; empty picks 5% of |x0| (or 2.5e-4).
    pub initial_step: Vec<f64>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            xtol: 1e-3,
            ftol: 1e-5,
            max_iter: 1000,
            initial_step: Vec::new(),
        }
    }
}

fn along(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b - a)
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

pub fn nelder_mead<F>(cost: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let f0 = cost(x0);
    check_start(x0, f0)?;
    let mut evaluations = 1;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        sanitize(cost(x))
    };

    if opts.max_iter == 0 {
        return Ok(OptResult {
            best: x0.to_vec(),
            best_cost: f0,
            evaluations: 1,
            converged: false,
            iterations: 0,
            trace: Vec::new(),
        });
    }

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut costs = vec![f0];
    for i in 0..n {
        let step = match opts.initial_step.get(i) {
            Some(s) => *s,
            None if x0[i].abs() > 1e-8 => 0.05 * x0[i].abs(),
            None => 2.5e-4,
        };
        let mut v = x0.to_vec();
        v[i] += step;
        costs.push(eval(&v));
        simplex.push(v);
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        // stable sort: on equal costs the lower simplex index stays ahead
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        costs = order.iter().map(|&i| costs[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter < opts.xtol && (costs[n] - costs[0]).abs() < opts.ftol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let reflected = along(&centroid, &worst, -REFLECTION);
        let fr = eval(&reflected);

        if fr < costs[0] {
            let expanded = along(&centroid, &worst, -EXPANSION);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                costs[n] = fe;
            } else {
                simplex[n] = reflected;
                costs[n] = fr;
            }
        } else if fr < costs[n - 1] {
            simplex[n] = reflected;
            costs[n] = fr;
        } else {
            let (contracted, fc, accept) = if fr < costs[n] {
                let c = along(&centroid, &reflected, CONTRACTION);
                let fc = eval(&c);
                (c, fc, fc <= fr)
            } else {
                let c = along(&centroid, &worst, CONTRACTION);
                let fc = eval(&c);
                (c, fc, fc < costs[n])
            };
            if accept {
                simplex[n] = contracted;
                costs[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = along(&best, &simplex[i], SHRINK);
                    costs[i] = eval(&simplex[i]);
                }
            }
        }
        trace.push(costs.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    let best_idx = (0..=n).fold(0, |b, i| if costs[i] < costs[b] { i } else { b });
    Ok(OptResult {
        best: simplex[best_idx].clone(),
        best_cost: costs[best_idx],
        evaluations,
        converged,
        iterations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_functions::*;
    use super::*;

    #[test]
    fn sphere_converges() {
        let opts = NelderMeadOptions {
            xtol: 1e-6,
            ftol: 1e-12,
            max_iter: 200,
            initial_step: vec![1.0, 1.0],
        };
        let r = nelder_mead(sphere, &[3.0, 3.0], &opts).unwrap();
        let norm = r.best.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-4, "{r:?}");
        assert!(r.iterations <= 200);
    }

    #[test]
    fn rosenbrock_reaches_optimum() {
        let opts = NelderMeadOptions {
            xtol: 1e-8,
            ftol: 1e-14,
            max_iter: 5000,
            initial_step: vec![0.5, 0.5],
        };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!(r.best_cost < 1e-6, "{r:?}");
        assert!((r.best[0] - 1.0).abs() < 1e-3 && (r.best[1] - 1.0).abs() < 1e-3);
        assert!(r.converged);
    }

    #[test]
    fn zero_budget_returns_start() {
        let opts = NelderMeadOptions {
            max_iter: 0,
            ..Default::default()
        };
        let r = nelder_mead(sphere, &[1.0, 2.0], &opts).unwrap();
        assert_eq!(r.best, vec![1.0, 2.0]);
        assert_eq!(r.best_cost, 5.0);
        assert!(!r.converged);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn non_finite_start_is_error() {
        assert!(nelder_mead(|_| f64::NAN, &[0.0], &Default::default()).is_err());
    }

    #[test]
    fn trace_is_monotone_and_deterministic() {
        let opts = NelderMeadOptions {
            max_iter: 300,
            ..Default::default()
        };
        let a = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        let b = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
