//! Powell's conjugate-direction method with golden-section line searches.

use serde::{Deserialize, Serialize};

use super::{check_start, sanitize, OptResult};
use crate::error::Result;

const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;
/// 2 - golden ratio: fraction of the larger bracket segment probed each step.
const GOLDEN_SECTION: f64 = 0.381_966_011_250_105;
const MAX_EXPANSIONS: usize = 60;
const MAX_SECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowellOptions {
    /// Stop when an iteration moves no coordinate more than this; line searches use `xtol / 10`.
    pub xtol: f64,
    /// ... and lowers the cost by no more than this.
    pub ftol: f64,
    pub max_iter: usize,
    /// Initial bracketing step along each search direction.
    pub line_step: f64,
}

impl Default for PowellOptions {
    fn default() -> Self {
        Self {
            xtol: 1e-3,
            ftol: 1e-5,
            max_iter: 100,
            line_step: 1.0,
        }
    }
}

/// Minimizes `f(t)` starting from `t = 0` with `f(0) = f0`. Returns `(0, f0)`
/// unless a strictly lower value was found.
fn line_minimize<F: FnMut(f64) -> f64>(mut f: F, f0: f64, step: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (0.0, step);
    let mut fb = f(b);
    let (lo, hi, mut x, mut fx);
    if fb >= f0 {
        let fm = f(-step);
        if fm >= f0 {
            // minimum (if any) is bracketed by [-step, step] around 0
            lo = -step;
            hi = step;
            x = 0.0;
            fx = f0;
        } else {
            b = -step;
            fb = fm;
            let (l, h, bx, fbx) = expand(&mut f, a, b, fb);
            (lo, hi, x, fx) = (l, h, bx, fbx);
        }
    } else {
        let (l, h, bx, fbx) = expand(&mut f, a, b, fb);
        (lo, hi, x, fx) = (l, h, bx, fbx);
    }
    a = lo;
    let mut c = hi;
    for _ in 0..MAX_SECTIONS {
        if c - a <= tol {
            break;
        }
        let u = if c - x > x - a {
            x + GOLDEN_SECTION * (c - x)
        } else {
            x - GOLDEN_SECTION * (x - a)
        };
        let fu = f(u);
        if fu < fx {
            if u > x {
                a = x;
            } else {
                c = x;
            }
            x = u;
            fx = fu;
        } else if u > x {
            c = u;
        } else {
            a = u;
        }
    }
    if fx < f0 {
        (x, fx)
    } else {
        (0.0, f0)
    }
}

/// Walks downhill from `b` (away from `a`) until the cost rises; returns
/// the sorted bracket ends and the interior best point.
fn expand<F: FnMut(f64) -> f64>(f: &mut F, mut a: f64, mut b: f64, mut fb: f64) -> (f64, f64, f64, f64) {
    let mut c = b + GOLDEN_RATIO * (b - a);
    let mut fc = f(c);
    let mut n = 0;
    while fc < fb && n < MAX_EXPANSIONS {
        a = b;
        b = c;
        fb = fc;
        c = b + GOLDEN_RATIO * (b - a);
        fc = f(c);
        n += 1;
    }
    if fc < fb {
        // ran out of expansions; settle on the last point
        b = c;
        fb = fc;
    }
    (a.min(c), a.max(c), b, fb)
}

pub fn powell<F>(cost: F, x0: &[f64], opts: &PowellOptions) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let f0 = cost(x0);
    check_start(x0, f0)?;
    let mut evaluations = 1usize;
    let line_tol = opts.xtol / 10.0;

    let axes = || -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                d
            })
            .collect()
    };
    let mut dirs = axes();
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let search = |x: &mut Vec<f64>, fx: &mut f64, d: &[f64], evaluations: &mut usize| {
        let base = x.clone();
        let (t, ft) = line_minimize(
            |t| {
                *evaluations += 1;
                let p: Vec<f64> = base.iter().zip(d).map(|(b, di)| b + t * di).collect();
                sanitize(cost(&p))
            },
            *fx,
            opts.line_step,
            line_tol,
        );
        if ft < *fx {
            for (xi, di) in x.iter_mut().zip(d) {
                *xi += t * di;
            }
            let drop = *fx - ft;
            *fx = ft;
            drop
        } else {
            0.0
        }
    };

    while iterations < opts.max_iter {
        if iterations > 0 && iterations % n == 0 {
            dirs = axes();
        }
        iterations += 1;
        let x_start = x.clone();
        let f_start = fx;
        let (mut biggest_drop, mut biggest_idx) = (0.0, 0);
        for (i, d) in dirs.clone().iter().enumerate() {
            let drop = search(&mut x, &mut fx, d, &mut evaluations);
            if drop > biggest_drop {
                biggest_drop = drop;
                biggest_idx = i;
            }
        }

        let moved = x
            .iter()
            .zip(&x_start)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if f_start - fx <= opts.ftol && moved <= opts.xtol {
            trace.push(fx);
            converged = true;
            break;
        }

        let delta: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let extrapolated: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
            evaluations += 1;
            let fe = sanitize(cost(&extrapolated));
            if fe < f_start {
                let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - biggest_drop).powi(2)
                    - biggest_drop * (f_start - fe).powi(2);
                if t < 0.0 {
                    let unit: Vec<f64> = delta.iter().map(|v| v / norm).collect();
                    search(&mut x, &mut fx, &unit, &mut evaluations);
                    dirs[biggest_idx] = dirs[n - 1].clone();
                    dirs[n - 1] = unit;
                }
            }
        }
        trace.push(fx);
    }

    Ok(OptResult {
        best: x,
        best_cost: fx,
        evaluations,
        converged,
        iterations,
        trace,
    })
}
