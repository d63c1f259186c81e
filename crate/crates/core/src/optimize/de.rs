//! Differential evolution, DE/rand/1/bin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sanitize, BoxBounds, OptResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeOptions {
    pub population: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover probability.
    pub cr: f64,
    pub max_generations: usize,
    pub seed: u64,
    /// Stop early once the population's cost spread falls below this.
    pub tol: f64,
    /// Replaces the first random member, e.g. with an informed seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_member: Option<Vec<f64>>,
}

impl Default for DeOptions {
    fn default() -> Self {
        Self {
            population: 30,
            f: 0.7,
            cr: 0.9,
            max_generations: 100,
            seed: 0,
            tol: 1e-10,
            initial_member: None,
        }
    }
}

fn distinct(rng: &mut ChaCha8Rng, n: usize, exclude: usize) -> [usize; 3] {
    let mut out = [usize::MAX; 3];
    for k in 0..3 {
        loop {
            let c = rng.random_range(0..n);
            if c != exclude && !out[..k].contains(&c) {
                out[k] = c;
                break;
            }
        }
    }
    out
}

/// Population members are evaluated in parallel; all random draws happen
/// sequentially beforehand, so results do not depend on the thread count.
pub fn differential_evolution<F>(cost: F, bounds: &BoxBounds, opts: &DeOptions) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    bounds.validate()?;
    if opts.population < 4 {
        return Err(Error::Config(format!(
            "differential evolution needs a population of at least 4, got {}",
            opts.population
        )));
    }
    if !(opts.f > 0.0 && opts.f <= 2.0) || !(0.0..=1.0).contains(&opts.cr) {
        return Err(Error::Config(format!(
            "invalid DE weights F={} CR={}",
            opts.f, opts.cr
        )));
    }
    let n = bounds.dim();
    let np = opts.population;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            (0..n)
                .map(|d| rng.random_range(bounds.lower[d]..=bounds.upper[d]))
                .collect()
        })
        .collect();
    if let Some(seed) = &opts.initial_member {
        if seed.len() != n || seed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimizer("initial DE member has wrong size or non-finite values".into()));
        }
        pop[0] = bounds.clamp(seed);
    }
    let eval_all = |xs: &[Vec<f64>]| -> Vec<f64> { xs.par_iter().map(|x| sanitize(cost(x))).collect() };
    let mut costs = eval_all(&pop);
    let mut evaluations = np;

    let best_of = |costs: &[f64]| (0..costs.len()).fold(0, |b, i| if costs[i] < costs[b] { i } else { b });
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_generations {
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        if finite.len() == np {
            let (lo, hi) = finite
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &c| (l.min(c), h.max(c)));
            if hi - lo < opts.tol {
                converged = true;
                break;
            }
        }
        iterations += 1;
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let [a, b, c] = distinct(&mut rng, np, i);
                let forced = rng.random_range(0..n);
                let trial: Vec<f64> = (0..n)
                    .map(|d| {
                        let cross: f64 = rng.random();
                        if d == forced || cross < opts.cr {
                            pop[a][d] + opts.f * (pop[b][d] - pop[c][d])
                        } else {
                            pop[i][d]
                        }
                    })
                    .collect();
                bounds.clamp(&trial)
            })
            .collect();
        let trial_costs = eval_all(&trials);
        evaluations += np;
        for (i, (t, tc)) in trials.into_iter().zip(trial_costs).enumerate() {
            if tc <= costs[i] {
                pop[i] = t;
                costs[i] = tc;
            }
        }
        trace.push(costs[best_of(&costs)]);
    }

    let b = best_of(&costs);
    Ok(OptResult {
        best: pop[b].clone(),
        best_cost: costs[b],
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
    fn sphere_six_dimensions() {
        let b = BoxBounds::around(&[0.0; 6], &[5.0; 6]).unwrap();
        let r = differential_evolution(sphere, &b, &DeOptions::default()).unwrap();
        assert!(r.best_cost < 1e-3, "{}", r.best_cost);
        assert!(r.iterations <= 100);
        assert!(b.contains(&r.best));
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rastrigin_most_seeds() {
        let b = BoxBounds::around(&[0.0; 2], &[5.12; 2]).unwrap();
        let wins = (0..5)
            .filter(|&seed| {
                let opts = DeOptions {
                    population: 40,
                    max_generations: 200,
                    seed,
                    ..Default::default()
                };
                differential_evolution(rastrigin, &b, &opts).unwrap().best_cost < 1e-2
            })
            .count();
        assert!(wins >= 4, "{wins}/5");
    }

    #[test]
    fn same_seed_same_result() {
        let b = BoxBounds::around(&[0.0; 3], &[2.0; 3]).unwrap();
        let opts = DeOptions {
            max_generations: 20,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            differential_evolution(rosenbrock, &b, &opts).unwrap(),
            differential_evolution(rosenbrock, &b, &opts).unwrap()
        );
    }

    #[test]
    fn seeded_member_never_regresses() {
        let b = BoxBounds::around(&[0.0; 2], &[5.0; 2]).unwrap();
        let opts = DeOptions {
            max_generations: 3,
            initial_member: Some(vec![1.0, 1.0]),
            ..Default::default()
        };
        let r = differential_evolution(rosenbrock, &b, &opts).unwrap();
        assert!(r.best_cost <= 0.0);
    }

    #[test]
    fn small_population_rejected() {
        let b = BoxBounds::around(&[0.0], &[1.0]).unwrap();
        let opts = DeOptions {
            population: 3,
            ..Default::default()
        };
        assert!(matches!(
            differential_evolution(sphere, &b, &opts),
            Err(Error::Config(_))
        ));
    }
}
