//! Nelder-Mead downhill simplex with standard coefficients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplexConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Converged once the largest vertex distance from the best vertex drops below this.
    pub tolerance: f64,
    /// Iteration budget shared by the initial run and all restarts.
    pub max_iterations: usize,
    /// Fresh simplexes built around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            tolerance: 1e-4,
            max_iterations: 500,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0` with per-axis initial edge lengths `steps`.
///
/// After each convergence the search restarts around the best vertex, up to
/// `config.restarts` times, and stops early once a restart brings no
/// improvement.
pub fn minimize<F>(mut f: F, x0: &[f64], steps: &[f64], config: &SimplexConfig) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), steps.len(), "one step per dimension");
    let mut best = x0.to_vec();
    let mut best_value = f(&best);
    let mut used = 0;
    let mut converged = false;
    for _ in 0..=config.restarts {
        if used >= config.max_iterations {
            break;
        }
        let run = run_once(
            &mut f,
            &best,
            best_value,
            steps,
            config,
            config.max_iterations - used,
        );
        used += run.iterations;
        converged = run.converged;
        let improved = run.value < best_value;
        if improved {
            best = run.point;
            best_value = run.value;
        }
        if !converged || !improved {
            break;
        }
    }
    SimplexOutcome {
        point: best,
        value: best_value,
        iterations: used,
        converged,
    }
}

fn run_once<F>(
    f: &mut F,
    x0: &[f64],
    f0: f64,
    steps: &[f64],
    cfg: &SimplexConfig,
    budget: usize,
) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    values.push(f0);
    for (i, &step) in steps.iter().enumerate() {
        let mut v = x0.to_vec();
        v[i] += step;
        values.push(f(&v));
        simplex.push(v);
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    while iterations < budget {
        sort_simplex(&mut simplex, &mut values);
        if diameter(&simplex) < cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |coef: f64, out: &mut Vec<f64>| {
            for j in 0..n {
                out[j] = centroid[j] + coef * (centroid[j] - worst[j]);
            }
        };

        along(cfg.reflection, &mut trial);
        let reflected = trial.clone();
        let f_r = f(&reflected);

        if f_r < values[0] {
            along(cfg.reflection * cfg.expansion, &mut trial);
            let f_e = f(&trial);
            if f_e < f_r {
                simplex[n] = trial.clone();
                values[n] = f_e;
            } else {
                simplex[n] = reflected;
                values[n] = f_r;
            }
        } else if f_r < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_r;
        } else {
            let (coef, reference) = if f_r < values[n] {
                (cfg.reflection * cfg.contraction, f_r)
            } else {
                (-cfg.contraction, values[n])
            };
            along(coef, &mut trial);
            let f_c = f(&trial);
            if f_c < reference {
                simplex[n] = trial.clone();
                values[n] = f_c;
            } else {
                let anchor = simplex[0].clone();
                for i in 1..=n {
                    for j in 0..n {
                        simplex[i][j] = anchor[j] + cfg.shrink * (simplex[i][j] - anchor[j]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    sort_simplex(&mut simplex, &mut values);
    SimplexOutcome {
        point: simplex[0].clone(),
        value: values[0],
        iterations,
        converged,
    }
}

/// Stable sort by value so that ties keep the incumbent first.
fn sort_simplex(simplex: &mut Vec<Vec<f64>>, values: &mut Vec<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    *simplex = order.iter().map(|&i| simplex[i].clone()).collect();
    *values = order.iter().map(|&i| values[i]).collect();
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    simplex[1..]
        .iter()
        .map(|v| {
            v.iter()
                .zip(&simplex[0])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}
