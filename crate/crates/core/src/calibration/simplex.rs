//! Box-constrained Nelder-Mead. Every trial vertex is projected back into the
//! box before it is evaluated.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplexConfig {
    pub max_evals: usize,
    /// Stop when the spread of vertex values falls below this (absolute, or
    /// relative to the best value when that is larger).
    pub f_tol: f64,
    /// Also stop once every vertex lies within this box-relative distance of
    /// the best one.
    pub x_tol: f64,
    /// Initial edge length as a fraction of each box width.
    pub initial_step: f64,
    /// Rebuild the simplex around the best point this many times after
    /// convergence; guards against premature collapse.
    pub restarts: usize,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            max_evals: 4000,
            f_tol: 1e-13,
            x_tol: 1e-12,
            initial_step: 0.1,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }
}

pub fn minimize<F>(f: F, start: &[f64], bounds: &Bounds, cfg: &SimplexConfig) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best: Vec<f64> = start.to_vec();
    bounds.project(&mut best);
    let mut best_value = eval(&best, &mut evals);
    let mut converged = false;

    for _round in 0..=cfg.restarts {
        let mut simplex = vec![best.clone()];
        for i in 0..n {
            let mut v = best.clone();
            let step = cfg.initial_step * bounds.width(i);
            // Step inward when the vertex sits on the upper bound.
            v[i] = if v[i] + step <= bounds.upper[i] { v[i] + step } else { v[i] - step };
            bounds.project(&mut v);
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
        converged = false;

        while evals < cfg.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let size = (1..=n)
                .flat_map(|j| (0..n).map(move |i| (j, i)))
                .map(|(j, i)| (simplex[j][i] - simplex[0][i]).abs() / bounds.width(i).max(1e-300))
                .fold(0.0, f64::max);
            if spread.abs() <= cfg.f_tol.max(cfg.f_tol * values[0].abs()) || size <= cfg.x_tol {
                converged = true;
                break;
            }

            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for i in 0..n {
                    centroid[i] += v[i] / n as f64;
                }
            }
            let along = |coef: f64| {
                let mut p: Vec<f64> = (0..n)
                    .map(|i| centroid[i] + coef * (centroid[i] - simplex[n][i]))
                    .collect();
                bounds.project(&mut p);
                p
            };

            let reflected = along(1.0);
            let f_r = eval(&reflected, &mut evals);
            if f_r < values[0] {
                let expanded = along(2.0);
                let f_e = eval(&expanded, &mut evals);
                if f_e < f_r {
                    simplex[n] = expanded;
                    values[n] = f_e;
                } else {
                    simplex[n] = reflected;
                    values[n] = f_r;
                }
            } else if f_r < values[n - 1] {
                simplex[n] = reflected;
                values[n] = f_r;
            } else {
                let (contracted, f_c) = if f_r < values[n] {
                    let p = along(0.5);
                    let fp = eval(&p, &mut evals);
                    (p, fp)
                } else {
                    let p = along(-0.5);
                    let fp = eval(&p, &mut evals);
                    (p, fp)
                };
                if f_c < values[n].min(f_r) {
                    simplex[n] = contracted;
                    values[n] = f_c;
                } else {
                    for j in 1..=n {
                        for i in 0..n {
                            simplex[j][i] = simplex[0][i] + 0.5 * (simplex[j][i] - simplex[0][i]);
                        }
                        values[j] = eval(&simplex[j], &mut evals);
                    }
                }
            }
        }

        let (i_best, &v_best) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty simplex");
        let improved = v_best < best_value;
        if v_best <= best_value {
            best = simplex[i_best].clone();
            best_value = v_best;
        }
        if evals >= cfg.max_evals || (!improved && converged) {
            break;
        }
    }

    SimplexResult {
        x: best,
        value: best_value,
        evals,
        converged,
    }
}
