//! Weighted, ℓ2-regularized one-vs-all linear models.
//!
//! Each output column solves, independently,
//!
//! ```text
//! min_w  λ‖w‖² + Σ_i c_i · loss(y_i, wᵀx_i)
//! ```
//!
//! over its own working set of instances, using dual coordinate descent
//! (squared hinge) or dual coordinate descent with inner Newton steps
//! (logistic), in the style of LIBLINEAR.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multires::Target;
use crate::sparse::{SparseMatrix, SparseRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    SquaredHinge,
    Logistic,
}

impl Loss {
    /// Loss value for a ±1 label and a raw score.
    pub fn value(self, sign: f64, score: f64) -> f64 {
        match self {
            Loss::SquaredHinge => {
                let m = (1.0 - sign * score).max(0.0);
                m * m
            }
            Loss::Logistic => {
                let z = -sign * score;
                if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative of [`Loss::value`] with respect to the score.
    pub fn derivative(self, sign: f64, score: f64) -> f64 {
        match self {
            Loss::SquaredHinge => {
                let m = 1.0 - sign * score;
                if m > 0.0 {
                    -2.0 * sign * m
                } else {
                    0.0
                }
            }
            Loss::Logistic => -sign * crate::sparse::sigmoid(-sign * score),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub loss: Loss,
    pub lambda: f32,
    /// Stopping tolerance on the largest dual optimality violation.
    pub eps: f64,
    pub max_iter: usize,
    /// Weights with magnitude below this are dropped; 0 keeps all.
    pub prune_threshold: f32,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            loss: Loss::SquaredHinge,
            lambda: 0.5,
            eps: 0.01,
            max_iter: 200,
            prune_threshold: 0.1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(self.eps > 0.0) || self.max_iter == 0 {
            return Err(Error::invalid("solver needs eps > 0 and max_iter >= 1"));
        }
        if !(self.prune_threshold >= 0.0) {
            return Err(Error::invalid("prune threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Trains one weight vector per node. `by_node[j]` lists the shortlisted
/// `(instance, target)` pairs of node `j`. Returns a `K × d` matrix whose
/// row `j` holds node `j`'s weights.
pub fn train_columns(
    features: &SparseMatrix,
    by_node: &[Vec<(u32, Target)>],
    cfg: &SolverConfig,
) -> Result<SparseMatrix> {
    cfg.validate()?;
    let d = features.n_cols();
    let sq_norms: Vec<f64> = (0..features.n_rows())
        .map(|i| features.row(i).1.iter().map(|&v| v as f64 * v as f64).sum())
        .collect();
    let rows: Vec<SparseRow> = by_node
        .par_iter()
        .enumerate()
        .map_init(
            || vec![0f64; d],
            |w, (j, examples)| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let touched = solve_into(features, &sq_norms, examples, cfg, w, &mut rng);
                let mut row: SparseRow = touched
                    .into_iter()
                    .filter_map(|c| {
                        let v = std::mem::take(&mut w[c as usize]) as f32;
                        (v != 0.0 && v.abs() >= cfg.prune_threshold).then_some((c, v))
                    })
                    .collect();
                row.sort_unstable_by_key(|e| e.0);
                row
            },
        )
        .collect();
    if let Some(j) = rows.iter().position(|r| r.iter().any(|e| !e.1.is_finite())) {
        return Err(Error::NonFinite(format!("weights of node {j}")));
    }
    SparseMatrix::from_rows(d, rows)
}

/// Solves one column into the zeroed dense buffer `w` and returns the
/// feature indices it may have written.
fn solve_into(
    features: &SparseMatrix,
    sq_norms: &[f64],
    examples: &[(u32, Target)],
    cfg: &SolverConfig,
    w: &mut [f64],
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let active: Vec<(usize, f64, f64)> = examples
        .iter()
        .filter(|(_, t)| t.weight > 0.0)
        .map(|&(i, t)| (i as usize, t.sign(), t.weight as f64 / (2.0 * cfg.lambda as f64)))
        .collect();
    let mut touched: Vec<u32> = active
        .iter()
        .flat_map(|&(i, _, _)| features.row(i).0.iter().copied())
        .collect();
    touched.sort_unstable();
    touched.dedup();
    if active.is_empty() {
        return touched;
    }
    match cfg.loss {
        Loss::SquaredHinge => dual_cd_squared_hinge(features, sq_norms, &active, cfg, w, rng),
        Loss::Logistic => dual_cd_logistic(features, sq_norms, &active, cfg, w, rng),
    }
    touched
}

fn dot(features: &SparseMatrix, i: usize, w: &[f64]) -> f64 {
    let (c, v) = features.row(i);
    c.iter().zip(v).map(|(&c, &v)| v as f64 * w[c as usize]).sum()
}

fn add_row(features: &SparseMatrix, i: usize, scale: f64, w: &mut [f64]) {
    let (c, v) = features.row(i);
    for (&c, &v) in c.iter().zip(v) {
        w[c as usize] += scale * v as f64;
    }
}

/// `active` holds `(instance, ±1, C_i)` with `C_i = c_i / 2λ`.
fn dual_cd_squared_hinge(
    features: &SparseMatrix,
    sq_norms: &[f64],
    active: &[(usize, f64, f64)],
    cfg: &SolverConfig,
    w: &mut [f64],
    rng: &mut ChaCha8Rng,
) {
    let n = active.len();
    let mut alpha = vec![0f64; n];
    let diag: Vec<f64> = active.iter().map(|&(_, _, c)| 0.5 / c).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.max_iter {
        order.shuffle(rng);
        let mut violation = 0f64;
        for &k in &order {
            let (i, y, _) = active[k];
            let g = y * dot(features, i, w) - 1.0 + diag[k] * alpha[k];
            let pg = if alpha[k] == 0.0 { g.min(0.0) } else { g };
            violation = violation.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[k];
                alpha[k] = (old - g / (sq_norms[i] + diag[k])).max(0.0);
                let delta = (alpha[k] - old) * y;
                if delta != 0.0 {
                    add_row(features, i, delta, w);
                }
            }
        }
        if violation <= cfg.eps {
            break;
        }
    }
}

fn dual_cd_logistic(
    features: &SparseMatrix,
    sq_norms: &[f64],
    active: &[(usize, f64, f64)],
    cfg: &SolverConfig,
    w: &mut [f64],
    rng: &mut ChaCha8Rng,
) {
    const MAX_INNER: usize = 100;
    let n = active.len();
    // alpha[2k] is the dual variable, alpha[2k + 1] = C_k - alpha[2k].
    let mut alpha = vec![0f64; 2 * n];
    for (k, &(i, y, c)) in active.iter().enumerate() {
        alpha[2 * k] = (0.001 * c).min(1e-8);
        alpha[2 * k + 1] = c - alpha[2 * k];
        add_row(features, i, y * alpha[2 * k], w);
    }
    let mut inner_eps = 1e-2;
    let inner_eps_min = cfg.eps.min(1e-8);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.max_iter {
        order.shuffle(rng);
        let mut newton_iters = 0;
        let mut gmax = 0f64;
        for &k in &order {
            let (i, y, c) = active[k];
            let a = sq_norms[i];
            let b = y * dot(features, i, w);
            let (mut ind1, mut ind2, mut sign) = (2 * k, 2 * k + 1, 1.0);
            if 0.5 * a * (alpha[ind2] - alpha[ind1]) + b < 0.0 {
                ind1 = 2 * k + 1;
                ind2 = 2 * k;
                sign = -1.0;
            }
            let alpha_old = alpha[ind1];
            let mut z = alpha_old;
            if c - z < 0.5 * c {
                z *= 0.1;
            }
            let mut gp = a * (z - alpha_old) + sign * b + (z / (c - z)).ln();
            gmax = gmax.max(gp.abs());
            let mut inner = 0;
            while inner <= MAX_INNER {
                if gp.abs() < inner_eps {
                    break;
                }
                let gpp = a + c / (c - z) / z;
                let tmp = z - gp / gpp;
                z = if tmp <= 0.0 { z * 0.1 } else { tmp };
                gp = a * (z - alpha_old) + sign * b + (z / (c - z)).ln();
                newton_iters += 1;
                inner += 1;
            }
            if inner > 0 {
                alpha[ind1] = z;
                alpha[ind2] = c - z;
                add_row(features, i, sign * (z - alpha_old) * y, w);
            }
        }
        if gmax < cfg.eps {
            break;
        }
        if newton_iters <= n / 10 {
            inner_eps = inner_eps_min.max(0.1 * inner_eps);
        }
    }
}

/// Primal objective `λ‖w‖² + Σ c_i loss(y_i, wᵀx_i)` for a dense `w`.
pub fn objective(
    features: &SparseMatrix,
    examples: &[(u32, Target)],
    w: &[f64],
    lambda: f64,
    loss: Loss,
) -> f64 {
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * lambda;
    reg + examples
        .iter()
        .map(|&(i, t)| t.weight as f64 * loss.value(t.sign(), dot(features, i as usize, w)))
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(seed: u64, n: usize, d: usize) -> (SparseMatrix, Vec<(u32, Target)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                (0..d as u32)
                    .filter_map(|j| rng.gen_bool(0.6).then(|| (j, rng.gen_range(-1.0f32..1.0))))
                    .collect()
            })
            .collect();
        let x = SparseMatrix::from_rows(d, rows).unwrap();
        let ex = (0..n as u32)
            .map(|i| {
                (
                    i,
                    Target {
                        node: 0,
                        positive: rng.gen_bool(0.4),
                        weight: rng.gen_range(0.1f32..2.0),
                    },
                )
            })
            .collect();
        (x, ex)
    }

    /// Plain gradient descent to convergence on the primal.
    fn gd_oracle(x: &SparseMatrix, ex: &[(u32, Target)], lambda: f64, loss: Loss) -> f64 {
        let d = x.n_cols();
        let lip: f64 = 2.0 * lambda
            + 2.0 * ex
                .iter()
                .map(|&(i, t)| t.weight as f64 * x.row(i as usize).1.iter().map(|&v| (v * v) as f64).sum::<f64>())
                .sum::<f64>();
        let mut w = vec![0f64; d];
        for _ in 0..50_000 {
            let mut g: Vec<f64> = w.iter().map(|v| 2.0 * lambda * v).collect();
            for &(i, t) in ex {
                let s = dot(x, i as usize, &w);
                let dl = t.weight as f64 * loss.derivative(t.sign(), s);
                add_row(x, i as usize, dl, &mut g);
            }
            for (wj, gj) in w.iter_mut().zip(&g) {
                *wj -= gj / lip;
            }
        }
        objective(x, ex, &w, lambda, loss)
    }

    fn solve_dense(x: &SparseMatrix, ex: &[(u32, Target)], cfg: &SolverConfig) -> Vec<f64> {
        let w = train_columns(x, &[ex.to_vec()], cfg).unwrap();
        let mut dense = vec![0f64; x.n_cols()];
        for (c, v) in w.row_entries(0) {
            dense[c as usize] = v as f64;
        }
        dense
    }

    #[test]
    fn matches_gradient_descent_oracle() {
        for loss in [Loss::SquaredHinge, Loss::Logistic] {
            let (x, ex) = random_problem(3, 8, 3);
            let cfg = SolverConfig {
                loss,
                lambda: 0.5,
                eps: 1e-8,
                max_iter: 5000,
                prune_threshold: 0.0,
                seed: 1,
            };
            let w = solve_dense(&x, &ex, &cfg);
            let ours = objective(&x, &ex, &w, 0.5, loss);
            let oracle = gd_oracle(&x, &ex, 0.5, loss);
            assert!((ours - oracle).abs() < 1e-3, "{loss:?}: {ours} vs {oracle}");
        }
    }

    #[test]
    fn separable_columns_rank_own_positive_first() {
        let x = SparseMatrix::from_rows(2, vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        let t = |node, positive| Target {
            node,
            positive,
            weight: 1.0,
        };
        let by_node = vec![
            vec![(0, t(0, true)), (1, t(0, false))],
            vec![(0, t(1, false)), (1, t(1, true))],
        ];
        let cfg = SolverConfig {
            prune_threshold: 0.0,
            ..Default::default()
        };
        let w = train_columns(&x, &by_node, &cfg).unwrap();
        assert!(w.get(0, 0) > w.get(1, 0));
        assert!(w.get(1, 1) > w.get(0, 1));
    }

    #[test]
    fn strong_regularization_shrinks_weights() {
        let (x, ex) = random_problem(5, 10, 4);
        let mut prev = f64::INFINITY;
        for lambda in [0.1f32, 10.0, 1000.0, 1e5] {
            let cfg = SolverConfig {
                lambda,
                eps: 1e-6,
                max_iter: 2000,
                prune_threshold: 0.0,
                ..Default::default()
            };
            let w = solve_dense(&x, &ex, &cfg);
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn zero_weight_examples_are_ignored() {
        let (x, mut ex) = random_problem(9, 12, 4);
        let cfg = SolverConfig {
            eps: 1e-8,
            max_iter: 5000,
            prune_threshold: 0.0,
            ..Default::default()
        };
        let kept: Vec<_> = ex.iter().copied().filter(|(_, t)| t.positive).collect();
        for (_, t) in ex.iter_mut().filter(|(_, t)| !t.positive) {
            t.weight = 0.0;
        }
        let a = solve_dense(&x, &ex, &cfg);
        let b = solve_dense(&x, &kept, &cfg);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn pruning_drops_small_weights() {
        let (x, ex) = random_problem(2, 30, 6);
        let cfg = SolverConfig {
            prune_threshold: 0.3,
            ..Default::default()
        };
        let w = train_columns(&x, &[ex], &cfg).unwrap();
        assert!(w.values().iter().all(|v| v.abs() >= 0.3));
    }

    #[test]
    fn loss_derivatives_match_finite_differences() {
        for loss in [Loss::SquaredHinge, Loss::Logistic] {
            for &(y, s) in &[(1.0, 0.3), (-1.0, 0.3), (1.0, -2.0), (-1.0, 5.0)] {
                let h = 1e-6;
                let fd = (loss.value(y, s + h) - loss.value(y, s - h)) / (2.0 * h);
                assert!((fd - loss.derivative(y, s)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let x = SparseMatrix::zeros(1, 1);
        let cfg = SolverConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(train_columns(&x, &[], &cfg).is_err());
    }
}
