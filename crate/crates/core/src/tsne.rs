//! Exact t-SNE.
//!
//! Gaussian input affinities with a per-point bandwidth found by bisection
//! on the precision so each conditional distribution has the requested
//! perplexity; symmetrized joint probabilities; Student-t output kernel;
//! KL(P‖Q) minimized by gradient descent with momentum, per-coordinate gains
//! and early exaggeration. O(n²) memory and time per iteration.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::{normal, seeded, stream};

pub const MAX_POINTS: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub min_gain: f64,
    /// Entropy tolerance (nats) of the bandwidth bisection.
    pub entropy_tol: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            min_gain: 0.01,
            entropy_tol: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub points: Vec<[f64; 2]>,
    /// KL(P‖Q) after every iteration, with the un-exaggerated P.
    pub kl_history: Vec<f64>,
    /// Perplexity actually reached by each conditional distribution.
    pub perplexities: Vec<f64>,
    /// Sum of the symmetrized joint affinities.
    pub p_sum: f64,
}

fn squared_distances(data: &[f64], n: usize, dim: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let xi = &data[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let xj = &data[j * dim..(j + 1) * dim];
            let s: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional distribution `P(·|i)` for precision `beta`, written into
/// `row`; returns its Shannon entropy in nats.
fn conditional_row(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (p, &d)) in row.iter_mut().zip(dist).enumerate() {
        *p = if j == i { 0.0 } else { (-(d - min) * beta).exp() };
        sum += *p;
    }
    let mut weighted = 0.0;
    for (p, &d) in row.iter_mut().zip(dist) {
        *p /= sum;
        weighted += *p * (d - min);
    }
    // H = log(sum) + beta * E[d - min]
    sum.ln() + beta * weighted
}

/// Row-wise bisection on the Gaussian precision. Returns the conditional
/// matrix (row `i` is `P(·|i)`) and each row's perplexity.
pub fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64, tol: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut perps = Vec::with_capacity(n);
    for i in 0..n {
        let drow = &dist[i * n..(i + 1) * n];
        let row = &mut p[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = conditional_row(drow, i, beta, row);
        for _ in 0..200 {
            if (h - target).abs() <= tol {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = conditional_row(drow, i, beta, row);
        }
        perps.push(h.exp());
    }
    (p, perps)
}

/// `p_ij = (p_{j|i} + p_{i|j}) / 2n`.
pub fn symmetrize(cond: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
        }
    }
    p
}

fn kl_divergence(p: &[f64], num: &[f64], num_sum: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| {
            let q = (q / num_sum).max(f64::MIN_POSITIVE);
            p * (p / q).ln()
        })
        .sum()
}

/// Student-t numerators `1 / (1 + |y_i − y_j|²)` (zero on the diagonal) and
/// their sum.
fn student_t(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    let mut sum = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    sum
}

/// Embeds `n` row-major `dim`-dimensional points into 2-D.
pub fn tsne(data: &[f64], n: usize, dim: usize, config: &TsneConfig) -> Result<TsneResult> {
    Error::check_len("t-SNE input", n * dim, data.len())?;
    if n > MAX_POINTS {
        return Err(Error::domain(format!("exact t-SNE limited to {MAX_POINTS} points, got {n}")));
    }
    if !(config.perplexity >= 5.0 && config.perplexity < n as f64 / 3.0) {
        return Err(Error::domain(format!(
            "perplexity {} infeasible for {n} points (need 5 <= perplexity < n/3)",
            config.perplexity
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("t-SNE input contains non-finite values"));
    }
    let dist = squared_distances(data, n, dim);
    let (cond, perplexities) = conditional_affinities(&dist, n, config.perplexity, config.entropy_tol);
    drop(dist);
    let p = symmetrize(&cond, n);
    drop(cond);
    let p_sum: f64 = p.iter().sum();

    let mut rng = seeded(config.seed, stream::TSNE);
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [1e-4 * normal(&mut rng), 1e-4 * normal(&mut rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut kl_history: Vec<f64> = Vec::with_capacity(config.iterations);
    let mut learning_rate = config.learning_rate;

    for iter in 0..config.iterations {
        let exaggerating = iter < config.exaggeration_iterations;
        let exag = if exaggerating { config.early_exaggeration } else { 1.0 };
        let momentum = if exaggerating { config.initial_momentum } else { config.final_momentum };
        let num_sum = student_t(&y, &mut num);
        for i in 0..n {
            let mut g = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coeff = (exag * p[i * n + j] - w / num_sum) * w;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                let grad = 4.0 * g[k];
                let gain = &mut gains[i][k];
                *gain = if (grad > 0.0) != (velocity[i][k] > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(config.min_gain)
                };
                velocity[i][k] = momentum * velocity[i][k] - learning_rate * *gain * grad;
            }
        }
        let previous = y.clone();
        for (yi, vi) in y.iter_mut().zip(&velocity) {
            yi[0] += vi[0];
            yi[1] += vi[1];
        }
        // Keep the layout centred.
        let (mx, my) = y.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        for yi in &mut y {
            yi[0] -= mx / n as f64;
            yi[1] -= my / n as f64;
        }
        let num_sum = student_t(&y, &mut num);
        let kl = kl_divergence(&p, &num, num_sum);
        match kl_history.last() {
            // Past the exaggeration phase a step that raises KL is rejected:
            // restore the layout, drop the momentum and halve the step size.
            Some(&last) if !exaggerating && kl > last => {
                y = previous;
                velocity.iter_mut().for_each(|v| *v = [0.0; 2]);
                gains.iter_mut().for_each(|g| *g = [1.0; 2]);
                learning_rate *= 0.5;
                kl_history.push(last);
            }
            _ => kl_history.push(kl),
        }
    }

    Ok(TsneResult {
        points: y,
        kl_history,
        perplexities,
        p_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_infeasible_perplexity() {
        let data = vec![0.0; 30 * 2];
        let cfg = TsneConfig {
            perplexity: 10.0,
            ..TsneConfig::default()
        };
        assert!(tsne(&data, 30, 2, &cfg).is_err());
        let cfg = TsneConfig {
            perplexity: 4.0,
            ..TsneConfig::default()
        };
        assert!(tsne(&data, 30, 2, &cfg).is_err());
    }

    #[test]
    fn bisection_hits_target_perplexity() {
        let n = 40;
        let data: Vec<f64> = (0..n * 3).map(|i| ((i * 7 % 13) as f64).sin()).collect();
        let dist = squared_distances(&data, n, 3);
        let (cond, perps) = conditional_affinities(&dist, n, 8.0, 1e-7);
        for (i, &pp) in perps.iter().enumerate() {
            assert!((pp - 8.0).abs() < 1e-3, "row {i}: {pp}");
            let row_sum: f64 = cond[i * n..(i + 1) * n].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
        let p = symmetrize(&cond, n);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
