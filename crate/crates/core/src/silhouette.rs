//! Mean silhouette coefficient with Euclidean distance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::real::Real;

fn euclidean<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Per-point silhouette values `s(i) = (b − a) / max(a, b)`.
///
/// Requires at least two labels, each with at least two points. A point
/// whose own cluster and nearest other cluster both sit at distance zero has
/// no defined score and makes the whole labeling degenerate.
pub fn silhouette_samples<T: Real, P: AsRef<[T]>, L: Ord + Clone>(points: &[P], labels: &[L]) -> Result<Vec<f64>> {
    Error::check_len("silhouette labels", points.len(), labels.len())?;
    let mut clusters: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        clusters.entry(l.clone()).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(Error::domain("silhouette needs at least two labels"));
    }
    if let Some(small) = clusters.values().find(|m| m.len() < 2) {
        return Err(Error::domain(format!(
            "silhouette needs two points per label; one label has {}",
            small.len()
        )));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::domain("points have differing dimensions"));
    }
    let members: Vec<Vec<usize>> = clusters.into_values().collect();
    let mut cluster_of = vec![0usize; points.len()];
    for (c, m) in members.iter().enumerate() {
        for &i in m {
            cluster_of[i] = c;
        }
    }
    let n = points.len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(points[i].as_ref(), points[j].as_ref());
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for (c, m) in members.iter().enumerate() {
            let sum: f64 = m.iter().map(|&j| row[j]).sum();
            if c == cluster_of[i] {
                a = sum / (m.len() - 1) as f64;
            } else {
                b = b.min(sum / m.len() as f64);
            }
        }
        let denom = a.max(b);
        if denom == 0.0 {
            return Err(Error::Degenerate(format!(
                "point {i} coincides with its own and its nearest other cluster"
            )));
        }
        scores.push((b - a) / denom);
    }
    Ok(scores)
}

/// Mean of [`silhouette_samples`], in [-1, 1].
pub fn silhouette_score<T: Real, P: AsRef<[T]>, L: Ord + Clone>(points: &[P], labels: &[L]) -> Result<f64> {
    let s = silhouette_samples(points, labels)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_separated_blobs_score_high() {
        let mut pts: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            let j = i as f64 * 0.01;
            pts.push(vec![j, -j, 0.0]);
            labels.push(0);
            pts.push(vec![100.0 + j, j, 0.0]);
            labels.push(1);
        }
        assert!(silhouette_score::<f64, _, _>(&pts, &labels).unwrap() > 0.99);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = vec![vec![1.0f64, 1.0]; 4];
        let labels = [0, 0, 1, 1];
        assert!(matches!(silhouette_score::<f64, _, _>(&pts, &labels), Err(Error::Degenerate(_))));
    }

    #[test]
    fn single_label_or_singleton_rejected() {
        let pts = vec![vec![0.0f64], vec![1.0], vec![2.0]];
        assert!(silhouette_score::<f64, _, _>(&pts, &[0, 0, 0]).is_err());
        assert!(silhouette_score::<f64, _, _>(&pts, &[0, 0, 1]).is_err());
    }
}
