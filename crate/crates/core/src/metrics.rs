//! Evaluation metrics: OSPA, RMSE, cardinality error and empirical CDFs.

use crate::geometry::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid OSPA parameters: cutoff must be > 0 and order >= 1")]
    InvalidParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OspaParams {
    pub cutoff: f64,
    pub order: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self {
            cutoff: 1.0,
            order: 2.0,
        }
    }
}

/// Minimum-cost assignment of every row to a distinct column for a
/// `rows × cols` cost matrix with `rows <= cols` (Hungarian algorithm with
/// potentials). Returns the column of each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    // 1-based arrays, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// OSPA distance between two finite point sets.
pub fn ospa(x: &[Point], y: &[Point], params: &OspaParams) -> Result<f64, MetricsError> {
    if !(params.cutoff > 0.0 && params.order >= 1.0) {
        return Err(MetricsError::InvalidParams);
    }
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    if large.is_empty() {
        return Ok(0.0);
    }
    let (c, p) = (params.cutoff, params.order);
    let cost: Vec<Vec<f64>> = small
        .iter()
        .map(|a| large.iter().map(|b| (a - b).norm().min(c).powf(p)).collect())
        .collect();
    let assignment = min_cost_assignment(&cost);
    let matched: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    let penalty = c.powf(p) * (large.len() - small.len()) as f64;
    Ok(((matched + penalty) / large.len() as f64).powf(1.0 / p))
}

pub fn rmse(errors: &[f64]) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

pub fn cardinality_error(estimated: usize, truth: usize) -> f64 {
    (estimated as f64 - truth as f64).abs()
}

pub fn mean(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Thresholds of the CDF grid: 0 to 5 m in 1 cm steps.
pub fn cdf_grid() -> Vec<f64> {
    (0..=500).map(|i| i as f64 * 0.01).collect()
}

/// Empirical CDF `P(error <= t)` at each threshold.
pub fn error_cdf(errors: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| (t, sorted.partition_point(|e| *e <= t) as f64 / n))
        .collect())
}
