//! Probabilistic data association between legacy PVAs and measurements.
//!
//! A problem is given by the evidence ratios `β[k][m]` (PVA `k` generated
//! measurement `m`), the missed weights `β0[k]` and the new-PVA/false-alarm
//! weights `ξ[m]`. The joint weight of a valid association is
//! `Π_k β[k][a_k] · Π_{m unassigned} ξ[m]`, where `β[k][0]` means `β0[k]`.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssociationError {
    #[error("weights must be finite and non-negative")]
    InvalidWeights,
    #[error("weight table shape does not match the problem size")]
    Shape,
    #[error("exact enumeration is limited to {max} targets and measurements")]
    SizeLimit { max: usize },
    #[error("all association weights are zero")]
    DegenerateEvidence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationProblem {
    targets: usize,
    measurements: usize,
    /// Row-major `targets × measurements`.
    beta: Vec<f64>,
    beta0: Vec<f64>,
    xi: Vec<f64>,
}

impl AssociationProblem {
    pub fn new(beta: Vec<Vec<f64>>, beta0: Vec<f64>, xi: Vec<f64>) -> Result<Self, AssociationError> {
        let targets = beta0.len();
        let measurements = xi.len();
        if beta.len() != targets || beta.iter().any(|r| r.len() != measurements) {
            return Err(AssociationError::Shape);
        }
        let beta: Vec<f64> = beta.into_iter().flatten().collect();
        if beta.iter().chain(&beta0).chain(&xi).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AssociationError::InvalidWeights);
        }
        Ok(Self {
            targets,
            measurements,
            beta,
            beta0,
            xi,
        })
    }

    /// Builds a problem from log weights, rescaling each column jointly with
    /// its `ξ` and then each row jointly with its `β0`. Both rescalings leave
    /// the association marginals unchanged and keep every weight in `[0, 1]`
    /// with `ξ = 1`.
    pub fn from_log(ln_beta: &[f64], ln_beta0: &[f64], ln_xi: &[f64]) -> Result<Self, AssociationError> {
        let targets = ln_beta0.len();
        let measurements = ln_xi.len();
        if ln_beta.len() != targets * measurements {
            return Err(AssociationError::Shape);
        }
        if ln_beta.iter().chain(ln_beta0).chain(ln_xi).any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(AssociationError::InvalidWeights);
        }
        if ln_xi.contains(&f64::NEG_INFINITY) {
            return Err(AssociationError::InvalidWeights);
        }
        let mut lb: Vec<f64> = ln_beta.to_vec();
        for k in 0..targets {
            for m in 0..measurements {
                lb[k * measurements + m] -= ln_xi[m];
            }
        }
        let mut beta = vec![0.0; lb.len()];
        let mut beta0 = vec![0.0; targets];
        for k in 0..targets {
            let row = &lb[k * measurements..(k + 1) * measurements];
            let max = row.iter().copied().fold(ln_beta0[k], f64::max);
            if max == f64::NEG_INFINITY {
                return Err(AssociationError::InvalidWeights);
            }
            beta0[k] = (ln_beta0[k] - max).exp();
            for m in 0..measurements {
                beta[k * measurements + m] = (row[m] - max).exp();
            }
        }
        Ok(Self {
            targets,
            measurements,
            beta,
            beta0,
            xi: vec![1.0; measurements],
        })
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn measurements(&self) -> usize {
        self.measurements
    }

    #[inline]
    pub fn beta(&self, k: usize, m: usize) -> f64 {
        self.beta[k * self.measurements + m]
    }

    pub fn beta0(&self, k: usize) -> f64 {
        self.beta0[k]
    }

    pub fn xi(&self, m: usize) -> f64 {
        self.xi[m]
    }
}

/// Association probabilities.
///
/// `target[k][0]` is the probability that PVA `k` is missed and
/// `target[k][m + 1]` that it generated measurement `m`. Likewise
/// `measurement[m][0]` is the probability that measurement `m` is a new PVA
/// or a false alarm and `measurement[m][k + 1]` that it came from PVA `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMarginals {
    pub target: Vec<Vec<f64>>,
    pub measurement: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaParams {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Weight of the previous message in the damped update.
    pub damping: f64,
}

impl Default for DaParams {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            damping: 0.5,
        }
    }
}

/// The exclusion constraint between the target-oriented variable `a_k` and
/// the measurement-oriented variable `ā_m`. Index 0 means "none".
pub fn exclusion_psi(a_k: usize, m: usize, a_bar_m: usize, k: usize) -> u8 {
    let bad = (a_k == m && a_bar_m != k) || (a_bar_m == k && a_k != m);
    u8::from(!bad)
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    }
}

/// Loopy belief propagation on the bipartite association graph.
pub fn loopy_da(problem: &AssociationProblem, params: &DaParams) -> AssociationMarginals {
    let (nk, nm) = (problem.targets, problem.measurements);
    // nu[k * nm + m]: message from measurement m to target k
    let mut nu = vec![1.0; nk * nm];
    let mut phi = vec![0.0; nk * nm];
    let mut converged = nk == 0 || nm == 0;
    let mut iterations = 0;

    let compute_phi = |nu: &[f64], phi: &mut [f64]| {
        for k in 0..nk {
            let row = k * nm;
            let total: f64 = problem.beta0[k]
                + (0..nm).map(|m| problem.beta[row + m] * nu[row + m]).sum::<f64>();
            for m in 0..nm {
                let denom = total - problem.beta[row + m] * nu[row + m];
                phi[row + m] = if denom > 0.0 {
                    problem.beta[row + m] / denom
                } else if problem.beta[row + m] > 0.0 {
                    f64::MAX
                } else {
                    0.0
                };
            }
        }
    };

    while !converged && iterations < params.max_iterations {
        iterations += 1;
        compute_phi(&nu, &mut phi);
        let mut change: f64 = 0.0;
        for m in 0..nm {
            let total: f64 = problem.xi[m] + (0..nk).map(|k| phi[k * nm + m]).sum::<f64>();
            for k in 0..nk {
                let idx = k * nm + m;
                let denom = total - phi[idx];
                let fresh = if denom > 0.0 { 1.0 / denom } else { 1.0 };
                let new = (1.0 - params.damping) * fresh + params.damping * nu[idx];
                // relative change, invariant under the joint rescalings
                change = change.max((new - nu[idx]).abs() / new.max(f64::MIN_POSITIVE));
                nu[idx] = new;
            }
        }
        converged = change < params.tolerance;
    }
    compute_phi(&nu, &mut phi);

    let target = (0..nk)
        .map(|k| {
            let mut row = Vec::with_capacity(nm + 1);
            row.push(problem.beta0[k]);
            row.extend((0..nm).map(|m| problem.beta[k * nm + m] * nu[k * nm + m]));
            normalize(&mut row);
            row
        })
        .collect();
    let measurement = (0..nm)
        .map(|m| {
            let mut col = Vec::with_capacity(nk + 1);
            col.push(problem.xi[m]);
            col.extend((0..nk).map(|k| phi[k * nm + m].min(f64::MAX / (nk as f64 + 2.0))));
            normalize(&mut col);
            col
        })
        .collect();
    AssociationMarginals {
        target,
        measurement,
        converged,
        iterations,
    }
}

/// Largest `targets` or `measurements` accepted by [`brute_force_da`].
pub const BRUTE_FORCE_MAX: usize = 6;

/// Exact association marginals by enumerating every valid association.
pub fn brute_force_da(problem: &AssociationProblem) -> Result<AssociationMarginals, AssociationError> {
    let (nk, nm) = (problem.targets, problem.measurements);
    if nk > BRUTE_FORCE_MAX || nm > BRUTE_FORCE_MAX {
        return Err(AssociationError::SizeLimit { max: BRUTE_FORCE_MAX });
    }
    let mut target = vec![vec![0.0; nm + 1]; nk];
    let mut measurement = vec![vec![0.0; nk + 1]; nm];
    let mut assignment = vec![0usize; nk];
    let mut used = vec![false; nm];

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        k: usize,
        weight: f64,
        p: &AssociationProblem,
        assignment: &mut [usize],
        used: &mut [bool],
        target: &mut [Vec<f64>],
        measurement: &mut [Vec<f64>],
    ) {
        let (nk, nm) = (p.targets, p.measurements);
        if k == nk {
            let w = weight
                * (0..nm)
                    .filter(|&m| !used[m])
                    .map(|m| p.xi[m])
                    .product::<f64>();
            for (kk, &a) in assignment.iter().enumerate() {
                target[kk][a] += w;
                if a > 0 {
                    measurement[a - 1][kk + 1] += w;
                }
            }
            for (m, row) in measurement.iter_mut().enumerate() {
                if !used[m] {
                    row[0] += w;
                }
            }
            return;
        }
        assignment[k] = 0;
        recurse(k + 1, weight * p.beta0[k], p, assignment, used, target, measurement);
        for m in 0..nm {
            if !used[m] {
                used[m] = true;
                assignment[k] = m + 1;
                recurse(k + 1, weight * p.beta(k, m), p, assignment, used, target, measurement);
                used[m] = false;
            }
        }
        assignment[k] = 0;
    }

    recurse(0, 1.0, problem, &mut assignment, &mut used, &mut target, &mut measurement);
    target.iter_mut().for_each(|r| normalize(r));
    measurement.iter_mut().for_each(|r| normalize(r));
    Ok(AssociationMarginals {
        target,
        measurement,
        converged: true,
        iterations: 0,
    })
}

/// Posterior over which of the cooperative measurements (if any) is the
/// line of sight. Entry 0 is "none".
pub fn coop_association(evidence: &[f64], missed: f64) -> Result<Vec<f64>, AssociationError> {
    if evidence.iter().chain(std::iter::once(&missed)).any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(AssociationError::InvalidWeights);
    }
    let mut p: Vec<f64> = std::iter::once(missed).chain(evidence.iter().copied()).collect();
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(AssociationError::DegenerateEvidence);
    }
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Largest per-row total-variation distance between two sets of marginals.
pub fn max_total_variation(a: &AssociationMarginals, b: &AssociationMarginals) -> f64 {
    let rows = |x: &AssociationMarginals| -> Vec<Vec<f64>> {
        x.target.iter().chain(&x.measurement).cloned().collect()
    };
    rows(a)
        .iter()
        .zip(rows(b).iter())
        .map(|(r, s)| 0.5 * r.iter().zip(s).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
