//! Measurement update of one MT with the measurements of one BS: evidence
//! for legacy and new PVAs, the MT message, the PVA update and PVA birth.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::belief::{systematic_resample, MtBelief, MtParticle, PvaBelief, PvaKey};
use crate::association::AssociationMarginals;
use crate::geometry::{wrap_angle, Point};
use crate::measurement::{DetectionModel, LinkModel, Measurement};
use crate::special::{ln_normal, log_sum_exp, softplus};

/// Lower bound on `ln(μ_fa f_fa(z))` and `ln β0`, so that `μ_fa = 0` and
/// `p_d = 1` keep every association problem feasible.
pub const LN_CLUTTER_FLOOR: f64 = -700.0;

/// Smallest distance used when converting a path gain into an amplitude.
const MIN_DISTANCE: f64 = 0.1;

#[inline]
pub fn amplitude_at(gain: f64, distance: f64) -> f64 {
    gain / distance.max(MIN_DISTANCE)
}

/// `ln(p_d(u) f(z | x, y, u))` with `u` derived from the path gain.
#[inline]
pub fn ln_detected_pair(link: &LinkModel, z: &Measurement, x: &MtParticle, y: &Point, gain: f64) -> f64 {
    let u = amplitude_at(gain, (y - x.position).norm());
    link.ln_detected_lhf(z, &x.position, x.heading, y, u)
}

/// `ln(μ_fa f_fa(z_m))` for every measurement.
pub fn ln_clutter(link: &LinkModel, false_alarm_mean: f64, zs: &[Measurement]) -> Vec<f64> {
    zs.iter()
        .map(|z| (false_alarm_mean.ln() + link.ln_lhf_fa(z)).max(LN_CLUTTER_FLOOR))
        .collect()
}

/// Evidence of the legacy PVAs for the association problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LegacyEvidence {
    pub targets: usize,
    pub measurements: usize,
    /// `ln β[k][m]`, row-major; `-inf` when gated out.
    pub ln_beta: Vec<f64>,
    /// `ln β0[k]`.
    pub ln_beta0: Vec<f64>,
    /// `1 - p_d` of every particle of PVA `k` in its paired configuration.
    pub missed: Vec<Vec<f64>>,
    /// `ln(p_d f(z_m | x̃_r, y_k,r))` over the paired particles, for every
    /// pair that passed the gate.
    pub paired: Vec<Option<Vec<f64>>>,
}

impl LegacyEvidence {
    #[inline]
    pub fn index(&self, k: usize, m: usize) -> usize {
        k * self.measurements + m
    }
}

/// Whether measurement `z` could have come from `pva` seen by `mt`.
fn gate(pva: &PvaBelief, mt_mean: &Point, mt_spread: f64, z: &Measurement, link: &LinkModel) -> bool {
    let center = pva.mmse_position();
    let predicted = (center - mt_mean).norm();
    let u = amplitude_at(pva.mmse_gain(), predicted).max(link.gamma);
    let width = 4.0 * (mt_spread + pva.position_spread()) + 6.0 * link.sigma_d(u) + 0.05;
    (z.z_d - predicted).abs() <= width
}

/// Evidence ratios `β` of the legacy PVAs. `pairing[r]` is the MT particle
/// paired with particle `r` of every PVA.
pub fn evaluate_legacy(
    pvas: &[PvaBelief],
    mt: &MtBelief,
    pairing: &[usize],
    zs: &[Measurement],
    ln_clutter: &[f64],
    link: &LinkModel,
) -> LegacyEvidence {
    let (nk, nm) = (pvas.len(), zs.len());
    let mt_mean = mt.mmse_position();
    let mt_spread = mt.position_spread();
    let mut ln_beta = vec![f64::NEG_INFINITY; nk * nm];
    let mut ln_beta0 = Vec::with_capacity(nk);
    let mut missed = Vec::with_capacity(nk);
    let mut paired = vec![None; nk * nm];
    for (k, pva) in pvas.iter().enumerate() {
        let r = pva.existence;
        let n = pva.len() as f64;
        let q: Vec<f64> = match link.detection {
            DetectionModel::Constant(p) => vec![1.0 - p; pva.len()],
            DetectionModel::Amplitude => (0..pva.len())
                .map(|i| {
                    let d = (pva.positions[i] - mt.particles[pairing[i]].position).norm();
                    1.0 - link.detection_prob(amplitude_at(pva.gains[i], d))
                })
                .collect(),
        };
        let mean_missed = q.iter().sum::<f64>() / n;
        missed.push(q);
        ln_beta0.push((1.0 - r + r * mean_missed).max(0.0).ln().max(LN_CLUTTER_FLOOR));
        if r <= 0.0 {
            continue;
        }
        for (m, z) in zs.iter().enumerate() {
            if !gate(pva, &mt_mean, mt_spread, z, link) {
                continue;
            }
            let ell: Vec<f64> = (0..pva.len())
                .map(|i| ln_detected_pair(link, z, &mt.particles[pairing[i]], &pva.positions[i], pva.gains[i]))
                .collect();
            ln_beta[k * nm + m] = r.ln() + log_sum_exp(&ell) - n.ln() - ln_clutter[m];
            paired[k * nm + m] = Some(ell);
        }
    }
    LegacyEvidence {
        targets: nk,
        measurements: nm,
        ln_beta,
        ln_beta0,
        missed,
        paired,
    }
}

/// Importance sample of a potential new PVA for one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthCandidate {
    pub positions: Vec<Point>,
    pub gains: Vec<f64>,
    /// Normalized importance weights.
    pub weights: Vec<f64>,
    /// `ln(μ_n E[f_n p_d f] / (μ_fa f_fa))`; `ξ = 1 + exp(ln_s)`.
    pub ln_s: f64,
}

impl BirthCandidate {
    pub fn ln_xi(&self) -> f64 {
        softplus(self.ln_s)
    }
}

/// Support and density of the new-PVA prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthPrior {
    pub center: Point,
    pub half_width: f64,
    pub max_gain: f64,
}

impl BirthPrior {
    #[inline]
    pub fn ln_density(&self, y: &Point, gain: f64) -> f64 {
        let d = y - self.center;
        if d.x.abs() <= self.half_width && d.y.abs() <= self.half_width && (0.0..=self.max_gain).contains(&gain) {
            -(4.0 * self.half_width * self.half_width).ln() - self.max_gain.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Widening of the birth proposal relative to the measurement noise.
const PROPOSAL_INFLATION: f64 = 1.5;

/// Draws new-PVA particles for every measurement by inverting distance and
/// angle through the paired MT particles, and evaluates the birth weights
/// `ξ` by importance sampling.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_new<R: Rng + ?Sized>(
    zs: &[Measurement],
    mt: &MtBelief,
    pairing: &[usize],
    ln_clutter: &[f64],
    new_pva_mean: f64,
    prior: &BirthPrior,
    link: &LinkModel,
    rng: &mut R,
) -> Vec<BirthCandidate> {
    let n = pairing.len();
    zs.iter()
        .zip(ln_clutter)
        .map(|(z, &ln_fa)| {
            let proxy = z.z_u.max(link.gamma);
            let s_rho = PROPOSAL_INFLATION * link.sigma_d(proxy);
            let s_amp = link.sigma_u(proxy);
            let mut positions = Vec::with_capacity(n);
            let mut gains = Vec::with_capacity(n);
            let mut lw = Vec::with_capacity(n);
            for &idx in pairing {
                let x = &mt.particles[idx];
                let rho = z.z_d + s_rho * rng.sample::<f64, _>(StandardNormal);
                // direction from the VA to the MT
                let (mean_dir, s_dir) = match (z.z_aod, link.sigma_aod(proxy, z.z_aod.unwrap_or(0.0))) {
                    (Some(aod), Some(s)) => (aod, PROPOSAL_INFLATION * s),
                    _ => (
                        wrap_angle(z.z_aoa + x.heading + PI),
                        PROPOSAL_INFLATION * link.sigma_aoa(proxy, z.z_aoa),
                    ),
                };
                let dir = mean_dir + s_dir * rng.sample::<f64, _>(StandardNormal);
                let y = x.position - rho * Point::new(dir.cos(), dir.sin());
                let u = (z.z_u + s_amp * rng.sample::<f64, _>(StandardNormal)).abs();
                let gain = u * rho.max(MIN_DISTANCE);
                // polar to Cartesian and amplitude to gain both contribute 1/ρ
                let ln_q = if rho > MIN_DISTANCE {
                    ln_normal(rho - z.z_d, s_rho) + ln_normal(dir - mean_dir, s_dir) - 2.0 * rho.ln()
                        + (ln_normal(u - z.z_u, s_amp).exp() + ln_normal(u + z.z_u, s_amp).exp()).ln()
                } else {
                    f64::INFINITY
                };
                let ln_prior = prior.ln_density(&y, gain);
                let w = if ln_prior.is_finite() && ln_q.is_finite() {
                    ln_prior + ln_detected_pair(link, z, x, &y, gain) - ln_q
                } else {
                    f64::NEG_INFINITY
                };
                positions.push(y);
                gains.push(gain);
                lw.push(w);
            }
            let lse = log_sum_exp(&lw);
            let ln_s = new_pva_mean.ln() + lse - (n as f64).ln() - ln_fa;
            let weights = if lse.is_finite() {
                lw.iter().map(|l| (l - lse).exp()).collect()
            } else {
                vec![1.0 / n as f64; n]
            };
            BirthCandidate {
                positions,
                gains,
                weights,
                ln_s,
            }
        })
        .collect()
}

/// `ln` of the mean paired likelihood `E[p_d f(z_m)]`, the normalizer of the
/// per-particle messages.
fn ln_mean(ell: &[f64]) -> f64 {
    log_sum_exp(ell) - (ell.len() as f64).ln()
}

/// Log factors of the messages from all legacy PVAs to the MT particles.
///
/// MT particle `i` is paired with particle `i` of each PVA. The message of
/// PVA `k` is `p(a_k=0) + Σ_m p(a_k=m) p_d f(z_m | x_i, y_i) / E[p_d f(z_m)]`.
pub fn mt_log_factors(
    pvas: &[PvaBelief],
    mt: &MtBelief,
    evidence: &LegacyEvidence,
    marginals: &AssociationMarginals,
    zs: &[Measurement],
    link: &LinkModel,
) -> Vec<f64> {
    let n = mt.len();
    let mut lw = vec![0.0; n];
    let mut rho = vec![0.0; n];
    for (k, pva) in pvas.iter().enumerate() {
        let p = &marginals.target[k];
        let active: Vec<usize> = (0..zs.len())
            .filter(|&m| p[m + 1] > 0.0 && evidence.paired[evidence.index(k, m)].is_some())
            .collect();
        if active.is_empty() {
            continue;
        }
        rho.iter_mut().for_each(|v| *v = p[0]);
        for &m in &active {
            let norm = ln_mean(evidence.paired[evidence.index(k, m)].as_ref().expect("active"));
            if !norm.is_finite() {
                continue;
            }
            let z = &zs[m];
            for (i, x) in mt.particles.iter().enumerate() {
                let ell = ln_detected_pair(link, z, x, &pva.positions[i], pva.gains[i]);
                rho[i] += p[m + 1] * (ell - norm).exp();
            }
        }
        for (l, r) in lw.iter_mut().zip(&rho) {
            *l += r.ln();
        }
    }
    lw
}

/// Updates legacy PVA `k`: particle weights from the association-weighted
/// likelihoods, existence from the missed-detection marginal, then
/// resampling.
pub fn update_pva<R: Rng + ?Sized>(
    pva: &mut PvaBelief,
    k: usize,
    evidence: &LegacyEvidence,
    marginals: &AssociationMarginals,
    rng: &mut R,
) {
    let p = &marginals.target[k];
    let r = pva.existence;
    let beta0 = evidence.ln_beta0[k].exp();
    pva.existence = if beta0 > 0.0 {
        (1.0 - p[0] * (1.0 - r) / beta0).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let n = pva.len();
    let missed_scale = if beta0 > 0.0 { p[0] * r / beta0 } else { 0.0 };
    let mut g: Vec<f64> = evidence.missed[k].iter().map(|q| missed_scale * q).collect();
    for m in 0..evidence.measurements {
        if p[m + 1] <= 0.0 {
            continue;
        }
        let Some(ell) = evidence.paired[evidence.index(k, m)].as_ref() else {
            continue;
        };
        let norm = ln_mean(ell);
        if !norm.is_finite() {
            continue;
        }
        for (gi, l) in g.iter_mut().zip(ell) {
            *gi += p[m + 1] * (l - norm).exp();
        }
    }
    let total: f64 = g.iter().zip(&pva.weights).map(|(a, w)| a * w).sum();
    if total > 0.0 && total.is_finite() {
        for (w, a) in pva.weights.iter_mut().zip(&g) {
            *w *= a / total;
        }
        debug_assert!(n > 0);
        pva.resample(rng);
        pva.regularize(rng);
    }
}

/// Turns the birth candidates into new PVAs with existence
/// `p(ā_m = 0) · S / (1 + S)`.
pub fn birth_new_pvas<R: Rng + ?Sized>(
    candidates: Vec<BirthCandidate>,
    marginals: &AssociationMarginals,
    key: impl Fn(usize) -> PvaKey,
    mut next_id: impl FnMut() -> u64,
    rng: &mut R,
) -> Vec<PvaBelief> {
    candidates
        .into_iter()
        .enumerate()
        .map(|(m, c)| {
            let n = c.positions.len();
            let mut idx = systematic_resample(&c.weights, n, rng);
            idx.shuffle(rng);
            let fraction = (c.ln_s - c.ln_xi()).exp();
            PvaBelief {
                id: next_id(),
                key: key(m),
                positions: idx.iter().map(|&i| c.positions[i]).collect(),
                gains: idx.iter().map(|&i| c.gains[i]).collect(),
                weights: vec![1.0 / n as f64; n],
                existence: (marginals.measurement[m][0] * fraction).clamp(0.0, 1.0),
                anchored: false,
            }
        })
        .collect()
}
