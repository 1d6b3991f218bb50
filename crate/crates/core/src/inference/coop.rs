//! Cooperative update of a pair of MTs from their distance measurements.

use rand::Rng;

use super::belief::MtBelief;
use super::update::LN_CLUTTER_FLOOR;
use crate::association::{coop_association, AssociationError};
use crate::measurement::{CoopLinkModel, CoopMeasurement, DetectionModel};
use crate::special::log_sum_exp;

/// Messages exchanged over one MT–MT link.
#[derive(Debug, Clone, PartialEq)]
pub struct CoopMessages {
    /// Association posterior; entry 0 means no measurement is the direct path.
    pub association: Vec<f64>,
    /// Log factors for the particles of the first MT.
    pub first: Vec<f64>,
    /// Log factors for the particles of the second MT.
    pub second: Vec<f64>,
}

fn missed_prob(link: &CoopLinkModel, d: f64) -> f64 {
    match link.detection {
        DetectionModel::Constant(p) => 1.0 - p,
        DetectionModel::Amplitude => 1.0 - link.detection_prob(d),
    }
}

/// `ln(p_d f(z | a, b))` and `1 - p_d` for each index pair.
fn evaluate(
    link: &CoopLinkModel,
    z: &CoopMeasurement,
    a: &MtBelief,
    b: &MtBelief,
    pairs: impl Iterator<Item = (usize, usize)>,
) -> Vec<f64> {
    pairs
        .map(|(i, k)| {
            let (pi, pk) = (&a.particles[i].position, &b.particles[k].position);
            let pd = 1.0 - missed_prob(link, (pi - pk).norm());
            pd.ln() + link.ln_lhf(z, pi, pk)
        })
        .collect()
}

/// Messages of one link computed from the current beliefs. Each particle of
/// one MT is paired with a draw from the other MT's belief.
pub fn coop_messages<R: Rng + ?Sized>(
    first: &MtBelief,
    second: &MtBelief,
    zs: &[CoopMeasurement],
    false_alarm_mean: f64,
    link: &CoopLinkModel,
    rng: &mut R,
) -> Result<CoopMessages, AssociationError> {
    let (n1, n2) = (first.len(), second.len());
    let draw1 = first.draw_indices(rng);
    let draw2 = second.draw_indices(rng);
    let n = n1.min(n2);

    // evidence from jointly drawn pairs
    let ln_missed = {
        let q: f64 = (0..n)
            .map(|r| {
                let d = (first.particles[draw1[r]].position - second.particles[draw2[r]].position).norm();
                missed_prob(link, d)
            })
            .sum::<f64>()
            / n as f64;
        q.ln()
    };
    let ln_norms: Vec<f64> = zs
        .iter()
        .map(|z| {
            let ell = evaluate(link, z, first, second, (0..n).map(|r| (draw1[r], draw2[r])));
            log_sum_exp(&ell) - (n as f64).ln()
        })
        .collect();
    let ln_evidence: Vec<f64> = zs
        .iter()
        .zip(&ln_norms)
        .map(|(z, ln_e)| ln_e - (false_alarm_mean.ln() + link.ln_lhf_fa(z)).max(LN_CLUTTER_FLOOR))
        .collect();
    let top = ln_evidence.iter().copied().fold(ln_missed, f64::max);
    let evidence: Vec<f64> = ln_evidence.iter().map(|l| (l - top).exp()).collect();
    let association = if top == f64::NEG_INFINITY {
        let mut p = vec![0.0; zs.len() + 1];
        p[0] = 1.0;
        p
    } else {
        coop_association(&evidence, (ln_missed - top).exp())?
    };

    let mean_missed = ln_missed.exp();
    let messages = |own: &MtBelief, other: &MtBelief, partner: &[usize], own_is_first: bool| -> Vec<f64> {
        let count = own.len();
        let pair = |r: usize| {
            let s = partner[r % partner.len()];
            if own_is_first {
                (r, s)
            } else {
                (s, r)
            }
        };
        let (a, b) = if own_is_first { (own, other) } else { (other, own) };
        let mut rho: Vec<f64> = (0..count)
            .map(|r| {
                let (i, k) = pair(r);
                let d = (a.particles[i].position - b.particles[k].position).norm();
                if mean_missed > 0.0 {
                    association[0] * missed_prob(link, d) / mean_missed
                } else {
                    0.0
                }
            })
            .collect();
        for (m, z) in zs.iter().enumerate() {
            let p = association[m + 1];
            if p <= 0.0 || !ln_norms[m].is_finite() {
                continue;
            }
            let ell = evaluate(link, z, a, b, (0..count).map(pair));
            for (v, l) in rho.iter_mut().zip(&ell) {
                *v += p * (l - ln_norms[m]).exp();
            }
        }
        rho.into_iter().map(f64::ln).collect()
    };
    Ok(CoopMessages {
        first: messages(first, second, &draw2, true),
        second: messages(second, first, &draw1, false),
        association,
    })
}
