//! Particle-based sum-product filter for cooperative multipath SLAM.
//!
//! Each step predicts all beliefs, then updates the MTs one after another
//! with the measurements of every BS, feeding the new PVAs of one MT into
//! the map used by the next (map fusion). Cooperative distance measurements
//! are applied last, followed by pruning and estimation.

pub mod belief;
pub mod coop;
pub mod update;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use belief::{
    apply_log_factors, effective_sample_size, systematic_resample, DegenerateWeights, MotionNoise, MtBelief,
    MtParticle, PvaBelief, PvaKey, PvaTransition,
};
pub use coop::{coop_messages, CoopMessages};
pub use update::{
    birth_new_pvas, evaluate_legacy, evaluate_new, ln_clutter, mt_log_factors, update_pva, BirthCandidate,
    BirthPrior, LegacyEvidence,
};

use crate::association::{loopy_da, AssociationMarginals, AssociationProblem, DaParams};
use crate::geometry::Point;
use crate::measurement::{CoopLinkModel, CoopMeasurement, ImuMeasurement, LinkModel, Measurement};
use crate::scenario::{ExperimentToggles, MtState, ScenarioConfig};

/// Everything the filter needs to know about the scenario.
#[derive(Debug, Clone)]
pub struct FilterModel {
    pub toggles: ExperimentToggles,
    pub mobiles: usize,
    pub particles: usize,
    pub dt: f64,
    pub links: Vec<LinkModel>,
    pub coop_link: CoopLinkModel,
    pub bs_positions: Vec<Point>,
    pub false_alarm_mean: f64,
    pub new_pva_mean: f64,
    pub transition: PvaTransition,
    pub motion: MotionNoise,
    pub imu_heading_sigma: f64,
    pub prior: BirthPrior,
    /// Path gain of a line of sight.
    pub los_gain: f64,
    pub confirm_threshold: f64,
    pub prune_threshold: f64,
    pub da: DaParams,
    pub init_position_spread: f64,
    pub init_velocity_spread: f64,
    pub init_heading_spread: f64,
}

impl FilterModel {
    pub fn from_scenario(config: &ScenarioConfig) -> Self {
        let m = &config.model;
        let los_gain = 10f64.powf(config.radio.snr_ref_db / 20.0);
        Self {
            toggles: config.toggles,
            mobiles: config.mobiles.len(),
            particles: config.particles,
            dt: config.dt,
            links: (0..config.base_stations.len()).map(|j| LinkModel::bs(config, j)).collect(),
            coop_link: CoopLinkModel::new(config),
            bs_positions: (0..config.base_stations.len()).map(|j| config.bs_position(j)).collect(),
            false_alarm_mean: m.false_alarm_mean,
            new_pva_mean: m.new_pva_mean,
            transition: PvaTransition {
                survival: m.survival_probability,
                gain_walk: m.amplitude_walk,
                regularization: m.va_regularization,
                reappearance: m.anchor_reappearance,
            },
            motion: MotionNoise {
                accel: m.accel_noise,
                heading_diffusion: m.heading_diffusion_deg.to_radians(),
                gyro: m.imu_gyro_noise_deg.to_radians(),
            },
            imu_heading_sigma: m.imu_heading_noise_deg.to_radians(),
            prior: BirthPrior {
                center: config.birth_center(),
                half_width: config.birth_half_width,
                max_gain: 2.0 * los_gain,
            },
            los_gain,
            confirm_threshold: m.confirm_threshold,
            prune_threshold: m.prune_threshold,
            da: DaParams {
                max_iterations: m.da_max_iterations as usize,
                tolerance: m.da_tolerance,
                damping: m.da_damping,
            },
            init_position_spread: m.init_position_spread,
            init_velocity_spread: m.init_velocity_spread,
            init_heading_spread: m.init_heading_spread_deg.to_radians(),
        }
    }

    pub fn base_stations(&self) -> usize {
        self.links.len()
    }

    /// Map holding the PVAs of BS `bs` used by MT `mt`: one shared map per
    /// BS with fusion, one private map per (BS, MT) pair without.
    pub fn map_slot(&self, bs: usize, mt: usize) -> usize {
        if self.toggles.pva_fusion {
            bs
        } else {
            bs * self.mobiles + mt
        }
    }

    pub fn map_count(&self) -> usize {
        if self.toggles.pva_fusion {
            self.base_stations()
        } else {
            self.base_stations() * self.mobiles
        }
    }

    fn slot_bs(&self, slot: usize) -> usize {
        if self.toggles.pva_fusion {
            slot
        } else {
            slot / self.mobiles
        }
    }
}

/// Measurements of one MT–MT link.
#[derive(Debug, Clone, PartialEq)]
pub struct CoopLink {
    pub first: usize,
    pub second: usize,
    pub measurements: Vec<CoopMeasurement>,
}

/// All measurements available at one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInput {
    /// `bs[i][j]`: measurements of BS `j` taken by MT `i`.
    pub bs: Vec<Vec<Vec<Measurement>>>,
    pub coop: Vec<CoopLink>,
    /// One reading per MT, used only with the IMU toggle.
    pub imu: Option<Vec<ImuMeasurement>>,
}

/// A confirmed PVA.
#[derive(Debug, Clone, PartialEq)]
pub struct VaEstimate {
    pub slot: usize,
    pub bs: usize,
    /// Owning MT of a private map; `None` for a shared map.
    pub mt: Option<usize>,
    pub id: u64,
    pub position: Point,
    pub existence: f64,
}

/// Per-MT health of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MtDiagnostics {
    /// Updates whose particle weights all underflowed.
    pub weight_resets: u32,
    /// At least two confirmed map features were expected and none was
    /// associated.
    pub track_loss: bool,
    /// Association problems that hit the iteration limit.
    pub da_nonconverged: u32,
}

impl MtDiagnostics {
    pub fn diverged(&self) -> bool {
        self.weight_resets > 0 || self.track_loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub step: usize,
    pub mt_estimates: Vec<MtState>,
    pub confirmed: Vec<VaEstimate>,
    pub diagnostics: Vec<MtDiagnostics>,
}

/// Result of updating one MT with one BS.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstepReport {
    pub legacy_before: usize,
    pub measurements: usize,
    pub marginals: AssociationMarginals,
    pub weight_reset: bool,
    /// `ln Π p(a_k = 0)` over confirmed legacy PVAs and their count.
    pub ln_all_missed: f64,
    pub confirmed_targets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub step: usize,
    pub mts: Vec<MtBelief>,
    /// PVA maps indexed by [`FilterModel::map_slot`].
    pub maps: Vec<Vec<PvaBelief>>,
    pub next_id: u64,
}

impl FilterState {
    /// Initial beliefs around the MT start states. Each map starts with the
    /// line-of-sight anchor of its BS. `heading_observations` are the initial
    /// IMU readings, used when the IMU toggle is on.
    pub fn new<R: Rng + ?Sized>(
        model: &FilterModel,
        starts: &[MtState],
        heading_observations: Option<&[ImuMeasurement]>,
        rng: &mut R,
    ) -> Self {
        let mts = starts
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let obs = heading_observations
                    .filter(|_| model.toggles.imu)
                    .map(|z| (z[i].heading, model.imu_heading_sigma));
                MtBelief::initialize(
                    s,
                    model.particles,
                    model.init_position_spread,
                    model.init_velocity_spread,
                    model.init_heading_spread,
                    obs,
                    rng,
                )
            })
            .collect();
        let mut next_id = 0;
        let maps = (0..model.map_count())
            .map(|slot| {
                let bs = model.slot_bs(slot);
                let n = model.particles;
                let gains = (0..n)
                    .map(|_| {
                        let g: f64 = rng.sample(rand_distr::StandardNormal);
                        (model.los_gain * (1.0 + model.transition.gain_walk * g)).max(0.0)
                    })
                    .collect();
                let anchor = PvaBelief {
                    id: next_id,
                    key: PvaKey {
                        bs,
                        birth_step: 0,
                        birth_mt: None,
                        birth_measurement: slot,
                    },
                    positions: vec![model.bs_positions[bs]; n],
                    gains,
                    weights: vec![1.0 / n as f64; n],
                    existence: 1.0,
                    anchored: true,
                };
                next_id += 1;
                vec![anchor]
            })
            .collect();
        Self {
            step: 0,
            mts,
            maps,
            next_id,
        }
    }

    /// Number of non-anchor PVAs in map `slot`.
    pub fn legacy_count(&self, slot: usize) -> usize {
        self.maps[slot].iter().filter(|p| !p.anchored).count()
    }

    /// Prediction of all PVAs and MTs followed by the IMU update. Returns
    /// the MTs whose weights had to be reset.
    pub fn predict<R: Rng + ?Sized>(&mut self, model: &FilterModel, imu: Option<&[ImuMeasurement]>, rng: &mut R) -> Vec<bool> {
        let mut map_rngs = child_rngs(rng, self.maps.len());
        let mut mt_rngs = child_rngs(rng, self.mts.len());
        for (map, rng) in self.maps.iter_mut().zip(&mut map_rngs) {
            for pva in map.iter_mut() {
                pva.predict(&model.transition, rng);
            }
        }
        let imu = imu.filter(|_| model.toggles.imu);
        self.mts
            .iter_mut()
            .zip(&mut mt_rngs)
            .enumerate()
            .map(|(i, (mt, rng))| {
                let z = imu.map(|z| &z[i]);
                mt.predict(z, model.dt, &model.motion, rng);
                match z {
                    Some(z) => mt.imu_update(z, model.imu_heading_sigma).is_err(),
                    None => false,
                }
            })
            .collect()
    }

    /// Updates MT `mt` and the map it uses for BS `bs` with measurements
    /// `zs`, then appends the new PVAs to that map. An empty measurement set
    /// means the BS did not report and leaves everything unchanged.
    pub fn update_with_bs<R: Rng + ?Sized>(
        &mut self,
        model: &FilterModel,
        mt: usize,
        bs: usize,
        zs: &[Measurement],
        rng: &mut R,
    ) -> SubstepReport {
        let link = &model.links[bs];
        let slot = model.map_slot(bs, mt);
        let step = self.step;
        let belief = &self.mts[mt];
        let map = &self.maps[slot];
        if zs.is_empty() {
            return SubstepReport {
                legacy_before: map.len(),
                measurements: 0,
                marginals: all_missed(map.len(), 0),
                weight_reset: false,
                ln_all_missed: 0.0,
                confirmed_targets: 0,
            };
        }

        let pairing = belief.draw_indices(rng);
        let ln_fa = ln_clutter(link, model.false_alarm_mean, zs);
        let evidence = evaluate_legacy(map, belief, &pairing, zs, &ln_fa, link);
        let candidates = evaluate_new(zs, belief, &pairing, &ln_fa, model.new_pva_mean, &model.prior, link, rng);
        let ln_xi: Vec<f64> = candidates.iter().map(BirthCandidate::ln_xi).collect();
        let marginals = match AssociationProblem::from_log(&evidence.ln_beta, &evidence.ln_beta0, &ln_xi) {
            Ok(problem) => loopy_da(&problem, &model.da),
            Err(_) => all_missed(map.len(), zs.len()),
        };

        let (mut ln_all_missed, mut confirmed_targets) = (0.0, 0);
        for (k, pva) in map.iter().enumerate() {
            if pva.existence > model.confirm_threshold {
                ln_all_missed += marginals.target[k][0].ln();
                confirmed_targets += 1;
            }
        }

        let factors = mt_log_factors(map, belief, &evidence, &marginals, zs, link);
        let weight_reset = self.mts[mt].apply_log_factors(&factors).is_err();
        self.mts[mt].resample_if_needed(rng);

        let legacy_before = self.maps[slot].len();
        for (k, pva) in self.maps[slot].iter_mut().enumerate() {
            update_pva(pva, k, &evidence, &marginals, rng);
        }
        let next_id = &mut self.next_id;
        let born = birth_new_pvas(
            candidates,
            &marginals,
            |m| PvaKey {
                bs,
                birth_step: step,
                birth_mt: Some(mt),
                birth_measurement: m,
            },
            || {
                *next_id += 1;
                *next_id - 1
            },
            rng,
        );
        self.maps[slot].extend(born);

        SubstepReport {
            legacy_before,
            measurements: zs.len(),
            marginals,
            weight_reset,
            ln_all_missed,
            confirmed_targets,
        }
    }

    /// Cooperative update of all links. Messages are computed from the
    /// beliefs before any of them is applied. Returns per-MT weight resets.
    pub fn update_coop<R: Rng + ?Sized>(&mut self, model: &FilterModel, links: &[CoopLink], rng: &mut R) -> Vec<u32> {
        let mut resets = vec![0; self.mts.len()];
        if !model.toggles.coop {
            return resets;
        }
        // each link draws from its own stream keyed by its endpoints, so the
        // result does not depend on the order of `links`
        let base: u64 = rng.random();
        let mut factors: Vec<Option<Vec<f64>>> = vec![None; self.mts.len()];
        let add = |slot: &mut Option<Vec<f64>>, f: Vec<f64>| match slot {
            Some(acc) => acc.iter_mut().zip(&f).for_each(|(a, b)| *a += b),
            None => *slot = Some(f),
        };
        for link in links {
            if link.first == link.second || link.measurements.is_empty() {
                continue;
            }
            let mut link_rng = ChaCha8Rng::seed_from_u64(base);
            link_rng.set_stream((link.first * self.mts.len() + link.second) as u64);
            let msg = coop_messages(
                &self.mts[link.first],
                &self.mts[link.second],
                &link.measurements,
                model.false_alarm_mean,
                &model.coop_link,
                &mut link_rng,
            );
            if let Ok(msg) = msg {
                add(&mut factors[link.first], msg.first);
                add(&mut factors[link.second], msg.second);
            }
        }
        for (i, f) in factors.into_iter().enumerate() {
            if let Some(f) = f {
                if self.mts[i].apply_log_factors(&f).is_err() {
                    resets[i] += 1;
                }
                self.mts[i].resample_if_needed(rng);
            }
        }
        resets
    }

    /// Removes unlikely PVAs and reports the confirmed ones. Anchors are
    /// neither pruned nor reported.
    pub fn confirm_prune(&mut self, model: &FilterModel) -> Vec<VaEstimate> {
        let mut confirmed = Vec::new();
        for (slot, map) in self.maps.iter_mut().enumerate() {
            map.retain(|p| p.anchored || p.existence >= model.prune_threshold);
            for p in map.iter().filter(|p| !p.anchored && p.existence > model.confirm_threshold) {
                confirmed.push(VaEstimate {
                    slot,
                    bs: model.slot_bs(slot),
                    mt: (!model.toggles.pva_fusion).then(|| slot % model.mobiles),
                    id: p.id,
                    position: p.mmse_position(),
                    existence: p.existence,
                });
            }
        }
        confirmed
    }

    /// One full filter step.
    pub fn step<R: Rng + ?Sized>(&mut self, model: &FilterModel, input: &StepInput, rng: &mut R) -> StepOutput {
        self.step += 1;
        let mut diagnostics = vec![MtDiagnostics::default(); self.mts.len()];
        let resets = self.predict(model, input.imu.as_deref(), rng);
        for (d, r) in diagnostics.iter_mut().zip(resets) {
            d.weight_resets += r as u32;
        }

        let mut substep_rngs = child_rngs(rng, self.mts.len() * model.base_stations()).into_iter();
        let mut coop_rng = child_rngs(rng, 1).pop().expect("one stream");
        for mt in 0..self.mts.len() {
            let (mut ln_missed, mut confirmed) = (0.0, 0);
            for bs in 0..model.base_stations() {
                let mut rng = substep_rngs.next().expect("one stream per update");
                let zs = input
                    .bs
                    .get(mt)
                    .and_then(|v| v.get(bs))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let report = self.update_with_bs(model, mt, bs, zs, &mut rng);
                let d = &mut diagnostics[mt];
                d.weight_resets += report.weight_reset as u32;
                d.da_nonconverged += (!report.marginals.converged) as u32;
                ln_missed += report.ln_all_missed;
                confirmed += report.confirmed_targets;
            }
            diagnostics[mt].track_loss = confirmed >= 2 && ln_missed > 0.5f64.ln();
        }

        for (d, r) in diagnostics.iter_mut().zip(self.update_coop(model, &input.coop, &mut coop_rng)) {
            d.weight_resets += r;
        }

        let confirmed = self.confirm_prune(model);
        StepOutput {
            step: self.step,
            mt_estimates: self.mts.iter().map(MtBelief::mmse).collect(),
            confirmed,
            diagnostics,
        }
    }
}

/// Independent streams for parts of a step whose random draws must not
/// depend on each other.
fn child_rngs<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<ChaCha8Rng> {
    (0..count).map(|_| ChaCha8Rng::seed_from_u64(rng.random())).collect()
}

/// Marginals of the trivial association in which every PVA is missed and
/// every measurement is new or clutter.
fn all_missed(targets: usize, measurements: usize) -> AssociationMarginals {
    let row = |n: usize| {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        v
    };
    AssociationMarginals {
        target: (0..targets).map(|_| row(measurements)).collect(),
        measurement: (0..measurements).map(|_| row(targets)).collect(),
        converged: true,
        iterations: 0,
    }
}
