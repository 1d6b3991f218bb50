//! Seeded Monte-Carlo simulation of one scenario.

use mpslam_core::geometry::{is_visible, Path, Point, Surface};
use mpslam_core::inference::{CoopLink, FilterModel, FilterState, MtDiagnostics, StepInput, VaEstimate};
use mpslam_core::measurement::{
    generate_bs_measurements, generate_coop_measurements, generate_imu, virtual_anchors, CoopLinkModel,
    GeneratorParams, ImuNoise, LinkModel, VirtualAnchor,
};
use mpslam_core::metrics::{ospa, OspaParams};
use mpslam_core::scenario::{rng_stream, ExperimentToggles, MtState, ScenarioConfig, ScenarioError, StreamTag};
use rayon::prelude::*;

/// Everything recorded at one step of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub truth: Vec<MtState>,
    pub estimates: Vec<MtState>,
    pub confirmed: Vec<VaEstimate>,
    pub diagnostics: Vec<MtDiagnostics>,
    /// OSPA averaged over the maps.
    pub ospa: f64,
    /// Cardinality error averaged over the maps.
    pub card_err: f64,
}

impl StepRecord {
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.truth
            .iter()
            .zip(&self.estimates)
            .map(|(t, e)| (t.position - e.position).norm())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: u64,
    pub seed: u64,
    pub toggles: ExperimentToggles,
    pub steps: Vec<StepRecord>,
}

impl RunRecord {
    /// Number of (step, MT) pairs flagged as diverged.
    pub fn divergence_flags(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.diagnostics)
            .filter(|d| d.diverged())
            .count()
    }
}

/// Reflection VAs of `vas` visible from at least one of `mts` within
/// `max_distance`.
fn visible_from(vas: &[VirtualAnchor], mts: &[Point], max_distance: f64, surfaces: &[Surface]) -> Vec<Point> {
    vas.iter()
        .filter(|va| va.path != Path::LineOfSight)
        .filter(|va| {
            mts.iter()
                .any(|p| (va.position - p).norm() <= max_distance && is_visible(p, &va.position, va.path, surfaces))
        })
        .map(|va| va.position)
        .collect()
}

/// Runs one simulation. Every random stream is derived from `(seed, run)`,
/// and all measurements are generated whatever the toggles, so toggles only
/// change what the filter consumes.
pub fn run_single(config: &ScenarioConfig, seed: u64, run: u64) -> Result<RunRecord, ScenarioError> {
    config.validate()?;
    let truth = config.trajectories()?;
    let model = FilterModel::from_scenario(config);
    let surfaces = config.surfaces();
    let n_bs = config.base_stations.len();
    let n_mt = config.mobiles.len();
    let links: Vec<LinkModel> = (0..n_bs).map(|j| LinkModel::bs(config, j)).collect();
    let vas: Vec<Vec<VirtualAnchor>> = (0..n_bs).map(|j| virtual_anchors(config, j)).collect();
    let coop_link = CoopLinkModel::new(config);
    let generator = GeneratorParams {
        false_alarm_mean: config.model.false_alarm_mean,
        noise_scale: config.model.noise_scale,
    };
    let imu_noise = ImuNoise::from_config(config).scaled(config.model.noise_scale);

    let mut rng_bs = rng_stream(seed, run, StreamTag::BsMeasurements);
    let mut rng_coop = rng_stream(seed, run, StreamTag::CoopMeasurements);
    let mut rng_imu = rng_stream(seed, run, StreamTag::Imu);
    let mut rng_init = rng_stream(seed, run, StreamTag::FilterInit);
    let mut rng_filter = rng_stream(seed, run, StreamTag::Filter);

    let starts: Vec<MtState> = truth.iter().map(|t| t[0]).collect();
    let initial_imu: Vec<_> = starts
        .iter()
        .map(|s| generate_imu(s, s, config.dt, &imu_noise, &mut rng_imu))
        .collect();
    let mut state = FilterState::new(&model, &starts, Some(&initial_imu), &mut rng_init);

    let slot_bs: Vec<usize> = (0..model.map_count())
        .map(|slot| {
            (0..n_bs)
                .find(|&j| (0..n_mt).any(|i| model.map_slot(j, i) == slot))
                .expect("every map belongs to a BS")
        })
        .collect();
    let ospa_params = OspaParams::default();

    let mut steps = Vec::with_capacity(config.steps);
    for n in 1..=config.steps {
        let now: Vec<MtState> = truth.iter().map(|t| t[n]).collect();
        let bs = now
            .iter()
            .map(|x| {
                (0..n_bs)
                    .map(|j| {
                        generate_bs_measurements(x, &vas[j], &surfaces, &links[j], &config.radio, &generator, &mut rng_bs)
                            .into_iter()
                            .map(|z| z.measurement)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut coop = Vec::new();
        for i in 0..n_mt {
            for k in i + 1..n_mt {
                let measurements = generate_coop_measurements(
                    &now[i].position,
                    &now[k].position,
                    &surfaces,
                    &coop_link,
                    &generator,
                    &mut rng_coop,
                )
                .into_iter()
                .map(|z| z.measurement)
                .collect();
                coop.push(CoopLink {
                    first: i,
                    second: k,
                    measurements,
                });
            }
        }
        let imu = (0..n_mt)
            .map(|i| generate_imu(&truth[i][n - 1], &truth[i][n], config.dt, &imu_noise, &mut rng_imu))
            .collect();
        let input = StepInput {
            bs,
            coop,
            imu: Some(imu),
        };
        let out = state.step(&model, &input, &mut rng_filter);

        // map quality against the VAs currently visible to the MTs of each map
        let (mut ospa_sum, mut card_sum) = (0.0, 0.0);
        for (slot, &j) in slot_bs.iter().enumerate() {
            let users: Vec<Point> = (0..n_mt)
                .filter(|&i| model.map_slot(j, i) == slot)
                .map(|i| now[i].position)
                .collect();
            let truth_set = visible_from(&vas[j], &users, config.radio.max_distance, &surfaces);
            let est: Vec<Point> = out
                .confirmed
                .iter()
                .filter(|v| v.slot == slot)
                .map(|v| v.position)
                .collect();
            ospa_sum += ospa(&est, &truth_set, &ospa_params).expect("valid parameters");
            card_sum += (est.len() as f64 - truth_set.len() as f64).abs();
        }
        let maps = model.map_count() as f64;
        steps.push(StepRecord {
            step: n,
            truth: now,
            estimates: out.mt_estimates,
            confirmed: out.confirmed,
            diagnostics: out.diagnostics,
            ospa: ospa_sum / maps,
            card_err: card_sum / maps,
        });
    }
    Ok(RunRecord {
        run,
        seed,
        toggles: config.toggles,
        steps,
    })
}

/// Runs `runs` independent simulations in parallel; the result is ordered
/// by run index and independent of the thread count.
pub fn run_batch(config: &ScenarioConfig, seed: u64, runs: u64) -> Result<Vec<RunRecord>, ScenarioError> {
    (0..runs).into_par_iter().map(|r| run_single(config, seed, r)).collect()
}
