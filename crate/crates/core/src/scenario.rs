//! Scenario description, trajectory generation and deterministic seeding.
//!
//! Scenarios are TOML documents. Lengths are in meters, angles in degrees and
//! frequencies in Hz; the accessors on [`ScenarioConfig`] convert to radians.
//! Every section except `base_stations` and `mobiles` is optional and falls
//! back to the defaults listed on the individual fields.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, ArrayGeometry, GeometryError, Point, Surface};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Radio and array parameters shared by all links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub carrier_frequency: f64,
    /// 3-dB bandwidth of the (flat) transmit spectrum.
    pub bandwidth: f64,
    pub subcarriers: u32,
    pub bs_antennas: u32,
    pub mt_antennas: u32,
    /// Component SNR of the line of sight at 1 m.
    pub snr_ref_db: f64,
    pub bounce_loss_db: f64,
    /// Detection threshold on the normalized amplitude.
    pub detection_threshold: f64,
    pub max_distance: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            carrier_frequency: 6e9,
            bandwidth: 500e6,
            subcarriers: 128,
            bs_antennas: 4,
            mt_antennas: 4,
            snr_ref_db: 40.0,
            bounce_loss_db: 3.0,
            detection_threshold: 2.0,
            max_distance: 60.0,
        }
    }
}

impl RadioParams {
    pub fn wavelength(&self) -> f64 {
        crate::measurement::SPEED_OF_LIGHT / self.carrier_frequency
    }
}

/// Statistical model constants used by both the simulator and the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub detection_probability: f64,
    /// Use the amplitude-driven Marcum-Q detection probability instead of
    /// the constant `detection_probability`.
    pub amplitude_detection: bool,
    pub false_alarm_mean: f64,
    pub new_pva_mean: f64,
    pub survival_probability: f64,
    pub confirm_threshold: f64,
    pub prune_threshold: f64,
    /// Driving acceleration noise of the MT motion model, m/s².
    pub accel_noise: f64,
    /// Regularization noise added to VA positions each step, m.
    pub va_regularization: f64,
    /// Relative standard deviation of the PVA amplitude random walk.
    pub amplitude_walk: f64,
    /// Heading diffusion per step when no IMU is used.
    pub heading_diffusion_deg: f64,
    /// Probability that a base station's line of sight, once lost, is
    /// expected again at the next step.
    pub anchor_reappearance: f64,
    pub imu_accel_noise: f64,
    pub imu_gyro_noise_deg: f64,
    pub imu_heading_noise_deg: f64,
    /// Scale applied to every measurement-noise standard deviation in the
    /// simulator (not in the filter).
    pub noise_scale: f64,
    pub init_position_spread: f64,
    pub init_velocity_spread: f64,
    pub init_heading_spread_deg: f64,
    pub da_max_iterations: u32,
    pub da_tolerance: f64,
    pub da_damping: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            detection_probability: 0.98,
            amplitude_detection: false,
            false_alarm_mean: 5.0,
            new_pva_mean: 0.01,
            survival_probability: 0.999,
            confirm_threshold: 0.5,
            prune_threshold: 1e-3,
            accel_noise: 1e-3,
            va_regularization: 1e-3,
            amplitude_walk: 0.05,
            heading_diffusion_deg: 2.0,
            anchor_reappearance: 0.5,
            imu_accel_noise: 1e-3,
            imu_gyro_noise_deg: 0.1,
            imu_heading_noise_deg: 10.0,
            noise_scale: 1.0,
            init_position_spread: 0.1,
            init_velocity_spread: 0.01,
            init_heading_spread_deg: 10.0,
            da_max_iterations: 200,
            da_tolerance: 1e-6,
            da_damping: 0.5,
        }
    }
}

/// Which parts of the algorithm are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentToggles {
    pub mimo: bool,
    pub coop: bool,
    pub imu: bool,
    pub pva_fusion: bool,
}

impl Default for ExperimentToggles {
    fn default() -> Self {
        Experiment::E7.toggles()
    }
}

/// The experiment settings compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    E7,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::E1,
        Experiment::E2,
        Experiment::E3,
        Experiment::E4,
        Experiment::E5,
        Experiment::E6,
        Experiment::E7,
    ];

    pub fn toggles(self) -> ExperimentToggles {
        let (mimo, coop, imu, pva_fusion) = match self {
            Experiment::E1 => (false, false, true, false),
            Experiment::E2 => (true, false, true, false),
            Experiment::E3 => (true, true, false, true),
            Experiment::E4 => (false, false, true, true),
            Experiment::E5 => (false, true, true, true),
            Experiment::E6 => (true, false, true, true),
            Experiment::E7 => (true, true, true, true),
        };
        ExperimentToggles {
            mimo,
            coop,
            imu,
            pva_fusion,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::E1 => "E1",
            Experiment::E2 => "E2",
            Experiment::E3 => "E3",
            Experiment::E4 => "E4",
            Experiment::E5 => "E5",
            Experiment::E6 => "E6",
            Experiment::E7 => "E7",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown experiment `{s}` (expected E1..E7)"))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStationSpec {
    pub position: [f64; 2],
    /// Known array orientation, degrees.
    #[serde(default)]
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobileSpec {
    /// `[x, y, t]` triples with strictly increasing `t` in seconds.
    pub waypoints: Vec<[f64; 3]>,
    /// Heading used while the MT has not moved yet, degrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_heading: Option<f64>,
}

/// A complete, validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Center of the square region in which new VAs are born.
    #[serde(default)]
    pub birth_center: [f64; 2],
    #[serde(default = "default_birth_half_width")]
    pub birth_half_width: f64,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub toggles: ExperimentToggles,
    #[serde(default)]
    pub surfaces: Vec<SurfaceSpec>,
    pub base_stations: Vec<BaseStationSpec>,
    pub mobiles: Vec<MobileSpec>,
}

fn default_steps() -> usize {
    400
}
fn default_dt() -> f64 {
    1.0
}
fn default_particles() -> usize {
    10_000
}
fn default_seed() -> u64 {
    1
}
fn default_birth_half_width() -> f64 {
    45.0
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// The bundled illustrative floor plan: two base stations, five walls and
/// three tracks, the third with sharp turns.
pub fn default_scenario() -> ScenarioConfig {
    load_scenario(DEFAULT_SCENARIO).expect("bundled scenario is valid")
}

pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");

fn check_probability(field: &str, value: f64) -> Result<(), ScenarioError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(ScenarioError::invalid(field, format!("{value} is not a probability")));
    }
    Ok(())
}

fn check_positive(field: &str, value: f64) -> Result<(), ScenarioError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(ScenarioError::invalid(field, format!("{value} must be finite and > 0")));
    }
    Ok(())
}

fn check_non_negative(field: &str, value: f64) -> Result<(), ScenarioError> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(ScenarioError::invalid(field, format!("{value} must be finite and >= 0")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.steps < 1 {
            return Err(ScenarioError::invalid("steps", "must be >= 1"));
        }
        check_positive("dt", self.dt)?;
        if self.particles < 1 {
            return Err(ScenarioError::invalid("particles", "must be >= 1"));
        }
        check_positive("birth_half_width", self.birth_half_width)?;

        let r = &self.radio;
        check_positive("radio.carrier_frequency", r.carrier_frequency)?;
        check_positive("radio.bandwidth", r.bandwidth)?;
        for (f, v) in [
            ("radio.subcarriers", r.subcarriers),
            ("radio.bs_antennas", r.bs_antennas),
            ("radio.mt_antennas", r.mt_antennas),
        ] {
            if v < 1 {
                return Err(ScenarioError::invalid(f, "must be >= 1"));
            }
        }
        check_positive("radio.snr_ref_db", r.snr_ref_db)?;
        check_non_negative("radio.bounce_loss_db", r.bounce_loss_db)?;
        check_positive("radio.detection_threshold", r.detection_threshold)?;
        check_positive("radio.max_distance", r.max_distance)?;

        let m = &self.model;
        for (f, v) in [
            ("model.detection_probability", m.detection_probability),
            ("model.survival_probability", m.survival_probability),
            ("model.confirm_threshold", m.confirm_threshold),
            ("model.prune_threshold", m.prune_threshold),
            ("model.anchor_reappearance", m.anchor_reappearance),
            ("model.da_damping", m.da_damping),
        ] {
            check_probability(f, v)?;
        }
        for (f, v) in [
            ("model.false_alarm_mean", m.false_alarm_mean),
            ("model.new_pva_mean", m.new_pva_mean),
            ("model.accel_noise", m.accel_noise),
            ("model.va_regularization", m.va_regularization),
            ("model.amplitude_walk", m.amplitude_walk),
            ("model.heading_diffusion_deg", m.heading_diffusion_deg),
            ("model.imu_accel_noise", m.imu_accel_noise),
            ("model.imu_gyro_noise_deg", m.imu_gyro_noise_deg),
            ("model.noise_scale", m.noise_scale),
            ("model.init_position_spread", m.init_position_spread),
            ("model.init_velocity_spread", m.init_velocity_spread),
            ("model.init_heading_spread_deg", m.init_heading_spread_deg),
        ] {
            check_non_negative(f, v)?;
        }
        check_positive("model.imu_heading_noise_deg", m.imu_heading_noise_deg)?;
        check_positive("model.da_tolerance", m.da_tolerance)?;
        if m.da_max_iterations < 1 {
            return Err(ScenarioError::invalid("model.da_max_iterations", "must be >= 1"));
        }

        for (i, s) in self.surfaces.iter().enumerate() {
            Surface::segment(Point::from(s.start), Point::from(s.end))
                .map_err(|e| ScenarioError::invalid(format!("surfaces[{i}]"), e.to_string()))?;
        }
        if self.base_stations.is_empty() {
            return Err(ScenarioError::invalid("base_stations", "at least one base station is required"));
        }
        for (i, bs) in self.base_stations.iter().enumerate() {
            if !(bs.position.iter().all(|v| v.is_finite()) && bs.orientation.is_finite()) {
                return Err(ScenarioError::invalid(format!("base_stations[{i}]"), "non-finite value"));
            }
        }
        if self.mobiles.is_empty() {
            return Err(ScenarioError::invalid("mobiles", "at least one mobile terminal is required"));
        }
        let horizon = self.steps as f64 * self.dt;
        for (i, mt) in self.mobiles.iter().enumerate() {
            let field = format!("mobiles[{i}].waypoints");
            validate_waypoints(&mt.waypoints, horizon).map_err(|msg| ScenarioError::invalid(field, msg))?;
        }
        Ok(())
    }

    pub fn surfaces(&self) -> Vec<Surface> {
        self.surfaces
            .iter()
            .map(|s| Surface::segment(Point::from(s.start), Point::from(s.end)).expect("validated"))
            .collect()
    }

    pub fn bs_position(&self, j: usize) -> Point {
        Point::from(self.base_stations[j].position)
    }

    pub fn bs_orientation(&self, j: usize) -> f64 {
        wrap_angle(self.base_stations[j].orientation.to_radians())
    }

    pub fn birth_center(&self) -> Point {
        Point::from(self.birth_center)
    }

    /// BS array; a single element when MIMO is off.
    pub fn bs_array(&self) -> ArrayGeometry {
        if self.toggles.mimo {
            ArrayGeometry::for_count(self.radio.bs_antennas as usize, self.radio.wavelength() / 2.0)
        } else {
            ArrayGeometry::single()
        }
    }

    pub fn mt_array(&self) -> ArrayGeometry {
        ArrayGeometry::for_count(self.radio.mt_antennas as usize, self.radio.wavelength() / 2.0)
    }

    /// Number of BS antennas effectively used by the link model.
    pub fn effective_bs_antennas(&self) -> u32 {
        if self.toggles.mimo {
            self.radio.bs_antennas
        } else {
            1
        }
    }

    /// Ground-truth MT states for steps `0..=steps`.
    pub fn trajectories(&self) -> Result<Vec<Vec<MtState>>, ScenarioError> {
        self.mobiles
            .iter()
            .enumerate()
            .map(|(i, mt)| {
                let initial = mt.initial_heading.map(f64::to_radians);
                generate_trajectory(&mt.waypoints, self.steps, self.dt, initial)
                    .map_err(|e| match e {
                        ScenarioError::Validation { message, .. } => {
                            ScenarioError::invalid(format!("mobiles[{i}].waypoints"), message)
                        }
                        other => other,
                    })
            })
            .collect()
    }

    /// Returns a copy restricted to the first `count` mobiles and `steps` steps.
    pub fn truncated(&self, count: usize, steps: usize) -> Self {
        let mut c = self.clone();
        c.mobiles.truncate(count);
        c.steps = steps;
        c
    }
}

impl From<GeometryError> for ScenarioError {
    fn from(e: GeometryError) -> Self {
        ScenarioError::invalid("geometry", e.to_string())
    }
}

fn validate_waypoints(waypoints: &[[f64; 3]], horizon: f64) -> Result<(), String> {
    if waypoints.len() < 2 {
        return Err("at least two waypoints are required".into());
    }
    if waypoints.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite waypoint".into());
    }
    for w in waypoints.windows(2) {
        if w[1][2] <= w[0][2] {
            return Err(format!("times must be strictly increasing ({} then {})", w[0][2], w[1][2]));
        }
    }
    let (first, last) = (waypoints[0][2], waypoints[waypoints.len() - 1][2]);
    if first > 0.0 || last < horizon - 1e-9 {
        return Err(format!("waypoints cover [{first}, {last}] s but [0, {horizon}] s is required"));
    }
    Ok(())
}

/// Kinematic state of a mobile terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtState {
    pub position: Point,
    pub velocity: Point,
    /// Heading of the MT frame, radians.
    pub heading: f64,
}

fn polyline_at(waypoints: &[[f64; 3]], t: f64) -> Point {
    let idx = waypoints
        .windows(2)
        .position(|w| t <= w[1][2])
        .unwrap_or(waypoints.len() - 2);
    let (a, b) = (waypoints[idx], waypoints[idx + 1]);
    let s = ((t - a[2]) / (b[2] - a[2])).clamp(0.0, 1.0);
    Point::new(a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]))
}

/// Ground-truth states at `t = n·dt` for `n = 0..=steps`.
///
/// Velocity is the mean velocity of the waypoint polyline over the preceding
/// sampling interval (the first segment's velocity at `n = 0`), so it is
/// piecewise constant along straight legs. Positions integrate that velocity
/// with constant acceleration inside each interval, which is the same
/// discretization the filter's motion model uses; straight legs therefore
/// sit exactly on the polyline and corners are cut by at most half a step.
/// Heading follows the velocity and is held while the speed is below 1e-9 m/s.
pub fn generate_trajectory(
    waypoints: &[[f64; 3]],
    steps: usize,
    dt: f64,
    initial_heading: Option<f64>,
) -> Result<Vec<MtState>, ScenarioError> {
    validate_waypoints(waypoints, steps as f64 * dt)
        .map_err(|msg| ScenarioError::invalid("waypoints", msg))?;
    if !(dt > 0.0) {
        return Err(ScenarioError::invalid("dt", "must be > 0"));
    }

    let first_segment = |idx: usize| {
        let (a, b) = (waypoints[idx], waypoints[idx + 1]);
        Point::new(b[0] - a[0], b[1] - a[1]) / (b[2] - a[2])
    };
    let mut velocity = first_segment(0);
    let mut heading = match initial_heading {
        Some(h) => wrap_angle(h),
        None => (0..waypoints.len() - 1)
            .map(first_segment)
            .find(|v| v.norm() >= 1e-9)
            .map(|v| v.y.atan2(v.x))
            .unwrap_or(0.0),
    };
    if velocity.norm() >= 1e-9 {
        heading = wrap_angle(velocity.y.atan2(velocity.x));
    }
    let mut position = polyline_at(waypoints, 0.0);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(MtState {
        position,
        velocity,
        heading,
    });
    for n in 1..=steps {
        let t0 = (n - 1) as f64 * dt;
        let t1 = n as f64 * dt;
        let next_velocity = (polyline_at(waypoints, t1) - polyline_at(waypoints, t0)) / dt;
        position += 0.5 * (velocity + next_velocity) * dt;
        velocity = next_velocity;
        if velocity.norm() >= 1e-9 {
            heading = wrap_angle(velocity.y.atan2(velocity.x));
        }
        states.push(MtState {
            position,
            velocity,
            heading,
        });
    }
    Ok(states)
}

/// Purpose of a random stream within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    BsMeasurements,
    CoopMeasurements,
    Imu,
    FilterInit,
    Filter,
    Custom(u32),
}

impl StreamTag {
    fn id(self) -> u64 {
        match self {
            StreamTag::BsMeasurements => 1,
            StreamTag::CoopMeasurements => 2,
            StreamTag::Imu => 3,
            StreamTag::FilterInit => 4,
            StreamTag::Filter => 5,
            StreamTag::Custom(c) => 0x1_0000_0000 | c as u64,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream for `(master_seed, run_index, tag)`.
///
/// The ChaCha key is derived from the seed and run index; the tag selects
/// the ChaCha stream, so streams of one run never overlap.
pub fn rng_stream(master_seed: u64, run_index: u64, tag: StreamTag) -> ChaCha8Rng {
    let mut state = master_seed ^ splitmix64(&mut run_index.wrapping_mul(0xA24B_AED4_963E_E407));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(tag.id());
    rng
}
