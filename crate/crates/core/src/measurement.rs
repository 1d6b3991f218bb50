//! Measurement models: noise standard deviations, likelihood functions and
//! synthetic generation of BS–MT, MT–MT and IMU measurements.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::geometry::{is_visible, path_params, wrap_angle, ArrayGeometry, Path, Point, Surface};
use crate::scenario::{MtState, RadioParams, ScenarioConfig};
use crate::special::{ln_normal, ln_rice_pdf, marcum_q1};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasurementError {
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("array has no aperture orthogonal to the requested direction")]
    DegenerateAperture,
}

/// One BS–MT path measurement. `z_aod` is absent for single-antenna BSs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub z_d: f64,
    pub z_aoa: f64,
    pub z_aod: Option<f64>,
    pub z_u: f64,
}

/// Where a generated measurement came from. Only used for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Path(Path),
    FalseAlarm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledMeasurement {
    pub measurement: Measurement,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoopMeasurement {
    pub z_d: f64,
    pub z_u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledCoopMeasurement {
    pub measurement: CoopMeasurement,
    pub line_of_sight: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuMeasurement {
    /// Acceleration in the body frame, m/s².
    pub accel: Point,
    /// Angular rate, rad/s.
    pub gyro: f64,
    /// Heading observation, rad.
    pub heading: f64,
}

/// Root-mean-square bandwidth of a flat spectrum of width `bandwidth`.
pub fn rms_bandwidth(bandwidth: f64) -> f64 {
    bandwidth / 12f64.sqrt()
}

pub fn sigma_d(u: f64, beta_bw: f64) -> Result<f64, MeasurementError> {
    if !(u > 0.0) {
        return Err(MeasurementError::Domain("amplitude must be > 0"));
    }
    if !(beta_bw > 0.0) {
        return Err(MeasurementError::Domain("bandwidth must be > 0"));
    }
    Ok(SPEED_OF_LIGHT / (2.0 * 2f64.sqrt() * PI * beta_bw * u))
}

/// Squared orthogonal aperture of an array in wavelengths, as a function of
/// the direction `phi` in the array frame.
///
/// With centered element coordinates `(x_h, y_h)` the projections are
/// `x_h sin φ − y_h cos φ`, so `D²(φ)` is a quadratic form in `(sin φ, cos φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aperture {
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Aperture {
    pub fn new(array: &ArrayGeometry, wavelength: f64) -> Self {
        let pts: Vec<(f64, f64)> = array
            .elements()
            .iter()
            .map(|&(d, psi)| (d / wavelength * psi.cos(), d / wavelength * psi.sin()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (x, y) in pts {
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
            sxy += (x - mx) * (y - my);
        }
        Self { sxx, syy, sxy }
    }

    #[inline]
    pub fn d2(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        (s * s * self.sxx + c * c * self.syy - 2.0 * s * c * self.sxy).max(0.0)
    }
}

pub fn sigma_angle(
    u: f64,
    phi: f64,
    array: &ArrayGeometry,
    wavelength: f64,
) -> Result<f64, MeasurementError> {
    if !(u > 0.0) {
        return Err(MeasurementError::Domain("amplitude must be > 0"));
    }
    let d2 = Aperture::new(array, wavelength).d2(phi);
    if d2 < 1e-12 {
        return Err(MeasurementError::DegenerateAperture);
    }
    Ok(1.0 / (2.0 * 2f64.sqrt() * PI * u * d2.sqrt()))
}

/// Rician scale of the normalized amplitude for `mh` subcarrier-antenna
/// products.
pub fn sigma_u(u: f64, mh: f64) -> f64 {
    (0.5 + u * u / (4.0 * mh)).sqrt()
}

pub fn amplitude_truth(d: f64, bounces: u32, radio: &RadioParams) -> Result<f64, MeasurementError> {
    if !(d > 0.0) {
        return Err(MeasurementError::Domain("distance must be > 0"));
    }
    let db = radio.snr_ref_db - 20.0 * d.log10() - radio.bounce_loss_db * bounces as f64;
    Ok(10f64.powf(db / 20.0))
}

/// Probability that a component of amplitude `u` is detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionModel {
    Constant(f64),
    /// Exceedance of the threshold by the Rician amplitude.
    Amplitude,
}

pub fn detection_prob(u: f64, gamma: f64, sigma_u: f64, model: DetectionModel) -> f64 {
    match model {
        DetectionModel::Constant(p) => p,
        DetectionModel::Amplitude => marcum_q1(u / sigma_u, gamma / sigma_u),
    }
}

/// `ln` of the Rician amplitude density restricted to `[γ, ∞)`. Its integral
/// over the support is `Q1(u/σ, γ/σ)`, the amplitude-driven detection
/// probability.
pub fn ln_rice_factor(z_u: f64, u: f64, sigma: f64, gamma: f64) -> f64 {
    if z_u < gamma {
        return f64::NEG_INFINITY;
    }
    ln_rice_pdf(z_u, u, sigma)
}

/// `ln` of the truncated Rician density of the measured amplitude, normalized
/// on `[γ, ∞)`.
pub fn ln_truncated_rice(z_u: f64, u: f64, sigma: f64, gamma: f64) -> f64 {
    let q = marcum_q1(u / sigma, gamma / sigma);
    ln_rice_factor(z_u, u, sigma, gamma) - q.max(f64::MIN_POSITIVE).ln()
}

/// `ln` of the unit-scale Rayleigh density truncated to `[γ, ∞)`.
pub fn ln_truncated_rayleigh(z_u: f64, gamma: f64) -> f64 {
    if z_u < gamma {
        return f64::NEG_INFINITY;
    }
    z_u.ln() - 0.5 * (z_u * z_u - gamma * gamma)
}

/// `ln Q1(u/σ_u(u), γ/σ_u(u))` tabulated on a uniform amplitude grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceTable {
    step: f64,
    values: Vec<f64>,
}

impl ExceedanceTable {
    const STEP: f64 = 0.005;

    pub fn new(gamma: f64, mh: f64) -> Self {
        let mut values = Vec::new();
        let mut u = 0.0;
        loop {
            let s = sigma_u(u, mh);
            let q = marcum_q1(u / s, gamma / s);
            values.push(q.max(f64::MIN_POSITIVE).ln());
            if q >= 1.0 {
                break;
            }
            u += Self::STEP;
        }
        Self {
            step: Self::STEP,
            values,
        }
    }

    /// Linear interpolation; exactly zero beyond the tabulated range.
    #[inline]
    pub fn ln_q1(&self, u: f64) -> f64 {
        let x = u.max(0.0) / self.step;
        let i = x as usize;
        if i + 1 >= self.values.len() {
            return 0.0;
        }
        let t = x - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }
}

/// Everything needed to evaluate and generate measurements of one BS–MT link
/// type.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub beta_bw: f64,
    pub mt_aperture: Aperture,
    /// `None` for a single-antenna BS, in which case no AoD is observed.
    pub bs_aperture: Option<Aperture>,
    pub bs_orientation: f64,
    /// Subcarriers times antenna pairs.
    pub mh: f64,
    pub gamma: f64,
    pub d_max: f64,
    pub detection: DetectionModel,
    pub exceedance: ExceedanceTable,
}

impl LinkModel {
    pub fn bs(config: &ScenarioConfig, j: usize) -> Self {
        let radio = &config.radio;
        let h_bs = config.effective_bs_antennas() as f64;
        let wavelength = radio.wavelength();
        let mh = radio.subcarriers as f64 * h_bs * radio.mt_antennas as f64;
        Self {
            beta_bw: rms_bandwidth(radio.bandwidth),
            mt_aperture: Aperture::new(&config.mt_array(), wavelength),
            bs_aperture: config.toggles.mimo.then(|| Aperture::new(&config.bs_array(), wavelength)),
            bs_orientation: config.bs_orientation(j),
            mh,
            gamma: radio.detection_threshold,
            d_max: radio.max_distance,
            detection: detection_model(config),
            exceedance: ExceedanceTable::new(radio.detection_threshold, mh),
        }
    }

    #[inline]
    pub fn sigma_d(&self, u: f64) -> f64 {
        SPEED_OF_LIGHT / (2.0 * 2f64.sqrt() * PI * self.beta_bw * u.max(1e-9))
    }

    #[inline]
    fn sigma_angle(aperture: &Aperture, u: f64, phi: f64) -> f64 {
        1.0 / (2.0 * 2f64.sqrt() * PI * u.max(1e-9) * aperture.d2(phi).max(1e-12).sqrt())
    }

    /// AoA standard deviation; `aoa` is in the MT frame.
    #[inline]
    pub fn sigma_aoa(&self, u: f64, aoa: f64) -> f64 {
        Self::sigma_angle(&self.mt_aperture, u, aoa)
    }

    /// AoD standard deviation; `aod` is global.
    #[inline]
    pub fn sigma_aod(&self, u: f64, aod: f64) -> Option<f64> {
        self.bs_aperture
            .as_ref()
            .map(|a| Self::sigma_angle(a, u, aod - self.bs_orientation))
    }

    #[inline]
    pub fn sigma_u(&self, u: f64) -> f64 {
        sigma_u(u, self.mh)
    }

    #[inline]
    pub fn detection_prob(&self, u: f64) -> f64 {
        detection_prob(u, self.gamma, self.sigma_u(u), self.detection)
    }

    /// `ln p_d(u)`, tabulated in the amplitude-driven mode.
    #[inline]
    pub fn ln_detection_prob(&self, u: f64) -> f64 {
        match self.detection {
            DetectionModel::Constant(p) => p.ln(),
            DetectionModel::Amplitude => self.exceedance.ln_q1(u),
        }
    }

    /// `ln f(z | x, y, u)` for an MT at `p_mt` with heading `o_mt` and a VA at
    /// `p_va` with amplitude `u`. Angular residuals are wrapped.
    pub fn ln_lhf(&self, z: &Measurement, p_mt: &Point, o_mt: f64, p_va: &Point, u: f64) -> f64 {
        let diff = p_va - p_mt;
        let d = diff.norm();
        let to_va = diff.y.atan2(diff.x);
        let aoa = wrap_angle(to_va - o_mt);
        let mut ln = ln_normal(z.z_d - d, self.sigma_d(u));
        ln += ln_normal(wrap_angle(z.z_aoa - aoa), self.sigma_aoa(u, aoa));
        if let (Some(z_aod), Some(_)) = (z.z_aod, &self.bs_aperture) {
            let aod = wrap_angle(to_va + PI);
            let s = self.sigma_aod(u, aod).expect("aperture present");
            ln += ln_normal(wrap_angle(z_aod - aod), s);
        }
        ln + ln_rice_factor(z.z_u, u, self.sigma_u(u), self.gamma) - self.exceedance.ln_q1(u)
    }

    /// `ln(p_d(u) f(z | x, y, u))`.
    #[inline]
    pub fn ln_detected_lhf(&self, z: &Measurement, p_mt: &Point, o_mt: f64, p_va: &Point, u: f64) -> f64 {
        self.ln_detection_prob(u) + self.ln_lhf(z, p_mt, o_mt, p_va, u)
    }

    /// `ln f_fa(z)`: uniform distance and angles, truncated Rayleigh amplitude.
    pub fn ln_lhf_fa(&self, z: &Measurement) -> f64 {
        if !(0.0..=self.d_max).contains(&z.z_d) {
            return f64::NEG_INFINITY;
        }
        let angles = if self.bs_aperture.is_some() && z.z_aod.is_some() { 2.0 } else { 1.0 };
        -self.d_max.ln() - angles * TAU.ln() + ln_truncated_rayleigh(z.z_u, self.gamma)
    }
}

pub fn detection_model(config: &ScenarioConfig) -> DetectionModel {
    if config.model.amplitude_detection {
        DetectionModel::Amplitude
    } else {
        DetectionModel::Constant(config.model.detection_probability)
    }
}

/// Model of the MT–MT distance link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoopLinkModel {
    pub beta_bw: f64,
    pub mh: f64,
    pub gamma: f64,
    pub d_max: f64,
    pub detection: DetectionModel,
    pub snr_ref_db: f64,
}

impl CoopLinkModel {
    pub fn new(config: &ScenarioConfig) -> Self {
        let radio = &config.radio;
        Self {
            beta_bw: rms_bandwidth(radio.bandwidth),
            mh: radio.subcarriers as f64 * (radio.mt_antennas * radio.mt_antennas) as f64,
            gamma: radio.detection_threshold,
            d_max: radio.max_distance,
            detection: detection_model(config),
            snr_ref_db: radio.snr_ref_db,
        }
    }

    /// Line-of-sight amplitude at distance `d`.
    #[inline]
    pub fn amplitude(&self, d: f64) -> f64 {
        10f64.powf((self.snr_ref_db - 20.0 * d.max(1e-3).log10()) / 20.0)
    }

    #[inline]
    pub fn sigma_d(&self, u: f64) -> f64 {
        SPEED_OF_LIGHT / (2.0 * 2f64.sqrt() * PI * self.beta_bw * u.max(1e-9))
    }

    pub fn detection_prob(&self, d: f64) -> f64 {
        let u = self.amplitude(d);
        detection_prob(u, self.gamma, sigma_u(u, self.mh), self.detection)
    }

    /// `ln f(z_d | p_i, p_i')`, the distance-only link likelihood with the
    /// noise level taken at the amplitude of the given distance.
    #[inline]
    pub fn ln_lhf(&self, z: &CoopMeasurement, p_i: &Point, p_k: &Point) -> f64 {
        let d = (p_i - p_k).norm();
        ln_normal(z.z_d - d, self.sigma_d(self.amplitude(d)))
    }

    pub fn ln_lhf_fa(&self, z: &CoopMeasurement) -> f64 {
        if (0.0..=self.d_max).contains(&z.z_d) {
            -self.d_max.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub fn ln_lhf_coop(model: &CoopLinkModel, z: &CoopMeasurement, p_i: &Point, p_k: &Point) -> f64 {
    model.ln_lhf(z, p_i, p_k)
}

/// `ln` of the heading factor of the IMU likelihood.
pub fn ln_lhf_imu(z: &ImuMeasurement, heading: f64, sigma_heading: f64) -> f64 {
    ln_normal(wrap_angle(z.heading - heading), sigma_heading)
}

/// A VA of the scenario together with the path it parameterizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualAnchor {
    pub position: Point,
    pub path: Path,
}

/// Rician draw conditioned on exceeding `gamma`, by rejection.
pub fn sample_truncated_rice<R: Rng + ?Sized>(u: f64, sigma: f64, gamma: f64, rng: &mut R) -> f64 {
    for _ in 0..100_000 {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let z = (u + sigma * a).hypot(sigma * b);
        if z >= gamma {
            return z;
        }
    }
    gamma
}

/// Unit-scale Rayleigh draw conditioned on exceeding `gamma`.
pub fn sample_truncated_rayleigh<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> f64 {
    let v: f64 = rng.random::<f64>();
    (gamma * gamma - 2.0 * (1.0 - v).ln()).sqrt()
}

/// Knobs of the synthetic generator that differ from the filter's model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub false_alarm_mean: f64,
    /// Scale applied to all measurement noise standard deviations.
    pub noise_scale: f64,
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

/// Measurements of BS `vas` seen from `truth`, in random order.
#[allow(clippy::too_many_arguments)]
pub fn generate_bs_measurements<R: Rng + ?Sized>(
    truth: &MtState,
    vas: &[VirtualAnchor],
    surfaces: &[Surface],
    link: &LinkModel,
    radio: &RadioParams,
    params: &GeneratorParams,
    rng: &mut R,
) -> Vec<LabeledMeasurement> {
    let scale = params.noise_scale;
    let mut out = Vec::new();
    for va in vas {
        if !is_visible(&truth.position, &va.position, va.path, surfaces) {
            continue;
        }
        let Ok(pp) = path_params(&truth.position, truth.heading, &va.position, va.path) else {
            continue;
        };
        if pp.distance > link.d_max {
            continue;
        }
        let u = amplitude_truth(pp.distance, pp.bounce_count, radio).expect("positive distance");
        if rng.random::<f64>() >= link.detection_prob(u) {
            continue;
        }
        let n = |rng: &mut R, s: f64| -> f64 { scale * s * rng.sample::<f64, _>(StandardNormal) };
        let z_d = (pp.distance + n(rng, link.sigma_d(u))).clamp(0.0, link.d_max);
        let z_aoa = wrap_angle(pp.aoa + n(rng, link.sigma_aoa(u, pp.aoa)));
        let z_aod = link
            .sigma_aod(u, pp.aod)
            .map(|s| wrap_angle(pp.aod + n(rng, s)));
        let z_u = sample_truncated_rice(u, scale * link.sigma_u(u), link.gamma, rng);
        out.push(LabeledMeasurement {
            measurement: Measurement { z_d, z_aoa, z_aod, z_u },
            origin: Origin::Path(va.path),
        });
    }
    for _ in 0..poisson_count(params.false_alarm_mean, rng) {
        let z_d = rng.random::<f64>() * link.d_max;
        let z_aoa = wrap_angle(rng.random::<f64>() * TAU - PI);
        let z_aod = link
            .bs_aperture
            .map(|_| wrap_angle(rng.random::<f64>() * TAU - PI));
        let z_u = sample_truncated_rayleigh(link.gamma, rng);
        out.push(LabeledMeasurement {
            measurement: Measurement { z_d, z_aoa, z_aod, z_u },
            origin: Origin::FalseAlarm,
        });
    }
    out.shuffle(rng);
    out
}

/// Distance measurements of the link between two MTs, in random order.
pub fn generate_coop_measurements<R: Rng + ?Sized>(
    p_i: &Point,
    p_k: &Point,
    surfaces: &[Surface],
    link: &CoopLinkModel,
    params: &GeneratorParams,
    rng: &mut R,
) -> Vec<LabeledCoopMeasurement> {
    let mut out = Vec::new();
    let d = (p_i - p_k).norm();
    if d <= link.d_max && is_visible(p_i, p_k, Path::LineOfSight, surfaces) {
        let u = link.amplitude(d);
        if rng.random::<f64>() < link.detection_prob(d) {
            let noise: f64 = rng.sample(StandardNormal);
            let z_d = (d + params.noise_scale * link.sigma_d(u) * noise).clamp(0.0, link.d_max);
            let z_u = sample_truncated_rice(u, params.noise_scale * sigma_u(u, link.mh), link.gamma, rng);
            out.push(LabeledCoopMeasurement {
                measurement: CoopMeasurement { z_d, z_u },
                line_of_sight: true,
            });
        }
    }
    for _ in 0..poisson_count(params.false_alarm_mean, rng) {
        out.push(LabeledCoopMeasurement {
            measurement: CoopMeasurement {
                z_d: rng.random::<f64>() * link.d_max,
                z_u: sample_truncated_rayleigh(link.gamma, rng),
            },
            line_of_sight: false,
        });
    }
    out.shuffle(rng);
    out
}

/// Noise levels of the IMU generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoise {
    pub accel: f64,
    pub gyro: f64,
    pub heading: f64,
}

impl ImuNoise {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let m = &config.model;
        Self {
            accel: m.imu_accel_noise,
            gyro: m.imu_gyro_noise_deg.to_radians(),
            heading: m.imu_heading_noise_deg.to_radians(),
        }
    }

    pub fn scaled(self, s: f64) -> Self {
        Self {
            accel: self.accel * s,
            gyro: self.gyro * s,
            heading: self.heading * s,
        }
    }
}

/// IMU reading over the interval from `prev` to `cur`.
pub fn generate_imu<R: Rng + ?Sized>(
    prev: &MtState,
    cur: &MtState,
    dt: f64,
    noise: &ImuNoise,
    rng: &mut R,
) -> ImuMeasurement {
    let a_global = (cur.velocity - prev.velocity) / dt;
    let (s, c) = (-cur.heading).sin_cos();
    let a_body = Point::new(c * a_global.x - s * a_global.y, s * a_global.x + c * a_global.y);
    let g = |rng: &mut R, sd: f64| -> f64 {
        if sd > 0.0 {
            Normal::new(0.0, sd).expect("finite").sample(rng)
        } else {
            0.0
        }
    };
    let accel = a_body + Point::new(g(rng, noise.accel), g(rng, noise.accel));
    let gyro = wrap_angle(cur.heading - prev.heading) / dt + g(rng, noise.gyro);
    let heading = wrap_angle(cur.heading + g(rng, noise.heading));
    ImuMeasurement { accel, gyro, heading }
}

/// LOS anchor followed by one single-bounce VA per surface for BS `j`.
pub fn virtual_anchors(config: &ScenarioConfig, j: usize) -> Vec<VirtualAnchor> {
    let p_bs = config.bs_position(j);
    std::iter::once(VirtualAnchor {
        position: p_bs,
        path: Path::LineOfSight,
    })
    .chain(config.surfaces().iter().enumerate().map(|(l, s)| VirtualAnchor {
        position: crate::geometry::mirror_point(&p_bs, s),
        path: Path::Reflection(l),
    }))
    .collect()
}

/// The true VA positions of BS `j` visible from `p_mt`, excluding the LOS.
pub fn visible_vas(config: &ScenarioConfig, j: usize, p_mt: &Point) -> Vec<VirtualAnchor> {
    let surfaces = config.surfaces();
    virtual_anchors(config, j)
        .into_iter()
        .filter(|va| va.path != Path::LineOfSight)
        .filter(|va| is_visible(p_mt, &va.position, va.path, &surfaces))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{default_scenario, rng_stream, StreamTag};
    use approx::assert_abs_diff_eq;

    fn link() -> LinkModel {
        let mut c = default_scenario();
        c.toggles.mimo = true;
        LinkModel::bs(&c, 0)
    }

    #[test]
    fn sigma_d_reference_value() {
        let s = sigma_d(100.0, rms_bandwidth(500e6)).unwrap();
        // c / (2√2 π β u) by direct substitution
        let beta = 500e6 / 12f64.sqrt();
        let want = (SPEED_OF_LIGHT.powi(2) / (8.0 * PI * PI * beta * beta * 1e4)).sqrt();
        assert_abs_diff_eq!(s, want, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 2.339e-3, epsilon = 2e-6);
        assert_abs_diff_eq!(sigma_d(200.0, beta).unwrap(), s / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sigma_d(100.0, 2.0 * beta).unwrap(), s / 2.0, epsilon = 1e-15);
        assert!(sigma_d(0.0, beta).is_err());
    }

    #[test]
    fn sigma_d_matches_numeric_fisher_information() {
        // Fisher information of the delay for a flat spectrum sampled on a
        // fine grid: J = 8π² u² Σ f² / N (per unit-SNR normalization).
        let b = 500e6;
        let n = 20_001;
        let mean_f2 = (0..n)
            .map(|i| {
                let f = -b / 2.0 + b * i as f64 / (n - 1) as f64;
                f * f
            })
            .sum::<f64>()
            / n as f64;
        let u = 37.0;
        let j = 8.0 * PI * PI * u * u * mean_f2;
        let sd_delay = (1.0 / j).sqrt();
        let want = SPEED_OF_LIGHT * sd_delay;
        let got = sigma_d(u, rms_bandwidth(b)).unwrap();
        assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn two_element_aperture() {
        let lambda = 0.05;
        let array = ArrayGeometry::ula(2, lambda / 2.0);
        let ap = Aperture::new(&array, lambda);
        assert_abs_diff_eq!(ap.d2(PI / 2.0), 0.125, epsilon = 1e-15);
        let u = 7.0;
        assert_abs_diff_eq!(
            sigma_angle(u, PI / 2.0, &array, lambda).unwrap(),
            1.0 / (PI * u),
            epsilon = 1e-15
        );
        assert_eq!(sigma_angle(u, 0.0, &array, lambda), Err(MeasurementError::DegenerateAperture));
        assert_abs_diff_eq!(
            sigma_angle(2.0 * u, 1.0, &array, lambda).unwrap(),
            sigma_angle(u, 1.0, &array, lambda).unwrap() / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn aperture_matches_numeric_fisher_information() {
        // Fisher information of φ for a narrowband steering vector with the
        // phase referenced to the centroid: J = 8π² u² Σ (∂/∂φ proj_h)² where
        // proj_h = (d_h/λ) cos(φ − ψ_h); its derivative is the sine projection.
        let lambda = 0.05;
        let array = ArrayGeometry::square_ura(2, lambda / 2.0);
        let ap = Aperture::new(&array, lambda);
        for phi in [0.0, 0.4, 1.3, -2.0] {
            let h = 1e-6;
            let phase = |p: f64| -> Vec<f64> {
                let v: Vec<f64> = array
                    .elements()
                    .iter()
                    .map(|&(d, psi)| d / lambda * (p - psi).cos())
                    .collect();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.into_iter().map(|x| x - m).collect()
            };
            let (a, b) = (phase(phi + h), phase(phi - h));
            let fim: f64 = a.iter().zip(&b).map(|(x, y)| ((x - y) / (2.0 * h)).powi(2)).sum();
            assert_abs_diff_eq!(ap.d2(phi), fim, epsilon = 1e-8);
        }
    }

    #[test]
    fn sigma_u_values() {
        assert_abs_diff_eq!(sigma_u(0.0, 512.0), 0.5f64.sqrt(), epsilon = 1e-15);
        let mh: f64 = 512.0;
        assert_abs_diff_eq!(sigma_u((4.0 * mh).sqrt(), mh), 1.5f64.sqrt(), epsilon = 1e-15);
        let mut prev = 0.0;
        for i in 0..100 {
            let s = sigma_u(i as f64, mh);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn amplitude_truth_values() {
        let r = RadioParams::default();
        assert_abs_diff_eq!(amplitude_truth(1.0, 0, &r).unwrap(), 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(amplitude_truth(10.0, 0, &r).unwrap(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(amplitude_truth(1.0, 1, &r).unwrap(), 70.794_578_438_413_8, epsilon = 1e-9);
        assert!(amplitude_truth(0.0, 0, &r).is_err());
    }

    #[test]
    fn detection_modes() {
        let s = 0.5f64.sqrt();
        assert_abs_diff_eq!(
            detection_prob(0.0, 2.0, s, DetectionModel::Amplitude),
            (-4.0f64 / (2.0 * 0.5)).exp(),
            epsilon = 1e-15
        );
        for u in [0.0, 1.0, 50.0] {
            assert_eq!(detection_prob(u, 2.0, s, DetectionModel::Constant(0.98)), 0.98);
        }
    }

    #[test]
    fn lhf_mode_and_distance_ratio() {
        let l = link();
        let p_mt = Point::new(3.0, 4.0);
        let o = 0.3;
        let p_va = Point::new(-6.0, 20.0);
        let u = 5.0;
        let pp = path_params(&p_mt, o, &p_va, Path::Reflection(0)).unwrap();
        let z = Measurement {
            z_d: pp.distance,
            z_aoa: pp.aoa,
            z_aod: Some(pp.aod),
            z_u: 5.0,
        };
        let at_mode = l.ln_lhf(&z, &p_mt, o, &p_va, u);
        let product = ln_normal(0.0, l.sigma_d(u))
            + ln_normal(0.0, l.sigma_aoa(u, pp.aoa))
            + ln_normal(0.0, l.sigma_aod(u, pp.aod).unwrap())
            + ln_truncated_rice(5.0, u, l.sigma_u(u), l.gamma);
        assert_abs_diff_eq!(at_mode, product, epsilon = 1e-6);
        let shifted = Measurement {
            z_d: pp.distance + 3.0 * l.sigma_d(u),
            ..z
        };
        assert_abs_diff_eq!(l.ln_lhf(&shifted, &p_mt, o, &p_va, u) - at_mode, -4.5, epsilon = 1e-9);
        let wrapped = Measurement {
            z_aoa: pp.aoa + 2.0 * PI,
            ..z
        };
        assert_abs_diff_eq!(l.ln_lhf(&wrapped, &p_mt, o, &p_va, u), at_mode, epsilon = 1e-9);
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn rice_factor_integrates_to_detection_probability() {
        let gamma = 2.0;
        for u in [0.0, 0.5, 2.0, 3.0, 8.0] {
            let s = sigma_u(u, 512.0);
            let q = simpson(|z| ln_rice_factor(z, u, s, gamma).exp(), gamma, u + 40.0, 40_000);
            assert_abs_diff_eq!(q, detection_prob(u, gamma, s, DetectionModel::Amplitude), epsilon = 1e-8);
            let norm = simpson(|z| ln_truncated_rice(z, u, s, gamma).exp(), gamma, u + 40.0, 40_000);
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn exceedance_table_matches_marcum() {
        let t = ExceedanceTable::new(2.0, 512.0);
        for u in [0.0, 0.3, 1.0, 2.2, 3.7, 6.0, 9.0, 40.0] {
            let s = sigma_u(u, 512.0);
            let q = marcum_q1(u / s, 2.0 / s);
            assert_abs_diff_eq!(t.ln_q1(u).exp(), q, epsilon = 1e-5);
        }
    }

    #[test]
    fn false_alarm_density_integrates_to_one() {
        let l = link();
        let z = |d: f64, u: f64| Measurement {
            z_d: d,
            z_aoa: 0.1,
            z_aod: Some(-1.0),
            z_u: u,
        };
        let base = l.ln_lhf_fa(&z(3.0, 2.5));
        assert_eq!(base, l.ln_lhf_fa(&z(30.0, 2.5)));
        assert_eq!(
            base,
            l.ln_lhf_fa(&Measurement {
                z_aoa: 2.0,
                z_aod: Some(0.5),
                ..z(3.0, 2.5)
            })
        );
        // the density is constant in (d, aoa, aod), so integrate amplitude only
        let amp = simpson(|u| ln_truncated_rayleigh(u, l.gamma).exp(), l.gamma, l.gamma + 40.0, 40_000);
        let volume = l.d_max * TAU * TAU;
        let per_point = (base - ln_truncated_rayleigh(2.5, l.gamma)).exp();
        assert_abs_diff_eq!(amp * volume * per_point, 1.0, epsilon = 1e-9);
        assert_eq!(l.ln_lhf_fa(&z(l.d_max + 1.0, 2.5)), f64::NEG_INFINITY);
    }

    #[test]
    fn coop_density() {
        let c = CoopLinkModel::new(&default_scenario());
        let (a, b) = (Point::new(1.0, 1.0), Point::new(4.0, 5.0));
        let s = c.sigma_d(c.amplitude(5.0));
        let z = CoopMeasurement { z_d: 5.0, z_u: 3.0 };
        assert_abs_diff_eq!(c.ln_lhf(&z, &a, &b).exp(), 1.0 / ((2.0 * PI).sqrt() * s), epsilon = 1e-6);
        assert_eq!(c.ln_lhf(&z, &a, &b), c.ln_lhf(&z, &b, &a));
        let lo = CoopMeasurement { z_d: 5.0 - 2.0 * s, z_u: 3.0 };
        let hi = CoopMeasurement { z_d: 5.0 + 2.0 * s, z_u: 3.0 };
        assert_abs_diff_eq!(c.ln_lhf(&lo, &a, &b), c.ln_lhf(&hi, &a, &b), epsilon = 1e-9);
    }

    #[test]
    fn imu_density() {
        let s = 10f64.to_radians();
        let z = ImuMeasurement {
            accel: Point::zeros(),
            gyro: 0.0,
            heading: 0.4,
        };
        assert_abs_diff_eq!(ln_lhf_imu(&z, 0.4, s), ln_normal(0.0, s), epsilon = 1e-15);
        let z2 = ImuMeasurement {
            heading: 0.4 + 2.0 * PI,
            ..z
        };
        assert_abs_diff_eq!(ln_lhf_imu(&z2, 0.4, s), ln_lhf_imu(&z, 0.4, s), epsilon = 1e-12);
        assert_eq!(ImuNoise::from_config(&default_scenario()).heading, s);
    }

    #[test]
    fn generator_deterministic_case() {
        let mut c = default_scenario();
        c.toggles.mimo = true;
        c.model.detection_probability = 1.0;
        let l = LinkModel::bs(&c, 0);
        let truth = c.trajectories().unwrap()[0][0];
        let vas = virtual_anchors(&c, 0);
        let surfaces = c.surfaces();
        let visible = vas
            .iter()
            .filter(|v| is_visible(&truth.position, &v.position, v.path, &surfaces))
            .count();
        assert!(visible >= 3);
        let params = GeneratorParams {
            false_alarm_mean: 0.0,
            noise_scale: 1e-6,
        };
        let mut rng = rng_stream(1, 0, StreamTag::BsMeasurements);
        let ms = generate_bs_measurements(&truth, &vas, &surfaces, &l, &c.radio, &params, &mut rng);
        assert_eq!(ms.len(), visible);
        for m in &ms {
            let Origin::Path(path) = m.origin else { panic!("no false alarms expected") };
            let va = vas.iter().find(|v| v.path == path).unwrap();
            let pp = path_params(&truth.position, truth.heading, &va.position, path).unwrap();
            assert_abs_diff_eq!(m.measurement.z_d, pp.distance, epsilon = 1e-6);
            assert_abs_diff_eq!(wrap_angle(m.measurement.z_aoa - pp.aoa), 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(wrap_angle(m.measurement.z_aod.unwrap() - pp.aod), 0.0, epsilon = 1e-6);
            assert!(m.measurement.z_u >= l.gamma);
        }
    }

    #[test]
    fn simo_has_no_aod() {
        let mut c = default_scenario();
        c.toggles.mimo = false;
        let l = LinkModel::bs(&c, 0);
        assert!(l.bs_aperture.is_none());
        let truth = c.trajectories().unwrap()[0][0];
        let params = GeneratorParams {
            false_alarm_mean: 5.0,
            noise_scale: 1.0,
        };
        let mut rng = rng_stream(2, 0, StreamTag::BsMeasurements);
        let vas = virtual_anchors(&c, 0);
        let ms = generate_bs_measurements(&truth, &vas, &c.surfaces(), &l, &c.radio, &params, &mut rng);
        assert!(ms.iter().all(|m| m.measurement.z_aod.is_none()));
    }

    #[test]
    fn truncated_rice_sampler_matches_marcum() {
        let mut rng = rng_stream(3, 0, StreamTag::Custom(9));
        let (gamma, u) = (2.0, 1.5);
        let s = sigma_u(u, 512.0);
        let n = 100_000;
        let exceed = (0..n)
            .filter(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (u + s * a).hypot(s * b) >= gamma
            })
            .count();
        let p = detection_prob(u, gamma, s, DetectionModel::Amplitude);
        assert!((exceed as f64 / n as f64 - p).abs() < 0.01);
        for _ in 0..1000 {
            assert!(sample_truncated_rice(u, s, gamma, &mut rng) >= gamma);
            assert!(sample_truncated_rayleigh(gamma, &mut rng) >= gamma);
        }
    }

    #[test]
    fn imu_straight_line_is_quiet() {
        let c = default_scenario();
        let track = &c.trajectories().unwrap()[0];
        let noise = ImuNoise::from_config(&c).scaled(0.0);
        let mut rng = rng_stream(4, 0, StreamTag::Imu);
        let z = generate_imu(&track[1], &track[2], c.dt, &noise, &mut rng);
        assert_abs_diff_eq!(z.accel.norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z.gyro, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z.heading, track[2].heading, epsilon = 1e-12);
    }
}
