//! Particle representations of MT and PVA beliefs, prediction and resampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{wrap_angle, Point};
use crate::measurement::{ln_lhf_imu, ImuMeasurement};
use crate::scenario::MtState;

/// The particle weights could not be normalized; they were reset to uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("all particle weights underflowed")]
pub struct DegenerateWeights;

#[inline]
fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Systematic resampling: `n` ancestor indices for normalized `weights`.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut cumulative = weights[0];
    let mut i = 0;
    for _ in 0..n {
        while u > cumulative && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
        u += step;
    }
    out
}

/// Effective sample size `1 / Σ w²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Multiplies `weights` by `exp(log_factors)` and renormalizes. On underflow
/// the weights are reset to uniform.
pub fn apply_log_factors(weights: &mut [f64], log_factors: &[f64]) -> Result<(), DegenerateWeights> {
    let max = log_factors
        .iter()
        .zip(weights.iter())
        .filter(|(_, w)| **w > 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let n = weights.len() as f64;
    if !max.is_finite() {
        weights.iter_mut().for_each(|w| *w = 1.0 / n);
        return Err(DegenerateWeights);
    }
    let mut total = 0.0;
    for (w, l) in weights.iter_mut().zip(log_factors) {
        *w *= (l - max).exp();
        total += *w;
    }
    if !(total > 0.0 && total.is_finite()) {
        weights.iter_mut().for_each(|w| *w = 1.0 / n);
        return Err(DegenerateWeights);
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtParticle {
    pub position: Point,
    pub velocity: Point,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtBelief {
    pub particles: Vec<MtParticle>,
    pub weights: Vec<f64>,
}

/// Noise parameters of the MT motion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionNoise {
    /// Driving acceleration noise, m/s².
    pub accel: f64,
    /// Heading noise per step without IMU, rad.
    pub heading_diffusion: f64,
    /// Gyroscope noise, rad/s.
    pub gyro: f64,
}

impl MtBelief {
    pub fn from_particles(particles: Vec<MtParticle>) -> Self {
        let n = particles.len();
        Self {
            particles,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Particles uniform in a box of half-width `position_spread` and
    /// `velocity_spread` about `start`. The heading is drawn from
    /// `N(observed, σ)` when a heading observation is given, otherwise
    /// uniformly within `heading_spread` of the true heading.
    pub fn initialize<R: Rng + ?Sized>(
        start: &MtState,
        count: usize,
        position_spread: f64,
        velocity_spread: f64,
        heading_spread: f64,
        heading_observation: Option<(f64, f64)>,
        rng: &mut R,
    ) -> Self {
        let sym = |half: f64, rng: &mut R| (2.0 * rng.random::<f64>() - 1.0) * half;
        let particles = (0..count)
            .map(|_| {
                let position = start.position
                    + Point::new(sym(position_spread, rng), sym(position_spread, rng));
                let velocity = start.velocity
                    + Point::new(sym(velocity_spread, rng), sym(velocity_spread, rng));
                let heading = match heading_observation {
                    Some((z, s)) => wrap_angle(z + s * gauss(rng)),
                    None => wrap_angle(start.heading + sym(heading_spread, rng)),
                };
                MtParticle {
                    position,
                    velocity,
                    heading,
                }
            })
            .collect();
        Self::from_particles(particles)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Weighted mean of position and velocity; circular mean of heading.
    pub fn mmse(&self) -> MtState {
        let mut position = Point::zeros();
        let mut velocity = Point::zeros();
        let (mut s, mut c) = (0.0, 0.0);
        for (p, w) in self.particles.iter().zip(&self.weights) {
            position += *w * p.position;
            velocity += *w * p.velocity;
            s += w * p.heading.sin();
            c += w * p.heading.cos();
        }
        MtState {
            position,
            velocity,
            heading: s.atan2(c),
        }
    }

    pub fn mmse_position(&self) -> Point {
        self.particles
            .iter()
            .zip(&self.weights)
            .fold(Point::zeros(), |acc, (p, w)| acc + *w * p.position)
    }

    /// Root of the trace of the position covariance.
    pub fn position_spread(&self) -> f64 {
        let mean = self.mmse_position();
        self.particles
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * (p.position - mean).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    pub fn apply_log_factors(&mut self, log_factors: &[f64]) -> Result<(), DegenerateWeights> {
        apply_log_factors(&mut self.weights, log_factors)
    }

    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        let idx = systematic_resample(&self.weights, n, rng);
        self.particles = idx.into_iter().map(|i| self.particles[i]).collect();
        self.weights = vec![1.0 / n as f64; n];
    }

    /// Resamples when the effective sample size drops below half the count.
    pub fn resample_if_needed<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        if self.ess() < 0.5 * self.len() as f64 {
            self.resample(rng);
            true
        } else {
            false
        }
    }

    /// Indices of an equally weighted sample of the belief in random order.
    pub fn draw_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut idx = systematic_resample(&self.weights, self.len(), rng);
        idx.shuffle(rng);
        idx
    }

    /// Constant-acceleration prediction. With a control input the body-frame
    /// acceleration is rotated by the propagated heading; otherwise the
    /// acceleration is pure noise and the heading diffuses.
    pub fn predict<R: Rng + ?Sized>(
        &mut self,
        control: Option<&ImuMeasurement>,
        dt: f64,
        noise: &MotionNoise,
        rng: &mut R,
    ) {
        for p in &mut self.particles {
            let mut accel = Point::new(noise.accel * gauss(rng), noise.accel * gauss(rng));
            match control {
                Some(z) => {
                    p.heading = wrap_angle(p.heading + z.gyro * dt + noise.gyro * dt * gauss(rng));
                    let (s, c) = p.heading.sin_cos();
                    accel += Point::new(c * z.accel.x - s * z.accel.y, s * z.accel.x + c * z.accel.y);
                }
                None => {
                    p.heading = wrap_angle(p.heading + noise.heading_diffusion * gauss(rng));
                }
            }
            p.position += p.velocity * dt + 0.5 * accel * dt * dt;
            p.velocity += accel * dt;
        }
    }

    /// Weights the particles by the heading factor of the IMU likelihood.
    pub fn imu_update(&mut self, z: &ImuMeasurement, sigma_heading: f64) -> Result<(), DegenerateWeights> {
        let lw: Vec<f64> = self
            .particles
            .iter()
            .map(|p| ln_lhf_imu(z, p.heading, sigma_heading))
            .collect();
        self.apply_log_factors(&lw)
    }
}

/// Identity of a PVA: where and when it was born.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PvaKey {
    pub bs: usize,
    pub birth_step: usize,
    /// `None` for the known line-of-sight anchor of a base station.
    pub birth_mt: Option<usize>,
    pub birth_measurement: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvaBelief {
    pub id: u64,
    pub key: PvaKey,
    pub positions: Vec<Point>,
    /// Path gain: the normalized amplitude the path would have at 1 m. The
    /// amplitude seen by an MT at distance `d` is `gain / d`.
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    pub existence: f64,
    /// Known position (the base station itself); never moved or pruned.
    pub anchored: bool,
}

/// Parameters of the PVA state transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvaTransition {
    pub survival: f64,
    /// Relative standard deviation of the gain random walk.
    pub gain_walk: f64,
    /// Position regularization noise, m.
    pub regularization: f64,
    /// Anchors only: probability of reappearing after being absent.
    pub reappearance: f64,
}

impl PvaBelief {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mmse_position(&self) -> Point {
        self.positions
            .iter()
            .zip(&self.weights)
            .fold(Point::zeros(), |acc, (p, w)| acc + *w * p)
    }

    pub fn mmse_gain(&self) -> f64 {
        self.gains.iter().zip(&self.weights).map(|(u, w)| u * w).sum()
    }

    pub fn position_spread(&self) -> f64 {
        let mean = self.mmse_position();
        self.positions
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * (p - mean).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn predict<R: Rng + ?Sized>(&mut self, t: &PvaTransition, rng: &mut R) {
        if self.anchored {
            self.existence = t.survival * self.existence + t.reappearance * (1.0 - self.existence);
        } else {
            self.existence *= t.survival;
            if t.regularization > 0.0 {
                for p in &mut self.positions {
                    *p += Point::new(t.regularization * gauss(rng), t.regularization * gauss(rng));
                }
            }
        }
        if t.gain_walk > 0.0 {
            for u in &mut self.gains {
                *u = (*u + t.gain_walk * *u * gauss(rng)).max(0.0);
            }
        }
        self.existence = self.existence.clamp(0.0, 1.0);
    }

    /// Kernel jitter of the positions that keeps the mean and covariance of
    /// the cloud, so repeated resampling does not collapse it.
    pub fn regularize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        if n < 2 || self.anchored {
            return;
        }
        let mean = self.mmse_position();
        let mut cov = nalgebra::Matrix2::zeros();
        for (p, w) in self.positions.iter().zip(&self.weights) {
            let d = p - mean;
            cov += *w * d * d.transpose();
        }
        let Some(chol) = cov.cholesky() else {
            return;
        };
        let h = (4.0 / (4.0 * n as f64)).powf(1.0 / 6.0);
        let shrink = (1.0 - h * h).sqrt();
        let l = chol.l();
        for p in &mut self.positions {
            let e = Point::new(gauss(rng), gauss(rng));
            *p = shrink * *p + (1.0 - shrink) * mean + h * (l * e);
        }
    }

    /// Resamples to equal weights and shuffles the particle order.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        let mut idx = systematic_resample(&self.weights, n, rng);
        idx.shuffle(rng);
        self.positions = idx.iter().map(|&i| self.positions[i]).collect();
        self.gains = idx.iter().map(|&i| self.gains[i]).collect();
        self.weights = vec![1.0 / n as f64; n];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::scenario::{rng_stream, StreamTag};
    use approx::assert_abs_diff_eq;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rng_stream(5, 0, StreamTag::Custom(1))
    }

    fn cloud(n: usize, velocity: Point) -> MtBelief {
        let mut r = rng();
        MtBelief::from_particles(
            (0..n)
                .map(|_| MtParticle {
                    position: Point::new(r.random::<f64>(), r.random::<f64>()),
                    velocity,
                    heading: 0.0,
                })
                .collect(),
        )
    }

    const QUIET: MotionNoise = MotionNoise {
        accel: 0.0,
        heading_diffusion: 0.0,
        gyro: 0.0,
    };

    #[test]
    fn prediction_without_noise() {
        let mut b = cloud(10, Point::zeros());
        let before = b.clone();
        b.predict(None, 1.0, &QUIET, &mut rng());
        assert_eq!(b.particles, before.particles);
        let mut b = cloud(10, Point::new(1.0, 0.0));
        let before = b.clone();
        b.predict(None, 1.0, &QUIET, &mut rng());
        for (p, q) in b.particles.iter().zip(&before.particles) {
            assert_abs_diff_eq!(p.position.x, q.position.x + 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(p.position.y, q.position.y, epsilon = 1e-15);
        }
    }

    #[test]
    fn control_input_accelerates_mean() {
        let mut b = cloud(1000, Point::new(0.5, 0.0));
        for p in &mut b.particles {
            p.heading = PI / 2.0;
        }
        let z = ImuMeasurement {
            accel: Point::new(0.2, 0.0),
            gyro: 0.0,
            heading: PI / 2.0,
        };
        let noisy = MotionNoise {
            accel: 1e-3,
            ..QUIET
        };
        b.predict(Some(&z), 1.0, &noisy, &mut rng());
        let v = b.mmse().velocity;
        // body x axis points along global y at heading π/2
        assert_abs_diff_eq!(v.x, 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(v.y, 0.2, epsilon = 1e-3);
    }

    #[test]
    fn imu_update_cases() {
        let s = 10f64.to_radians();
        let mut b = cloud(4, Point::zeros());
        let z = ImuMeasurement {
            accel: Point::zeros(),
            gyro: 0.0,
            heading: 0.0,
        };
        b.imu_update(&z, s).unwrap();
        assert!(b.weights.iter().all(|w| (w - 0.25).abs() < 1e-15));

        let mut b = cloud(2, Point::zeros());
        b.particles[1].heading = PI - 1e-12;
        b.imu_update(&z, s).unwrap();
        assert!(b.weights[0] > 1.0 - 1e-12);

        let mut c = cloud(2, Point::zeros());
        c.particles[1].heading = PI - 1e-12;
        let wrapped = ImuMeasurement {
            heading: 2.0 * PI,
            ..z
        };
        c.imu_update(&wrapped, s).unwrap();
        assert_abs_diff_eq!(c.weights[0], b.weights[0], epsilon = 1e-12);
    }

    #[test]
    fn underflow_resets_uniform() {
        let mut w = vec![0.5, 0.5];
        assert_eq!(apply_log_factors(&mut w, &[f64::NEG_INFINITY; 2]), Err(DegenerateWeights));
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn pva_prediction() {
        let mut p = PvaBelief {
            id: 0,
            key: PvaKey {
                bs: 0,
                birth_step: 0,
                birth_mt: Some(0),
                birth_measurement: 0,
            },
            positions: vec![Point::new(1.0, 2.0); 3],
            gains: vec![5.0; 3],
            weights: vec![1.0 / 3.0; 3],
            existence: 1.0,
            anchored: false,
        };
        let t = PvaTransition {
            survival: 0.999,
            gain_walk: 0.0,
            regularization: 0.0,
            reappearance: 0.5,
        };
        let mut r = rng();
        p.predict(&t, &mut r);
        assert_abs_diff_eq!(p.existence, 0.999, epsilon = 1e-15);
        assert!(p.positions.iter().all(|q| *q == Point::new(1.0, 2.0)));
        for _ in 0..9 {
            p.predict(&t, &mut r);
        }
        assert_abs_diff_eq!(p.existence, 0.999f64.powi(10), epsilon = 1e-12);
    }

    #[test]
    fn mmse_examples() {
        let mut b = MtBelief::from_particles(vec![
            MtParticle {
                position: Point::new(0.0, 0.0),
                velocity: Point::zeros(),
                heading: 0.0,
            },
            MtParticle {
                position: Point::new(2.0, 2.0),
                velocity: Point::zeros(),
                heading: 0.0,
            },
        ]);
        assert_eq!(b.mmse_position(), Point::new(1.0, 1.0));
        b.particles[1].position = Point::new(4.0, 0.0);
        b.weights = vec![0.75, 0.25];
        assert_abs_diff_eq!(b.mmse_position().x, 1.0, epsilon = 1e-15);
        let single = MtBelief::from_particles(vec![b.particles[1]]);
        assert_eq!(single.mmse_position(), Point::new(4.0, 0.0));
    }

    #[test]
    fn systematic_resampling_preserves_mean() {
        let mut r = rng();
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let raw: Vec<f64> = xs.iter().map(|x| (-(x - 0.3f64).powi(2) / 0.02).exp()).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mean: f64 = xs.iter().zip(&w).map(|(x, w)| x * w).sum();
        let var: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x - mean).powi(2)).sum();
        let se = (var / n as f64).sqrt();
        for _ in 0..100 {
            let idx = systematic_resample(&w, n, &mut r);
            let m: f64 = idx.iter().map(|&i| xs[i]).sum::<f64>() / n as f64;
            assert!((m - mean).abs() <= 3.0 * se, "{m} vs {mean}");
        }
    }

    #[test]
    fn regularization_keeps_mean_and_spread() {
        let mut g = rng();
        let n = 5000;
        let positions: Vec<Point> = (0..n)
            .map(|_| Point::new(3.0 + 0.2 * gauss(&mut g), -1.0 + 0.05 * gauss(&mut g)))
            .collect();
        let mut p = PvaBelief {
            id: 0,
            key: PvaKey {
                bs: 0,
                birth_step: 0,
                birth_mt: None,
                birth_measurement: 0,
            },
            positions,
            gains: vec![10.0; n],
            weights: vec![1.0 / n as f64; n],
            existence: 0.5,
            anchored: false,
        };
        let (mean, spread) = (p.mmse_position(), p.position_spread());
        let before = p.positions.clone();
        p.regularize(&mut g);
        assert!((p.mmse_position() - mean).norm() < 0.01);
        assert!((p.position_spread() / spread - 1.0).abs() < 0.05);
        assert!(p.positions.iter().zip(&before).all(|(a, b)| a != b));
    }
}
