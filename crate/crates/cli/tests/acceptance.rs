//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. Positional arguments select criteria by
//! substring.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mpslam_cli::runner::{run_batch, RunRecord};
use mpslam_core::association::{brute_force_da, loopy_da, max_total_variation, AssociationProblem, DaParams};
use mpslam_core::geometry::{is_visible, mirror_point, reflection_point, Point, Surface};
use mpslam_core::measurement::{
    detection_prob, generate_bs_measurements, virtual_anchors, DetectionModel, GeneratorParams, LinkModel,
};
use mpslam_core::scenario::{load_scenario, Experiment, MtState, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = scenario_path(name);
    load_scenario(&fs::read_to_string(&path).expect("bundled scenario")).expect("valid scenario")
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(name)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------------------

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 4];
    let mut checked = 0;
    while checked < 10_000 {
        let angle = rng.random_range(-PI..PI);
        let normal = Point::new(angle.cos(), angle.sin());
        let anchor = Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let s = if checked % 2 == 0 {
            Surface::infinite(normal, anchor).unwrap()
        } else {
            let t = Point::new(-normal.y, normal.x);
            Surface::segment(anchor - 50.0 * t, anchor + 50.0 * t).unwrap()
        };
        let n = *s.normal();
        let side = |rng: &mut ChaCha8Rng| {
            let along = Point::new(-n.y, n.x) * rng.random_range(-20.0..20.0);
            anchor + along + n * rng.random_range(0.1..20.0)
        };
        let (p_bs, p_mt) = (side(&mut rng), side(&mut rng));
        let p_va = mirror_point(&p_bs, &s);
        let Ok(q) = reflection_point(&p_va, &p_bs, &p_mt, &s) else {
            continue;
        };
        checked += 1;

        // involution
        worst[0] = worst[0].max((mirror_point(&p_va, &s) - p_bs).norm());
        // unfolded path length equals the reflected one
        let unfolded = (p_mt - p_va).norm();
        let folded = (q - p_bs).norm() + (p_mt - q).norm();
        worst[1] = worst[1].max((unfolded - folded).abs());
        // angle of incidence equals angle of reflection
        let d_in = (q - p_bs).normalize();
        let d_out = (p_mt - q).normalize();
        worst[2] = worst[2].max((d_out - (d_in - 2.0 * d_in.dot(&n) * n)).norm());
        // VA, reflection point and MT are collinear and q is on the surface
        let a = q - p_va;
        let b = p_mt - p_va;
        let cross = (a.x * b.y - a.y * b.x).abs() / b.norm();
        worst[3] = worst[3].max(cross).max((q - anchor).dot(&n).abs());
    }
    let elapsed = start.elapsed();
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max < 1e-9 && elapsed < Duration::from_secs(5),
        format!(
            "10^4 configurations; max error involution {:.1e}, length {:.1e}, specular {:.1e}, collinear {:.1e}; {:.2} s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            secs(elapsed)
        ),
    )
}

fn da_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = DaParams::default();
    let mut tvs = Vec::with_capacity(200);
    let mut unconverged = 0;
    for _ in 0..200 {
        let k = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let beta: Vec<Vec<f64>> = (0..k).map(|_| (0..m).map(|_| rng.random_range(0.0..5.0)).collect()).collect();
        let beta0: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let xi: Vec<f64> = (0..m).map(|_| 1.0 + rng.random_range(0.0..5.0)).collect();
        let problem = AssociationProblem::new(beta, beta0, xi).unwrap();
        let loopy = loopy_da(&problem, &params);
        unconverged += (!loopy.converged) as usize;
        let exact = brute_force_da(&problem).unwrap();
        tvs.push(max_total_variation(&loopy, &exact));
    }
    let elapsed = start.elapsed();
    let within = tvs.iter().filter(|&&t| t < 1e-3).count();
    let max = tvs.iter().copied().fold(0.0, f64::max);
    let med = median(tvs.clone());
    outcome(
        within == tvs.len() && elapsed < Duration::from_secs(10),
        format!(
            "{within}/200 problems with per-row TV < 1e-3 (median {med:.1e}, max {max:.2e}, {unconverged} unconverged); {:.2} s",
            secs(elapsed)
        ),
    )
}

/// Regularized upper incomplete gamma function Q(a, x).
fn gamma_q(a: f64, x: f64) -> f64 {
    fn ln_gamma(x: f64) -> f64 {
        const C: [f64; 6] = [
            76.18009172947146,
            -86.50532032941677,
            24.01409824083091,
            -1.231739572450155,
            0.1208650973866179e-2,
            -0.5395239384953e-5,
        ];
        let tmp = x + 5.5 - (x + 0.5) * (x + 5.5).ln();
        let mut ser = 1.000000000190015;
        for (j, c) in C.iter().enumerate() {
            ser += c / (x + 1.0 + j as f64);
        }
        -tmp + (2.5066282746310005 * ser / x).ln()
    }
    if x <= 0.0 {
        return 1.0;
    }
    let gln = ln_gamma(a);
    if x < a + 1.0 {
        let (mut ap, mut sum) = (a, 1.0 / a);
        let mut del = sum;
        for _ in 0..1000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        1.0 - sum * (-x + a * x.ln() - gln).exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        (-x + a * x.ln() - gln).exp() * h
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn distributions() -> Outcome {
    let start = Instant::now();
    let mut config = scenario("desk.toml");
    config.model.amplitude_detection = false;
    let link = LinkModel::bs(&config, 0);
    let surfaces = config.surfaces();
    let vas = virtual_anchors(&config, 0);
    let truth = MtState {
        position: Point::new(6.0, 4.0),
        velocity: Point::zeros(),
        heading: 0.3,
    };
    let visible = vas
        .iter()
        .filter(|va| {
            is_visible(&truth.position, &va.position, va.path, &surfaces)
                && (va.position - truth.position).norm() <= link.d_max
        })
        .count();
    let (mu, p_d) = (config.model.false_alarm_mean, config.model.detection_probability);
    let params = GeneratorParams {
        false_alarm_mean: mu,
        noise_scale: 1.0,
    };

    let trials = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = vec![0usize; 64];
    for _ in 0..trials {
        let n = generate_bs_measurements(&truth, &vas, &surfaces, &link, &config.radio, &params, &mut rng).len();
        counts[n.min(63)] += 1;
    }
    // Poisson(μ) + Binomial(visible, p_d)
    let pmf = |n: usize| -> f64 {
        (0..=visible.min(n))
            .map(|d| {
                let det = binomial(visible, d) * p_d.powi(d as i32) * (1.0 - p_d).powi((visible - d) as i32);
                let k = n - d;
                let poi = (-mu + k as f64 * mu.ln() - (1..=k).map(|i| (i as f64).ln()).sum::<f64>()).exp();
                det * poi
            })
            .sum()
    };
    // pool bins so that every expected count is at least 5
    let mut bins: Vec<(f64, usize)> = Vec::new();
    let (mut e, mut o) = (0.0, 0usize);
    let mut cumulative = 0.0;
    for (n, &count) in counts.iter().enumerate().take(63) {
        let p = pmf(n);
        cumulative += p;
        e += p * trials as f64;
        o += count;
        if e >= 5.0 && (1.0 - cumulative) * trials as f64 >= 5.0 {
            bins.push((e, o));
            e = 0.0;
            o = 0;
        }
    }
    e += (1.0 - cumulative).max(0.0) * trials as f64;
    o += counts[63];
    bins.push((e, o));
    let chi2: f64 = bins.iter().map(|(e, o)| (*o as f64 - e).powi(2) / e).sum();
    let dof = bins.len() - 1;
    let p_value = gamma_q(dof as f64 / 2.0, chi2 / 2.0);

    // truncated-Rician exceedance around the threshold
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    for offset in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let sigma = link.sigma_u(link.gamma);
        let u = link.gamma + offset * sigma;
        let s = link.sigma_u(u);
        let exceed = (0..draws)
            .filter(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (u + s * a).hypot(s * b) >= link.gamma
            })
            .count() as f64
            / draws as f64;
        let predicted = detection_prob(u, link.gamma, s, DetectionModel::Amplitude);
        worst = worst.max((exceed - predicted).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        p_value > 0.01 && worst <= 0.01,
        format!(
            "count χ² = {chi2:.2} on {dof} dof (p = {p_value:.3}, {visible} visible paths); max exceedance error {worst:.4}; {:.2} s",
            secs(elapsed)
        ),
    )
}

fn noise_free() -> Outcome {
    let start = Instant::now();
    let config = scenario("noise_free.toml");
    let truth: Vec<Point> = virtual_anchors(&config, 0).iter().skip(1).map(|v| v.position).collect();
    let (mut worst_va, mut worst_mt, mut failures) = (0.0f64, 0.0f64, 0);
    for seed in 1..=10 {
        let run = &run_batch(&config, seed, 1).expect("valid scenario")[0];
        let last = run.steps.last().expect("steps");
        let mt_err = last.errors().fold(0.0, f64::max);
        let va_err = last
            .confirmed
            .iter()
            .map(|v| truth.iter().map(|t| (t - v.position).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        worst_va = worst_va.max(va_err);
        worst_mt = worst_mt.max(mt_err);
        if last.confirmed.is_empty() || va_err >= 0.1 || mt_err >= 0.05 {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!(
            "10 seeds at step {}: worst confirmed-VA error {worst_va:.4} m, worst MT error {worst_mt:.4} m, {failures} failing; {:.1} s",
            config.steps,
            secs(start.elapsed())
        ),
    )
}

struct RunSummary {
    final_rmse: f64,
    rmse: f64,
    mospa: f64,
}

fn summarize(r: &RunRecord) -> RunSummary {
    let rmse = |steps: &[mpslam_cli::runner::StepRecord]| {
        let e: Vec<f64> = steps.iter().flat_map(|s| s.errors()).collect();
        (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt()
    };
    let q = r.steps.len() * 3 / 4;
    RunSummary {
        final_rmse: rmse(&r.steps[q..]),
        rmse: rmse(&r.steps),
        mospa: r.steps.iter().map(|s| s.ospa).sum::<f64>() / r.steps.len() as f64,
    }
}

fn desk_runs(experiment: Experiment) -> (Vec<RunSummary>, Duration) {
    let mut config = scenario("desk.toml");
    config.toggles = experiment.toggles();
    let start = Instant::now();
    let runs = run_batch(&config, config.seed, 20).expect("valid scenario");
    (runs.iter().map(summarize).collect(), start.elapsed())
}

fn desk(e7: &[RunSummary], elapsed: Duration) -> Outcome {
    let rmse = median(e7.iter().map(|s| s.final_rmse).collect());
    let ospa = median(e7.iter().map(|s| s.mospa).collect());
    outcome(
        rmse < 0.5 && ospa < 1.0 && elapsed < Duration::from_secs(600),
        format!(
            "20 seeds: median final-quarter RMSE {rmse:.3} m, median OSPA {ospa:.3} m; {:.0} s",
            secs(elapsed)
        ),
    )
}

fn ordering(e7: &[RunSummary], e2: &[RunSummary]) -> Outcome {
    let wins = e7
        .iter()
        .zip(e2)
        .filter(|(a, b)| a.mospa < b.mospa && a.rmse < b.rmse)
        .count();
    let mean = |v: &[RunSummary], f: fn(&RunSummary) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    outcome(
        wins * 10 >= 7 * e7.len(),
        format!(
            "E7 beats E2 on MOSPA and RMSE in {wins}/{} paired seeds (mean MOSPA {:.3} vs {:.3}, mean RMSE {:.3} vs {:.3})",
            e7.len(),
            mean(e7, |s| s.mospa),
            mean(e2, |s| s.mospa),
            mean(e7, |s| s.rmse),
            mean(e2, |s| s.rmse)
        ),
    )
}

fn no_imu_stress() -> Outcome {
    let start = Instant::now();
    let flags = |experiment: Experiment| -> usize {
        let mut config = scenario("sharp_turn.toml");
        config.toggles = experiment.toggles();
        run_batch(&config, config.seed, 20)
            .expect("valid scenario")
            .iter()
            .map(RunRecord::divergence_flags)
            .sum()
    };
    // E3 is E7 without the IMU
    let without = flags(Experiment::E3);
    let with = flags(Experiment::E7);
    outcome(
        without > with,
        format!(
            "sharp turn, 20 seeds: {without} divergence flags without IMU, {with} with IMU; {:.0} s",
            secs(start.elapsed())
        ),
    )
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let run = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_mpslam"))
            .arg("run")
            .arg("--scenario")
            .arg(scenario_path("sharp_turn.toml"))
            .args(["--experiment", "E7", "--runs", "2", "--seed", "11", "--out"])
            .arg(out)
            .output()
            .expect("binary runs")
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !run(&a).status.success() || !run(&b).status.success() {
        return outcome(false, "CLI run failed");
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    outcome(
        differing.is_empty() && !names.is_empty(),
        format!(
            "{} CSV files compared, {} differ; {:.1} s",
            names.len(),
            differing.len(),
            secs(start.elapsed())
        ),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    if selected("geometry") {
        report("geometry", geometry());
    }
    if selected("da_oracle") {
        report("da_oracle", da_oracle());
    }
    if selected("distributions") {
        report("distributions", distributions());
    }
    if selected("noise_free") {
        report("noise_free", noise_free());
    }
    let need_e7 = selected("desk") || selected("ordering");
    let e7 = need_e7.then(|| desk_runs(Experiment::E7));
    if let (true, Some((e7, elapsed))) = (selected("desk"), &e7) {
        report("desk", desk(e7, *elapsed));
    }
    if let (true, Some((e7, _))) = (selected("ordering"), &e7) {
        let (e2, _) = desk_runs(Experiment::E2);
        report("ordering", ordering(e7, &e2));
    }
    if selected("no_imu") {
        report("no_imu", no_imu_stress());
    }
    if selected("determinism") {
        report("determinism", determinism());
    }

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
