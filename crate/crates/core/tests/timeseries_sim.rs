mod common;

use std::f64::consts::PI;

use adlift_core::synth::{gen_inhomogeneous_poisson, hourly_counts, Harmonic, IntensitySpec};
use adlift_core::timeseries::{build_virtual_clock, check_alarm, ssa_fit, ssa_forecast, AlarmConfig};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn weekly(hours: usize, base: f64, trend: f64, amplitude: f64) -> IntensitySpec {
    IntensitySpec {
        base,
        trend,
        harmonics: vec![Harmonic { period_hours: 168.0, amplitude, phase: 0.3 }],
        hours,
        start: 0,
    }
}

/// Closed-form `∫_0^t rate` for specs whose rate never clips at zero.
fn cumulative(spec: &IntensitySpec, t: f64) -> f64 {
    let mut total = spec.base * t + spec.trend * t * t / 2.0;
    for h in &spec.harmonics {
        let w = 2.0 * PI / h.period_hours;
        total += h.amplitude / w * ((w * t + h.phase).sin() - h.phase.sin());
    }
    total
}

fn hourly_truth(spec: &IntensitySpec, from: usize, to: usize) -> Vec<f64> {
    (from..to).map(|h| cumulative(spec, (h + 1) as f64) - cumulative(spec, h as f64)).collect()
}

#[test]
fn trend_plus_weekly_rank_four() {
    let spec = weekly(672 + 168, 5000.0, 1.0, 2000.0);
    let times = gen_inhomogeneous_poisson(&spec, 1).unwrap();
    let counts: Vec<f64> = hourly_counts(&times, 672 + 168).iter().map(|&c| c as f64).collect();
    let (history, future) = counts.split_at(672);
    let model = ssa_fit(history, 168, Some(4)).unwrap();
    let residual: Vec<f64> = history.iter().zip(&model.reconstruction).map(|(a, b)| a - b).collect();
    let captured = 1.0 - common::sample_variance(&residual) / common::sample_variance(history);
    assert!(captured >= 0.99, "{captured}");

    let truth = hourly_truth(&spec, 672, 672 + 168);
    let forecast = ssa_forecast(&model, 168);
    let rmse = (forecast.iter().zip(&truth).map(|(f, t)| (f - t).powi(2)).sum::<f64>() / 168.0).sqrt();
    assert!(rmse / common::mean(&truth) < 0.05, "relative rmse {}", rmse / common::mean(&truth));
    assert_eq!(future.len(), 168);
}

#[test]
fn clock_tracks_generator_cumulative() {
    let spec = IntensitySpec {
        base: 10.0,
        trend: 0.0,
        harmonics: vec![Harmonic { period_hours: 24.0, amplitude: 6.0, phase: 0.0 }],
        hours: 240,
        start: 0,
    };
    let clock = build_virtual_clock(&hourly_truth(&spec, 0, 240)).unwrap();
    // linear interpolation error of a C² function over unit steps is at most max|λ'| / 8
    let bound = 6.0 * 2.0 * PI / 24.0 / 8.0;
    for i in 0..=2400 {
        let t = i as f64 / 10.0;
        let err = (clock.cumulative(t).unwrap() - cumulative(&spec, t)).abs();
        assert!(err <= bound + 1e-9, "t={t}: {err}");
    }
}

fn daily(hours: usize) -> IntensitySpec {
    IntensitySpec {
        base: 10.0,
        trend: 0.0,
        harmonics: vec![Harmonic { period_hours: 24.0, amplitude: 8.0, phase: 1.0 }],
        hours,
        start: 0,
    }
}

#[test]
fn time_rescaling_homogenizes_events() {
    let spec = daily(1000);
    let times = gen_inhomogeneous_poisson(&spec, 12).unwrap();
    let clock = build_virtual_clock(&hourly_truth(&spec, 0, 1000)).unwrap();
    let virt = clock.virtualize(&times).unwrap();
    assert!(virt.windows(2).all(|w| w[0] <= w[1]));
    let gaps: Vec<f64> = virt.windows(2).map(|w| w[1] - w[0]).collect();
    let rate = cumulative(&spec, 1000.0) / 1000.0;
    let p = common::ks_exponential_p(&gaps, rate);
    assert!(p > 0.01, "p = {p}");
    let per_hour: Vec<f64> = hourly_counts(&virt, 1000).iter().map(|&c| c as f64).collect();
    let dispersion = common::sample_variance(&per_hour) / common::mean(&per_hour);
    assert!((0.8..=1.2).contains(&dispersion), "{dispersion}");
}

#[test]
fn in_control_false_alarm_rate() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let n = 200_000;
    let actual: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let config = AlarmConfig::default();
    let report = check_alarm(&actual, &vec![0.0; n], &config).unwrap();
    let rate = report.alarms.len() as f64 / (n - config.residual_window) as f64;
    assert!(rate < 0.005, "{rate}");
}
