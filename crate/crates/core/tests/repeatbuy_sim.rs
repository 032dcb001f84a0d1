mod common;

use std::collections::BTreeMap;

use adlift_core::repeatbuy::{
    adjust_for_churn, compare_frequencies, fit_nbd_truncated, ChurnConfig, FrequencyTable, SurvivalTable,
};
use adlift_core::synth::{apply_churn, gen_gamma_poisson, ChurnSpec, PopulationSpec};
use rayon::prelude::*;

const WINDOW: f64 = 720.0;

fn population(k: f64, m: f64, users: u64) -> PopulationSpec {
    PopulationSpec { k, m, users, window_hours: WINDOW, start: 0 }
}

fn observed_table(users: &[Vec<f64>]) -> FrequencyTable {
    FrequencyTable::from_counts(users.iter().map(|u| (u.len() as u64, 1)), WINDOW)
}

fn churned_table(users: &[Vec<f64>], tau_days: Option<f64>, seed: u64) -> FrequencyTable {
    let churn = ChurnSpec { tau_days: [("b".to_string(), tau_days)].into(), mix: [("b".to_string(), 1.0)].into() };
    FrequencyTable::from_events(&apply_churn(users, &churn, seed, 0).unwrap(), WINDOW)
}

#[test]
fn gamma_poisson_counts_follow_the_nbd() {
    let users = gen_gamma_poisson(&population(0.8, 2.5, 100_000), 1).unwrap();
    let n_max = users.iter().map(Vec::len).max().unwrap();
    let mut observed = vec![0.0; n_max + 1];
    for u in &users {
        observed[u.len()] += 1.0;
    }
    let mut expected: Vec<f64> = (0..=n_max).map(|n| 1e5 * common::nbd_pmf(0.8, 2.5, n as u64)).collect();
    let tail = 1e5 - expected.iter().sum::<f64>();
    *expected.last_mut().unwrap() += tail;
    let p = common::pooled_pearson_p(&observed, &expected, 0);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn truncated_fit_recovers_parameters() {
    // about 10^5 users with at least one event
    let users = gen_gamma_poisson(&population(0.8, 2.5, 147_500), 2).unwrap();
    let freq = observed_table(&users);
    let fit = fit_nbd_truncated(&freq).unwrap();
    assert!((fit.k / 0.8 - 1.0).abs() < 0.1, "k = {}", fit.k);
    assert!((fit.m / 2.5 - 1.0).abs() < 0.1, "m = {}", fit.m);
}

#[test]
fn refits_on_model_resamples_are_calibrated() {
    let users = gen_gamma_poisson(&population(0.8, 2.5, 100_000), 3).unwrap();
    let base = fit_nbd_truncated(&observed_table(&users)).unwrap();
    let passes: usize = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let resampled = gen_gamma_poisson(&population(base.k, base.m, 100_000), 1000 + rep).unwrap();
            let freq = observed_table(&resampled);
            let fit = fit_nbd_truncated(&freq).unwrap();
            usize::from(compare_frequencies(&freq, &fit).gof.p_value > 0.01)
        })
        .sum();
    assert!(passes >= 95, "{passes}/100");
}

fn singleton_excess_vs(freq: &FrequencyTable, k: f64, m: f64) -> f64 {
    let p0 = common::nbd_pmf(k, m, 0);
    freq.count(1) as f64 - freq.total() as f64 * common::nbd_pmf(k, m, 1) / (1.0 - p0)
}

#[test]
fn churn_inflates_singletons_monotonically() {
    let users = gen_gamma_poisson(&population(0.8, 2.5, 100_000), 4).unwrap();
    let taus = [None, Some(60.0), Some(30.0), Some(15.0), Some(7.0), Some(3.0), Some(1.0)];
    let excess: Vec<f64> =
        taus.iter().map(|&tau| singleton_excess_vs(&churned_table(&users, tau, 4), 0.8, 2.5)).collect();
    assert!(excess.windows(2).all(|w| w[1] >= w[0]), "{excess:?}");

    let share = |f: &FrequencyTable| f.count(1) as f64 / f.total() as f64;
    let plain = churned_table(&users, None, 4);
    let churned = churned_table(&users, Some(10.0), 4);
    assert!(share(&churned) > share(&plain));
}

#[test]
fn mixed_churn_leaves_singleton_excess_against_naive_fit() {
    // one long-lived browser and one that drops cookies every few days
    let users = gen_gamma_poisson(&population(0.8, 2.5, 100_000), 4).unwrap();
    let churn = ChurnSpec {
        tau_days: [("a".to_string(), None), ("b".to_string(), Some(3.0))].into(),
        mix: [("a".to_string(), 0.5), ("b".to_string(), 0.5)].into(),
    };
    let freq = FrequencyTable::from_events(&apply_churn(&users, &churn, 4, 0).unwrap(), WINDOW);
    let naive = fit_nbd_truncated(&freq).unwrap();
    let report = compare_frequencies(&freq, &naive);
    assert!(report.singleton_excess > 0.0, "{}", report.singleton_excess);
    assert!(report.gof.p_value < 0.01);
}

/// Rounded expected zero-truncated counts for `total` cookies.
fn exact_table(k: f64, m: f64, total: f64) -> FrequencyTable {
    let p0 = common::nbd_pmf(k, m, 0);
    FrequencyTable::from_counts(
        (1..200u64).map(|n| (n, (total * common::nbd_pmf(k, m, n) / (1.0 - p0)).round() as u64)),
        WINDOW,
    )
}

#[test]
fn no_churn_adjustment_equals_plain_fit() {
    let freq = exact_table(1.3, 4.0, 1e6);
    let fit = fit_nbd_truncated(&freq).unwrap();
    let survival = SurvivalTable::from_taus([("b", f64::INFINITY)]);
    let mix: BTreeMap<String, f64> = [("b".to_string(), 1.0)].into();
    let config = ChurnConfig { users: 1000, ..Default::default() };
    let adj = adjust_for_churn(&freq, &survival, &mix, 5, &config).unwrap();
    assert!((adj.k / fit.k - 1.0).abs() < 1e-3, "{} vs {}", adj.k, fit.k);
    assert!((adj.m / fit.m - 1.0).abs() < 1e-3, "{} vs {}", adj.m, fit.m);
    assert!(adj.missing_loyal < 1e-4 * freq.total() as f64, "{}", adj.missing_loyal);
    let p0 = common::nbd_pmf(1.3, 4.0, 0);
    assert!((adj.true_users / (1e6 / (1.0 - p0)) - 1.0).abs() < 1e-3);
}

#[test]
fn heavy_churn_hides_loyal_users() {
    let users = gen_gamma_poisson(&population(0.8, 2.5, 50_000), 5).unwrap();
    let freq = churned_table(&users, Some(1.0), 5);
    let survival = SurvivalTable::from_taus([("b", 1.0)]);
    let mix: BTreeMap<String, f64> = [("b".to_string(), 1.0)].into();
    let config = ChurnConfig { users: 20_000, ..Default::default() };
    let threshold = freq.max_n() + 1;
    let adj = adjust_for_churn(&freq, &survival, &mix, threshold, &config).unwrap();
    assert!(adj.missing_loyal > 0.0);
}
