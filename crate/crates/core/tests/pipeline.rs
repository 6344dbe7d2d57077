use chrono::{Duration, NaiveDate};
use jointcast::backtest::{backtest, earliest_as_of, last_complete_week, BacktestOutput, Pipeline};
use jointcast::bundle::{DatasetBundle, TrendSeries};
use jointcast::config::{RunConfig, Target};
use jointcast::ensemble::{self, Registry};
use jointcast::evaluate::{AVERAGE, NAIVE};
use jointcast::panel::{DailySeries, TimeSeries, WeeklySeries};
use jointcast::synthetic::{generate_synthetic, SyntheticScenario};

fn small_config() -> RunConfig {
    RunConfig {
        horizons: vec![1, 2],
        imputation_draws: 4,
        raw_train_weeks: 20,
        state_train_weeks: 15,
        ili_train_weeks: 30,
        ensemble_window_weeks: 6,
        ..RunConfig::default()
    }
}

fn bump(values: &[f64], start: NaiveDate, step: i64, after: NaiveDate) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| if start + Duration::days(step * i as i64) > after { 3.0 * v + 1.0 } else { *v })
        .collect()
}

fn tamper_daily(s: &DailySeries, after: NaiveDate) -> DailySeries {
    DailySeries::new(s.geo.clone(), s.signal.clone(), s.start(), bump(s.values(), s.start(), 1, after)).unwrap()
}

fn tamper_weekly(s: &WeeklySeries, after: NaiveDate) -> WeeklySeries {
    WeeklySeries::new(s.geo.clone(), s.signal.clone(), s.start(), bump(s.values(), s.start(), 7, after)).unwrap()
}

/// Every value dated after `after` is rewritten.
fn tamper(b: &DatasetBundle, after: NaiveDate) -> DatasetBundle {
    let mut t = b.clone();
    t.cases.values_mut().for_each(|s| *s = tamper_daily(s, after));
    t.deaths.values_mut().for_each(|s| *s = tamper_daily(s, after));
    t.ili.values_mut().for_each(|s| *s = tamper_weekly(s, after));
    for s in t.trends.values_mut() {
        *s = match s {
            TrendSeries::Daily(d) => TrendSeries::Daily(tamper_daily(d, after)),
            TrendSeries::Weekly(w) => TrendSeries::Weekly(tamper_weekly(w, after)),
        };
    }
    t
}

fn run(b: &DatasetBundle, cfg: &RunConfig, start: NaiveDate, end: NaiveDate) -> BacktestOutput {
    let p = Pipeline::prepare(b, cfg, earliest_as_of(cfg, start)).unwrap();
    backtest(&p, &Registry::default(), start, end).unwrap()
}

#[test]
fn backtest_emits_every_method_and_target() {
    let b = generate_synthetic(&SyntheticScenario { weeks: 90, ..Default::default() }).unwrap();
    let cfg = small_config();
    let end = last_complete_week(&b).unwrap() - Duration::days(14);
    let start = end - Duration::days(7 * 5);
    let out = run(&b, &cfg, start, end);
    let states = b.geography.states().len();
    for t in Target::ALL {
        let r = &out.results[&t];
        let methods = r.forecasts.methods();
        assert!(methods.contains(ensemble::METHOD), "{t}: {methods:?}");
        assert!(methods.contains(jointcast::state::METHOD));
        let ens = r.forecasts.iter().filter(|(k, _)| k.method == ensemble::METHOD).count();
        assert_eq!(ens, states * 6 * t.horizons(&cfg.horizons).len());
        assert!(r.report.get(AVERAGE, NAIVE, 1).is_some());
        assert!(r.forecasts.iter().all(|(k, v)| v.is_finite() && k.as_of() >= start && k.as_of() <= end));
        // the ensemble value is always one of the constituents' values
        for (k, v) in r.forecasts.iter().filter(|(k, _)| k.method == ensemble::METHOD) {
            let rec = out
                .selections
                .iter()
                .find(|s| s.target == t && s.geo == k.geo && s.horizon == k.horizon && s.window_end == k.as_of())
                .unwrap();
            assert_eq!(r.forecasts.lookup(&k.geo, k.target_week, k.horizon, &rec.chosen), Some(v));
        }
    }
}

#[test]
fn forecasts_ignore_data_after_the_as_of_date() {
    let b =
        generate_synthetic(&SyntheticScenario { weeks: 80, n_states: 4, states_per_region: 2, ..Default::default() })
            .unwrap();
    let cfg = small_config();
    let at = last_complete_week(&b).unwrap() - Duration::days(7 * 6);
    let clean = run(&b, &cfg, at, at);
    let dirty = run(&tamper(&b, at), &cfg, at, at);
    for t in Target::ALL {
        let (a, d) = (&clean.results[&t].forecasts, &dirty.results[&t].forecasts);
        assert!(!a.is_empty());
        assert_eq!(a.iter().collect::<Vec<_>>(), d.iter().collect::<Vec<_>>(), "{t}");
    }
    assert_eq!(clean.selections, dirty.selections);
    assert_eq!(clean.covariances, dirty.covariances);
}
