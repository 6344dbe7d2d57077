//! Rolling retrospective backtest: at each as-of week, every constituent is
//! run on data up to that week, the ensemble selects among them, and all
//! forecasts are scored against the observed weekly values.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use log::info;
use rayon::prelude::*;

use crate::bundle::DatasetBundle;
use crate::config::{RunConfig, Target};
use crate::ensemble::{self, Registry, SelectionRecord};
use crate::error::{Error, Result};
use crate::evaluate::{self, MetricReport, Truth};
use crate::features::{resolve_lags, LagTable};
use crate::forecast::{ForecastKey, ForecastTable};
use crate::imputation::{impute_area, ImputationSet, ImputeOptions};
use crate::national;
use crate::panel::{is_saturday, Signal, TimeSeries, WeeklySeries};
use crate::raw::{self, RawEstimates};
use crate::state::{self, CovarianceSpec};

fn weeks_between(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut w = start;
    while w <= end {
        out.push(w);
        w += Duration::days(7);
    }
    out
}

fn shift(d: NaiveDate, weeks: i64) -> NaiveDate {
    d + Duration::days(7 * weeks)
}

/// Inputs shared by every as-of date: the bundle, resolved lags, imputation
/// draws and weekly truth.
pub struct Pipeline<'a> {
    pub bundle: &'a DatasetBundle,
    pub cfg: &'a RunConfig,
    pub lags: LagTable,
    /// Imputation draws of the nation and every state.
    pub imputations: BTreeMap<String, ImputationSet>,
    pub truth: BTreeMap<Target, Truth>,
}

impl<'a> Pipeline<'a> {
    /// Resolves lags as of `earliest_as_of` and imputes the nation and every
    /// state.
    pub fn prepare(bundle: &'a DatasetBundle, cfg: &'a RunConfig, earliest_as_of: NaiveDate) -> Result<Self> {
        let lags = resolve_lags(bundle, cfg, earliest_as_of)?;
        Self::with_lags(bundle, cfg, lags)
    }

    pub fn with_lags(bundle: &'a DatasetBundle, cfg: &'a RunConfig, lags: LagTable) -> Result<Self> {
        let geo = &bundle.geography;
        let mut geos: Vec<String> = vec![geo.nation().id.clone()];
        geos.extend(geo.states().iter().map(|u| u.id.clone()));
        let opts = ImputeOptions { inclusive: cfg.donor_inclusive, first_donor_week: cfg.first_donor_week };
        let sets: Vec<ImputationSet> = geos
            .par_iter()
            .map(|g| {
                let ili =
                    bundle.weekly(&Signal::Ili, g).ok_or_else(|| Error::Missing(format!("weekly ILI for {g}")))?;
                let cases =
                    bundle.daily(&Signal::Cases, g).ok_or_else(|| Error::Missing(format!("daily cases for {g}")))?;
                impute_area(ili, cases, cfg.imputation_draws, cfg.seed, opts)
            })
            .collect::<Result<_>>()?;
        let imputations = geos.into_iter().zip(sets).collect();
        let truth = Target::ALL.iter().map(|t| Ok((*t, Truth::from_bundle(bundle, *t)?))).collect::<Result<_>>()?;
        Ok(Pipeline { bundle, cfg, lags, imputations, truth })
    }

    fn states(&self) -> Vec<String> {
        self.bundle.geography.states().iter().map(|u| u.id.clone()).collect()
    }

    /// Weekly %ILI panels of the states, one per imputation draw.
    pub fn exo_draws(&self) -> Result<Vec<BTreeMap<String, WeeklySeries>>> {
        (0..self.cfg.imputation_draws)
            .map(|n| {
                self.states()
                    .into_iter()
                    .map(|s| {
                        let set =
                            self.imputations.get(&s).ok_or_else(|| Error::Missing(format!("imputations for {s}")))?;
                        Ok((s, set.weekly_view(n)?))
                    })
                    .collect()
            })
            .collect()
    }

    /// Raw estimates needed by the state model at every date in `as_ofs`.
    pub fn raw_for(&self, target: Target, as_ofs: &[NaiveDate]) -> Result<RawEstimates> {
        let mut requests: Vec<(String, NaiveDate, u32)> =
            as_ofs.iter().flat_map(|t| state::raw_requests(self.bundle, self.cfg, target, *t)).collect();
        requests.sort();
        requests.dedup();
        info!("{target}: {} raw estimates", requests.len());
        raw::first_step_raw(self.bundle, self.cfg, &self.lags, target, &requests, &RawEstimates::default())
    }

    /// National forecast of `target` as of `as_of`.
    pub fn national(&self, target: Target, as_of: NaiveDate) -> Result<ForecastTable> {
        match target {
            Target::Ili => national::forecast_national_ili(self.bundle, self.cfg, as_of),
            _ => {
                let nation = &self.bundle.geography.nation().id;
                let imp =
                    self.imputations.get(nation).ok_or_else(|| Error::Missing(format!("imputations for {nation}")))?;
                Ok(national::forecast_national(self.bundle, imp, self.cfg, &self.lags, as_of, target)?.1)
            }
        }
    }

    /// Every constituent and baseline forecast of `target` as of `as_of`.
    pub fn constituents(
        &self,
        target: Target,
        as_of: NaiveDate,
        raw: &RawEstimates,
        exo: &[BTreeMap<String, WeeklySeries>],
    ) -> Result<(ForecastTable, Vec<CovarianceSpec>)> {
        let truth = &self.truth[&target];
        let horizons = target.horizons(&self.cfg.horizons);
        let states = self.states();
        let mut table = self.national(target, as_of)?;
        let disagg = ensemble::disaggregate(self.bundle, &table, truth)?;
        table.merge(disagg)?;
        let (st, specs) = state::forecast_state(self.bundle, self.cfg, raw, exo, as_of, target)?;
        table.merge(st)?;
        for s in &states {
            for &h in &horizons {
                let week = shift(as_of, h as i64);
                table.insert(ForecastKey::new(s, week, h, raw::METHOD), raw.get(s, week, h)?)?;
            }
        }
        let mut naive_geos = states.clone();
        naive_geos.push(self.bundle.geography.nation().id.clone());
        table.merge(evaluate::naive_forecast(truth, target, &naive_geos, as_of, &horizons)?)?;
        if target == Target::Ili {
            table.merge(self.ili_baselines(as_of)?)?;
        }
        Ok((table, specs))
    }

    /// AR-3 per state and VAR-1 across states, one week ahead.
    fn ili_baselines(&self, as_of: NaiveDate) -> Result<ForecastTable> {
        let truth = &self.truth[&Target::Ili];
        let states = self.states();
        let week = shift(as_of, 1);
        let mut t = ForecastTable::new(Target::Ili);
        for s in &states {
            let hist: Vec<f64> = truth.history(s, as_of).into_iter().map(|(_, v)| v).collect();
            let v = evaluate::ar3_forecast(&hist, self.cfg.ili_train_weeks)?;
            t.insert(ForecastKey::new(s, week, 1, evaluate::AR3), v)?;
        }
        let n = self.cfg.state_train_weeks + 1;
        let panel: Vec<Vec<f64>> = (0..n as i64)
            .rev()
            .map(|k| {
                let w = shift(as_of, -k);
                states
                    .iter()
                    .map(|s| truth.get(s, w).ok_or_else(|| Error::InsufficientHistory(format!("ILI for {s} at {w}"))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (s, v) in states.iter().zip(evaluate::var1_forecast(&panel, self.cfg.state_train_weeks)?) {
            t.insert(ForecastKey::new(s, week, 1, evaluate::VAR1), v)?;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetResult {
    pub forecasts: ForecastTable,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutput {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub results: BTreeMap<Target, TargetResult>,
    pub selections: Vec<SelectionRecord>,
    pub covariances: Vec<(NaiveDate, Target, CovarianceSpec)>,
}

impl BacktestOutput {
    /// Writes `forecasts_<target>.csv`, `metrics_<target>.csv`,
    /// `series_<target>.csv`, `selection.csv` and `covariance.csv`.
    pub fn write_dir(&self, dir: &Path, truth: &BTreeMap<Target, Truth>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (t, r) in &self.results {
            r.forecasts.write_csv(&dir.join(format!("forecasts_{t}.csv")))?;
            r.report.write_csv(&dir.join(format!("metrics_{t}.csv")))?;
            evaluate::write_series_csv(&r.forecasts, &truth[t], &dir.join(format!("series_{t}.csv")))?;
        }
        ensemble::write_selection_csv(&self.selections, &dir.join("selection.csv"))?;
        state::write_covariance_csv(&self.covariances, &dir.join("covariance.csv"))?;
        Ok(())
    }
}

/// First as-of week whose constituent forecasts the ensemble at `start`
/// needs.
pub fn warmup_start(cfg: &RunConfig, start: NaiveDate) -> NaiveDate {
    shift(start, -(cfg.ensemble_window_weeks as i64 - 1) - cfg.max_horizon() as i64)
}

/// Earliest as-of date any model is fitted at for a backtest starting at
/// `start`: the first raw estimate feeding the first state covariance window.
pub fn earliest_as_of(cfg: &RunConfig, start: NaiveDate) -> NaiveDate {
    shift(warmup_start(cfg, start), -(cfg.state_train_weeks as i64) - 1)
}

/// Backtest over as-of weeks `start..=end`. Forecasts are kept for those
/// as-of weeks only; constituents also run over the preceding selection
/// window.
pub fn backtest(
    pipeline: &Pipeline<'_>,
    registry: &Registry,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<BacktestOutput> {
    let cfg = pipeline.cfg;
    for d in [start, end] {
        if !is_saturday(d) {
            return Err(Error::NotSaturday { date: d, context: "backtest range".into() });
        }
    }
    if start > end {
        return Err(Error::Config(format!("backtest start {start} is after end {end}")));
    }
    let all_as_ofs = weeks_between(warmup_start(cfg, start), end);
    let eval_as_ofs = weeks_between(start, end);
    let states: Vec<String> = pipeline.bundle.geography.states().iter().map(|u| u.id.clone()).collect();
    let exo = pipeline.exo_draws()?;
    let mut results = BTreeMap::new();
    let mut selections = Vec::new();
    let mut covariances = Vec::new();
    for &target in &cfg.targets {
        let raw = pipeline.raw_for(target, &all_as_ofs)?;
        info!("{target}: constituents at {} as-of weeks", all_as_ofs.len());
        let per_week: Vec<(ForecastTable, Vec<CovarianceSpec>)> = all_as_ofs
            .par_iter()
            .map(|t| {
                pipeline
                    .constituents(target, *t, &raw, &exo)
                    .map_err(|e| Error::Failed(format!("{target} constituents as of {t}: {e}")))
            })
            .collect::<Result<_>>()?;
        let mut history = ForecastTable::new(target);
        for ((table, specs), t) in per_week.into_iter().zip(&all_as_ofs) {
            history.merge(table)?;
            if *t >= start {
                covariances.extend(specs.into_iter().map(|s| (*t, target, s)));
            }
        }
        let truth = &pipeline.truth[&target];
        let horizons = target.horizons(&cfg.horizons);
        let ens: Vec<(ForecastTable, Vec<SelectionRecord>)> = eval_as_ofs
            .par_iter()
            .map(|t| {
                ensemble::forecast_ensemble(
                    registry,
                    &history,
                    truth,
                    &states,
                    &horizons,
                    *t,
                    cfg.ensemble_window_weeks,
                )
            })
            .collect::<Result<_>>()?;
        let mut forecasts = history;
        forecasts.retain(|k| k.as_of() >= start);
        for (table, recs) in ens {
            forecasts.merge(table)?;
            selections.extend(recs);
        }
        let report = evaluate::score(&forecasts, truth, &states)?;
        results.insert(target, TargetResult { forecasts, report });
    }
    Ok(BacktestOutput { start, end, results, selections, covariances })
}

/// Last Saturday with complete data for every target.
pub fn last_complete_week(bundle: &DatasetBundle) -> Result<NaiveDate> {
    let nation = &bundle.geography.nation().id;
    let cases = bundle.daily(&Signal::Cases, nation).ok_or_else(|| Error::Missing(format!("cases for {nation}")))?;
    let ili = bundle.weekly(&Signal::Ili, nation).ok_or_else(|| Error::Missing(format!("ILI for {nation}")))?;
    let mut end = ili.end().min(crate::panel::week_ending(cases.end()));
    if end > cases.end() {
        end = shift(end, -1);
    }
    Ok(end)
}
