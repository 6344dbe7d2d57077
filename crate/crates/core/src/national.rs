//! National ARGO-Joint forecasts.
//!
//! For each imputation draw and each forecast day `T + l`, a LASSO is fit on
//! the daily design for horizon `l`. The penalty is chosen once per forecast
//! week on its middle day. Coefficients used for day `l` are the average of
//! the fits at `l - 1`, `l`, `l + 1` (whichever exist among the days fitted).
//! Daily forecasts are the median over draws and weekly forecasts sum days
//! `7(w-1)+1 ..= 7w`.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use log::warn;
use rayon::prelude::*;

use crate::bundle::DatasetBundle;
use crate::config::{RunConfig, Target};
use crate::error::{Error, Result};
use crate::features::{build_case_design, build_death_design, build_ili_design, DesignMatrix, LagTable};
use crate::forecast::{ForecastKey, ForecastTable};
use crate::imputation::ImputationSet;
use crate::lasso::{self, LassoModel};
use crate::panel::DailySeries;
use crate::view::AsOfView;

pub const METHOD: &str = "argo-joint";
pub const ILI_METHOD: &str = "argo-joint-ili";
pub const MAX_DAY: u32 = 28;
/// Largest share of draws allowed to fail.
const MAX_FAILED_SHARE: f64 = 0.10;

/// Per-day national forecasts at one as-of date.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyForecastPanel {
    pub as_of: NaiveDate,
    pub target: Target,
    /// Forecast days `l`, ascending.
    pub days: Vec<u32>,
    /// `draws[n][i]` is draw `n`'s forecast for `days[i]`.
    pub draws: Vec<Vec<f64>>,
    /// Median over draws, clipped at zero where flagged.
    pub median: Vec<f64>,
    pub clipped: Vec<bool>,
    pub smoothed: bool,
    pub failed_draws: usize,
}

impl DailyForecastPanel {
    pub fn value(&self, l: u32) -> Option<f64> {
        self.days.iter().position(|d| *d == l).map(|i| self.median[i])
    }

    /// Sum of days `7(w-1)+1 ..= 7w`.
    pub fn weekly(&self, w: u32) -> Option<f64> {
        (7 * (w - 1) + 1..=7 * w).map(|l| self.value(l)).sum()
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Days whose forecasts are emitted, and the days that must be fitted to
/// smooth them.
fn day_sets(weeks: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let emit: BTreeSet<u32> = weeks.iter().flat_map(|w| 7 * (w - 1) + 1..=7 * w).collect();
    let fit: BTreeSet<u32> =
        emit.iter().flat_map(|&l| [l.saturating_sub(1), l, l + 1]).filter(|l| (1..=MAX_DAY).contains(l)).collect();
    (emit.into_iter().collect(), fit.into_iter().collect())
}

fn week_of(l: u32) -> u32 {
    (l - 1) / 7 + 1
}

struct DayFit {
    model: LassoModel,
    design: DesignMatrix,
}

/// Averages intercepts and coefficients of `fits` (same column layout).
fn average(fits: &[&LassoModel]) -> (f64, Vec<f64>) {
    let k = fits.len() as f64;
    let p = fits[0].coef.len();
    let intercept = fits.iter().map(|m| m.intercept).sum::<f64>() / k;
    let coef = (0..p).map(|j| fits.iter().map(|m| m.coef[j]).sum::<f64>() / k).collect();
    (intercept, coef)
}

fn design_for(
    view: &AsOfView<'_>,
    draw: &DailySeries,
    geo: &str,
    target: Target,
    l: u32,
    lags: &LagTable,
    m: usize,
) -> Result<DesignMatrix> {
    match target {
        Target::Cases => build_case_design(view, draw, geo, l, lags, m),
        Target::Deaths => build_death_design(view, draw, geo, l, lags, m),
        Target::Ili => Err(Error::Config("daily national designs cover cases and deaths only".into())),
    }
}

/// One draw's forecasts for `emit` days.
fn forecast_draw(
    view: &AsOfView<'_>,
    draw: &DailySeries,
    geo: &str,
    target: Target,
    cfg: &RunConfig,
    lags: &LagTable,
    weeks: &[u32],
    emit: &[u32],
    fit_days: &[u32],
) -> Result<Vec<f64>> {
    let m = cfg.national_train_days;
    // penalty per week, chosen on the middle day
    let mut chosen: BTreeMap<u32, f64> = BTreeMap::new();
    for &w in weeks {
        let design = design_for(view, draw, geo, target, 7 * (w - 1) + 4, lags, m)?;
        let (_, rep) = lasso::cv_select(&design.x, &design.y, &cfg.lambda_grid, cfg.cv_folds, cfg.lambda_relative)?;
        chosen.insert(w, rep.chosen);
    }
    let grid_value = |l: u32| -> f64 {
        let w = week_of(l);
        // days outside the requested weeks borrow the nearest week's penalty
        let nearest = chosen.keys().min_by_key(|k| (k.abs_diff(w), **k)).expect("weeks nonempty");
        chosen[nearest]
    };
    let mut fits: BTreeMap<u32, DayFit> = BTreeMap::new();
    for &l in fit_days {
        let design = design_for(view, draw, geo, target, l, lags, m)?;
        let g = grid_value(l);
        let lambda = if cfg.lambda_relative { g * lasso::lambda_max(&design.x, &design.y)? } else { g };
        let model = lasso::fit(&design.x, &design.y, lambda)?;
        fits.insert(l, DayFit { model, design });
    }
    Ok(emit
        .iter()
        .map(|&l| {
            let group: Vec<&LassoModel> =
                [l.wrapping_sub(1), l, l + 1].iter().filter_map(|k| fits.get(k)).map(|f| &f.model).collect();
            let (b0, coef) = average(&group);
            let x = &fits[&l].design.x_new;
            b0 + coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
        })
        .collect())
}

/// National cases or deaths at the configured horizons, as of `as_of`.
pub fn forecast_national(
    bundle: &DatasetBundle,
    imputations: &ImputationSet,
    cfg: &RunConfig,
    lags: &LagTable,
    as_of: NaiveDate,
    target: Target,
) -> Result<(DailyForecastPanel, ForecastTable)> {
    let geo = bundle.geography.nation().id.clone();
    let view = AsOfView::new(bundle, as_of);
    let weeks: Vec<u32> = {
        let mut w = cfg.horizons.clone();
        w.sort_unstable();
        w.dedup();
        w
    };
    let (emit, fit_days) = day_sets(&weeks);
    let results: Vec<Result<Vec<f64>>> = imputations
        .draws
        .par_iter()
        .map(|d| forecast_draw(&view, &d.daily, &geo, target, cfg, lags, &weeks, &emit, &fit_days))
        .collect();
    let mut draws = Vec::new();
    let mut failures = Vec::new();
    for (n, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => draws.push(v),
            Err(e) => failures.push((n, e)),
        }
    }
    if failures.len() as f64 > MAX_FAILED_SHARE * imputations.n_draws() as f64 || draws.is_empty() {
        let (n, e) = failures.into_iter().next().expect("some draw failed");
        return Err(Error::Failed(format!(
            "national {target} forecast as of {as_of}: too many draws failed, first was draw {n}: {e}"
        )));
    }
    for (n, e) in &failures {
        warn!("national {target} as of {as_of}: draw {n} failed: {e}");
    }
    let mut median_v = Vec::with_capacity(emit.len());
    let mut clipped = Vec::with_capacity(emit.len());
    for i in 0..emit.len() {
        let mut col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let v = median(&mut col);
        let clip = cfg.floor_at_zero && v < 0.0;
        median_v.push(if clip { 0.0 } else { v });
        clipped.push(clip);
    }
    let panel = DailyForecastPanel {
        as_of,
        target,
        days: emit,
        draws,
        median: median_v,
        clipped,
        smoothed: true,
        failed_draws: failures.len(),
    };
    let mut table = ForecastTable::new(target);
    for &w in &weeks {
        let key = ForecastKey::new(&geo, as_of + Duration::days(7 * w as i64), w, METHOD);
        if (7 * (w - 1) + 1..=7 * w).any(|l| panel.clipped[panel.days.iter().position(|d| *d == l).unwrap()]) {
            table.clipped.insert(key.clone());
        }
        table.insert(key, panel.weekly(w).expect("emitted days cover the week"))?;
    }
    Ok((panel, table))
}

/// One-week-ahead national %ILI.
pub fn forecast_national_ili(bundle: &DatasetBundle, cfg: &RunConfig, as_of: NaiveDate) -> Result<ForecastTable> {
    let geo = bundle.geography.nation().id.clone();
    let view = AsOfView::new(bundle, as_of);
    let design = build_ili_design(&view, &geo, 1, cfg.ili_train_weeks, cfg.weekly_ar_lags, true)?;
    let (model, _) = lasso::cv_select(&design.x, &design.y, &cfg.lambda_grid, cfg.cv_folds, cfg.lambda_relative)?;
    let mut v = model.predict_row(&design.x_new);
    let mut table = ForecastTable::new(Target::Ili);
    let key = ForecastKey::new(&geo, design.target_date, 1, ILI_METHOD);
    if cfg.floor_at_zero && v < 0.0 {
        v = 0.0;
        table.clipped.insert(key.clone());
    }
    table.insert(key, v)?;
    Ok(table)
}
