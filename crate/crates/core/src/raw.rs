//! First-step raw estimates: weekly LASSO fits of a target on search terms
//! and its own lags, run separately for every state, region and the nation.
//!
//! The estimate of week `tau` at horizon `h` is issued as of week `tau - h`
//! and sees no data after that week.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;

use crate::bundle::DatasetBundle;
use crate::config::{RunConfig, Target};
use crate::error::{Error, Result};
use crate::features::{build_ili_design, build_weekly_count_design, LagTable};
use crate::lasso;
use crate::panel::GeoLevel;
use crate::view::AsOfView;

pub const METHOD: &str = "state-gt-raw";

/// Raw estimates keyed by (geo, target week, horizon).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawEstimates {
    values: BTreeMap<(String, NaiveDate, u32), f64>,
}

impl RawEstimates {
    pub fn get(&self, geo: &str, week: NaiveDate, h: u32) -> Result<f64> {
        self.values
            .get(&(geo.to_string(), week, h))
            .copied()
            .ok_or_else(|| Error::Missing(format!("raw estimate for {geo} week {week} horizon {h}")))
    }

    pub fn contains(&self, geo: &str, week: NaiveDate, h: u32) -> bool {
        self.values.contains_key(&(geo.to_string(), week, h))
    }

    pub fn insert(&mut self, geo: &str, week: NaiveDate, h: u32, v: f64) {
        self.values.insert((geo.to_string(), week, h), v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, NaiveDate, u32), &f64)> {
        self.values.iter()
    }

    pub fn extend(&mut self, other: RawEstimates) {
        self.values.extend(other.values);
    }
}

/// One raw estimate of `target` for week `as_of + h` weeks at `geo`.
pub fn raw_estimate(
    bundle: &DatasetBundle,
    cfg: &RunConfig,
    lags: &LagTable,
    geo: &str,
    target: Target,
    as_of: NaiveDate,
    h: u32,
) -> Result<f64> {
    let view = AsOfView::new(bundle, as_of);
    let design = match target {
        Target::Ili => build_ili_design(&view, geo, h, cfg.raw_train_weeks, cfg.weekly_ar_lags, false)?,
        _ => build_weekly_count_design(&view, geo, target.signal(), h, cfg.raw_train_weeks, cfg.weekly_ar_lags, lags)?,
    };
    if target != Target::Ili && lags.is_empty() {
        return Err(Error::Missing(format!("no search terms for raw {target} estimates at {geo}")));
    }
    let (model, _) = lasso::cv_select(&design.x, &design.y, &cfg.lambda_grid, cfg.cv_folds, cfg.lambda_relative)?;
    let v = model.predict_row(&design.x_new);
    Ok(if cfg.floor_at_zero { v.max(0.0) } else { v })
}

/// Geos of one level.
pub fn level_geos(bundle: &DatasetBundle, level: GeoLevel) -> Vec<String> {
    bundle.geography.units().filter(|u| u.level == level).map(|u| u.id.clone()).collect()
}

/// Raw estimates for every (geo, target week, horizon) requested, skipping
/// keys already in `existing`.
pub fn first_step_raw(
    bundle: &DatasetBundle,
    cfg: &RunConfig,
    lags: &LagTable,
    target: Target,
    requests: &[(String, NaiveDate, u32)],
    existing: &RawEstimates,
) -> Result<RawEstimates> {
    let todo: Vec<&(String, NaiveDate, u32)> =
        requests.iter().filter(|(g, w, h)| !existing.contains(g, *w, *h)).collect();
    let out: Vec<((String, NaiveDate, u32), f64)> = todo
        .par_iter()
        .map(|(g, w, h)| {
            let as_of = *w - Duration::days(7 * *h as i64);
            let v = raw_estimate(bundle, cfg, lags, g, target, as_of, *h)
                .map_err(|e| Error::Failed(format!("raw {target} estimate for {g} week {w} horizon {h}: {e}")))?;
            Ok(((g.clone(), *w, *h), v))
        })
        .collect::<Result<_>>()?;
    let mut raw = RawEstimates::default();
    for (k, v) in out {
        raw.values.insert(k, v);
    }
    Ok(raw)
}
