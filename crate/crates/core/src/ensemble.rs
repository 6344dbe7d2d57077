//! Winner-takes-all ensemble: for each (geo, horizon) the constituent with
//! the lowest mean squared error over the trailing target weeks is chosen,
//! and its forecast is emitted unchanged.

use std::path::Path;

use chrono::{Duration, NaiveDate};
use log::warn;

use crate::bundle::DatasetBundle;
use crate::config::Target;
use crate::error::{Error, Result};
use crate::evaluate::Truth;
use crate::forecast::{ForecastKey, ForecastTable};

pub const METHOD: &str = "argox-joint-ensemble";
pub const DISAGG: &str = "argo-national-disagg";
pub const BUILTIN: [&str; 4] = [DISAGG, crate::state::METHOD, crate::evaluate::NAIVE, crate::raw::METHOD];

/// Constituent names in tie-breaking order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    names: Vec<String>,
}

impl Default for Registry {
    fn default() -> Self {
        Registry { names: BUILTIN.iter().map(|s| s.to_string()).collect() }
    }
}

impl Registry {
    pub fn new(names: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let mut r = Registry { names: Vec::new() };
        for n in names {
            r.register(n)?;
        }
        Ok(r)
    }

    /// Appends a constituent after the existing ones.
    pub fn register(&mut self, name: impl Into<String>) -> Result<()> {
        let name = name.into();
        if name == METHOD || self.names.contains(&name) {
            return Err(Error::Config(format!("constituent `{name}` is already registered")));
        }
        self.names.push(name);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub geo: String,
    pub target: Target,
    pub horizon: u32,
    pub chosen: String,
    /// Window MSE of every eligible constituent, in registry order.
    pub mse: Vec<(String, f64)>,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
}

/// Chooses among `registry` for (`geo`, `horizon`) by MSE over the
/// `window` target weeks ending at `as_of`. Constituents missing any window
/// forecast, or `eligible` rejecting them, are excluded with a warning.
#[allow(clippy::too_many_arguments)]
pub fn select(
    registry: &Registry,
    history: &ForecastTable,
    truth: &Truth,
    geo: &str,
    horizon: u32,
    as_of: NaiveDate,
    window: usize,
    eligible: impl Fn(&str) -> bool,
) -> Result<SelectionRecord> {
    if window == 0 {
        return Err(Error::Config("selection window must be positive".into()));
    }
    let weeks: Vec<NaiveDate> = (0..window as i64).rev().map(|k| as_of - Duration::days(7 * k)).collect();
    let truths: Vec<f64> = weeks
        .iter()
        .map(|w| truth.get(geo, *w).ok_or_else(|| Error::Missing(format!("truth for {geo} at {w}"))))
        .collect::<Result<_>>()?;
    let mut mse = Vec::new();
    for name in registry.names() {
        if !eligible(name) {
            continue;
        }
        let preds: Option<Vec<f64>> = weeks.iter().map(|w| history.lookup(geo, *w, horizon, name)).collect();
        match preds {
            Some(p) => {
                let m = p.iter().zip(&truths).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / window as f64;
                mse.push((name.clone(), m));
            }
            None => warn!("{} {geo} h{horizon} as of {as_of}: {name} lacks window forecasts, excluded", history.target),
        }
    }
    // strict comparison keeps the earliest registered on ties
    let chosen = mse
        .iter()
        .fold(None::<&(String, f64)>, |best, c| match best {
            Some(b) if b.1 <= c.1 => Some(b),
            _ => Some(c),
        })
        .map(|(n, _)| n.clone())
        .ok_or_else(|| {
            Error::NoCandidates(format!("no constituent has a full window for {geo} horizon {horizon} as of {as_of}"))
        })?;
    Ok(SelectionRecord {
        geo: geo.to_string(),
        target: history.target,
        horizon,
        chosen,
        mse,
        window_start: weeks[0],
        window_end: as_of,
    })
}

/// Ensemble forecasts for `geos` at `horizons` as of `as_of`. `history`
/// holds constituent forecasts for the selection window and for the
/// forecast weeks; constituents without a forecast for the week being
/// predicted are not eligible.
pub fn forecast_ensemble(
    registry: &Registry,
    history: &ForecastTable,
    truth: &Truth,
    geos: &[String],
    horizons: &[u32],
    as_of: NaiveDate,
    window: usize,
) -> Result<(ForecastTable, Vec<SelectionRecord>)> {
    let mut out = ForecastTable::new(history.target);
    let mut records = Vec::new();
    for geo in geos {
        for &h in horizons {
            let week = as_of + Duration::days(7 * h as i64);
            let rec =
                select(registry, history, truth, geo, h, as_of, window, |m| history.lookup(geo, week, h, m).is_some())?;
            let key = ForecastKey::new(geo, week, h, &rec.chosen);
            let v = history.get(&key).expect("eligible constituent has a forecast");
            let ens = ForecastKey::new(geo, week, h, METHOD);
            if history.clipped.contains(&key) {
                out.clipped.insert(ens.clone());
            }
            out.insert(ens, v)?;
            records.push(rec);
        }
    }
    Ok((out, records))
}

/// Trailing four-week share of `geo` in `aggregate`'s target as of `as_of`.
/// Weekly %ILI is a rate, so the share is the ratio of the four-week sums.
/// A zero aggregate falls back to an equal split over `n_components`.
pub fn trailing_share(truth: &Truth, geo: &str, aggregate: &str, as_of: NaiveDate, n_components: usize) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..4 {
        let w = as_of - Duration::days(7 * k);
        num += truth.get(geo, w).ok_or_else(|| Error::Missing(format!("value for {geo} at {w}")))?;
        den += truth.get(aggregate, w).ok_or_else(|| Error::Missing(format!("value for {aggregate} at {w}")))?;
    }
    Ok(if den > 0.0 { num / den } else { 1.0 / n_components.max(1) as f64 })
}

/// Allocates national forecasts to states by trailing share as of the
/// forecast's as-of week.
pub fn disaggregate(bundle: &DatasetBundle, national: &ForecastTable, truth: &Truth) -> Result<ForecastTable> {
    let nation = bundle.geography.nation().id.clone();
    let states = bundle.geography.states();
    let mut out = ForecastTable::new(national.target);
    for (k, v) in national.iter().filter(|(k, _)| k.geo == nation) {
        for s in &states {
            let share = trailing_share(truth, &s.id, &nation, k.as_of(), states.len())?;
            out.insert(ForecastKey::new(&s.id, k.target_week, k.horizon, DISAGG), share * v)?;
        }
    }
    Ok(out)
}

/// Writes one row per (selection, constituent):
/// `geo,target,horizon,chosen,method,mse,window_start,window_end`.
pub fn write_selection_csv(records: &[SelectionRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["geo", "target", "horizon", "chosen", "method", "mse", "window_start", "window_end"])?;
    let mut sorted: Vec<&SelectionRecord> = records.iter().collect();
    sorted
        .sort_by(|a, b| (a.window_end, a.target, &a.geo, a.horizon).cmp(&(b.window_end, b.target, &b.geo, b.horizon)));
    for r in sorted {
        for (m, e) in &r.mse {
            w.write_record([
                r.geo.clone(),
                r.target.to_string(),
                r.horizon.to_string(),
                r.chosen.clone(),
                m.clone(),
                e.to_string(),
                r.window_start.to_string(),
                r.window_end.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Percent of selections choosing each constituent, in registry order.
pub fn selection_shares(registry: &Registry, records: &[SelectionRecord]) -> Vec<(String, f64)> {
    let n = records.len().max(1) as f64;
    registry
        .names()
        .iter()
        .map(|m| (m.clone(), 100.0 * records.iter().filter(|r| &r.chosen == m).count() as f64 / n))
        .collect()
}
