//! Error metrics, baseline forecasters and score reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};

use crate::bundle::DatasetBundle;
use crate::config::Target;
use crate::error::{Error, Result};
use crate::forecast::{ForecastKey, ForecastTable};
use crate::panel::{aggregate_all, TimeSeries};

pub const NAIVE: &str = "naive";
pub const AR3: &str = "ar3";
pub const VAR1: &str = "var1";
/// Geo label of cross-geo average rows in a [`MetricReport`].
pub const AVERAGE: &str = "AVG";

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Failed(format!("length mismatch: {} predictions, {} truths", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::TooShort("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation; `None` when either side has zero variance or fewer
/// than two values.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    if pred.len() < 2 {
        return Ok(None);
    }
    let (mp, mt) = (pred.iter().sum::<f64>() / n, truth.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (a, b) = (p - mp, t - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Observed weekly values of one target, keyed by (geo, week ending).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Truth {
    values: BTreeMap<(String, NaiveDate), f64>,
}

impl Truth {
    /// Weekly totals (counts) or weekly %ILI for every geo in the bundle.
    pub fn from_bundle(bundle: &DatasetBundle, target: Target) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut put = |geo: &str, dates: Vec<NaiveDate>, vals: &[f64]| {
            for (d, v) in dates.into_iter().zip(vals) {
                values.insert((geo.to_string(), d), *v);
            }
        };
        match target {
            Target::Ili => {
                for (g, s) in &bundle.ili {
                    put(g, s.week_endings().collect(), s.values());
                }
            }
            _ => {
                let series = if target == Target::Cases { &bundle.cases } else { &bundle.deaths };
                for (g, s) in series {
                    let w = aggregate_all(s)?;
                    put(g, w.week_endings().collect(), w.values());
                }
            }
        }
        Ok(Truth { values })
    }

    pub fn get(&self, geo: &str, week: NaiveDate) -> Option<f64> {
        self.values.get(&(geo.to_string(), week)).copied()
    }

    pub fn insert(&mut self, geo: &str, week: NaiveDate, v: f64) {
        self.values.insert((geo.to_string(), week), v);
    }

    /// Values of `geo` for weeks `<= through`, ascending.
    pub fn history(&self, geo: &str, through: NaiveDate) -> Vec<(NaiveDate, f64)> {
        self.values
            .range((geo.to_string(), NaiveDate::MIN)..=(geo.to_string(), through))
            .map(|((_, d), v)| (*d, *v))
            .collect()
    }
}

/// Persistence: the value at `as_of` repeated at every horizon.
pub fn naive_forecast(
    truth: &Truth,
    target: Target,
    geos: &[String],
    as_of: NaiveDate,
    horizons: &[u32],
) -> Result<ForecastTable> {
    let mut t = ForecastTable::new(target);
    for g in geos {
        let v = truth.get(g, as_of).ok_or_else(|| Error::Missing(format!("no {target} value for {g} at {as_of}")))?;
        for &h in horizons {
            t.insert(ForecastKey::new(g, as_of + Duration::days(7 * h as i64), h, NAIVE), v)?;
        }
    }
    Ok(t)
}

/// Least squares with an SVD solve, so rank-deficient designs (e.g. a
/// constant series) give the minimum-norm solution.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    x.clone().svd(true, true).solve(y, 1e-12).map_err(|e| Error::Degenerate(format!("least squares failed: {e}")))
}

/// One-step AR(3) forecast with intercept, fit on the last `train` response
/// weeks of `history`.
pub fn ar3_forecast(history: &[f64], train: usize) -> Result<f64> {
    const P: usize = 3;
    if train < P + 2 || history.len() < train + P {
        return Err(Error::InsufficientHistory(format!("AR-3 needs {} weeks, got {}", train + P, history.len())));
    }
    let n = history.len();
    let rows: Vec<usize> = (n - train..n).collect();
    let x = DMatrix::from_fn(train, P + 1, |r, c| if c == 0 { 1.0 } else { history[rows[r] - c] });
    let y = DVector::from_iterator(train, rows.iter().map(|&t| history[t]));
    let beta = least_squares(&x, &y)?;
    Ok(beta[0] + (1..=P).map(|c| beta[c] * history[n - c]).sum::<f64>())
}

/// One-step VAR(1) forecasts with intercept. `panel[t][i]` is series `i` at
/// week `t`; each equation is fit by least squares on the last `train`
/// transitions.
pub fn var1_forecast(panel: &[Vec<f64>], train: usize) -> Result<Vec<f64>> {
    let k = panel.first().map(|r| r.len()).unwrap_or(0);
    if k == 0 || panel.iter().any(|r| r.len() != k) {
        return Err(Error::Degenerate("VAR-1 panel is empty or ragged".into()));
    }
    if train < 2 || panel.len() < train + 1 {
        return Err(Error::InsufficientHistory(format!("VAR-1 needs {} weeks, got {}", train + 1, panel.len())));
    }
    let n = panel.len();
    let x = DMatrix::from_fn(train, k + 1, |r, c| if c == 0 { 1.0 } else { panel[n - train - 1 + r][c - 1] });
    let last = DVector::from_iterator(k + 1, std::iter::once(1.0).chain(panel[n - 1].iter().copied()));
    let svd = x.clone().svd(true, true);
    (0..k)
        .map(|i| {
            let y = DVector::from_iterator(train, (0..train).map(|r| panel[n - train + r][i]));
            let beta = svd.solve(&y, 1e-12).map_err(|e| Error::Degenerate(format!("VAR-1 fit failed: {e}")))?;
            Ok(beta.dot(&last))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub geo: String,
    pub method: String,
    pub horizon: u32,
    pub rmse: f64,
    pub mae: f64,
    pub corr: Option<f64>,
    /// Weeks scored; for average rows, the number of geos averaged.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn get(&self, geo: &str, method: &str, horizon: u32) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.geo == geo && r.method == method && r.horizon == horizon)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["geo", "method", "horizon", "rmse", "mae", "corr", "n"])?;
        for r in &self.rows {
            w.write_record([
                r.geo.clone(),
                r.method.clone(),
                r.horizon.to_string(),
                r.rmse.to_string(),
                r.mae.to_string(),
                r.corr.map(|c| c.to_string()).unwrap_or_default(),
                r.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every (geo, method, horizon) of `table` against `truth`, skipping
/// weeks without truth. Average rows take the mean over the geos in
/// `average_over` of each metric; undefined correlations are left out of the
/// correlation average, and an average with no defined correlation is itself
/// undefined.
pub fn score(table: &ForecastTable, truth: &Truth, average_over: &[String]) -> Result<MetricReport> {
    let mut groups: BTreeMap<(String, String, u32), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (k, v) in table.iter() {
        if let Some(t) = truth.get(&k.geo, k.target_week) {
            let e = groups.entry((k.method.clone(), k.geo.clone(), k.horizon)).or_default();
            e.0.push(v);
            e.1.push(t);
        }
    }
    let mut rows = Vec::new();
    for ((method, geo, horizon), (p, t)) in &groups {
        rows.push(MetricRow {
            geo: geo.clone(),
            method: method.clone(),
            horizon: *horizon,
            rmse: rmse(p, t)?,
            mae: mae(p, t)?,
            corr: pearson(p, t)?,
            n: p.len(),
        });
    }
    let keys: BTreeSet<(String, u32)> = rows.iter().map(|r| (r.method.clone(), r.horizon)).collect();
    let mut averages = Vec::new();
    for (method, horizon) in keys {
        let sel: Vec<&MetricRow> = rows
            .iter()
            .filter(|r| r.method == method && r.horizon == horizon && average_over.contains(&r.geo))
            .collect();
        if sel.is_empty() {
            continue;
        }
        let n = sel.len() as f64;
        let corrs: Vec<f64> = sel.iter().filter_map(|r| r.corr).collect();
        averages.push(MetricRow {
            geo: AVERAGE.into(),
            method,
            horizon,
            rmse: sel.iter().map(|r| r.rmse).sum::<f64>() / n,
            mae: sel.iter().map(|r| r.mae).sum::<f64>() / n,
            corr: (!corrs.is_empty()).then(|| corrs.iter().sum::<f64>() / corrs.len() as f64),
            n: sel.len(),
        });
    }
    rows.extend(averages);
    rows.sort_by(|a, b| (&a.geo, &a.method, a.horizon).cmp(&(&b.geo, &b.method, b.horizon)));
    Ok(MetricReport { rows })
}

/// Long-format `date,geo,method,horizon,value,truth`; truth is blank when
/// not yet observed.
pub fn write_series_csv(table: &ForecastTable, truth: &Truth, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "geo", "method", "horizon", "value", "truth"])?;
    let mut rows: Vec<(&ForecastKey, f64)> = table.iter().collect();
    rows.sort_by(|a, b| {
        (a.0.target_week, &a.0.geo, &a.0.method, a.0.horizon).cmp(&(
            b.0.target_week,
            &b.0.geo,
            &b.0.method,
            b.0.horizon,
        ))
    });
    for (k, v) in rows {
        w.write_record([
            k.target_week.to_string(),
            k.geo.clone(),
            k.method.clone(),
            k.horizon.to_string(),
            v.to_string(),
            truth.get(&k.geo, k.target_week).map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_metrics() {
        let (p, t) = ([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]);
        assert!((rmse(&p, &t).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((mae(&p, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pearson(&p, &t).unwrap(), None);
        assert_eq!(pearson(&p, &p).unwrap(), Some(1.0));
        assert_eq!(rmse(&p, &p).unwrap(), 0.0);
        assert!(rmse(&p, &t[..2]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn ar3_recovers_ar1() {
        let mut x = vec![10.0];
        for _ in 0..60 {
            let last = *x.last().unwrap();
            x.push(0.8 * last);
        }
        let f = ar3_forecast(&x[..60], 52).unwrap();
        assert!((f - x[60]).abs() < 1e-8, "{f} vs {}", x[60]);
        assert!((ar3_forecast(&[4.0; 60], 52).unwrap() - 4.0).abs() < 1e-9);
        assert!(ar3_forecast(&[1.0; 20], 52).is_err());
    }

    #[test]
    fn var1_decoupled_matches_ar1() {
        // two noiseless AR(1) processes with intercepts; each fits exactly
        let mut panel = vec![vec![1.0, -2.0]];
        for t in 0..12 {
            let p = &panel[t];
            panel.push(vec![0.5 + 0.8 * p[0], 1.0 - 0.9 * p[1]]);
        }
        let f = var1_forecast(&panel, 10).unwrap();
        let last = panel.last().unwrap();
        assert!((f[0] - (0.5 + 0.8 * last[0])).abs() < 1e-8);
        assert!((f[1] - (1.0 - 0.9 * last[1])).abs() < 1e-8);
        assert!(var1_forecast(&panel[..5], 10).is_err());
    }

    #[test]
    fn naive_repeats_value() {
        let d = NaiveDate::from_ymd_opt(2020, 8, 1).unwrap();
        let mut truth = Truth::default();
        truth.insert("GA", d, 100.0);
        let t = naive_forecast(&truth, Target::Cases, &["GA".into()], d, &[1, 2, 3, 4]).unwrap();
        for h in 1..=4 {
            assert_eq!(t.lookup("GA", d + Duration::days(7 * h as i64), h, NAIVE), Some(100.0));
        }
        assert!(naive_forecast(&truth, Target::Cases, &["NY".into()], d, &[1]).is_err());
    }

    #[test]
    fn score_with_average_rows() {
        let d = NaiveDate::from_ymd_opt(2020, 8, 1).unwrap();
        let mut truth = Truth::default();
        let mut t = ForecastTable::new(Target::Cases);
        for (i, g) in ["A", "B"].iter().enumerate() {
            for w in 0..3 {
                let week = d + Duration::days(7 * w);
                truth.insert(g, week, w as f64);
                t.insert(ForecastKey::new(*g, week, 1, "m"), w as f64 + i as f64).unwrap();
            }
        }
        truth.insert("US", d, 5.0);
        t.insert(ForecastKey::new("US", d, 1, "m"), 50.0).unwrap();
        t.insert(ForecastKey::new("US", d, 1, "n"), 50.0).unwrap();
        let r = score(&t, &truth, &["A".into(), "B".into()]).unwrap();
        assert!(r.get(AVERAGE, "n", 1).is_none());
        assert_eq!(r.get("A", "m", 1).unwrap().rmse, 0.0);
        assert_eq!(r.get("B", "m", 1).unwrap().rmse, 1.0);
        let avg = r.get(AVERAGE, "m", 1).unwrap();
        assert_eq!((avg.rmse, avg.n), (0.5, 2));
        assert_eq!(avg.corr, Some(1.0));
    }
}
