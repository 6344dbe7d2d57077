//! Design matrices for the ARGO-style regressions and search-lag selection.
//!
//! Every column records its lag (days for daily designs, weeks for weekly
//! ones) back from the response date, so leakage can be audited directly:
//! a design for horizon `l` only uses columns with lag `>= l`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use log::{debug, warn};
use nalgebra::DMatrix;

use crate::bundle::DatasetBundle;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::panel::{DailySeries, Signal, TimeSeries};
use crate::view::{AsOfView, Clipped};

/// term -> (case lag, death lag) in days.
pub type LagTable = BTreeMap<String, (u32, u32)>;

const DEFAULT_LAG_TABLE: &str = include_str!("../data/lag_table.csv");

/// Slots of the weekly-lag and %ILI groups, in days.
pub const WEEK_SLOTS: [u32; 4] = [7, 14, 21, 28];
pub const AR_DAYS: u32 = 6;
const WEEKDAYS: [&str; 6] = ["mon", "tue", "wed", "thu", "fri", "sat"];
const MIN_LAG_ROWS: usize = 10;

pub fn default_lag_table() -> LagTable {
    parse_lag_table(DEFAULT_LAG_TABLE, "built-in lag table").expect("built-in lag table parses")
}

/// Parses `term,case_lag,death_lag` CSV text.
pub fn parse_lag_table(text: &str, file: &str) -> Result<LagTable> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["term", "case_lag", "death_lag"] {
        return Err(Error::Schema {
            file: file.into(),
            line: 1,
            column: "header".into(),
            message: "expected `term,case_lag,death_lag`".into(),
        });
    }
    let mut out = LagTable::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let lag = |col: usize, name: &str| -> Result<u32> {
            rec.get(col).and_then(|v| v.trim().parse::<u32>().ok()).filter(|v| *v >= 1).ok_or_else(|| Error::Schema {
                file: file.into(),
                line,
                column: name.into(),
                message: "expected an integer lag >= 1".into(),
            })
        };
        let term = rec.get(0).unwrap_or("").trim().to_string();
        if term.is_empty() {
            return Err(Error::Schema { file: file.into(), line, column: "term".into(), message: "empty term".into() });
        }
        if out.insert(term, (lag(1, "case_lag")?, lag(2, "death_lag")?)).is_some() {
            return Err(Error::Schema {
                file: file.into(),
                line,
                column: "term".into(),
                message: "duplicate term".into(),
            });
        }
    }
    Ok(out)
}

pub fn read_lag_table(path: &Path) -> Result<LagTable> {
    parse_lag_table(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn write_lag_table(table: &LagTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["term", "case_lag", "death_lag"])?;
    for (t, (c, d)) in table {
        w.write_record([t.clone(), c.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// In-sample MSE of the least-squares fit `y ~ a + b x`.
fn simple_regression_mse(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let explained = if sxx > 0.0 { sxy * sxy / sxx } else { 0.0 };
    ((syy - explained) / n).max(0.0)
}

/// The lag `d` among `candidates` minimizing the in-sample MSE of `target_t ~
/// a + b term_{t-d}`, over target dates in `window` where every candidate lag
/// is available. Ties go to the smaller lag.
pub fn select_optimal_lag(
    term: &DailySeries,
    target: &DailySeries,
    candidates: &[u32],
    window: Option<(NaiveDate, NaiveDate)>,
) -> Result<u32> {
    let (&dmin, &dmax) = match (candidates.iter().min(), candidates.iter().max()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::NoCandidates("empty candidate lag set".into())),
    };
    let mut first = target.start().max(term.start() + Duration::days(dmax as i64));
    let mut last = target.end().min(term.end() + Duration::days(dmin as i64));
    if let Some((a, b)) = window {
        first = first.max(a);
        last = last.min(b);
    }
    let rows = (last - first).num_days() + 1;
    if rows < MIN_LAG_ROWS as i64 {
        return Err(Error::InsufficientHistory(format!(
            "lag selection for {} has {} common rows, needs {MIN_LAG_ROWS}",
            term.signal,
            rows.max(0)
        )));
    }
    let dates: Vec<NaiveDate> = (0..rows).map(|k| first + Duration::days(k)).collect();
    let y: Vec<f64> = dates.iter().map(|d| target.at(*d).expect("in range")).collect();
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(u32, f64)> = None;
    for d in sorted {
        let x: Vec<f64> = dates.iter().map(|t| term.at(*t - Duration::days(d as i64)).expect("in range")).collect();
        let mse = simple_regression_mse(&x, &y);
        if best.is_none_or(|(_, b)| mse < b) {
            best = Some((d, mse));
        }
    }
    Ok(best.expect("nonempty").0)
}

/// Lags for every daily search term in the bundle: configured entries first,
/// then the built-in table, then estimation at the nation level over the
/// configured window (default: from the earliest usable date through
/// `earliest_as_of`).
pub fn resolve_lags(bundle: &DatasetBundle, cfg: &RunConfig, earliest_as_of: NaiveDate) -> Result<LagTable> {
    let builtin = default_lag_table();
    let nation = bundle.geography.nation().id.clone();
    let candidates: Vec<u32> = (1..=cfg.max_candidate_lag).collect();
    let mut out = LagTable::new();
    for term in bundle.daily_terms() {
        if let Some(l) = cfg.lag_table.get(&term).or_else(|| builtin.get(&term)) {
            out.insert(term, *l);
            continue;
        }
        let series = bundle
            .daily(&Signal::SearchTerm(term.clone()), &nation)
            .ok_or_else(|| Error::Missing(format!("no national series for term `{term}`")))?;
        let lag_for = |signal: Signal| -> Result<u32> {
            let target =
                bundle.daily(&signal, &nation).ok_or_else(|| Error::Missing(format!("no national {signal} series")))?;
            let end = cfg.lag_window_end.unwrap_or(earliest_as_of);
            let start = cfg.lag_window_start.unwrap_or(target.start());
            select_optimal_lag(series, target, &candidates, Some((start, end)))
        };
        let lags = (lag_for(Signal::Cases)?, lag_for(Signal::Deaths)?);
        debug!("estimated lags for `{term}`: {lags:?}");
        out.insert(term, lags);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Ar,
    WeeklyLag,
    Search,
    Weekday,
    Ili,
    Exogenous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub group: Group,
    /// Lag back from the response date; `None` for calendar columns.
    pub lag: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<Column>,
    /// Response dates of the training rows.
    pub dates: Vec<NaiveDate>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// The date being forecast and its feature row.
    pub target_date: NaiveDate,
    pub x_new: Vec<f64>,
    /// 1 for daily designs, 7 for weekly ones.
    pub step_days: i64,
}

impl DesignMatrix {
    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Smallest data lag over all columns.
    pub fn min_lag(&self) -> Option<u32> {
        self.columns.iter().filter_map(|c| c.lag).min()
    }
}

/// A column's value at a response date.
type Feature<'a> = Box<dyn Fn(NaiveDate) -> Result<f64> + 'a>;

struct Builder<'a> {
    columns: Vec<Column>,
    features: Vec<Feature<'a>>,
}

impl<'a> Builder<'a> {
    fn new() -> Self {
        Builder { columns: Vec::new(), features: Vec::new() }
    }

    fn push(&mut self, name: String, group: Group, lag: Option<u32>, f: Feature<'a>) {
        self.columns.push(Column { name, group, lag });
        self.features.push(f);
    }

    fn build(
        self,
        response: impl Fn(NaiveDate) -> Result<f64>,
        first_response: NaiveDate,
        rows: usize,
        target_date: NaiveDate,
        step_days: i64,
    ) -> Result<DesignMatrix> {
        let dates: Vec<NaiveDate> = (0..rows).map(|i| first_response + Duration::days(i as i64 * step_days)).collect();
        let p = self.columns.len();
        let mut x = DMatrix::zeros(rows, p);
        let mut y = Vec::with_capacity(rows);
        let ctx = |c: &Column, e: Error| match e {
            Error::Missing(m) => Error::InsufficientHistory(format!(
                "column `{}` (lag {}) needs data: {m}",
                c.name,
                c.lag.map_or("-".into(), |l| l.to_string())
            )),
            e => e,
        };
        for (i, d) in dates.iter().enumerate() {
            y.push(response(*d).map_err(|e| match e {
                Error::Missing(m) => Error::InsufficientHistory(format!("response needs data: {m}")),
                e => e,
            })?);
            for (j, f) in self.features.iter().enumerate() {
                x[(i, j)] = f(*d).map_err(|e| ctx(&self.columns[j], e))?;
            }
        }
        let x_new = self
            .features
            .iter()
            .zip(&self.columns)
            .map(|(f, c)| f(target_date).map_err(|e| ctx(c, e)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DesignMatrix { columns: self.columns, dates, x, y, target_date, x_new, step_days })
    }
}

fn days(n: u32) -> Duration {
    Duration::days(n as i64)
}

/// Inputs of a daily ARGO-Joint design, all clipped at the as-of date.
pub struct DailyInputs<'a> {
    /// Series regressed on its own lags (cases or deaths).
    pub target: Clipped<'a, DailySeries>,
    pub cases: Clipped<'a, DailySeries>,
    /// (term, series, unadjusted lag in days)
    pub terms: Vec<(String, Clipped<'a, DailySeries>, u32)>,
    /// One daily imputed %ILI draw.
    pub ili: Clipped<'a, DailySeries>,
}

/// The daily design forecasting `l` days past the as-of date, with `m`
/// training rows whose responses end at the as-of date.
pub fn build_daily_design(inputs: &DailyInputs<'_>, l: u32, m: usize) -> Result<DesignMatrix> {
    if l == 0 {
        return Err(Error::Config("horizon must be at least one day".into()));
    }
    let as_of = inputs.target.as_of();
    let tname = inputs.target_name();
    let mut b = Builder::new();
    for i in 0..=AR_DAYS {
        let s = inputs.target;
        b.push(format!("{tname}_ar{i}"), Group::Ar, Some(l + i), Box::new(move |d| s.get(d - days(l + i))));
    }
    for j in WEEK_SLOTS {
        let lag = j.max(l);
        let s = inputs.cases;
        b.push(format!("cases_w{j}"), Group::WeeklyLag, Some(lag), Box::new(move |d| s.get(d - days(lag))));
    }
    for (term, s, o) in &inputs.terms {
        let lag = (*o).max(l);
        let s = *s;
        b.push(format!("term:{term}"), Group::Search, Some(lag), Box::new(move |d| s.get(d - days(lag))));
    }
    for (r, name) in WEEKDAYS.iter().enumerate() {
        b.push(
            format!("wd_{name}"),
            Group::Weekday,
            None,
            Box::new(move |d| Ok(if d.weekday().num_days_from_monday() as usize == r { 1.0 } else { 0.0 })),
        );
    }
    for h in WEEK_SLOTS {
        let lag = h.max(l);
        let s = inputs.ili;
        b.push(format!("ili_h{h}"), Group::Ili, Some(lag), Box::new(move |d| s.get(d - days(lag))));
    }
    let target = inputs.target;
    b.build(move |d| target.get(d), as_of - Duration::days(m as i64 - 1), m, as_of + days(l), 1)
}

impl DailyInputs<'_> {
    fn target_name(&self) -> String {
        match self.target.inner().signal {
            Signal::Deaths => "deaths".into(),
            _ => "cases".into(),
        }
    }
}

fn daily_inputs<'a>(
    view: &AsOfView<'a>,
    ili_draw: &'a DailySeries,
    geo: &str,
    signal: Signal,
    lags: &LagTable,
) -> Result<DailyInputs<'a>> {
    let death = signal == Signal::Deaths;
    let mut terms = Vec::new();
    for (term, (c, d)) in lags {
        match view.daily(&Signal::SearchTerm(term.clone()), geo) {
            Ok(s) => terms.push((term.clone(), s, if death { *d } else { *c })),
            Err(_) => debug!("term `{term}` has no daily series for {geo}; skipped"),
        }
    }
    if terms.is_empty() && !lags.is_empty() {
        warn!("no lag-table term has a series for {geo}");
    }
    Ok(DailyInputs {
        target: view.daily(&signal, geo)?,
        cases: view.daily(&Signal::Cases, geo)?,
        terms,
        ili: view.clip(ili_draw),
    })
}

/// Case design for day `T + l`.
pub fn build_case_design(
    view: &AsOfView<'_>,
    ili_draw: &DailySeries,
    geo: &str,
    l: u32,
    lags: &LagTable,
    m: usize,
) -> Result<DesignMatrix> {
    build_daily_design(&daily_inputs(view, ili_draw, geo, Signal::Cases, lags)?, l, m)
}

/// Death design for day `T + l`: death AR lags, case weekly lags, death
/// search lags.
pub fn build_death_design(
    view: &AsOfView<'_>,
    ili_draw: &DailySeries,
    geo: &str,
    l: u32,
    lags: &LagTable,
    m: usize,
) -> Result<DesignMatrix> {
    build_daily_design(&daily_inputs(view, ili_draw, geo, Signal::Deaths, lags)?, l, m)
}

/// Weekly %ILI design forecasting `h` weeks past the as-of week: %ILI lags
/// `h .. h + ar_lags - 1`, weekly flu terms at lag `h`, and optionally the
/// weekly COVID case total at lag `h`. Cases before the case series begins
/// count as 0.
pub fn build_ili_design(
    view: &AsOfView<'_>,
    geo: &str,
    h: u32,
    rows: usize,
    ar_lags: usize,
    with_cases: bool,
) -> Result<DesignMatrix> {
    let as_of = view.as_of;
    let weeks = |n: u32| Duration::days(7 * n as i64);
    let ili = view.weekly(&Signal::Ili, geo)?;
    let mut b = Builder::new();
    for i in 0..ar_lags as u32 {
        let lag = h + i;
        b.push(format!("ili_ar{}", lag), Group::Ar, Some(lag), Box::new(move |d| ili.get(d - weeks(lag))));
    }
    for term in view.bundle.weekly_terms() {
        if let Ok(s) = view.weekly(&Signal::SearchTerm(term.clone()), geo) {
            b.push(format!("term:{term}"), Group::Search, Some(h), Box::new(move |d| s.get(d - weeks(h))));
        }
    }
    if with_cases {
        let cases = view.daily(&Signal::Cases, geo)?;
        b.push(
            format!("covid_cases_w_lag{h}"),
            Group::Exogenous,
            Some(h),
            Box::new(move |d| {
                let end = d - weeks(h);
                (0..7).map(|k| cases.get_or_zero_before(end - Duration::days(k))).sum()
            }),
        );
    }
    b.build(move |d| ili.get(d), as_of - weeks(rows as u32 - 1), rows, as_of + weeks(h), 7)
}

/// Weekly count design forecasting the weekly total `h` weeks past the as-of
/// week: own weekly totals at lags `h .. h + ar_lags - 1`, case totals at lag
/// `h` when the target is deaths, and weekly search sums ending
/// `max(O, 7h)` days before the response week ends.
pub fn build_weekly_count_design(
    view: &AsOfView<'_>,
    geo: &str,
    signal: Signal,
    h: u32,
    rows: usize,
    ar_lags: usize,
    lags: &LagTable,
) -> Result<DesignMatrix> {
    let as_of = view.as_of;
    let weeks = |n: u32| Duration::days(7 * n as i64);
    let death = signal == Signal::Deaths;
    let target = view.daily(&signal, geo)?;
    let name = if death { "deaths" } else { "cases" };
    let mut b = Builder::new();
    for i in 0..ar_lags as u32 {
        let lag = h + i;
        b.push(
            format!("{name}_wk_ar{lag}"),
            Group::Ar,
            Some(lag),
            Box::new(move |d| target.window_sum(d - weeks(lag), 7)),
        );
    }
    if death {
        let cases = view.daily(&Signal::Cases, geo)?;
        b.push(
            format!("cases_wk_lag{h}"),
            Group::WeeklyLag,
            Some(h),
            Box::new(move |d| cases.window_sum(d - weeks(h), 7)),
        );
    }
    for (term, (c, dl)) in lags {
        let Ok(s) = view.daily(&Signal::SearchTerm(term.clone()), geo) else {
            continue;
        };
        let o = (if death { *dl } else { *c }).max(7 * h);
        // weekly lag recorded in whole weeks, rounded down
        b.push(format!("term:{term}"), Group::Search, Some(o / 7), Box::new(move |d| s.window_sum(d - days(o), 7)));
    }
    b.build(move |d| target.window_sum(d, 7), as_of - weeks(rows as u32 - 1), rows, as_of + weeks(h), 7)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic, SyntheticScenario};

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn builtin_table_has_every_row() {
        let t = default_lag_table();
        assert_eq!(t.len(), 23);
        assert_eq!(t["loss of taste"], (11, 24));
        assert_eq!(t["cough"], (4, 24));
        assert_eq!(t["sinus"], (8, 15));
    }

    #[test]
    fn lag_table_rejects_bad_rows() {
        assert!(parse_lag_table("term,case_lag,death_lag\nfever,0,3\n", "x").is_err());
        assert!(parse_lag_table("term,case,death\n", "x").is_err());
        assert!(parse_lag_table("term,case_lag,death_lag\nfever,1,3\nfever,2,3\n", "x").is_err());
    }

    #[test]
    fn lag_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lags.csv");
        let t = default_lag_table();
        write_lag_table(&t, &p).unwrap();
        assert_eq!(read_lag_table(&p).unwrap(), t);
    }

    fn shifted(delay: u32, n: usize) -> (DailySeries, DailySeries) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(delay as u64);
        let raw: Vec<f64> = (0..n + 40).map(|_| rng.random_range(0.0..10.0)).collect();
        let term = DailySeries::new("US", Signal::SearchTerm("q".into()), d("2020-01-01"), raw.clone()).unwrap();
        let target = DailySeries::new("US", Signal::Cases, d("2020-01-01") + days(delay), raw[..n].to_vec()).unwrap();
        (term, target)
    }

    #[test]
    fn planted_shift_is_recovered() {
        for delay in [3, 9, 11, 24] {
            let (term, target) = shifted(delay, 120);
            let cands: Vec<u32> = (1..=35).collect();
            assert_eq!(select_optimal_lag(&term, &target, &cands, None).unwrap(), delay);
        }
        let (term, target) = shifted(9, 120);
        assert_eq!(select_optimal_lag(&term, &target, &[3, 9], None).unwrap(), 9);
    }

    #[test]
    fn lag_ties_go_to_smaller() {
        let term = DailySeries::new("US", Signal::Cases, d("2020-01-01"), vec![1.0; 100]).unwrap();
        let target = DailySeries::new("US", Signal::Cases, d("2020-01-01"), (0..100).map(f64::from).collect()).unwrap();
        assert_eq!(select_optimal_lag(&term, &target, &[5, 2, 9], None).unwrap(), 2);
        assert!(select_optimal_lag(&term, &target, &[], None).is_err());
    }

    fn bundle() -> DatasetBundle {
        generate_synthetic(&SyntheticScenario { n_states: 3, weeks: 40, ..Default::default() }).unwrap()
    }

    fn draw(b: &DatasetBundle) -> DailySeries {
        // uniform spread of weekly ILI stands in for an imputed draw
        let w = &b.ili["US"];
        let vals: Vec<f64> = w.values().iter().flat_map(|v| [v / 7.0; 7]).collect();
        DailySeries::new("US", Signal::Ili, w.start() - days(6), vals).unwrap()
    }

    #[test]
    fn case_design_shape_and_lags() {
        let b = bundle();
        let lags: LagTable = b.daily_terms().into_iter().map(|t| (t, (4, 20))).collect();
        let as_of = d("2020-09-05");
        let view = AsOfView::new(&b, as_of);
        let dr = draw(&b);
        for l in [1, 7, 14, 21, 28] {
            let m = build_case_design(&view, &dr, "US", l, &lags, 56).unwrap();
            assert_eq!(m.y.len(), 56);
            assert_eq!(m.x.nrows(), 56);
            assert_eq!(*m.dates.last().unwrap(), as_of);
            assert_eq!(m.target_date, as_of + days(l));
            assert!(m.min_lag().unwrap() >= l);
            assert_eq!(m.columns.len(), 7 + 4 + lags.len() + 6 + 4);
            let wd: Vec<usize> =
                m.columns.iter().enumerate().filter(|(_, c)| c.group == Group::Weekday).map(|(i, _)| i).collect();
            for (i, date) in m.dates.iter().enumerate() {
                let s: f64 = wd.iter().map(|&j| m.x[(i, j)]).sum();
                let sunday = date.weekday() == chrono::Weekday::Sun;
                assert_eq!(s, if sunday { 0.0 } else { 1.0 });
            }
        }
        let m = build_case_design(&view, &dr, "US", 7, &lags, 56).unwrap();
        let search = m.columns.iter().find(|c| c.group == Group::Search).unwrap();
        assert_eq!(search.lag, Some(7));
    }

    #[test]
    fn death_design_references_deaths_and_cases() {
        let b = bundle();
        let lags: LagTable = b.daily_terms().into_iter().map(|t| (t, (4, 20))).collect();
        let view = AsOfView::new(&b, d("2020-09-05"));
        let m = build_death_design(&view, &draw(&b), "US", 28, &lags, 56).unwrap();
        assert!(m.columns.iter().filter(|c| c.group == Group::Ar).all(|c| c.name.starts_with("deaths_ar")));
        assert!(m.columns.iter().filter(|c| c.group == Group::WeeklyLag).all(|c| c.name.starts_with("cases_w")));
        assert!(m
            .columns
            .iter()
            .filter(|c| c.group == Group::WeeklyLag || c.group == Group::Ili)
            .all(|c| c.lag == Some(28)));
        let s = m.columns.iter().find(|c| c.group == Group::Search).unwrap();
        assert_eq!(s.lag, Some(28));
        let m7 = build_death_design(&view, &draw(&b), "US", 7, &lags, 56).unwrap();
        let s = m7.columns.iter().find(|c| c.group == Group::Search).unwrap();
        assert_eq!(s.lag, Some(20));
    }

    #[test]
    fn daily_design_values_follow_lags() {
        let b = bundle();
        let lags = LagTable::new();
        let view = AsOfView::new(&b, d("2020-09-05"));
        let m = build_case_design(&view, &draw(&b), "US", 3, &lags, 56).unwrap();
        let cases = &b.cases["US"];
        let j = m.column_index("cases_ar2").unwrap();
        let k = m.column_index("cases_w14").unwrap();
        for (i, date) in m.dates.iter().enumerate() {
            assert_eq!(m.y[i], cases.at(*date).unwrap());
            assert_eq!(m.x[(i, j)], cases.at(*date - days(5)).unwrap());
            assert_eq!(m.x[(i, k)], cases.at(*date - days(14)).unwrap());
        }
        assert_eq!(m.x_new[j], cases.at(d("2020-09-05") - days(2)).unwrap());
    }

    #[test]
    fn short_history_names_binding_column() {
        let b = bundle();
        let view = AsOfView::new(&b, d("2020-04-25"));
        let err = build_case_design(&view, &draw(&b), "US", 7, &LagTable::new(), 56).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory(_)), "{err}");
    }

    #[test]
    fn ili_design_is_lag_one() {
        let b = bundle();
        let as_of = d("2020-10-31");
        let view = AsOfView::new(&b, as_of);
        let m = build_ili_design(&view, "US", 1, 20, 3, true).unwrap();
        assert_eq!(m.y.len(), 20);
        let c = m.column_index("covid_cases_w_lag1").unwrap();
        let cases = Clipped::new(&b.cases["US"], as_of);
        for (i, date) in m.dates.iter().enumerate() {
            let want = cases.window_sum(*date - days(7), 7).unwrap();
            assert_eq!(m.x[(i, c)], want);
        }
        assert!(m.columns.iter().all(|c| c.lag.unwrap() >= 1));
        assert_eq!(m.target_date, as_of + days(7));
    }

    #[test]
    fn ili_design_before_cases_reads_zero() {
        let mut b = bundle();
        // move the case series two months later
        let us = b.cases["US"].clone();
        let late = DailySeries::new("US", Signal::Cases, us.start() + days(70), us.values()[70..].to_vec()).unwrap();
        b.cases.insert("US".into(), late);
        let view = AsOfView::new(&b, d("2020-10-31"));
        let m = build_ili_design(&view, "US", 1, 30, 3, true).unwrap();
        let c = m.column_index("covid_cases_w_lag1").unwrap();
        assert_eq!(m.x[(0, c)], 0.0);
    }

    #[test]
    fn weekly_count_design_lags() {
        let b = bundle();
        let lags: LagTable = b.daily_terms().into_iter().map(|t| (t, (4, 20))).collect();
        let view = AsOfView::new(&b, d("2020-10-31"));
        for h in 1..=4 {
            let m = build_weekly_count_design(&view, "S01", Signal::Deaths, h, 10, 3, &lags).unwrap();
            assert!(m.min_lag().unwrap() >= h);
            assert!(m.column_index(&format!("cases_wk_lag{h}")).is_some());
        }
    }

    #[test]
    fn designs_ignore_data_after_as_of() {
        let b = bundle();
        let lags: LagTable = b.daily_terms().into_iter().map(|t| (t, (4, 20))).collect();
        let as_of = d("2020-09-05");
        let mut tampered = b.clone();
        for s in tampered.cases.values_mut() {
            let v: Vec<f64> =
                s.values().iter().enumerate().map(|(i, x)| if s.date_at(i) > as_of { 1e9 } else { *x }).collect();
            *s = DailySeries::new(s.geo.clone(), Signal::Cases, s.start(), v).unwrap();
        }
        let dr = draw(&b);
        let a = build_case_design(&AsOfView::new(&b, as_of), &dr, "US", 7, &lags, 56).unwrap();
        let t = build_case_design(&AsOfView::new(&tampered, as_of), &dr, "US", 7, &lags, 56).unwrap();
        assert_eq!(a, t);
    }
}
