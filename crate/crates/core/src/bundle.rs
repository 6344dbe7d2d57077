//! The input panel and its CSV ingestion.
//!
//! Accepted files (all with a header row):
//!
//! * `cases.csv`: `date,geo,cases,deaths`, incident counts, one row per (date, geo)
//! * `ili.csv`: `week_ending,geo,ili_pct`, Saturday week endings
//! * `trends.csv`: `date,geo,term,value`, daily or Saturday-weekly per term
//! * `geography.csv` (optional): `geo,level,region`
//!
//! Search values are taken as already cleaned and normalized. Region and
//! nation series missing from the files are derived from their member
//! states: counts and search volumes are summed, %ILI is averaged.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::info;

use crate::error::{Error, Result};
use crate::panel::{
    is_saturday, DailySeries, Frequency, GeoLevel, GeoUnit, Geography, Signal, TimeSeries, WeeklySeries,
};

/// A search-term series at its native frequency.
#[derive(Debug, Clone, PartialEq)]
pub enum TrendSeries {
    Daily(DailySeries),
    Weekly(WeeklySeries),
}

impl TrendSeries {
    pub fn frequency(&self) -> Frequency {
        match self {
            TrendSeries::Daily(_) => Frequency::Daily,
            TrendSeries::Weekly(_) => Frequency::Weekly,
        }
    }

    pub fn as_dyn(&self) -> &dyn TimeSeries {
        match self {
            TrendSeries::Daily(s) => s,
            TrendSeries::Weekly(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetBundle {
    pub cases: BTreeMap<String, DailySeries>,
    pub deaths: BTreeMap<String, DailySeries>,
    pub ili: BTreeMap<String, WeeklySeries>,
    /// Keyed by (geo, term).
    pub trends: BTreeMap<(String, String), TrendSeries>,
    pub geography: Geography,
}

impl DatasetBundle {
    pub fn validate(&self) -> Result<()> {
        self.geography.validate()?;
        let check = |geo: &str, what: &str| {
            if self.geography.contains(geo) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} series references unknown geo {geo}")))
            }
        };
        for g in self.cases.keys() {
            check(g, "cases")?;
        }
        for g in self.deaths.keys() {
            check(g, "deaths")?;
        }
        for g in self.ili.keys() {
            check(g, "ili")?;
        }
        let mut freq: BTreeMap<&str, Frequency> = BTreeMap::new();
        for ((g, term), s) in &self.trends {
            check(g, "trends")?;
            let f = freq.entry(term.as_str()).or_insert(s.frequency());
            if *f != s.frequency() {
                return Err(Error::FrequencyMismatch(format!("term `{term}` mixes daily and weekly series")));
            }
        }
        Ok(())
    }

    /// Terms with a daily series somewhere in the bundle, ascending.
    pub fn daily_terms(&self) -> Vec<String> {
        self.terms_with(Frequency::Daily)
    }

    pub fn weekly_terms(&self) -> Vec<String> {
        self.terms_with(Frequency::Weekly)
    }

    fn terms_with(&self, f: Frequency) -> Vec<String> {
        let set: BTreeSet<&String> =
            self.trends.iter().filter(|(_, s)| s.frequency() == f).map(|((_, t), _)| t).collect();
        set.into_iter().cloned().collect()
    }

    pub fn daily(&self, signal: &Signal, geo: &str) -> Option<&DailySeries> {
        match signal {
            Signal::Cases => self.cases.get(geo),
            Signal::Deaths => self.deaths.get(geo),
            Signal::SearchTerm(t) => match self.trends.get(&(geo.to_string(), t.clone())) {
                Some(TrendSeries::Daily(s)) => Some(s),
                _ => None,
            },
            Signal::Ili => None,
        }
    }

    pub fn weekly(&self, signal: &Signal, geo: &str) -> Option<&WeeklySeries> {
        match signal {
            Signal::Ili => self.ili.get(geo),
            Signal::SearchTerm(t) => match self.trends.get(&(geo.to_string(), t.clone())) {
                Some(TrendSeries::Weekly(s)) => Some(s),
                _ => None,
            },
            _ => None,
        }
    }

    /// Fills in region and nation series that are absent but whose member
    /// states are all present.
    pub fn derive_aggregates(&mut self) -> Result<()> {
        let aggregates: Vec<GeoUnit> = self.geography.units().filter(|u| u.level != GeoLevel::State).cloned().collect();
        let terms: Vec<(String, Frequency)> = self
            .daily_terms()
            .into_iter()
            .map(|t| (t, Frequency::Daily))
            .chain(self.weekly_terms().into_iter().map(|t| (t, Frequency::Weekly)))
            .collect();
        for agg in &aggregates {
            let members = self.geography.components(&agg.id);
            if members.is_empty() {
                continue;
            }
            if !self.cases.contains_key(&agg.id) {
                if let Some(s) = combine_daily(&members, &self.cases, &agg.id, Signal::Cases)? {
                    self.cases.insert(agg.id.clone(), s);
                }
            }
            if !self.deaths.contains_key(&agg.id) {
                if let Some(s) = combine_daily(&members, &self.deaths, &agg.id, Signal::Deaths)? {
                    self.deaths.insert(agg.id.clone(), s);
                }
            }
            if !self.ili.contains_key(&agg.id) {
                if let Some(s) = mean_weekly(&members, &self.ili, &agg.id, Signal::Ili)? {
                    self.ili.insert(agg.id.clone(), s);
                }
            }
            for (term, f) in &terms {
                let key = (agg.id.clone(), term.clone());
                if self.trends.contains_key(&key) {
                    continue;
                }
                let sig = Signal::SearchTerm(term.clone());
                let derived = match f {
                    Frequency::Daily => {
                        let m: BTreeMap<String, DailySeries> = members
                            .iter()
                            .filter_map(|g| match self.trends.get(&(g.clone(), term.clone())) {
                                Some(TrendSeries::Daily(s)) => Some((g.clone(), s.clone())),
                                _ => None,
                            })
                            .collect();
                        combine_daily(&members, &m, &agg.id, sig)?.map(TrendSeries::Daily)
                    }
                    Frequency::Weekly => {
                        let m: BTreeMap<String, WeeklySeries> = members
                            .iter()
                            .filter_map(|g| match self.trends.get(&(g.clone(), term.clone())) {
                                Some(TrendSeries::Weekly(s)) => Some((g.clone(), s.clone())),
                                _ => None,
                            })
                            .collect();
                        sum_weekly(&members, &m, &agg.id, sig)?.map(TrendSeries::Weekly)
                    }
                };
                if let Some(s) = derived {
                    self.trends.insert(key, s);
                }
            }
        }
        Ok(())
    }

    /// Writes the bundle in the ingestion schema. Cases and deaths must share
    /// geos and dates.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("cases.csv"))?;
        w.write_record(["date", "geo", "cases", "deaths"])?;
        for (geo, c) in &self.cases {
            let d = self
                .deaths
                .get(geo)
                .filter(|d| d.start() == c.start() && d.len() == c.len())
                .ok_or_else(|| Error::Missing(format!("deaths aligned with cases for {geo}")))?;
            for i in 0..c.len() {
                w.write_record([
                    c.date_at(i).to_string(),
                    geo.clone(),
                    c.values()[i].to_string(),
                    d.values()[i].to_string(),
                ])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("ili.csv"))?;
        w.write_record(["week_ending", "geo", "ili_pct"])?;
        for (geo, s) in &self.ili {
            for i in 0..s.len() {
                w.write_record([s.date_at(i).to_string(), geo.clone(), s.values()[i].to_string()])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("trends.csv"))?;
        w.write_record(["date", "geo", "term", "value"])?;
        for ((geo, term), s) in &self.trends {
            let s = s.as_dyn();
            for i in 0..s.len() {
                w.write_record([s.date_at(i).to_string(), geo.clone(), term.clone(), s.values()[i].to_string()])?;
            }
        }
        w.flush()?;

        let mut f = File::create(dir.join("geography.csv"))?;
        writeln!(f, "geo,level,region")?;
        for u in self.geography.units() {
            writeln!(f, "{},{},{}", u.id, u.level, u.region_of.as_deref().unwrap_or(""))?;
        }
        Ok(())
    }
}

fn common_window<S: TimeSeries>(series: &[&S]) -> Option<(NaiveDate, usize)> {
    let start = series.iter().map(|s| s.start()).max()?;
    let end = series.iter().map(|s| s.end()).min()?;
    if start > end {
        return None;
    }
    let step = series[0].frequency().step_days();
    Some((start, ((end - start).num_days() / step) as usize + 1))
}

fn collect_members<'a, S>(members: &[String], map: &'a BTreeMap<String, S>) -> Option<Vec<&'a S>> {
    members.iter().map(|g| map.get(g)).collect()
}

fn combine_daily(
    members: &[String],
    map: &BTreeMap<String, DailySeries>,
    geo: &str,
    signal: Signal,
) -> Result<Option<DailySeries>> {
    let Some(parts) = collect_members(members, map) else { return Ok(None) };
    let Some((start, n)) = common_window(&parts) else { return Ok(None) };
    let mut values = vec![0.0; n];
    for p in parts {
        let o = p.index_of(start).expect("start within member");
        for (v, x) in values.iter_mut().zip(&p.values()[o..o + n]) {
            *v += x;
        }
    }
    DailySeries::new(geo, signal, start, values).map(Some)
}

fn sum_weekly(
    members: &[String],
    map: &BTreeMap<String, WeeklySeries>,
    geo: &str,
    signal: Signal,
) -> Result<Option<WeeklySeries>> {
    let Some(parts) = collect_members(members, map) else { return Ok(None) };
    let Some((start, n)) = common_window(&parts) else { return Ok(None) };
    let mut values = vec![0.0; n];
    for p in &parts {
        let o = p.index_of(start).expect("start within member");
        for (v, x) in values.iter_mut().zip(&p.values()[o..o + n]) {
            *v += x;
        }
    }
    WeeklySeries::new(geo, signal, start, values).map(Some)
}

fn mean_weekly(
    members: &[String],
    map: &BTreeMap<String, WeeklySeries>,
    geo: &str,
    signal: Signal,
) -> Result<Option<WeeklySeries>> {
    let k = members.len() as f64;
    sum_weekly(members, map, geo, signal.clone())?
        .map(|s| WeeklySeries::new(geo, signal, s.start(), s.values().iter().map(|v| v / k).collect()))
        .transpose()
}

/// Standard HHS region membership, used when no geography file is given.
pub fn hhs_regions() -> Vec<(String, String)> {
    const TABLE: &[(&str, &[&str])] = &[
        ("R1", &["CT", "MA", "ME", "NH", "RI", "VT"]),
        ("R2", &["NJ", "NY", "PR"]),
        ("R3", &["DC", "DE", "MD", "PA", "VA", "WV"]),
        ("R4", &["AL", "FL", "GA", "KY", "MS", "NC", "SC", "TN"]),
        ("R5", &["IL", "IN", "MI", "MN", "OH", "WI"]),
        ("R6", &["AR", "LA", "NM", "OK", "TX"]),
        ("R7", &["IA", "KS", "MO", "NE"]),
        ("R8", &["CO", "MT", "ND", "SD", "UT", "WY"]),
        ("R9", &["AZ", "CA", "HI", "NV"]),
        ("R10", &["AK", "ID", "OR", "WA"]),
    ];
    TABLE.iter().flat_map(|(r, states)| states.iter().map(move |s| (s.to_string(), r.to_string()))).collect()
}

/// Locations of the input files.
#[derive(Debug, Clone)]
pub struct DataPaths {
    pub cases: PathBuf,
    pub ili: PathBuf,
    pub trends: PathBuf,
    pub geography: Option<PathBuf>,
}

impl DataPaths {
    pub fn from_dir(dir: &Path) -> Self {
        let geo = dir.join("geography.csv");
        DataPaths {
            cases: dir.join("cases.csv"),
            ili: dir.join("ili.csv"),
            trends: dir.join("trends.csv"),
            geography: geo.exists().then_some(geo),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.cases.as_path(), self.ili.as_path(), self.trends.as_path()];
        if let Some(g) = &self.geography {
            v.push(g.as_path());
        }
        v
    }
}

struct CsvSource {
    file: String,
    reader: csv::Reader<File>,
}

impl CsvSource {
    fn open(path: &Path, header: &[&str]) -> Result<Self> {
        let file = path.display().to_string();
        let mut reader =
            csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(|e| {
                Error::Schema { file: file.clone(), line: 0, column: String::new(), message: e.to_string() }
            })?;
        let got: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if got != header {
            return Err(Error::Schema {
                file,
                line: 1,
                column: got.join(","),
                message: format!("expected header `{}`", header.join(",")),
            });
        }
        Ok(CsvSource { file, reader })
    }

    fn err(&self, line: u64, column: &str, message: impl Into<String>) -> Error {
        Error::Schema { file: self.file.clone(), line, column: column.to_string(), message: message.into() }
    }

    /// Rows as (line number, fields).
    fn rows(&mut self) -> Result<Vec<(u64, Vec<String>)>> {
        let file = self.file.clone();
        let mut out = Vec::new();
        for rec in self.reader.records() {
            let rec = rec.map_err(|e| Error::Schema {
                file: file.clone(),
                line: e.position().map(|p| p.line()).unwrap_or(0),
                column: String::new(),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            out.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(out)
    }
}

fn parse_date(src: &CsvSource, line: u64, column: &str, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| src.err(line, column, format!("`{s}` is not an ISO date")))
}

fn parse_value(src: &CsvSource, line: u64, column: &str, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| src.err(line, column, format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(src.err(line, column, "value is not finite"));
    }
    Ok(v)
}

/// Assembles contiguous per-key series from dated points, rejecting
/// duplicates and interior gaps.
fn contiguous<K: Ord + Clone + std::fmt::Debug>(
    src: &CsvSource,
    column: &str,
    points: BTreeMap<K, Vec<(NaiveDate, f64, u64)>>,
    step: i64,
) -> Result<BTreeMap<K, (NaiveDate, Vec<f64>)>> {
    let mut out = BTreeMap::new();
    for (key, mut pts) in points {
        pts.sort_by_key(|p| p.0);
        for w in pts.windows(2) {
            let gap = (w[1].0 - w[0].0).num_days();
            if gap == 0 {
                return Err(src.err(w[1].2, column, format!("duplicate row for {key:?} on {}", w[1].0)));
            }
            if gap != step {
                return Err(src.err(w[1].2, column, format!("gap before {} for {key:?}", w[1].0)));
            }
        }
        let start = pts[0].0;
        out.insert(key, (start, pts.into_iter().map(|p| p.1).collect()));
    }
    Ok(out)
}

fn load_geography(path: Option<&Path>, seen: &BTreeSet<String>) -> Result<Geography> {
    let Some(path) = path else {
        let table = hhs_regions();
        let known: BTreeSet<&str> = table.iter().flat_map(|(s, r)| [s.as_str(), r.as_str()]).collect();
        if let Some(g) = seen.iter().find(|g| g.as_str() != "US" && !known.contains(g.as_str())) {
            return Err(Error::Config(format!("geo `{g}` is not a US state or HHS region; supply geography.csv")));
        }
        return Geography::from_memberships(&table, "US");
    };
    let mut src = CsvSource::open(path, &["geo", "level", "region"])?;
    let mut memberships = Vec::new();
    let mut nation = None;
    let mut regions = BTreeSet::new();
    for (line, f) in src.rows()? {
        match f[1].as_str() {
            "state" => {
                if f[2].is_empty() {
                    return Err(src.err(line, "region", "state without region"));
                }
                memberships.push((f[0].clone(), f[2].clone()));
            }
            "region" => {
                regions.insert(f[0].clone());
            }
            "nation" => {
                if nation.replace(f[0].clone()).is_some() {
                    return Err(src.err(line, "level", "more than one nation"));
                }
            }
            other => return Err(src.err(line, "level", format!("unknown level `{other}`"))),
        }
    }
    let nation = nation.ok_or_else(|| src.err(0, "level", "no nation row"))?;
    for (_, r) in &memberships {
        if !regions.contains(r) {
            return Err(src.err(0, "region", format!("region `{r}` has no row")));
        }
    }
    Geography::from_memberships(&memberships, &nation)
}

/// Reads and validates the input panel.
pub fn load_bundle(paths: &DataPaths) -> Result<DatasetBundle> {
    let mut seen_geos = BTreeSet::new();

    let mut src = CsvSource::open(&paths.cases, &["date", "geo", "cases", "deaths"])?;
    let rows = src.rows()?;
    let n_cases = rows.len();
    let mut case_pts: BTreeMap<String, Vec<(NaiveDate, f64, u64)>> = BTreeMap::new();
    let mut death_pts: BTreeMap<String, Vec<(NaiveDate, f64, u64)>> = BTreeMap::new();
    for (line, f) in rows {
        let date = parse_date(&src, line, "date", &f[0])?;
        let c = parse_value(&src, line, "cases", &f[2])?;
        let d = parse_value(&src, line, "deaths", &f[3])?;
        if c < 0.0 {
            return Err(src.err(line, "cases", "negative count"));
        }
        if d < 0.0 {
            return Err(src.err(line, "deaths", "negative count"));
        }
        seen_geos.insert(f[1].clone());
        case_pts.entry(f[1].clone()).or_default().push((date, c, line));
        death_pts.entry(f[1].clone()).or_default().push((date, d, line));
    }
    let case_cols = contiguous(&src, "date", case_pts, 1)?;
    let death_cols = contiguous(&src, "date", death_pts, 1)?;

    let mut src_ili = CsvSource::open(&paths.ili, &["week_ending", "geo", "ili_pct"])?;
    let rows = src_ili.rows()?;
    let n_ili = rows.len();
    let mut ili_pts: BTreeMap<String, Vec<(NaiveDate, f64, u64)>> = BTreeMap::new();
    for (line, f) in rows {
        let date = parse_date(&src_ili, line, "week_ending", &f[0])?;
        if !is_saturday(date) {
            return Err(src_ili.err(line, "week_ending", format!("{date} is not a Saturday")));
        }
        let v = parse_value(&src_ili, line, "ili_pct", &f[2])?;
        if v < 0.0 {
            return Err(src_ili.err(line, "ili_pct", "negative %ILI"));
        }
        seen_geos.insert(f[1].clone());
        ili_pts.entry(f[1].clone()).or_default().push((date, v, line));
    }
    let ili_cols = contiguous(&src_ili, "week_ending", ili_pts, 7)?;

    let mut src_tr = CsvSource::open(&paths.trends, &["date", "geo", "term", "value"])?;
    let rows = src_tr.rows()?;
    let n_trends = rows.len();
    let mut tr_pts: BTreeMap<(String, String), Vec<(NaiveDate, f64, u64)>> = BTreeMap::new();
    for (line, f) in rows {
        let date = parse_date(&src_tr, line, "date", &f[0])?;
        let v = parse_value(&src_tr, line, "value", &f[3])?;
        seen_geos.insert(f[1].clone());
        tr_pts.entry((f[1].clone(), f[2].clone())).or_default().push((date, v, line));
    }
    // a term is weekly when every date is a Saturday and no two dates of
    // one series are a day apart
    let mut term_daily: BTreeMap<String, bool> = BTreeMap::new();
    for ((_, term), pts) in &tr_pts {
        let mut dates: Vec<NaiveDate> = pts.iter().map(|p| p.0).collect();
        dates.sort();
        let daily = dates.iter().any(|d| !is_saturday(*d)) || dates.windows(2).any(|w| (w[1] - w[0]).num_days() == 1);
        *term_daily.entry(term.clone()).or_insert(false) |= daily;
    }
    let mut trends = BTreeMap::new();
    let mut daily_pts = BTreeMap::new();
    let mut weekly_pts = BTreeMap::new();
    for (key, pts) in tr_pts {
        if term_daily[&key.1] {
            daily_pts.insert(key, pts);
        } else {
            weekly_pts.insert(key, pts);
        }
    }
    for ((geo, term), (start, values)) in contiguous(&src_tr, "date", daily_pts, 1)? {
        let s = DailySeries::new(geo.clone(), Signal::SearchTerm(term.clone()), start, values)?;
        trends.insert((geo, term), TrendSeries::Daily(s));
    }
    for ((geo, term), (start, values)) in contiguous(&src_tr, "date", weekly_pts, 7)? {
        let s = WeeklySeries::new(geo.clone(), Signal::SearchTerm(term.clone()), start, values)?;
        trends.insert((geo, term), TrendSeries::Weekly(s));
    }

    let geography = load_geography(paths.geography.as_deref(), &seen_geos)?;
    for g in &seen_geos {
        if !geography.contains(g) {
            return Err(Error::Config(format!("geo `{g}` missing from geography")));
        }
    }

    let mut bundle = DatasetBundle {
        cases: case_cols
            .into_iter()
            .map(|(g, (s, v))| Ok((g.clone(), DailySeries::new(g, Signal::Cases, s, v)?)))
            .collect::<Result<_>>()?,
        deaths: death_cols
            .into_iter()
            .map(|(g, (s, v))| Ok((g.clone(), DailySeries::new(g, Signal::Deaths, s, v)?)))
            .collect::<Result<_>>()?,
        ili: ili_cols
            .into_iter()
            .map(|(g, (s, v))| Ok((g.clone(), WeeklySeries::new(g, Signal::Ili, s, v)?)))
            .collect::<Result<_>>()?,
        trends,
        geography,
    };
    bundle.derive_aggregates()?;
    bundle.validate()?;
    info!(
        "loaded {n_cases} case rows, {n_ili} ILI rows, {n_trends} trend rows; {} states",
        bundle.geography.states().len()
    );
    Ok(bundle)
}
