//! Multi-geography daily and weekly series.
//!
//! Weeks end on Saturdays everywhere. Series are immutable once built and
//! every constructor validates its invariants, so downstream code can index
//! by date without re-checking.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GeoLevel {
    State,
    Region,
    Nation,
}

impl fmt::Display for GeoLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeoLevel::State => "state",
            GeoLevel::Region => "region",
            GeoLevel::Nation => "nation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoUnit {
    pub id: String,
    pub level: GeoLevel,
    /// Region id, set for states only.
    pub region_of: Option<String>,
    /// States sharing this state's region, including the state itself,
    /// in ascending id order.
    pub neighbors: Vec<String>,
}

/// The set of geographic units a bundle refers to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Geography {
    units: BTreeMap<String, GeoUnit>,
}

impl Geography {
    /// Builds a geography from `(state, region)` memberships plus a nation id.
    /// Neighbor lists are derived from shared regions.
    pub fn from_memberships(memberships: &[(String, String)], nation: &str) -> Result<Self> {
        let mut by_region: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (state, region) in memberships {
            by_region.entry(region.clone()).or_default().push(state.clone());
        }
        let mut units = BTreeMap::new();
        for (region, states) in by_region.iter_mut() {
            states.sort();
            states.dedup();
            for s in states.iter() {
                units.insert(
                    s.clone(),
                    GeoUnit {
                        id: s.clone(),
                        level: GeoLevel::State,
                        region_of: Some(region.clone()),
                        neighbors: states.clone(),
                    },
                );
            }
            units.insert(
                region.clone(),
                GeoUnit { id: region.clone(), level: GeoLevel::Region, region_of: None, neighbors: Vec::new() },
            );
        }
        units.insert(
            nation.to_string(),
            GeoUnit { id: nation.to_string(), level: GeoLevel::Nation, region_of: None, neighbors: Vec::new() },
        );
        let geo = Geography { units };
        geo.validate()?;
        Ok(geo)
    }

    pub fn validate(&self) -> Result<()> {
        let nations = self.units.values().filter(|u| u.level == GeoLevel::Nation).count();
        if nations != 1 {
            return Err(Error::Config(format!("geography needs exactly one nation, found {nations}")));
        }
        for u in self.units.values() {
            match u.level {
                GeoLevel::State => {
                    let region =
                        u.region_of.as_ref().ok_or_else(|| Error::Config(format!("state {} has no region", u.id)))?;
                    if self.units.get(region).map(|r| r.level) != Some(GeoLevel::Region) {
                        return Err(Error::Config(format!("state {} refers to unknown region {region}", u.id)));
                    }
                    for n in &u.neighbors {
                        let nu = self
                            .units
                            .get(n)
                            .ok_or_else(|| Error::Config(format!("state {} lists unknown neighbor {n}", u.id)))?;
                        if nu.region_of.as_ref() != Some(region) {
                            return Err(Error::Config(format!(
                                "neighbor {n} of {} lies outside region {region}",
                                u.id
                            )));
                        }
                    }
                }
                GeoLevel::Region | GeoLevel::Nation => {
                    if u.region_of.is_some() {
                        return Err(Error::Config(format!("{} {} must not have a region", u.level, u.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&GeoUnit> {
        self.units.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.units.contains_key(id)
    }

    pub fn units(&self) -> impl Iterator<Item = &GeoUnit> {
        self.units.values()
    }

    pub fn states(&self) -> Vec<&GeoUnit> {
        self.units.values().filter(|u| u.level == GeoLevel::State).collect()
    }

    pub fn regions(&self) -> Vec<&GeoUnit> {
        self.units.values().filter(|u| u.level == GeoLevel::Region).collect()
    }

    pub fn nation(&self) -> &GeoUnit {
        self.units.values().find(|u| u.level == GeoLevel::Nation).expect("validated geography has a nation")
    }

    /// States belonging to `region`, ascending.
    pub fn members(&self, region: &str) -> Vec<String> {
        self.units.values().filter(|u| u.region_of.as_deref() == Some(region)).map(|u| u.id.clone()).collect()
    }

    /// Component states of an aggregate unit (all states for the nation).
    pub fn components(&self, id: &str) -> Vec<String> {
        match self.units.get(id).map(|u| u.level) {
            Some(GeoLevel::Nation) => self.states().iter().map(|u| u.id.clone()).collect(),
            Some(GeoLevel::Region) => self.members(id),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Signal {
    Cases,
    Deaths,
    Ili,
    SearchTerm(String),
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Cases => f.write_str("cases"),
            Signal::Deaths => f.write_str("deaths"),
            Signal::Ili => f.write_str("ili"),
            Signal::SearchTerm(t) => write!(f, "term:{t}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frequency {
    Daily,
    Weekly,
}

impl Frequency {
    pub fn step_days(self) -> i64 {
        match self {
            Frequency::Daily => 1,
            Frequency::Weekly => 7,
        }
    }
}

pub fn is_saturday(d: NaiveDate) -> bool {
    d.weekday() == Weekday::Sat
}

/// The Saturday ending the week that contains `d`.
pub fn week_ending(d: NaiveDate) -> NaiveDate {
    let offset = (Weekday::Sat.num_days_from_sunday() + 7 - d.weekday().num_days_from_sunday()) % 7;
    d + Duration::days(offset as i64)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} at index {i}"))),
        None => Ok(()),
    }
}

/// Shared read access for daily and weekly series.
pub trait TimeSeries {
    fn frequency(&self) -> Frequency;
    fn start(&self) -> NaiveDate;
    fn values(&self) -> &[f64];

    fn len(&self) -> usize {
        self.values().len()
    }

    fn is_empty(&self) -> bool {
        self.values().is_empty()
    }

    fn date_at(&self, i: usize) -> NaiveDate {
        self.start() + Duration::days(i as i64 * self.frequency().step_days())
    }

    fn end(&self) -> NaiveDate {
        self.date_at(self.len().saturating_sub(1))
    }

    /// Position of `date` in the series, if it falls on the grid.
    fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let diff = (date - self.start()).num_days();
        let step = self.frequency().step_days();
        if diff < 0 || diff % step != 0 {
            return None;
        }
        let i = (diff / step) as usize;
        (i < self.len()).then_some(i)
    }

    fn at(&self, date: NaiveDate) -> Option<f64> {
        self.index_of(date).map(|i| self.values()[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub geo: String,
    pub signal: Signal,
    start: NaiveDate,
    values: Vec<f64>,
}

impl DailySeries {
    pub fn new(geo: impl Into<String>, signal: Signal, start: NaiveDate, values: Vec<f64>) -> Result<Self> {
        let geo = geo.into();
        if values.is_empty() {
            return Err(Error::TooShort(format!("daily {signal} for {geo} has no values")));
        }
        check_finite(&values, &format!("daily {signal} for {geo}"))?;
        Ok(DailySeries { geo, signal, start, values })
    }

    /// Shift by `k` days: `out[t] = in[t - k]`, dropping the first `k` dates.
    pub fn lag(&self, k: usize) -> Result<Self> {
        if k >= self.values.len() {
            return Err(Error::TooShort(format!("lag {k} on series of length {}", self.values.len())));
        }
        Ok(DailySeries {
            geo: self.geo.clone(),
            signal: self.signal.clone(),
            start: self.start + Duration::days(k as i64),
            values: self.values[..self.values.len() - k].to_vec(),
        })
    }

    /// Restriction to dates `<= end`; `None` when nothing remains.
    pub fn truncate_to(&self, end: NaiveDate) -> Option<Self> {
        let n = (end - self.start).num_days() + 1;
        if n <= 0 {
            return None;
        }
        let n = (n as usize).min(self.values.len());
        Some(DailySeries {
            geo: self.geo.clone(),
            signal: self.signal.clone(),
            start: self.start,
            values: self.values[..n].to_vec(),
        })
    }
}

impl TimeSeries for DailySeries {
    fn frequency(&self) -> Frequency {
        Frequency::Daily
    }
    fn start(&self) -> NaiveDate {
        self.start
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySeries {
    pub geo: String,
    pub signal: Signal,
    start: NaiveDate,
    values: Vec<f64>,
}

impl WeeklySeries {
    /// `first_week` is the Saturday ending the first week.
    pub fn new(geo: impl Into<String>, signal: Signal, first_week: NaiveDate, values: Vec<f64>) -> Result<Self> {
        let geo = geo.into();
        if !is_saturday(first_week) {
            return Err(Error::NotSaturday { date: first_week, context: format!("weekly {signal} for {geo}") });
        }
        check_finite(&values, &format!("weekly {signal} for {geo}"))?;
        Ok(WeeklySeries { geo, signal, start: first_week, values })
    }

    pub fn week_endings(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.values.len()).map(|i| self.date_at(i))
    }

    /// Shift by `k` weeks: `out[t] = in[t - k]`.
    pub fn lag(&self, k: usize) -> Result<Self> {
        if k >= self.values.len() {
            return Err(Error::TooShort(format!("lag {k} on series of length {}", self.values.len())));
        }
        Ok(WeeklySeries {
            geo: self.geo.clone(),
            signal: self.signal.clone(),
            start: self.start + Duration::days(7 * k as i64),
            values: self.values[..self.values.len() - k].to_vec(),
        })
    }

    pub fn truncate_to(&self, end: NaiveDate) -> Option<Self> {
        let days = (end - self.start).num_days();
        if days < 0 {
            return None;
        }
        let n = ((days / 7) as usize + 1).min(self.values.len());
        Some(WeeklySeries {
            geo: self.geo.clone(),
            signal: self.signal.clone(),
            start: self.start,
            values: self.values[..n].to_vec(),
        })
    }

    pub fn increment(&self) -> Result<Increment> {
        if self.values.len() < 2 {
            return Err(Error::TooShort(format!(
                "increment needs at least 2 weeks, {} has {}",
                self.geo,
                self.values.len()
            )));
        }
        let deltas = self.values.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Increment { base: self.clone(), deltas })
    }
}

impl TimeSeries for WeeklySeries {
    fn frequency(&self) -> Frequency {
        Frequency::Weekly
    }
    fn start(&self) -> NaiveDate {
        self.start
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Week-over-week differences of a weekly series.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub base: WeeklySeries,
    /// `deltas[i] = base[i + 1] - base[i]`.
    pub deltas: Vec<f64>,
}

impl Increment {
    /// Cumulative sum of the deltas from the first base value, with
    /// compensated summation.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.deltas.len() + 1);
        let first = self.base.values()[0];
        let (mut sum, mut comp) = (first, 0.0f64);
        out.push(first);
        for &d in &self.deltas {
            let t = sum + d;
            if sum.abs() >= d.abs() {
                comp += (sum - t) + d;
            } else {
                comp += (d - t) + sum;
            }
            sum = t;
            out.push(sum + comp);
        }
        out
    }
}

/// Sums each complete Saturday-ending week of `s` whose Saturday is on or
/// before `through`. Partial leading and trailing weeks are dropped.
pub fn aggregate_daily_to_weekly(s: &DailySeries, through: NaiveDate) -> Result<WeeklySeries> {
    if !is_saturday(through) {
        return Err(Error::NotSaturday { date: through, context: "aggregation anchor".into() });
    }
    // first Saturday with a full week of data behind it
    let first = week_ending(s.start() + Duration::days(6));
    let last_available = if is_saturday(s.end()) { s.end() } else { week_ending(s.end()) - Duration::days(7) };
    let last = last_available.min(through);
    if first > last {
        return Err(Error::NoCompleteWeek(format!("daily {} for {}", s.signal, s.geo)));
    }
    let mut values = Vec::new();
    let mut sat = first;
    while sat <= last {
        let end = s.index_of(sat).expect("saturday within range");
        values.push(s.values()[end - 6..=end].iter().sum());
        sat += Duration::days(7);
    }
    WeeklySeries::new(s.geo.clone(), s.signal.clone(), first, values)
}

/// Every complete week of `s`.
pub fn aggregate_all(s: &DailySeries) -> Result<WeeklySeries> {
    aggregate_daily_to_weekly(s, week_ending(s.end()))
}

/// Row-aligned join of several series over their common dates.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub frequency: Frequency,
    pub dates: Vec<NaiveDate>,
    /// One column per input series, in input order.
    pub columns: Vec<Vec<f64>>,
}

pub fn align(series: &[&dyn TimeSeries]) -> Result<Aligned> {
    let first = series.first().ok_or_else(|| Error::TooShort("align needs at least one series".into()))?;
    let freq = first.frequency();
    if let Some(bad) = series.iter().find(|s| s.frequency() != freq) {
        return Err(Error::FrequencyMismatch(format!("{:?} series aligned with {:?}", bad.frequency(), freq)));
    }
    let start = series.iter().map(|s| s.start()).max().unwrap();
    let end = series.iter().map(|s| s.end()).min().unwrap();
    if start > end {
        return Err(Error::EmptyIntersection);
    }
    let offsets: Vec<usize> =
        series.iter().map(|s| s.index_of(start).ok_or(Error::EmptyIntersection)).collect::<Result<_>>()?;
    let n = ((end - start).num_days() / freq.step_days()) as usize + 1;
    let dates = (0..n).map(|i| start + Duration::days(i as i64 * freq.step_days())).collect();
    let columns = series.iter().zip(&offsets).map(|(s, &o)| s.values()[o..o + n].to_vec()).collect();
    Ok(Aligned { frequency: freq, dates, columns })
}
