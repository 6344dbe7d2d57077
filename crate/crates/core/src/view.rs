//! Leakage-audited access to the panel as of a forecast date.
//!
//! Every model input is read through a [`Clipped`] series, which refuses
//! reads dated after the as-of date with [`Error::Leakage`].

use chrono::NaiveDate;

use crate::bundle::DatasetBundle;
use crate::error::{Error, Result};
use crate::panel::{DailySeries, Signal, TimeSeries, WeeklySeries};

/// A series whose reads are restricted to dates `<= as_of`.
#[derive(Debug)]
pub struct Clipped<'a, S> {
    series: &'a S,
    as_of: NaiveDate,
}

impl<S> Clone for Clipped<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S> Copy for Clipped<'_, S> {}

impl<'a, S: TimeSeries> Clipped<'a, S> {
    pub fn new(series: &'a S, as_of: NaiveDate) -> Self {
        Clipped { series, as_of }
    }

    /// The underlying series. Reading its values bypasses the audit.
    pub fn inner(&self) -> &'a S {
        self.series
    }

    pub fn as_of(&self) -> NaiveDate {
        self.as_of
    }

    pub fn start(&self) -> NaiveDate {
        self.series.start()
    }

    /// Last readable date.
    pub fn end(&self) -> NaiveDate {
        self.series.end().min(self.as_of)
    }

    fn check(&self, date: NaiveDate, what: &str) -> Result<()> {
        if date > self.as_of {
            return Err(Error::Leakage { what: what.to_string(), date, as_of: self.as_of });
        }
        Ok(())
    }

    pub fn get(&self, date: NaiveDate) -> Result<f64>
    where
        S: Describe,
    {
        self.check(date, &self.series.describe())?;
        self.series.at(date).ok_or_else(|| Error::Missing(format!("{} has no value at {date}", self.series.describe())))
    }

    /// Like [`get`](Self::get), but dates before the series start read as 0.
    /// Used for counts that did not exist before the epidemic began.
    pub fn get_or_zero_before(&self, date: NaiveDate) -> Result<f64>
    where
        S: Describe,
    {
        if date < self.series.start() {
            self.check(date, &self.series.describe())?;
            return Ok(0.0);
        }
        self.get(date)
    }
}

impl Clipped<'_, DailySeries> {
    /// Sum over the `days` days ending at `end`.
    pub fn window_sum(&self, end: NaiveDate, days: i64) -> Result<f64> {
        let mut s = 0.0;
        for k in 0..days {
            s += self.get(end - chrono::Duration::days(k))?;
        }
        Ok(s)
    }
}

pub trait Describe {
    fn describe(&self) -> String;
}

impl Describe for DailySeries {
    fn describe(&self) -> String {
        format!("daily {} for {}", self.signal, self.geo)
    }
}

impl Describe for WeeklySeries {
    fn describe(&self) -> String {
        format!("weekly {} for {}", self.signal, self.geo)
    }
}

/// The bundle seen from as-of date `as_of`.
#[derive(Debug, Clone, Copy)]
pub struct AsOfView<'a> {
    pub bundle: &'a DatasetBundle,
    pub as_of: NaiveDate,
}

impl<'a> AsOfView<'a> {
    pub fn new(bundle: &'a DatasetBundle, as_of: NaiveDate) -> Self {
        AsOfView { bundle, as_of }
    }

    pub fn daily(&self, signal: &Signal, geo: &str) -> Result<Clipped<'a, DailySeries>> {
        self.bundle
            .daily(signal, geo)
            .map(|s| Clipped::new(s, self.as_of))
            .ok_or_else(|| Error::Missing(format!("no daily {signal} series for {geo}")))
    }

    pub fn weekly(&self, signal: &Signal, geo: &str) -> Result<Clipped<'a, WeeklySeries>> {
        self.bundle
            .weekly(signal, geo)
            .map(|s| Clipped::new(s, self.as_of))
            .ok_or_else(|| Error::Missing(format!("no weekly {signal} series for {geo}")))
    }

    pub fn clip<S: TimeSeries>(&self, s: &'a S) -> Clipped<'a, S> {
        Clipped::new(s, self.as_of)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_past_as_of_are_leakage() {
        let d0 = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let s = DailySeries::new("US", Signal::Cases, d0, (0..20).map(f64::from).collect()).unwrap();
        let as_of = d0 + chrono::Duration::days(9);
        let c = Clipped::new(&s, as_of);
        assert_eq!(c.get(as_of).unwrap(), 9.0);
        assert!(matches!(c.get(as_of + chrono::Duration::days(1)), Err(Error::Leakage { .. })));
        assert!(matches!(c.get(d0 - chrono::Duration::days(1)), Err(Error::Missing(_))));
        assert_eq!(c.get_or_zero_before(d0 - chrono::Duration::days(3)).unwrap(), 0.0);
        assert_eq!(c.window_sum(as_of, 3).unwrap(), 24.0);
        assert_eq!(c.end(), as_of);
    }
}
