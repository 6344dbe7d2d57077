//! Point forecasts keyed by (geo, target week, horizon, method).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;

use crate::config::Target;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ForecastKey {
    pub geo: String,
    pub target_week: NaiveDate,
    pub horizon: u32,
    pub method: String,
}

impl ForecastKey {
    pub fn new(geo: impl Into<String>, target_week: NaiveDate, horizon: u32, method: impl Into<String>) -> Self {
        ForecastKey { geo: geo.into(), target_week, horizon, method: method.into() }
    }

    /// The as-of week the forecast was issued.
    pub fn as_of(&self) -> NaiveDate {
        self.target_week - chrono::Duration::days(7 * self.horizon as i64)
    }
}

/// Forecasts of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTable {
    pub target: Target,
    rows: BTreeMap<ForecastKey, f64>,
    /// Keys whose value was clipped at zero.
    pub clipped: BTreeSet<ForecastKey>,
}

impl ForecastTable {
    pub fn new(target: Target) -> Self {
        ForecastTable { target, rows: BTreeMap::new(), clipped: BTreeSet::new() }
    }

    pub fn insert(&mut self, key: ForecastKey, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forecast {key:?}")));
        }
        if self.rows.contains_key(&key) {
            return Err(Error::Failed(format!(
                "duplicate forecast for {} week {} horizon {} method {}",
                key.geo, key.target_week, key.horizon, key.method
            )));
        }
        self.rows.insert(key, value);
        Ok(())
    }

    pub fn get(&self, key: &ForecastKey) -> Option<f64> {
        self.rows.get(key).copied()
    }

    pub fn lookup(&self, geo: &str, target_week: NaiveDate, horizon: u32, method: &str) -> Option<f64> {
        self.get(&ForecastKey::new(geo, target_week, horizon, method))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ForecastKey, f64)> {
        self.rows.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn methods(&self) -> BTreeSet<String> {
        self.rows.keys().map(|k| k.method.clone()).collect()
    }

    pub fn geos(&self) -> BTreeSet<String> {
        self.rows.keys().map(|k| k.geo.clone()).collect()
    }

    /// Moves every row of `other` in; duplicate keys are an error.
    pub fn merge(&mut self, other: ForecastTable) -> Result<()> {
        if other.target != self.target {
            return Err(Error::Failed(format!("cannot merge {} forecasts into {}", other.target, self.target)));
        }
        for (k, v) in other.rows {
            self.insert(k, v)?;
        }
        self.clipped.extend(other.clipped);
        Ok(())
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&ForecastKey) -> bool) {
        self.rows.retain(|k, _| keep(k));
        self.clipped.retain(|k| keep(k));
    }

    /// Writes `geo,target_week,horizon,method,value`, sorted by key.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["geo", "target_week", "horizon", "method", "value"])?;
        for (k, v) in &self.rows {
            w.write_record([
                k.geo.clone(),
                k.target_week.to_string(),
                k.horizon.to_string(),
                k.method.clone(),
                v.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, target: Target) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if header != ["geo", "target_week", "horizon", "method", "value"] {
            return Err(Error::Schema {
                file,
                line: 1,
                column: "header".into(),
                message: "expected `geo,target_week,horizon,method,value`".into(),
            });
        }
        let mut t = ForecastTable::new(target);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let bad = |column: &str, message: &str| Error::Schema {
                file: file.clone(),
                line,
                column: column.into(),
                message: message.into(),
            };
            let week = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
                .map_err(|_| bad("target_week", "expected YYYY-MM-DD"))?;
            let horizon: u32 = rec[2].parse().map_err(|_| bad("horizon", "expected an integer"))?;
            let value: f64 = rec[4].parse().map_err(|_| bad("value", "expected a number"))?;
            t.insert(ForecastKey::new(&rec[0], week, horizon, &rec[3]), value)
                .map_err(|e| bad("value", &e.to_string()))?;
        }
        Ok(t)
    }
}
