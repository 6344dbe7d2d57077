//! Daily %ILI imputation from weekly %ILI.
//!
//! For every draw and week, a donor week is chosen uniformly from the
//! eligible past weeks and its daily case profile, normalized to sum to one,
//! is scaled by the week's %ILI. Each (geo, week, draw) uses its own random
//! substream, so a week's draws do not depend on later data or on the order
//! weeks are processed.

use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel::{aggregate_all, DailySeries, Signal, TimeSeries, WeeklySeries};
use crate::rng::substream;

/// Scales a donor week's daily profile to `weekly_ili`. Returns the seven
/// daily values and whether the uniform fallback was used (all-zero donor).
pub fn impute_week(donor_cases: &[f64; 7], weekly_ili: f64) -> ([f64; 7], bool) {
    let total: f64 = donor_cases.iter().sum();
    if total > 0.0 {
        (donor_cases.map(|c| c * weekly_ili / total), false)
    } else {
        ([weekly_ili / 7.0; 7], weekly_ili > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputeOptions {
    /// Whether week tau may donate to itself.
    pub inclusive: bool,
    /// Earliest donor week (Saturday); defaults to the first week covered by
    /// both inputs.
    pub first_donor_week: Option<NaiveDate>,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions { inclusive: true, first_donor_week: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDraw {
    pub daily: DailySeries,
    /// Donor week ending per imputed week.
    pub donors: Vec<NaiveDate>,
    /// Weeks that fell back to a uniform profile.
    pub fallback: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub geo: String,
    /// The weekly %ILI the draws conserve, restricted to imputed weeks.
    pub weekly: WeeklySeries,
    pub draws: Vec<ImputedDraw>,
}

impl ImputationSet {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// Weekly aggregation of one draw.
    pub fn weekly_view(&self, draw: usize) -> Result<WeeklySeries> {
        let d = self.draws.get(draw).ok_or_else(|| Error::Missing(format!("draw {draw} of {}", self.geo)))?;
        let mut w = aggregate_all(&d.daily)?;
        w.signal = Signal::Ili;
        Ok(w)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_imputations(std::slice::from_ref(self), path)
    }
}

/// Writes `draw,date,geo,value,donor_week` rows for several sets.
pub fn write_imputations(sets: &[ImputationSet], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["draw", "date", "geo", "value", "donor_week"])?;
    for set in sets {
        for (n, d) in set.draws.iter().enumerate() {
            for i in 0..d.daily.len() {
                w.write_record([
                    n.to_string(),
                    d.daily.date_at(i).to_string(),
                    set.geo.clone(),
                    d.daily.values()[i].to_string(),
                    d.donors[i / 7].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn day_index(d: NaiveDate) -> u64 {
    (d - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days() as u64
}

/// Imputes `n_draws` daily %ILI sequences for one area.
pub fn impute_area(
    weekly_ili: &WeeklySeries,
    daily_cases: &DailySeries,
    n_draws: usize,
    seed: u64,
    opts: ImputeOptions,
) -> Result<ImputationSet> {
    if n_draws == 0 {
        return Err(Error::Config("imputation needs at least one draw".into()));
    }
    let geo = weekly_ili.geo.clone();
    let covered =
        |sat: NaiveDate| daily_cases.index_of(sat - Duration::days(6)).is_some() && daily_cases.index_of(sat).is_some();
    // the imputation window starts at the first donor-eligible week
    let mut first = weekly_ili
        .week_endings()
        .find(|&s| covered(s))
        .ok_or_else(|| Error::NoCandidates(format!("no ILI week of {geo} is covered by daily cases")))?;
    if let Some(f) = opts.first_donor_week {
        first = first.max(f);
    }
    let pool: Vec<NaiveDate> = weekly_ili.week_endings().filter(|&s| s >= first && covered(s)).collect();
    let mut weeks: Vec<(NaiveDate, f64)> =
        weekly_ili.week_endings().zip(weekly_ili.values().iter().copied()).filter(|(s, _)| *s >= first).collect();
    if !opts.inclusive {
        // the first window week has no strictly earlier donor
        weeks.retain(|(s, _)| *s > first);
    }
    if weeks.is_empty() {
        return Err(Error::NoCandidates(format!("no week of {geo} has an eligible donor")));
    }

    let donor_profile = |sat: NaiveDate| -> [f64; 7] {
        let end = daily_cases.index_of(sat).expect("donor covered");
        let mut out = [0.0; 7];
        out.copy_from_slice(&daily_cases.values()[end - 6..=end]);
        out
    };

    let draws: Vec<ImputedDraw> = (0..n_draws)
        .into_par_iter()
        .map(|n| {
            let mut daily = Vec::with_capacity(weeks.len() * 7);
            let mut donors = Vec::with_capacity(weeks.len());
            let mut fallback = Vec::with_capacity(weeks.len());
            for &(sat, ili) in &weeks {
                let eligible = pool.partition_point(|&d| if opts.inclusive { d <= sat } else { d < sat });
                if eligible == 0 {
                    return Err(Error::NoCandidates(format!("no donor for {geo} week {sat}")));
                }
                let mut rng = substream(seed, &["impute".into(), geo.as_str().into(), day_index(sat).into(), n.into()]);
                let donor = pool[rng.random_range(0..eligible)];
                let (vals, fb) = impute_week(&donor_profile(donor), ili);
                daily.extend_from_slice(&vals);
                donors.push(donor);
                fallback.push(fb);
            }
            let start = weeks[0].0 - Duration::days(6);
            Ok(ImputedDraw { daily: DailySeries::new(geo.clone(), Signal::Ili, start, daily)?, donors, fallback })
        })
        .collect::<Result<_>>()?;

    let w0 = weeks[0].0;
    let weekly = WeeklySeries::new(geo.clone(), Signal::Ili, w0, weeks.iter().map(|w| w.1).collect())?;
    Ok(ImputationSet { geo, weekly, draws })
}
