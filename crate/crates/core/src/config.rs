use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Signal;
use crate::synthetic::SyntheticScenario;

/// A forecast target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Cases,
    Deaths,
    Ili,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Cases, Target::Deaths, Target::Ili];

    pub fn signal(self) -> Signal {
        match self {
            Target::Cases => Signal::Cases,
            Target::Deaths => Signal::Deaths,
            Target::Ili => Signal::Ili,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Cases => "cases",
            Target::Deaths => "deaths",
            Target::Ili => "ili",
        }
    }

    /// Horizons (weeks) this target is forecast at.
    pub fn horizons(self, configured: &[u32]) -> Vec<u32> {
        match self {
            Target::Ili => vec![1],
            _ => configured.to_vec(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cases" => Ok(Target::Cases),
            "deaths" => Ok(Target::Deaths),
            "ili" => Ok(Target::Ili),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

/// Run parameters. Serialized as a flat JSON object; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Forecast horizons in weeks, subset of 1..=4.
    pub horizons: Vec<u32>,
    pub targets: Vec<Target>,
    /// Number of daily ILI imputation draws.
    pub imputation_draws: usize,
    /// Daily training rows of the national regressions.
    pub national_train_days: usize,
    /// Weekly training window of the state-level covariance estimate.
    pub state_train_weeks: usize,
    /// Weekly training rows of the first-step raw estimators.
    pub raw_train_weeks: usize,
    /// Weekly training rows of the national %ILI regression.
    pub ili_train_weeks: usize,
    pub ensemble_window_weeks: usize,
    /// Autoregressive weekly lags in the %ILI and raw weekly designs.
    pub weekly_ar_lags: usize,
    /// Penalty grid, ascending. Interpreted as multiples of each training
    /// set's `lambda_max` when `lambda_relative` is set.
    pub lambda_grid: Vec<f64>,
    pub lambda_relative: bool,
    pub cv_folds: usize,
    pub seed: u64,
    /// term -> (case lag, death lag) in days; overrides the built-in table.
    pub lag_table: BTreeMap<String, (u32, u32)>,
    /// Largest candidate lag (days) when a term's lag must be estimated.
    pub max_candidate_lag: u32,
    pub lag_window_start: Option<NaiveDate>,
    pub lag_window_end: Option<NaiveDate>,
    /// Whether the week being imputed may serve as its own donor.
    pub donor_inclusive: bool,
    /// First week (Saturday) eligible as an imputation donor.
    pub first_donor_week: Option<NaiveDate>,
    /// Clip negative count forecasts to zero.
    pub floor_at_zero: bool,
    pub backtest_start: Option<NaiveDate>,
    pub backtest_end: Option<NaiveDate>,
    /// Directory holding the input CSVs.
    pub data_dir: Option<String>,
    /// Generate the input panel in memory instead of reading `data_dir`.
    pub scenario: Option<SyntheticScenario>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizons: vec![1, 2, 3, 4],
            targets: Target::ALL.to_vec(),
            imputation_draws: 100,
            national_train_days: 56,
            state_train_weeks: 30,
            raw_train_weeks: 30,
            ili_train_weeks: 52,
            ensemble_window_weeks: 15,
            weekly_ar_lags: 3,
            lambda_grid: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3],
            lambda_relative: true,
            cv_folds: 3,
            seed: 20200401,
            lag_table: BTreeMap::new(),
            max_candidate_lag: 35,
            lag_window_start: None,
            lag_window_end: None,
            donor_inclusive: true,
            first_donor_week: None,
            floor_at_zero: true,
            backtest_start: None,
            backtest_end: None,
            data_dir: None,
            scenario: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !(1..=4).contains(h)) {
            return bad(format!("horizons must be a nonempty subset of 1..=4, got {:?}", self.horizons));
        }
        if self.targets.is_empty() {
            return bad("targets must not be empty".into());
        }
        if self.imputation_draws < 1 {
            return bad("imputation_draws must be >= 1".into());
        }
        if self.national_train_days < 28 {
            return bad(format!("national_train_days must be >= 28, got {}", self.national_train_days));
        }
        for (name, v) in [
            ("state_train_weeks", self.state_train_weeks),
            ("raw_train_weeks", self.raw_train_weeks),
            ("ili_train_weeks", self.ili_train_weeks),
            ("ensemble_window_weeks", self.ensemble_window_weeks),
            ("weekly_ar_lags", self.weekly_ar_lags),
            ("max_candidate_lag", self.max_candidate_lag as usize),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.lambda_grid.is_empty() {
            return bad("lambda_grid must not be empty".into());
        }
        if self.lambda_grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return bad("lambda_grid entries must be finite and nonnegative".into());
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lambda_grid must be strictly ascending".into());
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be >= 2".into());
        }
        if self.lag_table.values().any(|&(c, d)| c < 1 || d < 1) {
            return bad("lag_table lags must be >= 1".into());
        }
        if let (Some(a), Some(b)) = (self.backtest_start, self.backtest_end) {
            if a > b {
                return bad("backtest_start is after backtest_end".into());
            }
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> u32 {
        self.horizons.iter().copied().max().unwrap_or(1)
    }

    /// Canonical JSON used for hashing and manifests.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.national_train_days, 56);
        assert_eq!(c.imputation_draws, 100);
        assert_eq!(c.state_train_weeks, 30);
        assert_eq!(c.ensemble_window_weeks, 15);
        assert_eq!(c.ili_train_weeks, 52);
    }

    #[test]
    fn flat_json_round_trip() {
        let c = RunConfig { seed: 9, horizons: vec![1, 2], ..Default::default() };
        let back = RunConfig::from_json_str(&c.to_canonical_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = RunConfig::from_json_str(r#"{"seed": 3, "imputation_draws": 5}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.imputation_draws, 5);
        assert_eq!(c.national_train_days, 56);
    }

    #[test]
    fn rejects_invalid() {
        assert!(RunConfig::from_json_str(r#"{"imputation_draws": 0}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"national_train_days": 20}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"lambda_grid": []}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"lambda_grid": [0.3, 0.1]}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"horizons": [5]}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"no_such_key": 1}"#).is_err());
    }
}
