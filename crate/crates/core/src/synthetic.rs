//! Seeded synthetic twin-epidemic panels.
//!
//! Each state carries a latent COVID intensity built from Gaussian waves
//! (part shared across its region). Daily cases follow the intensity with a
//! weekday reporting profile; deaths follow it with a fixed delay; every
//! daily search term is the intensity `lag` days in the future, so the term
//! leads cases by exactly its planted lag. Weekly %ILI mixes an independent
//! flu season with standardized weekly cases so that its correlation with
//! cases equals the coupling coefficient before noise. Weekly flu terms lead
//! %ILI by one week.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bundle::{DatasetBundle, TrendSeries};
use crate::error::{Error, Result};
use crate::panel::DailySeries;
use crate::panel::{Geography, Signal, WeeklySeries};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScenario {
    pub n_states: usize,
    pub states_per_region: usize,
    pub weeks: usize,
    /// First day; must be a Sunday so weeks are complete.
    pub start: NaiveDate,
    /// Planted lead (days) of each daily search term over cases.
    pub term_lags: Vec<u32>,
    /// Number of weekly flu search terms.
    pub flu_terms: usize,
    /// Correlation of weekly %ILI with weekly cases before noise, in [-1, 1].
    pub coupling: f64,
    /// Sunday..Saturday reporting multipliers; positive, summing to 7.
    pub weekday_weights: [f64; 7],
    pub death_lag_days: u32,
    pub death_rate: f64,
    /// Log-normal multiplicative noise on daily cases and deaths.
    pub case_noise: f64,
    /// Additive search noise as a fraction of the term's mean level.
    pub search_noise: f64,
    /// Log-normal multiplicative noise on weekly %ILI.
    pub ili_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        SyntheticScenario {
            n_states: 10,
            states_per_region: 3,
            weeks: 120,
            start: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            term_lags: vec![7, 11, 14, 21, 28],
            flu_terms: 2,
            coupling: 0.6,
            weekday_weights: [0.6, 1.1, 1.1, 1.15, 1.15, 1.1, 0.8],
            death_lag_days: 14,
            death_rate: 0.015,
            case_noise: 0.05,
            search_noise: 0.05,
            ili_noise: 0.03,
            seed: 1,
        }
    }
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if self.n_states == 0 || self.states_per_region == 0 {
            return bad("n_states and states_per_region must be positive");
        }
        if self.weeks < 2 {
            return bad("weeks must be >= 2");
        }
        if self.start.weekday() != chrono::Weekday::Sun {
            return bad("start must be a Sunday");
        }
        if self.weekday_weights.iter().any(|w| !(*w > 0.0)) {
            return bad("weekday weights must be positive");
        }
        let total: f64 = self.weekday_weights.iter().sum();
        if (total - 7.0).abs() > 1e-9 {
            return bad("weekday weights must sum to 7");
        }
        if !(-1.0..=1.0).contains(&self.coupling) {
            return bad("coupling must lie in [-1, 1]");
        }
        for v in [self.case_noise, self.search_noise, self.ili_noise, self.death_rate] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("noise scales and death rate must be finite and nonnegative");
            }
        }
        Ok(())
    }

    pub fn state_ids(&self) -> Vec<String> {
        (0..self.n_states).map(|i| format!("S{:02}", i + 1)).collect()
    }

    pub fn geography(&self) -> Result<Geography> {
        let m: Vec<(String, String)> = self
            .state_ids()
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, format!("R{}", i / self.states_per_region + 1)))
            .collect();
        Geography::from_memberships(&m, "US")
    }
}

#[derive(Debug, Clone)]
struct Wave {
    center: f64,
    width: f64,
    amplitude: f64,
}

fn waves(rng: &mut ChaCha8Rng, span: f64, count: usize) -> Vec<Wave> {
    (0..count)
        .map(|_| Wave {
            center: rng.random_range(-30.0..span + 60.0),
            width: rng.random_range(9.0..30.0),
            amplitude: rng.random_range(0.4..1.4),
        })
        .collect()
}

fn wave_sum(ws: &[Wave], t: f64) -> f64 {
    ws.iter()
        .map(|w| {
            let z = (t - w.center) / w.width;
            w.amplitude * (-0.5 * z * z).exp()
        })
        .sum()
}

fn lognormal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (sd * z - 0.5 * sd * sd).exp()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// Builds the panel for `sc`. Output depends only on the scenario.
pub fn generate_synthetic(sc: &SyntheticScenario) -> Result<DatasetBundle> {
    sc.validate()?;
    let seed = sc.seed;
    let days = sc.weeks * 7;
    let span = days as f64;
    let geography = sc.geography()?;
    let states = sc.state_ids();
    let first_sat = sc.start + Duration::days(6);
    let wave_count = (sc.weeks / 12).max(2);

    let mut regional: BTreeMap<String, Vec<Wave>> = BTreeMap::new();
    for r in geography.regions() {
        let mut rng = substream(seed, &["synthetic".into(), "region-waves".into(), r.id.as_str().into()]);
        regional.insert(r.id.clone(), waves(&mut rng, span, wave_count));
    }

    let mut bundle = DatasetBundle { geography: geography.clone(), ..Default::default() };
    let mut weekly_cases: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for s in &states {
        let region = geography.get(s).and_then(|u| u.region_of.clone()).expect("state has region");
        let mut rng = substream(seed, &["synthetic".into(), "state".into(), s.as_str().into()]);
        let scale = (rng.random_range(200f64.ln()..2000f64.ln())).exp();
        let own = waves(&mut rng, span, wave_count);
        let shared = &regional[&region];
        let intensity = |t: f64| scale * (0.08 + 0.6 * wave_sum(shared, t) + 0.4 * wave_sum(&own, t));

        let mut noise = substream(seed, &["synthetic".into(), "counts".into(), s.as_str().into()]);
        let mut cases = Vec::with_capacity(days);
        let mut deaths = Vec::with_capacity(days);
        for i in 0..days {
            let dow = (sc.start + Duration::days(i as i64)).weekday().num_days_from_sunday() as usize;
            let w = sc.weekday_weights[dow];
            let t = i as f64;
            cases.push(intensity(t) * w * lognormal(&mut noise, sc.case_noise));
            deaths.push(
                sc.death_rate * intensity(t - sc.death_lag_days as f64) * w * lognormal(&mut noise, sc.case_noise),
            );
        }
        weekly_cases.insert(s.clone(), cases.chunks(7).map(|c| c.iter().sum()).collect());
        bundle.cases.insert(s.clone(), DailySeries::new(s.clone(), Signal::Cases, sc.start, cases)?);
        bundle.deaths.insert(s.clone(), DailySeries::new(s.clone(), Signal::Deaths, sc.start, deaths)?);

        for (k, &lag) in sc.term_lags.iter().enumerate() {
            let term = format!("covid_term_{:02}", k + 1);
            let mut trng = substream(seed, &["synthetic".into(), "term".into(), s.as_str().into(), k.into()]);
            let gain = trng.random_range(0.5..1.5) * 50.0 / scale;
            let level = gain * scale * 0.5;
            let values: Vec<f64> = (0..days)
                .map(|i| {
                    let clean = gain * intensity(i as f64 + lag as f64);
                    (clean + sc.search_noise * level * normal(&mut trng)).max(0.0)
                })
                .collect();
            let series = DailySeries::new(s.clone(), Signal::SearchTerm(term.clone()), sc.start, values)?;
            bundle.trends.insert((s.clone(), term), TrendSeries::Daily(series));
        }
    }

    // %ILI: flu season orthogonal to cases, mixed by the coupling
    for s in &states {
        let mut rng = substream(seed, &["synthetic".into(), "flu".into(), s.as_str().into()]);
        let n = sc.weeks + 1;
        let flu_waves: Vec<Wave> = (0..(sc.weeks / 26).max(2))
            .map(|_| Wave {
                center: rng.random_range(-5.0..n as f64 + 5.0),
                width: rng.random_range(3.0..8.0),
                amplitude: rng.random_range(0.5..1.5),
            })
            .collect();
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let flu: Vec<f64> = (0..n)
            .map(|w| {
                let t = w as f64;
                wave_sum(&flu_waves, t) + 0.3 * (std::f64::consts::TAU * t / 52.0 + phase).cos()
            })
            .collect();
        // last week has no case counterpart; reuse the final case value
        let mut wc = weekly_cases[s].clone();
        wc.push(*wc.last().unwrap());
        let c = standardize(&wc);
        let fc = standardize(&flu);
        let proj =
            fc.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / c.iter().map(|b| b * b).sum::<f64>().max(1e-300);
        let orth: Vec<f64> = fc.iter().zip(&c).map(|(a, b)| a - proj * b).collect();
        let f = standardize(&orth);
        let mix: Vec<f64> =
            c.iter().zip(&f).map(|(ci, fi)| sc.coupling * ci + (1.0 - sc.coupling * sc.coupling).sqrt() * fi).collect();
        let amp = rng.random_range(0.6..1.4);
        let min = mix.iter().cloned().fold(f64::INFINITY, f64::min);
        let level = (1.5f64).max(-amp * min + 0.3);
        let ili_full: Vec<f64> = mix.iter().map(|m| (level + amp * m) * lognormal(&mut rng, sc.ili_noise)).collect();
        let ili = ili_full[..sc.weeks].to_vec();
        bundle.ili.insert(s.clone(), WeeklySeries::new(s.clone(), Signal::Ili, first_sat, ili)?);

        for j in 0..sc.flu_terms {
            let term = format!("flu_term_{:02}", j + 1);
            let mut trng = substream(seed, &["synthetic".into(), "flu-term".into(), s.as_str().into(), j.into()]);
            let gain = trng.random_range(5.0..15.0);
            let values: Vec<f64> = (0..sc.weeks)
                .map(|w| (gain * ili_full[w + 1] + sc.search_noise * gain * level * normal(&mut trng)).max(0.0))
                .collect();
            let series = WeeklySeries::new(s.clone(), Signal::SearchTerm(term.clone()), first_sat, values)?;
            bundle.trends.insert((s.clone(), term), TrendSeries::Weekly(series));
        }
    }

    bundle.derive_aggregates()?;
    bundle.validate()?;
    Ok(bundle)
}
