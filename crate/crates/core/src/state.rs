//! ARGOX-Idv state-level second step.
//!
//! For state `m` with neighbor set `M` (its region's states, `m` included),
//! the increment `Z_tau = y_tau - y_{tau-1}` is predicted from
//!
//! ```text
//! W_tau = [ Z_{tau-1},
//!           GT_{tau,m'} - y_{tau-1,m'}            for m' in M,
//!           s_reg * REG_tau - y_{tau-1},
//!           s_nat * NAT_tau - y_{tau-1},
//!           F_{tau-1,m'}                          for m' in M ]
//! ```
//!
//! where GT/REG/NAT are first-step raw estimates, `s_*` rescale aggregate
//! estimates by the state's trailing four-week share, and `F` is the weekly
//! increment of the exogenous signal (%ILI for count targets, weekly cases
//! for %ILI). The prediction is `mu_Z + 1/2 S_ZW (1/2 S_WW + 1/2 D_WW)^-1
//! (W - mu_W)` with structured covariances estimated on a trailing window.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bundle::DatasetBundle;
use crate::config::{RunConfig, Target};
use crate::error::{Error, Result};
use crate::forecast::{ForecastKey, ForecastTable};
use crate::national::median;
use crate::panel::{Signal, TimeSeries, WeeklySeries};
use crate::raw::RawEstimates;
use crate::view::AsOfView;

pub const METHOD: &str = "argox-idv";
const JITTER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];
const MIN_RCOND: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub geo: String,
    pub members: Vec<String>,
    pub mu_z: f64,
    pub mu_w: DVector<f64>,
    pub sigma2_zz: f64,
    pub rho: f64,
    pub sigma2_ff: f64,
    pub sigma2_zf: f64,
    pub rho_f: f64,
    pub sigma_zz_m: DMatrix<f64>,
    pub sigma_ff_m: DMatrix<f64>,
    pub sigma_gt: DMatrix<f64>,
    pub sigma2_reg: f64,
    pub sigma2_nat: f64,
}

impl CovarianceSpec {
    pub fn dim(&self) -> usize {
        2 * self.members.len() + 3
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.members.len();
        let sq = |m: &DMatrix<f64>| m.nrows() == k && m.ncols() == k;
        if k == 0
            || !sq(&self.sigma_zz_m)
            || !sq(&self.sigma_ff_m)
            || !sq(&self.sigma_gt)
            || self.mu_w.len() != self.dim()
        {
            return Err(Error::Degenerate(format!("covariance spec for {} has inconsistent dimensions", self.geo)));
        }
        if self.sigma2_zz < 0.0 || self.sigma2_ff < 0.0 || self.sigma2_reg < 0.0 || self.sigma2_nat < 0.0 {
            return Err(Error::Degenerate(format!("negative variance in covariance spec for {}", self.geo)));
        }
        if self.rho.abs() > 1.0 || self.rho_f.abs() > 1.0 {
            return Err(Error::Degenerate(format!("correlation outside [-1, 1] for {}", self.geo)));
        }
        Ok(())
    }
}

/// Aligned training series for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub members: Vec<String>,
    /// Index of the target state within `members`.
    pub own: usize,
    /// Increments `Z`, one row per week, with the week before the window first.
    pub z: Vec<Vec<f64>>,
    /// Exogenous increments `F`, laid out like `z`.
    pub f: Vec<Vec<f64>>,
    /// Raw-estimate errors `GT - y` per window week.
    pub gt_err: Vec<Vec<f64>>,
    pub reg_err: Vec<f64>,
    pub nat_err: Vec<f64>,
    /// Predictor vectors per window week.
    pub w: Vec<DVector<f64>>,
}

impl TrainingWindow {
    pub fn weeks(&self) -> usize {
        self.w.len()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

fn cov_matrix(rows: &[Vec<f64>], k: usize) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let m = DMatrix::from_fn(k, k, |i, j| cov(&cols[i], &cols[j]));
    (&m + m.transpose()) * 0.5
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Sample moments of a training window.
pub fn estimate_covariance(geo: &str, win: &TrainingWindow) -> Result<CovarianceSpec> {
    let k = win.members.len();
    let n = win.weeks();
    if n < k + 5 {
        return Err(Error::InsufficientHistory(format!(
            "covariance window for {geo} has {n} weeks, needs at least {}",
            k + 5
        )));
    }
    if win.z.len() != n + 1
        || win.f.len() != n + 1
        || win.gt_err.len() != n
        || win.reg_err.len() != n
        || win.nat_err.len() != n
    {
        return Err(Error::Degenerate(format!("misaligned training window for {geo}")));
    }
    let own = win.own;
    let z: Vec<f64> = win.z[1..].iter().map(|r| r[own]).collect();
    let z_prev: Vec<f64> = win.z[..n].iter().map(|r| r[own]).collect();
    let f: Vec<f64> = win.f[1..].iter().map(|r| r[own]).collect();
    let f_prev: Vec<f64> = win.f[..n].iter().map(|r| r[own]).collect();
    let sigma2_zz = cov(&z, &z).max(0.0);
    let sigma2_zf = cov(&z, &f);
    let rho = if sigma2_zz > 0.0 { ratio_or_zero(cov(&z, &z_prev), sigma2_zz) } else { 0.0 };
    let rho_f = if sigma2_zf != 0.0 { (cov(&z, &f_prev) / sigma2_zf).clamp(-1.0, 1.0) } else { 0.0 };
    let sigma_ff_m = cov_matrix(&win.f[1..], k);
    let dim = 2 * k + 3;
    let mu_w = DVector::from_fn(dim, |i, _| win.w.iter().map(|w| w[i]).sum::<f64>() / n as f64);
    Ok(CovarianceSpec {
        geo: geo.to_string(),
        members: win.members.clone(),
        mu_z: mean(&z),
        mu_w,
        sigma2_zz,
        rho,
        sigma2_ff: sigma_ff_m[(own, own)].max(0.0),
        sigma2_zf,
        rho_f,
        sigma_zz_m: cov_matrix(&win.z[1..], k),
        sigma_ff_m,
        sigma_gt: cov_matrix(&win.gt_err, k),
        sigma2_reg: cov(&win.reg_err, &win.reg_err).max(0.0),
        sigma2_nat: cov(&win.nat_err, &win.nat_err).max(0.0),
    })
}

/// `(S_ZW, S_WW, D_WW)` from a spec, following the block pattern
///
/// ```text
/// S_ZW = [ rho s2, c (x|M|), s2, s2, rho_F s2_ZF (x|M|) ]
/// S_WW = [ s2        rho c           rho s2     rho s2     s2_ZF          ]
///        [ .         S_ZZ^M + S_GT   c          c          rho_F s2_ZF    ]
///        [ .         .               s2 + reg   s2         rho_F s2_ZF    ]
///        [ .         .               .          s2 + nat   rho_F s2_ZF    ]
///        [ .         .               .          .          S_FF^M         ]
/// ```
///
/// where `c` is the covariance of the state's increment with member `m'`
/// (`s2` for the state itself, `S_ZZ^M[m, m']` otherwise) and the other
/// scalars are replicated across the `|M|`-sized blocks. With one member
/// this is the single-state pattern with `c = s2`.
pub fn assemble_sigma(spec: &CovarianceSpec) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let k = spec.members.len();
    let dim = 2 * k + 3;
    let (reg, nat) = (k + 1, k + 2);
    let gt = |i: usize| 1 + i;
    let fi = |i: usize| k + 3 + i;
    let s2 = spec.sigma2_zz;
    let rs2 = spec.rho * s2;
    let cross = spec.rho_f * spec.sigma2_zf;
    let own = spec.members.iter().position(|m| *m == spec.geo).unwrap_or(0);
    let own_cov = |i: usize| if i == own { s2 } else { spec.sigma_zz_m[(own, i)] };

    let mut szw = DVector::zeros(dim);
    szw[0] = rs2;
    for i in 0..k {
        szw[gt(i)] = own_cov(i);
        szw[fi(i)] = cross;
    }
    szw[reg] = s2;
    szw[nat] = s2;

    let mut m = DMatrix::zeros(dim, dim);
    let mut set = |i: usize, j: usize, v: f64| {
        m[(i, j)] = v;
        m[(j, i)] = v;
    };
    set(0, 0, s2);
    set(0, reg, rs2);
    set(0, nat, rs2);
    set(reg, reg, s2 + spec.sigma2_reg);
    set(nat, nat, s2 + spec.sigma2_nat);
    set(reg, nat, s2);
    for i in 0..k {
        set(0, gt(i), spec.rho * own_cov(i));
        set(0, fi(i), spec.sigma2_zf);
        set(gt(i), reg, own_cov(i));
        set(gt(i), nat, own_cov(i));
        set(reg, fi(i), cross);
        set(nat, fi(i), cross);
        for j in 0..k {
            set(gt(i), gt(j), spec.sigma_zz_m[(i, j)] + spec.sigma_gt[(i, j)]);
            set(gt(i), fi(j), cross);
            set(fi(i), fi(j), spec.sigma_ff_m[(i, j)]);
        }
    }
    let d = DMatrix::from_diagonal(&m.diagonal());
    (szw, m, d)
}

/// Solves `a x = b`, adding `eps * trace / dim` to the diagonal with `eps`
/// escalating until the system is well conditioned.
fn jittered_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = a.nrows();
    let scale = a.trace().abs() / dim as f64;
    for eps in JITTER {
        let mut aj = a.clone();
        for i in 0..dim {
            aj[(i, i)] += eps * scale;
        }
        let lu = aj.clone().lu();
        let u = lu.u();
        let diag: Vec<f64> = u.diagonal().iter().map(|v| v.abs()).collect();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if hi == 0.0 || lo / hi < MIN_RCOND {
            continue;
        }
        if let Some(x) = lu.solve(b) {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    Err(Error::Singular)
}

/// `mu_z + 1/2 S_ZW (1/2 S_WW + 1/2 D_WW)^-1 (w - mu_w)`.
pub fn shrinkage_predict(
    mu_z: f64,
    mu_w: &DVector<f64>,
    s_zw: &DVector<f64>,
    s_ww: &DMatrix<f64>,
    d_ww: &DMatrix<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    if s_zw.iter().all(|v| *v == 0.0) {
        return Ok(mu_z);
    }
    let a = (s_ww + d_ww) * 0.5;
    let x = jittered_solve(&a, &(w - mu_w))?;
    Ok(mu_z + 0.5 * s_zw.dot(&x))
}

pub fn write_covariance_csv(specs: &[(NaiveDate, Target, CovarianceSpec)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["as_of", "target", "geo", "parameter", "value"])?;
    for (as_of, target, s) in specs {
        let mut row = |name: String, v: f64| {
            w.write_record([as_of.to_string(), target.to_string(), s.geo.clone(), name, v.to_string()])
        };
        row("mu_z".into(), s.mu_z)?;
        row("sigma2_zz".into(), s.sigma2_zz)?;
        row("rho".into(), s.rho)?;
        row("sigma2_ff".into(), s.sigma2_ff)?;
        row("sigma2_zf".into(), s.sigma2_zf)?;
        row("rho_f".into(), s.rho_f)?;
        row("sigma2_reg".into(), s.sigma2_reg)?;
        row("sigma2_nat".into(), s.sigma2_nat)?;
        for (i, v) in s.mu_w.iter().enumerate() {
            row(format!("mu_w[{i}]"), *v)?;
        }
        for (name, m) in [("sigma_zz", &s.sigma_zz_m), ("sigma_ff", &s.sigma_ff_m), ("sigma_gt", &s.sigma_gt)] {
            for (i, a) in s.members.iter().enumerate() {
                for (j, b) in s.members.iter().enumerate() {
                    row(format!("{name}[{a},{b}]"), m[(i, j)])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Observed weekly levels of every geo, read as of `as_of`.
type Levels = BTreeMap<String, BTreeMap<NaiveDate, f64>>;

fn week(as_of: NaiveDate, k: i64) -> NaiveDate {
    as_of + Duration::days(7 * k)
}

fn observed_levels(view: &AsOfView<'_>, target: Target, geos: &[String], first: NaiveDate) -> Result<Levels> {
    let mut out = Levels::new();
    for g in geos {
        let mut m = BTreeMap::new();
        let mut w = first;
        while w <= view.as_of {
            let v = match target {
                Target::Ili => view.weekly(&Signal::Ili, g)?.get(w)?,
                _ => view.daily(&target.signal(), g)?.window_sum(w, 7)?,
            };
            m.insert(w, v);
            w = week(w, 1);
        }
        out.insert(g.clone(), m);
    }
    Ok(out)
}

/// Everything the predictor of one state needs, as of one date.
struct StateProblem<'a> {
    state: String,
    members: Vec<String>,
    own: usize,
    region: String,
    nation: String,
    /// Component counts of region and nation, for the equal-share fallback.
    n_region: usize,
    n_nation: usize,
    as_of: NaiveDate,
    levels: &'a Levels,
    exo: &'a Levels,
    raw: &'a RawEstimates,
}

impl StateProblem<'_> {
    fn level(&self, forecasts: &Levels, geo: &str, w: NaiveDate) -> Result<f64> {
        self.levels
            .get(geo)
            .and_then(|m| m.get(&w))
            .or_else(|| forecasts.get(geo).and_then(|m| m.get(&w)))
            .copied()
            .ok_or_else(|| Error::InsufficientHistory(format!("no level for {geo} at week {w}")))
    }

    /// Trailing four-week share of `agg` held by the state, ending at `end`.
    fn share(&self, agg: &str, end: NaiveDate) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..4 {
            num += self.level(&Levels::new(), &self.state, week(end, -k))?;
            den += self.level(&Levels::new(), agg, week(end, -k))?;
        }
        let n = if agg == self.region { self.n_region } else { self.n_nation };
        Ok(if den > 0.0 { num / den } else { 1.0 / n as f64 })
    }

    fn exo_increment(&self, geo: &str, w: NaiveDate) -> Option<f64> {
        let m = self.exo.get(geo)?;
        Some(m.get(&w)? - m.get(&week(w, -1))?)
    }

    /// Predictor vector for target week `tau` at raw horizon `h`. Levels past
    /// the as-of date come from `forecasts`; unknown exogenous increments take
    /// their training mean from `mu_w`.
    fn predictor(
        &self,
        tau: NaiveDate,
        h: u32,
        forecasts: &Levels,
        mu_w: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let k = self.members.len();
        let prev = week(tau, -1);
        let y_prev = self.level(forecasts, &self.state, prev)?;
        let mut w = DVector::zeros(2 * k + 3);
        w[0] = y_prev - self.level(forecasts, &self.state, week(tau, -2))?;
        for (i, m) in self.members.iter().enumerate() {
            w[1 + i] = self.raw.get(m, tau, h)? - self.level(forecasts, m, prev)?;
        }
        let share_end = prev.min(self.as_of);
        w[k + 1] = self.share(&self.region, share_end)? * self.raw.get(&self.region, tau, h)? - y_prev;
        w[k + 2] = self.share(&self.nation, share_end)? * self.raw.get(&self.nation, tau, h)? - y_prev;
        for (i, m) in self.members.iter().enumerate() {
            w[k + 3 + i] = if prev <= self.as_of {
                self.exo_increment(m, prev)
                    .ok_or_else(|| Error::InsufficientHistory(format!("no exogenous increment for {m} at {prev}")))?
            } else {
                mu_w.map(|mu| mu[k + 3 + i]).unwrap_or(0.0)
            };
        }
        Ok(w)
    }

    fn window(&self, weeks: usize) -> Result<TrainingWindow> {
        let none = Levels::new();
        let first = week(self.as_of, -(weeks as i64) + 1);
        let inc = |g: &str, w: NaiveDate| -> Result<f64> {
            Ok(self.level(&none, g, w)? - self.level(&none, g, week(w, -1))?)
        };
        let exo_inc = |g: &str, w: NaiveDate| -> Result<f64> {
            self.exo_increment(g, w)
                .ok_or_else(|| Error::InsufficientHistory(format!("no exogenous increment for {g} at {w}")))
        };
        let mut win = TrainingWindow {
            members: self.members.clone(),
            own: self.own,
            z: Vec::new(),
            f: Vec::new(),
            gt_err: Vec::new(),
            reg_err: Vec::new(),
            nat_err: Vec::new(),
            w: Vec::new(),
        };
        for t in 0..=weeks as i64 {
            let tau = week(first, t - 1);
            win.z.push(self.members.iter().map(|m| inc(m, tau)).collect::<Result<_>>()?);
            win.f.push(self.members.iter().map(|m| exo_inc(m, tau)).collect::<Result<_>>()?);
            if t == 0 {
                continue;
            }
            win.gt_err.push(
                self.members
                    .iter()
                    .map(|m| Ok(self.raw.get(m, tau, 1)? - self.level(&none, m, tau)?))
                    .collect::<Result<_>>()?,
            );
            let y = self.level(&none, &self.state, tau)?;
            let prev = week(tau, -1);
            win.reg_err.push(self.share(&self.region, prev)? * self.raw.get(&self.region, tau, 1)? - y);
            win.nat_err.push(self.share(&self.nation, prev)? * self.raw.get(&self.nation, tau, 1)? - y);
            win.w.push(self.predictor(tau, 1, &none, None)?);
        }
        Ok(win)
    }
}

/// Raw-estimate keys `forecast_state` reads at `as_of`.
pub fn raw_requests(
    bundle: &DatasetBundle,
    cfg: &RunConfig,
    target: Target,
    as_of: NaiveDate,
) -> Vec<(String, NaiveDate, u32)> {
    let geos: Vec<String> = bundle.geography.units().map(|u| u.id.clone()).collect();
    let mut out = Vec::new();
    for g in &geos {
        for t in 0..cfg.state_train_weeks as i64 {
            out.push((g.clone(), week(as_of, -t), 1));
        }
        for h in target.horizons(&cfg.horizons) {
            out.push((g.clone(), week(as_of, h as i64), h));
        }
    }
    out
}

/// State forecasts of `target` at the configured horizons, as of `as_of`.
///
/// `exo_draws` holds one weekly exogenous panel per imputation draw (weekly
/// %ILI per geo for count targets); for `%ILI` it is ignored and weekly case
/// totals are used instead, giving a single deterministic prediction.
/// Horizons beyond one week iterate the one-step predictor, feeding each
/// step's forecasts back as levels. Returns the forecasts and the first
/// draw's covariance specs.
pub fn forecast_state(
    bundle: &DatasetBundle,
    cfg: &RunConfig,
    raw: &RawEstimates,
    exo_draws: &[BTreeMap<String, WeeklySeries>],
    as_of: NaiveDate,
    target: Target,
) -> Result<(ForecastTable, Vec<CovarianceSpec>)> {
    let view = AsOfView::new(bundle, as_of);
    let geo = &bundle.geography;
    let all: Vec<String> = geo.units().map(|u| u.id.clone()).collect();
    let window = cfg.state_train_weeks;
    let first = week(as_of, -(window as i64) - 6);
    let levels = observed_levels(&view, target, &all, first)?;
    let horizons = target.horizons(&cfg.horizons);
    let steps = *horizons.iter().max().expect("nonempty horizons");

    let exo_panels: Vec<Levels> = if target == Target::Ili {
        vec![observed_levels(&view, Target::Cases, &all, first)?]
    } else {
        if exo_draws.is_empty() {
            return Err(Error::Missing("no imputation draws for state forecasts".into()));
        }
        exo_draws
            .iter()
            .map(|d| {
                let mut out = Levels::new();
                for (g, s) in d {
                    let c = view.clip(s);
                    let mut m = BTreeMap::new();
                    let mut w = first.max(s.start());
                    while w <= as_of {
                        m.insert(w, c.get(w)?);
                        w = week(w, 1);
                    }
                    out.insert(g.clone(), m);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?
    };

    let states: Vec<String> = geo.states().iter().map(|u| u.id.clone()).collect();
    let nation = geo.nation().id.clone();
    let per_draw: Vec<(BTreeMap<(String, u32), f64>, Vec<CovarianceSpec>)> = exo_panels
        .par_iter()
        .map(|exo| {
            let problems: Vec<StateProblem<'_>> = states
                .iter()
                .map(|s| {
                    let unit = geo.get(s).expect("state in geography");
                    StateProblem {
                        state: s.clone(),
                        members: unit.neighbors.clone(),
                        own: unit.neighbors.iter().position(|m| m == s).expect("state is its own neighbor"),
                        region: unit.region_of.clone().expect("state has a region"),
                        nation: nation.clone(),
                        n_region: geo.members(unit.region_of.as_deref().unwrap_or_default()).len(),
                        n_nation: states.len(),
                        as_of,
                        levels: &levels,
                        exo,
                        raw,
                    }
                })
                .collect();
            let mut specs = Vec::new();
            let mut mats = Vec::new();
            for p in &problems {
                let spec = estimate_covariance(&p.state, &p.window(window)?)?;
                let (szw, sww, dww) = assemble_sigma(&spec);
                mats.push((szw, sww, dww));
                specs.push(spec);
            }
            let mut forecasts = Levels::new();
            let mut out = BTreeMap::new();
            for step in 1..=steps {
                let tau = week(as_of, step as i64);
                let mut step_levels = Vec::new();
                for (i, p) in problems.iter().enumerate() {
                    let spec = &specs[i];
                    let w = p.predictor(tau, step, &forecasts, Some(&spec.mu_w))?;
                    let (szw, sww, dww) = &mats[i];
                    let z = shrinkage_predict(spec.mu_z, &spec.mu_w, szw, sww, dww, &w)?;
                    let y_prev = p.level(&forecasts, &p.state, week(tau, -1))?;
                    step_levels.push((p.state.clone(), y_prev + z));
                }
                for (s, v) in step_levels {
                    forecasts.entry(s.clone()).or_default().insert(tau, v);
                    out.insert((s, step), v);
                }
            }
            Ok((out, specs))
        })
        .collect::<Result<_>>()?;

    let mut table = ForecastTable::new(target);
    for s in &states {
        for &h in &horizons {
            let mut vals: Vec<f64> = per_draw.iter().map(|(m, _)| m[&(s.clone(), h)]).collect();
            let mut v = median(&mut vals);
            let key = ForecastKey::new(s, week(as_of, h as i64), h, METHOD);
            if cfg.floor_at_zero && v < 0.0 {
                v = 0.0;
                table.clipped.insert(key.clone());
            }
            table.insert(key, v)?;
        }
    }
    let specs = per_draw.into_iter().next().map(|(_, s)| s).unwrap_or_default();
    Ok((table, specs))
}
