//! L1-penalized least squares by cyclic coordinate descent.
//!
//! Columns are standardized to zero mean and unit (population) variance, the
//! response is centered, and the loss is `(1/2n)|y - mu - X theta|^2 +
//! lambda |theta|_1` on the standardized scale. Coefficients are reported on
//! the original scale.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100_000;
const POLISH_EVERY: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    pub intercept: f64,
    /// Coefficients on the original column scale.
    pub coef: Vec<f64>,
    /// Coefficients on the standardized scale.
    pub std_coef: Vec<f64>,
    pub lambda: f64,
    pub means: Vec<f64>,
    /// Column standard deviations; 0 marks a constant column.
    pub scales: Vec<f64>,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
}

impl LassoModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.intercept + (0..x.ncols()).map(|j| self.coef[j] * x[(i, j)]).sum::<f64>()).collect()
    }

    pub fn nonzero(&self) -> usize {
        self.coef.iter().filter(|c| **c != 0.0).count()
    }
}

/// Standardized copy of a design.
struct Standardized {
    n: usize,
    p: usize,
    /// Column-major standardized columns; constant columns are all zero.
    cols: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    y_mean: f64,
    yc: Vec<f64>,
}

impl Standardized {
    fn new(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let (n, p) = x.shape();
        if n != y.len() {
            return Err(Error::Degenerate(format!("design has {n} rows but response has {}", y.len())));
        }
        if n < 2 {
            return Err(Error::TooShort(format!("lasso needs at least 2 rows, got {n}")));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lasso design or response".into()));
        }
        let nf = n as f64;
        let mut cols = vec![0.0; n * p];
        let mut means = vec![0.0; p];
        let mut scales = vec![0.0; p];
        for j in 0..p {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / nf;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf).sqrt();
            means[j] = m;
            if sd > 0.0 && sd > 1e-12 * m.abs() {
                scales[j] = sd;
                for i in 0..n {
                    cols[j * n + i] = (c[i] - m) / sd;
                }
            }
        }
        let y_mean = y.iter().sum::<f64>() / nf;
        let yc = y.iter().map(|v| v - y_mean).collect();
        Ok(Standardized { n, p, cols, means, scales, y_mean, yc })
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    fn lambda_max(&self) -> f64 {
        (0..self.p).map(|j| dot(self.col(j), &self.yc).abs() / self.n as f64).fold(0.0, f64::max)
    }

    fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let mut r = self.yc.clone();
        for (j, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (ri, xi) in r.iter_mut().zip(self.col(j)) {
                    *ri -= xi * b;
                }
            }
        }
        r
    }

    fn objective(&self, r: &[f64], beta: &[f64], lambda: f64) -> f64 {
        dot(r, r) / (2.0 * self.n as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Active-set step: moves toward the exact minimizer of the objective
    /// restricted to the current active set and signs, stopping where a
    /// coefficient would change sign (that coefficient is set to zero and the
    /// step repeats). Returns the new point if it lowers the objective.
    /// Greatly speeds up convergence on strongly collinear designs.
    fn polish(&self, beta: &[f64], r: &[f64], lambda: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let nf = self.n as f64;
        let mut b = beta.to_vec();
        for _ in 0..self.p {
            let active: Vec<usize> = (0..self.p).filter(|&j| b[j] != 0.0).collect();
            let k = active.len();
            if k == 0 || k >= self.n {
                break;
            }
            let gram = DMatrix::from_fn(k, k, |x, y| dot(self.col(active[x]), self.col(active[y])) / nf);
            let rhs = nalgebra::DVector::from_fn(k, |x, _| {
                dot(self.col(active[x]), &self.yc) / nf - lambda * b[active[x]].signum()
            });
            // collinear active columns make the Gram singular; fall back to a
            // least-squares solve and let the objective check arbitrate
            let sol = match gram.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => gram.svd(true, true).solve(&rhs, 1e-12).ok()?,
            };
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            // first sign crossing along the segment
            let mut step = 1.0;
            let mut hit = None;
            for (x, &j) in active.iter().enumerate() {
                if sol[x].signum() != b[j].signum() || sol[x] == 0.0 {
                    let t = b[j] / (b[j] - sol[x]);
                    if t < step {
                        step = t;
                        hit = Some(j);
                    }
                }
            }
            for (x, &j) in active.iter().enumerate() {
                b[j] += step * (sol[x] - b[j]);
            }
            match hit {
                Some(j) => b[j] = 0.0,
                None => break,
            }
        }
        let rc = self.residual(&b);
        (self.objective(&rc, &b, lambda) < self.objective(r, beta, lambda)).then_some((b, rc))
    }

    /// Coordinate descent from `warm`. Pushes the objective after every sweep
    /// into `trace` when given.
    fn solve(&self, lambda: f64, warm: Option<&[f64]>, mut trace: Option<&mut Vec<f64>>) -> LassoModel {
        let nf = self.n as f64;
        let mut beta = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; self.p]);
        for j in 0..self.p {
            if self.scales[j] == 0.0 {
                beta[j] = 0.0;
            }
        }
        let mut r = self.residual(&beta);
        let mut sweeps = 0;
        let mut converged = false;
        let mut active_only = false;
        while sweeps < MAX_SWEEPS {
            sweeps += 1;
            let mut max_delta: f64 = 0.0;
            for j in 0..self.p {
                if self.scales[j] == 0.0 || (active_only && beta[j] == 0.0) {
                    continue;
                }
                let xj = self.col(j);
                let z = dot(xj, &r) / nf + beta[j];
                let new = soft_threshold(z, lambda);
                let delta = new - beta[j];
                if delta != 0.0 {
                    for (ri, xi) in r.iter_mut().zip(xj) {
                        *ri -= xi * delta;
                    }
                    beta[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(&r, &beta, lambda));
            }
            if max_delta < TOL {
                if !active_only {
                    converged = true;
                    break;
                }
                // confirm with a full sweep
                active_only = false;
            } else {
                active_only = true;
                if sweeps % POLISH_EVERY == 0 {
                    if let Some((b, rr)) = self.polish(&beta, &r, lambda) {
                        beta = b;
                        r = rr;
                        active_only = false;
                    }
                }
            }
        }
        // recompute the residual to shed accumulated rounding
        let r = self.residual(&beta);
        let objective = self.objective(&r, &beta, lambda);
        let coef: Vec<f64> =
            (0..self.p).map(|j| if self.scales[j] == 0.0 { 0.0 } else { beta[j] / self.scales[j] }).collect();
        let intercept = self.y_mean - coef.iter().zip(&self.means).map(|(c, m)| c * m).sum::<f64>();
        LassoModel {
            intercept,
            coef,
            std_coef: beta,
            lambda,
            means: self.means.clone(),
            scales: self.scales.clone(),
            objective,
            sweeps,
            converged,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    Ok(Standardized::new(x, y)?.lambda_max())
}

pub fn fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<LassoModel> {
    check_lambda(lambda)?;
    Ok(Standardized::new(x, y)?.solve(lambda, None, None))
}

/// Like [`fit`], also returning the objective after every sweep.
pub fn fit_with_trace(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<(LassoModel, Vec<f64>)> {
    check_lambda(lambda)?;
    let s = Standardized::new(x, y)?;
    let mut trace = vec![s.objective(&s.yc, &vec![0.0; s.p], lambda)];
    let m = s.solve(lambda, None, Some(&mut trace));
    Ok((m, trace))
}

/// Fits every penalty in `lambdas`, warm-starting from larger to smaller.
/// Models come back in the order of `lambdas`.
pub fn fit_path(x: &DMatrix<f64>, y: &[f64], lambdas: &[f64]) -> Result<Vec<LassoModel>> {
    for l in lambdas {
        check_lambda(*l)?;
    }
    let s = Standardized::new(x, y)?;
    Ok(path(&s, lambdas))
}

fn path(s: &Standardized, lambdas: &[f64]) -> Vec<LassoModel> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<LassoModel>> = vec![None; lambdas.len()];
    let mut warm: Option<Vec<f64>> = None;
    for i in order {
        let m = s.solve(lambdas[i], warm.as_deref(), None);
        warm = Some(m.std_coef.clone());
        out[i] = Some(m);
    }
    out.into_iter().map(|m| m.expect("every lambda fitted")).collect()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    Ok(())
}

/// Largest violation of the optimality conditions, on the standardized scale.
pub fn kkt_residual(model: &LassoModel, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let s = Standardized::new(x, y)?;
    let r = s.residual(&model.std_coef);
    let mut worst: f64 = 0.0;
    for j in 0..s.p {
        if s.scales[j] == 0.0 {
            continue;
        }
        let g = -dot(s.col(j), &r) / s.n as f64;
        let b = model.std_coef[j];
        let v = if b != 0.0 { (g + model.lambda * b.signum()).abs() } else { (g.abs() - model.lambda).max(0.0) };
        worst = worst.max(v);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// The grid as given (multipliers of lambda_max when relative).
    pub grid: Vec<f64>,
    pub mean_mse: Vec<f64>,
    pub chosen_index: usize,
    /// Chosen grid value.
    pub chosen: f64,
    /// Penalty used for the final fit on all rows.
    pub chosen_lambda: f64,
    /// Half-open row ranges of the validation folds.
    pub folds: Vec<(usize, usize)>,
}

/// Contiguous, time-ordered fold boundaries.
pub fn fold_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|f| (f * n / k, (f + 1) * n / k)).collect()
}

/// Chooses a penalty from `grid` by k-fold blocked cross-validation and
/// refits on all rows. With `relative`, grid values are multiples of each
/// training set's `lambda_max`. Ties go to the larger penalty.
pub fn cv_select(
    x: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
    k: usize,
    relative: bool,
) -> Result<(LassoModel, CvReport)> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    for l in grid {
        check_lambda(*l)?;
    }
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    let n = x.nrows();
    if n < 2 * k || n != y.len() {
        return Err(Error::TooShort(format!(
            "{k}-fold cross-validation needs at least {} matching rows, got {n}",
            2 * k
        )));
    }
    let folds = fold_bounds(n, k);
    let mut sse = vec![0.0; grid.len()];
    for &(a, b) in &folds {
        let keep: Vec<usize> = (0..n).filter(|i| *i < a || *i >= b).collect();
        let xt = x.select_rows(&keep);
        let yt: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
        let s = Standardized::new(&xt, &yt)?;
        let scale = if relative { s.lambda_max() } else { 1.0 };
        let lambdas: Vec<f64> = grid.iter().map(|g| g * scale).collect();
        for (g, m) in path(&s, &lambdas).iter().enumerate() {
            for i in a..b {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                sse[g] += (y[i] - m.predict_row(&row)).powi(2);
            }
        }
    }
    let mean_mse: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let mut chosen_index = 0;
    for g in 1..grid.len() {
        let (cur, best) = (mean_mse[g], mean_mse[chosen_index]);
        // ties within rounding go to the larger penalty
        let tol = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
        if cur < best - tol || (cur <= best + tol && grid[g] > grid[chosen_index]) {
            chosen_index = g;
        }
    }
    let s = Standardized::new(x, y)?;
    let scale = if relative { s.lambda_max() } else { 1.0 };
    let chosen_lambda = grid[chosen_index] * scale;
    let model = s.solve(chosen_lambda, None, None);
    Ok((
        model,
        CvReport { grid: grid.to_vec(), mean_mse, chosen_index, chosen: grid[chosen_index], chosen_lambda, folds },
    ))
}
