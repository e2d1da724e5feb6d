//! Vector autoregression with exogenous flags, fit equation by equation with OLS.
//!
//! ```text
//! y_t = c + A_1 y_{t-1} + ... + A_p y_{t-p} + B x_t + e_t
//! ```
//!
//! Series are expected in model space (log, seasonally differenced); use
//! [`prepare`] and [`reintegrate`] to move between levels and model space.

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{self, FlagSeries, WeeklySeries};

pub const MAX_LAG: usize = 4;

/// Aligned component series with identical span.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeries {
    series: Vec<WeeklySeries>,
}

impl MultiSeries {
    pub fn new(series: Vec<WeeklySeries>) -> Result<Self> {
        if series.len() < 2 {
            return Err(Error::BadParameter(format!("need at least 2 component series, got {}", series.len())));
        }
        let (start, len) = (series[0].start_week(), series[0].len());
        for s in &series[1..] {
            if s.start_week() != start || s.len() != len {
                return Err(Error::Misaligned(format!(
                    "{} spans {}+{} but {} spans {}+{}",
                    series[0].name(),
                    start,
                    len,
                    s.name(),
                    s.start_week(),
                    s.len()
                )));
            }
        }
        Ok(MultiSeries { series })
    }

    pub fn series(&self) -> &[WeeklySeries] {
        &self.series
    }

    pub fn dim(&self) -> usize {
        self.series.len()
    }

    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start_week(&self) -> NaiveDate {
        self.series[0].start_week()
    }

    pub fn end_week(&self) -> NaiveDate {
        self.series[0].end_week()
    }

    pub fn names(&self) -> Vec<String> {
        self.series.iter().map(|s| s.name().to_string()).collect()
    }

    fn at(&self, t: usize, i: usize) -> f64 {
        self.series[i].values()[t]
    }
}

/// How model space relates to levels: optional log, then an optional lag difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarxTransform {
    pub log: bool,
    /// 0 means no differencing.
    pub seasonal_lag: usize,
}

impl Default for VarxTransform {
    fn default() -> Self {
        VarxTransform { log: true, seasonal_lag: 52 }
    }
}

pub fn prepare(levels: &MultiSeries, tf: VarxTransform) -> Result<MultiSeries> {
    let mut out = Vec::with_capacity(levels.dim());
    for s in levels.series() {
        let mut x = if tf.log { series::log_transform(s)? } else { s.clone() };
        if tf.seasonal_lag > 0 {
            x = series::seasonal_difference(&x, tf.seasonal_lag)?;
        }
        out.push(x);
    }
    MultiSeries::new(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarxFit {
    pub lag_order: usize,
    pub names: Vec<String>,
    pub exog_names: Vec<String>,
    pub intercept: Vec<f64>,
    /// `coefs[l][i][j]`: effect of series j at lag l+1 on series i.
    pub coefs: Vec<Vec<Vec<f64>>>,
    /// `exog_coefs[i][k]`: effect of flag k on series i.
    pub exog_coefs: Vec<Vec<f64>>,
    pub resid_cov: Vec<Vec<f64>>,
    /// Residuals per series, aligned to weeks `lag_order..n`.
    pub residuals: Vec<Vec<f64>>,
    pub n_obs: usize,
}

impl VarxFit {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn companion(&self) -> DMatrix<f64> {
        let m = self.dim();
        let p = self.lag_order;
        let mut c = DMatrix::zeros(m * p, m * p);
        for l in 0..p {
            for i in 0..m {
                for j in 0..m {
                    c[(i, l * m + j)] = self.coefs[l][i][j];
                }
            }
        }
        for r in m..m * p {
            c[(r, r - m)] = 1.0;
        }
        c
    }

    pub fn spectral_radius(&self) -> f64 {
        self.companion().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Coefficient table, one row per target series.
    pub fn coefficients_csv(&self) -> String {
        let m = self.dim();
        let mut header = vec!["target".to_string(), "const".to_string()];
        for l in 1..=self.lag_order {
            for n in &self.names {
                header.push(format!("{n}.l{l}"));
            }
        }
        header.extend(self.exog_names.iter().cloned());
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..m {
            let mut row = vec![self.names[i].clone(), self.intercept[i].to_string()];
            for l in 0..self.lag_order {
                row.extend(self.coefs[l][i].iter().map(f64::to_string));
            }
            row.extend(self.exog_coefs[i].iter().map(f64::to_string));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn design_row(ms: &MultiSeries, exog: &[Vec<f64>], p: usize, t: usize, row: &mut [f64]) {
    let m = ms.dim();
    row[0] = 1.0;
    for l in 0..p {
        for j in 0..m {
            row[1 + l * m + j] = ms.at(t - l - 1, j);
        }
    }
    for (k, x) in exog.iter().enumerate() {
        row[1 + m * p + k] = x[t];
    }
}

pub fn fit_varx(ms: &MultiSeries, exog: &[FlagSeries], lag_order: usize) -> Result<VarxFit> {
    if lag_order == 0 || lag_order > MAX_LAG {
        return Err(Error::BadParameter(format!("lag order {lag_order} outside 1..={MAX_LAG}")));
    }
    for s in ms.series() {
        if let Some(index) = s.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
    }
    let m = ms.dim();
    let p = lag_order;
    let k = exog.len();
    let needed = m * p + k + 10;
    if ms.len() < needed {
        return Err(Error::SeriesTooShort { needed, got: ms.len() });
    }
    for f in exog {
        f.check_aligned(&ms.series()[0])?;
    }
    let x_exog: Vec<Vec<f64>> = exog.iter().map(FlagSeries::as_f64).collect();
    let n = ms.len() - p;
    let cols = 1 + m * p + k;
    let mut x = DMatrix::<f64>::zeros(n, cols);
    let mut row = vec![0.0; cols];
    for t in p..ms.len() {
        design_row(ms, &x_exog, p, t, &mut row);
        for c in 0..cols {
            x[(t - p, c)] = row[c];
        }
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (n.max(cols) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < cols {
        return Err(Error::RankDeficientDesign(format!("design has rank {rank} of {cols} columns")));
    }
    let mut intercept = vec![0.0; m];
    let mut coefs = vec![vec![vec![0.0; m]; m]; p];
    let mut exog_coefs = vec![vec![0.0; k]; m];
    let mut residuals = Vec::with_capacity(m);
    for i in 0..m {
        let y = DVector::from_iterator(n, (p..ms.len()).map(|t| ms.at(t, i)));
        let beta = svd.solve(&y, tol).map_err(|e| Error::Numerical(e.to_string()))?;
        intercept[i] = beta[0];
        for l in 0..p {
            for j in 0..m {
                coefs[l][i][j] = beta[1 + l * m + j];
            }
        }
        for kk in 0..k {
            exog_coefs[i][kk] = beta[1 + m * p + kk];
        }
        let r = &y - &x * &beta;
        residuals.push(r.iter().copied().collect::<Vec<f64>>());
    }
    let denom = (n - cols) as f64;
    let mut resid_cov = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..=a {
            let s: f64 = residuals[a].iter().zip(&residuals[b]).map(|(u, v)| u * v).sum::<f64>() / denom;
            resid_cov[a][b] = s;
            resid_cov[b][a] = s;
        }
    }
    Ok(VarxFit {
        lag_order: p,
        names: ms.names(),
        exog_names: exog.iter().map(|f| f.name().to_string()).collect(),
        intercept,
        coefs,
        exog_coefs,
        resid_cov,
        residuals,
        n_obs: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarxForecast {
    pub start_week: NaiveDate,
    pub horizon: usize,
    /// Model-space means, one vector per component series.
    pub means: Vec<Vec<f64>>,
    /// Always true: only point forecasts are produced.
    pub variance_omitted: bool,
    /// Set when the companion spectral radius is at least 1.
    pub nonstationary: bool,
    pub spectral_radius: f64,
}

fn future_exog(fit: &VarxFit, exog_future: &[FlagSeries], start: NaiveDate, horizon: usize) -> Result<Vec<Vec<f64>>> {
    fit.exog_names
        .iter()
        .map(|name| {
            let f = exog_future
                .iter()
                .find(|f| f.name() == name)
                .ok_or_else(|| Error::MissingFutureExog(format!("no future values for flag {name}")))?;
            if f.start_week() != start {
                return Err(Error::Misaligned(format!("future flag {name} starts {} but forecast starts {start}", f.start_week())));
            }
            if f.len() < horizon {
                return Err(Error::MissingFutureExog(format!("flag {name} covers {} of {horizon} weeks", f.len())));
            }
            Ok(f.as_f64()[..horizon].to_vec())
        })
        .collect()
}

/// Iterated one-step predictions in model space.
pub fn forecast_varx(fit: &VarxFit, history: &MultiSeries, exog_future: &[FlagSeries], horizon: usize) -> Result<VarxForecast> {
    let m = fit.dim();
    let p = fit.lag_order;
    if history.dim() != m {
        return Err(Error::LengthMismatch { what: "component series".into(), expected: m, got: history.dim() });
    }
    if history.len() < p {
        return Err(Error::SeriesTooShort { needed: p, got: history.len() });
    }
    if horizon == 0 {
        return Err(Error::BadParameter("horizon must be positive".into()));
    }
    let start = history.end_week() + Duration::weeks(1);
    let xf = future_exog(fit, exog_future, start, horizon)?;
    // path[t] holds the m-vector at history index t, extended with forecasts
    let mut path: Vec<Vec<f64>> = (history.len() - p..history.len()).map(|t| (0..m).map(|i| history.at(t, i)).collect()).collect();
    let mut means = vec![Vec::with_capacity(horizon); m];
    for h in 0..horizon {
        let len = path.len();
        let mut next = fit.intercept.clone();
        for (i, v) in next.iter_mut().enumerate() {
            for l in 0..p {
                let lagged = &path[len - 1 - l];
                for j in 0..m {
                    *v += fit.coefs[l][i][j] * lagged[j];
                }
            }
            for (k, x) in xf.iter().enumerate() {
                *v += fit.exog_coefs[i][k] * x[h];
            }
        }
        for i in 0..m {
            means[i].push(next[i]);
        }
        path.push(next);
    }
    let rho = fit.spectral_radius();
    Ok(VarxForecast { start_week: start, horizon, means, variance_omitted: true, nonstationary: rho >= 1.0, spectral_radius: rho })
}

/// Undoes [`prepare`]: undifferences against the level history and exponentiates.
pub fn reintegrate(fc: &VarxForecast, levels: &MultiSeries, tf: VarxTransform) -> Result<Vec<WeeklySeries>> {
    if levels.end_week() + Duration::weeks(1) != fc.start_week {
        return Err(Error::Misaligned(format!("level history ends {} but forecast starts {}", levels.end_week(), fc.start_week)));
    }
    let lag = tf.seasonal_lag;
    if levels.len() < lag {
        return Err(Error::SeriesTooShort { needed: lag, got: levels.len() });
    }
    let mut out = Vec::with_capacity(levels.dim());
    for (s, d) in levels.series().iter().zip(&fc.means) {
        let hist: Vec<f64> = if tf.log {
            s.values().iter().map(|v| if *v > 0.0 { Ok(v.ln()) } else { Err(Error::NonPositiveValue { index: 0, value: *v }) }).collect::<Result<_>>()?
        } else {
            s.values().to_vec()
        };
        let model_levels = if lag == 0 {
            d.clone()
        } else {
            let tail = &hist[hist.len() - lag..];
            series::undifference(tail, d)[lag..].to_vec()
        };
        let values: Vec<f64> = if tf.log { model_levels.iter().map(|v| v.exp()).collect() } else { model_levels };
        out.push(WeeklySeries::new(s.name(), fc.start_week, values)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn week0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2016, 1, 4).unwrap()
    }

    fn multi(cols: Vec<Vec<f64>>) -> MultiSeries {
        MultiSeries::new(cols.into_iter().enumerate().map(|(i, v)| WeeklySeries::new(format!("y{}", i + 1), week0(), v).unwrap()).collect()).unwrap()
    }

    fn simulate_var1(a: [[f64; 2]; 2], c: [f64; 2], sigma: f64, n: usize, rng: &mut ChaCha8Rng) -> MultiSeries {
        let burn = 200;
        let mut y1 = vec![0.0; n + burn];
        let mut y2 = vec![0.0; n + burn];
        for t in 1..n + burn {
            y1[t] = c[0] + a[0][0] * y1[t - 1] + a[0][1] * y2[t - 1] + sigma * randn(rng);
            y2[t] = c[1] + a[1][0] * y1[t - 1] + a[1][1] * y2[t - 1] + sigma * randn(rng);
        }
        multi(vec![y1[burn..].to_vec(), y2[burn..].to_vec()])
    }

    #[test]
    fn independent_white_noise_gives_small_coefficients() {
        let mut hits = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ms = multi((0..2).map(|_| (0..300).map(|_| randn(&mut rng)).collect()).collect());
            let fit = fit_varx(&ms, &[], 1).unwrap();
            if fit.coefs[0].iter().flatten().all(|a| a.abs() <= 0.15) {
                hits += 1;
            }
        }
        assert!(hits >= 38, "{hits}/40");
    }

    #[test]
    fn cross_coefficient_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400;
        let y2: Vec<f64> = (0..n).map(|_| randn(&mut rng)).collect();
        let mut y1 = vec![0.0; n];
        for t in 1..n {
            y1[t] = 0.5 * y2[t - 1] + 0.1 * randn(&mut rng);
        }
        let fit = fit_varx(&multi(vec![y1, y2]), &[], 1).unwrap();
        assert!((fit.coefs[0][0][1] - 0.5).abs() < 0.05);
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ms = simulate_var1([[0.5, 0.1], [0.2, 0.3]], [0.1, -0.2], 1.0, 150, &mut rng);
        let flag = FlagSeries::new("covid", week0(), (0..150).map(|i| if (40..55).contains(&i) { 1 } else { 0 }).collect()).unwrap();
        let fit = fit_varx(&ms, std::slice::from_ref(&flag), 2).unwrap();
        let xf = vec![flag.as_f64()];
        let cols = 1 + 2 * 2 + 1;
        let mut row = vec![0.0; cols];
        for c in 0..cols {
            for i in 0..2 {
                let mut dot = 0.0;
                let mut norm_x = 0.0;
                let norm_r: f64 = fit.residuals[i].iter().map(|r| r * r).sum::<f64>().sqrt();
                for t in 2..150 {
                    design_row(&ms, &xf, 2, t, &mut row);
                    dot += row[c] * fit.residuals[i][t - 2];
                    norm_x += row[c] * row[c];
                }
                assert!((dot / (norm_x.sqrt() * norm_r)).abs() < 1e-8);
            }
        }
        let cov = DMatrix::from_fn(2, 2, |a, b| fit.resid_cov[a][b]);
        assert_eq!(cov, cov.transpose());
        assert!(cov.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12));
    }

    #[test]
    fn var1_recovery() {
        let a = [[0.6, 0.2], [-0.1, 0.5]];
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let ms = simulate_var1(a, [0.0, 0.0], 1.0, 500, &mut rng);
            let fit = fit_varx(&ms, &[], 1).unwrap();
            let ok = (0..2).all(|i| (0..2).all(|j| (fit.coefs[0][i][j] - a[i][j]).abs() <= 0.1));
            hits += ok as usize;
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn periodic_inputs_are_rank_deficient() {
        let pattern = |i: usize| 100.0 + (i % 52) as f64;
        let levels = multi(vec![(0..160).map(pattern).collect(), (0..160).map(|i| 2.0 * pattern(i)).collect()]);
        let ms = prepare(&levels, VarxTransform::default()).unwrap();
        assert!(ms.series()[0].values().iter().all(|v| *v == 0.0));
        assert!(matches!(fit_varx(&ms, &[], 1), Err(Error::RankDeficientDesign(_))));
    }

    #[test]
    fn short_and_misaligned_inputs() {
        let ms = multi(vec![vec![0.1; 11], vec![0.2; 11]]);
        assert!(matches!(fit_varx(&ms, &[], 1), Err(Error::SeriesTooShort { .. })));
        let a = WeeklySeries::new("a", week0(), vec![1.0; 10]).unwrap();
        let b = WeeklySeries::new("b", week0(), vec![1.0; 11]).unwrap();
        assert!(MultiSeries::new(vec![a.clone(), b]).is_err());
        assert!(MultiSeries::new(vec![a]).is_err());
    }

    fn manual_fit(a: [[f64; 2]; 2], c: [f64; 2]) -> VarxFit {
        VarxFit {
            lag_order: 1,
            names: vec!["y1".into(), "y2".into()],
            exog_names: vec![],
            intercept: c.to_vec(),
            coefs: vec![a.iter().map(|r| r.to_vec()).collect()],
            exog_coefs: vec![vec![], vec![]],
            resid_cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            residuals: vec![vec![], vec![]],
            n_obs: 0,
        }
    }

    #[test]
    fn zero_dynamics_give_seasonal_naive() {
        let levels = multi(vec![(0..110).map(|i| 50.0 + (i % 52) as f64).collect(), (0..110).map(|i| 80.0 + ((i * 7) % 52) as f64).collect()]);
        let tf = VarxTransform::default();
        let ms = prepare(&levels, tf).unwrap();
        let fit = manual_fit([[0.0; 2]; 2], [0.0; 2]);
        let fc = forecast_varx(&fit, &ms, &[], 78).unwrap();
        assert!(fc.means.iter().all(|m| m.len() == 78));
        let out = reintegrate(&fc, &levels, tf).unwrap();
        for (s, lv) in out.iter().zip(levels.series()) {
            assert_eq!(s.len(), 78);
            let v = lv.values();
            for h in 0..78 {
                let want = if h < 52 { v[v.len() - 52 + h] } else { s.values()[h - 52] };
                assert!((s.values()[h] - want).abs() < 1e-9 * want);
            }
        }
    }

    #[test]
    fn stable_forecast_decays_geometrically() {
        // eigenvalues 0.5 and 0.2
        let a = [[0.5, 0.0], [0.3, 0.2]];
        let c = [0.2, 0.1];
        let fit = manual_fit(a, c);
        assert!((fit.spectral_radius() - 0.5).abs() < 1e-12);
        let am = DMatrix::from_fn(2, 2, |i, j| a[i][j]);
        let mu = (DMatrix::identity(2, 2) - &am).lu().solve(&DVector::from_vec(c.to_vec())).unwrap();
        let ms = multi(vec![vec![0.0, 3.0], vec![0.0, -2.0]]);
        let fc = forecast_varx(&fit, &ms, &[], 30).unwrap();
        assert!(!fc.nonstationary);
        let y_t = DVector::from_vec(vec![3.0, -2.0]);
        let mut power = DMatrix::<f64>::identity(2, 2);
        for h in 0..30 {
            power = &power * &am;
            let want = &mu + &power * (&y_t - &mu);
            for i in 0..2 {
                assert!((fc.means[i][h] - want[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn explosive_var_is_flagged() {
        let fit = manual_fit([[1.05, 0.0], [0.0, 0.3]], [0.0; 2]);
        let fc = forecast_varx(&fit, &multi(vec![vec![1.0], vec![1.0]]), &[], 5).unwrap();
        assert!(fc.nonstationary);
    }

    #[test]
    fn future_flags_required() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ms = simulate_var1([[0.3, 0.0], [0.0, 0.3]], [0.0; 2], 1.0, 60, &mut rng);
        let flag = FlagSeries::new("peak", week0(), (0..60).map(|i| (i % 10 == 0) as i8).collect()).unwrap();
        let fit = fit_varx(&ms, std::slice::from_ref(&flag), 1).unwrap();
        assert!(matches!(forecast_varx(&fit, &ms, &[], 4), Err(Error::MissingFutureExog(_))));
        let fut = FlagSeries::new("peak", ms.end_week() + Duration::weeks(1), vec![1, 0, 0, 0]).unwrap();
        let fc = forecast_varx(&fit, &ms, &[fut], 4).unwrap();
        assert_eq!(fc.means[0].len(), 4);
        let csv = fit.coefficients_csv();
        assert!(csv.starts_with("target,const,y1.l1,y2.l1,peak\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
