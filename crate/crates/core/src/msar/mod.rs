//! Two-regime Markov-switching autoregression.
//!
//! Each regime has its own intercept, AR coefficients and innovation variance:
//!
//! ```text
//! g_t = c_s + sum_i phi_{s,i} g_{t-i} + sigma_s e_t,   s = S_t in {0, 1}
//! P(S_t = j | S_{t-1} = i) = p_ij
//! ```
//!
//! The likelihood conditions on the first `r` observations. Estimation is by
//! EM: the Hamilton filter and Kim smoother give regime responsibilities, the
//! M-step is weighted least squares per regime plus a transition update. The
//! initial regime distribution is the stationary distribution of the chain,
//! so the transition update is a generalized-EM step that backtracks until the
//! expected complete-data log-likelihood does not decrease.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::WeeklySeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl TransitionMatrix {
    /// Builds a row-stochastic matrix from the two persistence probabilities.
    pub fn new(p00: f64, p11: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p00) || !(0.0..=1.0).contains(&p11) {
            return Err(Error::BadParameter(format!("transition probabilities ({p00}, {p11}) outside [0, 1]")));
        }
        Ok(TransitionMatrix { p00, p01: 1.0 - p00, p10: 1.0 - p11, p11 })
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        match (from, to) {
            (0, 0) => self.p00,
            (0, 1) => self.p01,
            (1, 0) => self.p10,
            _ => self.p11,
        }
    }

    /// `None` when the chain has no unique stationary distribution.
    pub fn stationary(&self) -> Option<[f64; 2]> {
        let denom = self.p01 + self.p10;
        (denom > 1e-300).then(|| [self.p10 / denom, self.p01 / denom])
    }

    fn swapped(&self) -> Self {
        TransitionMatrix { p00: self.p11, p01: self.p10, p10: self.p01, p11: self.p00 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub intercept: f64,
    pub ar_coeffs: Vec<f64>,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsarParams {
    pub regimes: [RegimeParams; 2],
    pub trans: TransitionMatrix,
}

impl MsarParams {
    pub fn ar_order(&self) -> usize {
        self.regimes[0].ar_coeffs.len()
    }

    /// Regime labels exchanged.
    pub fn swapped(&self) -> Self {
        MsarParams { regimes: [self.regimes[1].clone(), self.regimes[0].clone()], trans: self.trans.swapped() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    pub params: MsarParams,
    /// Week of the first probability pair (the first `r` weeks are conditioned on).
    pub start_week: NaiveDate,
    pub filtered_probs: Vec<[f64; 2]>,
    pub smoothed_probs: Vec<[f64; 2]>,
    pub loglik: f64,
    /// Log-likelihood after every EM iteration of the winning restart.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
}

impl RegimeFit {
    /// Regime 1 is the higher-variance ("COVID") regime.
    pub fn covid_probs(&self) -> Vec<f64> {
        self.smoothed_probs.iter().map(|p| p[1]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMode {
    Weekly,
    Yoy,
}

/// Weekly (`y[i+1]/y[i] - 1`) or year-over-year (`y[i+52]/y[i] - 1`) growth.
pub fn to_growth(y: &WeeklySeries, mode: GrowthMode) -> Result<WeeklySeries> {
    let lag = match mode {
        GrowthMode::Weekly => 1,
        GrowthMode::Yoy => 52,
    };
    if y.len() < lag + 1 {
        return Err(Error::SeriesTooShort { needed: lag + 1, got: y.len() });
    }
    let v = y.values();
    let mut out = Vec::with_capacity(v.len() - lag);
    for i in 0..v.len() - lag {
        if v[i] == 0.0 {
            return Err(Error::DivisionByZeroValue { index: i });
        }
        out.push(v[i + lag] / v[i] - 1.0);
    }
    WeeklySeries::new(format!("{}_growth", y.name()), y.week(lag), out)
}

/// Output of the Hamilton filter.
#[derive(Debug, Clone)]
pub struct FilterResult {
    /// P(S_t | g_1..g_t) for t = r..n-1.
    pub filtered: Vec<[f64; 2]>,
    /// P(S_t | g_1..g_{t-1}).
    pub predicted: Vec<[f64; 2]>,
    pub loglik: f64,
}

fn regime_mean(reg: &RegimeParams, g: &[f64], t: usize) -> f64 {
    let mut m = reg.intercept;
    for (i, a) in reg.ar_coeffs.iter().enumerate() {
        m += a * g[t - i - 1];
    }
    m
}

fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// Hamilton filter. `init` defaults to the stationary distribution of the chain.
pub fn hamilton_filter(g: &[f64], params: &MsarParams, init: Option<[f64; 2]>) -> Result<FilterResult> {
    let r = params.ar_order();
    if g.len() <= r {
        return Err(Error::SeriesTooShort { needed: r + 1, got: g.len() });
    }
    let init = match init {
        Some(p) => p,
        None => params
            .trans
            .stationary()
            .ok_or_else(|| Error::BadParameter("chain has no unique stationary distribution; pass an initial distribution".into()))?,
    };
    let n = g.len() - r;
    let mut filtered = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut loglik = 0.0;
    let mut prev: Option<[f64; 2]> = None;
    for t in r..g.len() {
        let pred = match prev {
            None => init,
            Some(f) => [
                f[0] * params.trans.p00 + f[1] * params.trans.p10,
                f[0] * params.trans.p01 + f[1] * params.trans.p11,
            ],
        };
        let logd = [0, 1].map(|s| {
            let reg = &params.regimes[s];
            normal_log_density(g[t], regime_mean(reg, g, t), reg.sigma2)
        });
        let shift = logd[0].max(logd[1]);
        let joint = [pred[0] * (logd[0] - shift).exp(), pred[1] * (logd[1] - shift).exp()];
        let total = joint[0] + joint[1];
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical(format!("Hamilton filter underflow at t = {t}")));
        }
        loglik += shift + total.ln();
        let f = [joint[0] / total, joint[1] / total];
        predicted.push(pred);
        filtered.push(f);
        prev = Some(f);
    }
    Ok(FilterResult { filtered, predicted, loglik })
}

/// Kim smoother: P(S_t | all data) and the joint pair probabilities
/// P(S_t = i, S_{t+1} = j | all data).
pub fn kim_smoother(filter: &FilterResult, trans: &TransitionMatrix) -> (Vec<[f64; 2]>, Vec<[[f64; 2]; 2]>) {
    let n = filter.filtered.len();
    let mut smoothed = vec![[0.0; 2]; n];
    let mut pairs = vec![[[0.0; 2]; 2]; n.saturating_sub(1)];
    smoothed[n - 1] = filter.filtered[n - 1];
    for t in (0..n - 1).rev() {
        let f = filter.filtered[t];
        let pred = filter.predicted[t + 1];
        let next = smoothed[t + 1];
        let mut s = [0.0; 2];
        for i in 0..2 {
            for j in 0..2 {
                let ratio = if pred[j] > 0.0 { next[j] / pred[j] } else { 0.0 };
                let joint = f[i] * trans.get(i, j) * ratio;
                pairs[t][i][j] = joint;
                s[i] += joint;
            }
        }
        let total = s[0] + s[1];
        smoothed[t] = if total > 0.0 { [s[0] / total, s[1] / total] } else { f };
    }
    (smoothed, pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsarOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MsarOptions {
    fn default() -> Self {
        MsarOptions { max_iter: 500, rel_tol: 1e-8, restarts: 5, seed: 0 }
    }
}

const MIN_MASS_FRACTION: f64 = 1e-3;

fn variance_floor(g: &[f64]) -> f64 {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g.len() as f64;
    (var * 1e-6).max(1e-12)
}

/// Weighted least squares for one regime.
fn weighted_regime(g: &[f64], r: usize, weights: &[f64], floor: f64) -> Result<RegimeParams> {
    let n = weights.len();
    let k = r + 1;
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for (idx, &w) in weights.iter().enumerate() {
        let t = idx + r;
        row[0] = 1.0;
        for i in 0..r {
            row[i + 1] = g[t - i - 1];
        }
        for a in 0..k {
            xty[a] += w * row[a] * g[t];
            for b in 0..k {
                xtx[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    // Tiny ridge keeps a nearly empty regime solvable; it does not affect well-posed fits.
    for a in 0..k {
        xtx[(a, a)] += 1e-12;
    }
    let beta = xtx.lu().solve(&xty).ok_or_else(|| Error::Numerical("singular regime regression".into()))?;
    let mut rss = 0.0;
    let mut mass = 0.0;
    for (idx, &w) in weights.iter().enumerate().take(n) {
        let t = idx + r;
        let mut fit = beta[0];
        for i in 0..r {
            fit += beta[i + 1] * g[t - i - 1];
        }
        rss += w * (g[t] - fit).powi(2);
        mass += w;
    }
    Ok(RegimeParams {
        intercept: beta[0],
        ar_coeffs: beta.iter().skip(1).copied().collect(),
        sigma2: (rss / mass).max(floor),
    })
}

/// Expected complete-data log-likelihood terms that involve the transition matrix.
fn transition_objective(counts: &[[f64; 2]; 2], first: [f64; 2], trans: &TransitionMatrix) -> f64 {
    let mut q = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            if counts[i][j] > 0.0 {
                q += counts[i][j] * trans.get(i, j).ln();
            }
        }
    }
    if let Some(pi) = trans.stationary() {
        for i in 0..2 {
            if first[i] > 0.0 {
                q += first[i] * pi[i].ln();
            }
        }
    }
    q
}

fn m_step(g: &[f64], current: &MsarParams, smoothed: &[[f64; 2]], pairs: &[[[f64; 2]; 2]], floor: f64) -> Result<MsarParams> {
    let r = current.ar_order();
    let n = smoothed.len();
    let mut regimes = current.regimes.clone();
    for s in 0..2 {
        let w: Vec<f64> = smoothed.iter().map(|p| p[s]).collect();
        let mass: f64 = w.iter().sum();
        if mass < MIN_MASS_FRACTION * n as f64 {
            return Err(Error::DegenerateRegime { regime: s, mass: mass / n as f64 });
        }
        regimes[s] = weighted_regime(g, r, &w, floor)?;
    }
    let mut counts = [[0.0; 2]; 2];
    for p in pairs {
        for i in 0..2 {
            for j in 0..2 {
                counts[i][j] += p[i][j];
            }
        }
    }
    let clamp = |x: f64| x.clamp(1e-6, 1.0 - 1e-6);
    let row = |i: usize| {
        let tot = counts[i][0] + counts[i][1];
        if tot > 0.0 {
            counts[i][i] / tot
        } else {
            current.trans.get(i, i)
        }
    };
    let proposal = TransitionMatrix::new(clamp(row(0)), clamp(row(1)))?;
    let first = smoothed[0];
    let base = transition_objective(&counts, first, &current.trans);
    let mut step = 1.0;
    let mut trans = proposal;
    loop {
        if transition_objective(&counts, first, &trans) >= base || step < 1e-8 {
            break;
        }
        step *= 0.5;
        trans = TransitionMatrix::new(
            current.trans.p00 + step * (proposal.p00 - current.trans.p00),
            current.trans.p11 + step * (proposal.p11 - current.trans.p11),
        )?;
    }
    if transition_objective(&counts, first, &trans) < base {
        trans = current.trans;
    }
    Ok(MsarParams { regimes, trans })
}

struct EmRun {
    params: MsarParams,
    loglik: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn run_em(g: &[f64], start: MsarParams, opts: &MsarOptions, floor: f64) -> Result<EmRun> {
    let mut params = start;
    let mut filter = hamilton_filter(g, &params, None)?;
    let mut trace = vec![filter.loglik];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let (smoothed, pairs) = kim_smoother(&filter, &params.trans);
        let next = m_step(g, &params, &smoothed, &pairs, floor)?;
        let next_filter = hamilton_filter(g, &next, None)?;
        let old = filter.loglik;
        params = next;
        filter = next_filter;
        trace.push(filter.loglik);
        if (filter.loglik - old).abs() <= opts.rel_tol * old.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(EmRun { params, loglik: filter.loglik, trace, iterations, converged })
}

/// Tentative regimes from a rolling-variance median split.
fn initial_params(g: &[f64], r: usize, floor: f64) -> Result<MsarParams> {
    let n = g.len() - r;
    let half = 2usize;
    let rolling: Vec<f64> = (r..g.len())
        .map(|t| {
            let lo = t.saturating_sub(half).max(r);
            let hi = (t + half + 1).min(g.len());
            let w = &g[lo..hi];
            let m = w.iter().sum::<f64>() / w.len() as f64;
            w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / w.len() as f64
        })
        .collect();
    let mut sorted = rolling.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    let high: Vec<f64> = rolling.iter().map(|&v| if v > median { 1.0 } else { 0.0 }).collect();
    let low: Vec<f64> = high.iter().map(|h| 1.0 - h).collect();
    let r0 = weighted_regime(g, r, &low, floor)?;
    let r1 = weighted_regime(g, r, &high, floor)?;
    Ok(MsarParams { regimes: [r0, r1], trans: TransitionMatrix::new(0.9, 0.9)? })
}

fn jitter(base: &MsarParams, rng: &mut ChaCha8Rng, scale: f64) -> Result<MsarParams> {
    let mut p = base.clone();
    let sd = [base.regimes[0].sigma2.sqrt(), base.regimes[1].sigma2.sqrt()];
    for (s, reg) in p.regimes.iter_mut().enumerate() {
        reg.intercept += scale * sd[s] * rng.gen_range(-1.0..1.0);
        reg.sigma2 *= (scale * rng.gen_range(-1.0..1.0)).exp();
        for a in reg.ar_coeffs.iter_mut() {
            *a = (*a + 0.2 * scale * rng.gen_range(-1.0..1.0)).clamp(-0.95, 0.95);
        }
    }
    p.trans = TransitionMatrix::new(rng.gen_range(0.7..0.98), rng.gen_range(0.7..0.98))?;
    Ok(p)
}

pub fn fit_msar(g: &WeeklySeries, ar_order: usize) -> Result<RegimeFit> {
    fit_msar_with(g, ar_order, &MsarOptions::default())
}

pub fn fit_msar_with(g: &WeeklySeries, ar_order: usize, opts: &MsarOptions) -> Result<RegimeFit> {
    if ar_order > 4 {
        return Err(Error::BadParameter(format!("MSAR order {ar_order} outside 0..=4")));
    }
    let needed = 10 * (ar_order + 3);
    if g.len() < needed {
        return Err(Error::SeriesTooShort { needed, got: g.len() });
    }
    let x = g.values();
    let floor = variance_floor(x);
    let base = initial_params(x, ar_order, floor)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![base.clone()];
    for _ in 1..opts.restarts.max(1) {
        starts.push(jitter(&base, &mut rng, 0.5)?);
    }
    let runs: Vec<Result<EmRun>> = starts.into_par_iter().map(|s| run_em(x, s, opts, floor)).collect();

    let mut best: Option<EmRun> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(r) if r.converged || r.iterations >= opts.max_iter => {
                if best.as_ref().is_none_or(|b| r.loglik > b.loglik) {
                    best = Some(r);
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    let best = match (best, last_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(Error::NonConvergence),
    };
    if !best.converged {
        return Err(Error::NonConvergence);
    }

    let mut params = best.params;
    if params.regimes[0].sigma2 > params.regimes[1].sigma2 {
        params = params.swapped();
    }
    let filter = hamilton_filter(x, &params, None)?;
    let (smoothed, _) = kim_smoother(&filter, &params.trans);
    Ok(RegimeFit {
        params,
        start_week: g.week(ar_order),
        filtered_probs: filter.filtered,
        smoothed_probs: smoothed,
        loglik: filter.loglik,
        loglik_trace: best.trace,
        iterations: best.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Normal,
    Covid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpan {
    pub first_week: NaiveDate,
    pub last_week: NaiveDate,
    /// Indices into the probability vectors, inclusive.
    pub first_index: usize,
    pub last_index: usize,
    pub label: RegimeLabel,
}

/// Maximal runs where the smoothed COVID probability exceeds `threshold`.
pub fn regime_report(fit: &RegimeFit, threshold: f64) -> Result<Vec<RegimeSpan>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::BadParameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let week = |i: usize| fit.start_week + chrono::Duration::weeks(i as i64);
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    let probs = fit.covid_probs();
    for (i, &p) in probs.iter().enumerate() {
        match (p > threshold, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                spans.push(RegimeSpan { first_week: week(s), last_week: week(i - 1), first_index: s, last_index: i - 1, label: RegimeLabel::Covid });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        let e = probs.len() - 1;
        spans.push(RegimeSpan { first_week: week(s), last_week: week(e), first_index: s, last_index: e, label: RegimeLabel::Covid });
    }
    Ok(spans)
}

#[cfg(test)]
mod tests;
