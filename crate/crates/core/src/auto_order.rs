//! Order selection by AICc over a bounded SARIMA grid.
//!
//! Candidates that difference the series differently are scored on a common
//! window: every candidate's log-likelihood is the sum of its one-step
//! predictive log-densities for the weeks after the largest differencing span
//! in the search space. The Kalman prediction-error decomposition makes these
//! conditional densities directly available, so the scores are comparable
//! across `d` and `D`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sarimax::{self, FitOptions, FittedSarimax, SarimaOrder};
use crate::series::{FlagSeries, WeeklySeries};

/// `-2 loglik + 2 k n / (n - k - 1)`.
pub fn aicc(loglik: f64, k: usize, n: usize) -> Result<f64> {
    if n <= k + 1 {
        return Err(Error::DegenerateSampleSize { n, k });
    }
    let (kf, nf) = (k as f64, n as f64);
    Ok(-2.0 * loglik + 2.0 * kf * nf / (nf - kf - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Exhaustive,
    Stepwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub max_p: usize,
    pub max_q: usize,
    pub max_seasonal_p: usize,
    pub max_seasonal_q: usize,
    pub d_set: Vec<usize>,
    pub seasonal_d_set: Vec<usize>,
    pub period: usize,
    pub mode: SearchMode,
    /// Stepwise: stop after this many evaluations without improvement.
    pub stepwise_patience: usize,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            max_p: 3,
            max_q: 3,
            max_seasonal_p: 2,
            max_seasonal_q: 2,
            d_set: vec![0, 1],
            seasonal_d_set: vec![0, 1],
            period: 52,
            mode: SearchMode::Exhaustive,
            stepwise_patience: 50,
            seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.d_set.is_empty() || self.seasonal_d_set.is_empty() {
            return Err(Error::BadParameter("d_set and seasonal_d_set must be non-empty".into()));
        }
        let probe = SarimaOrder {
            p: self.max_p,
            d: *self.d_set.iter().max().expect("non-empty"),
            q: self.max_q,
            seasonal_p: self.max_seasonal_p,
            seasonal_d: *self.seasonal_d_set.iter().max().expect("non-empty"),
            seasonal_q: self.max_seasonal_q,
            period: self.period.max(2),
        };
        probe.validate()?;
        if self.period < 2 && (self.max_seasonal_p + self.max_seasonal_q > 0 || self.seasonal_d_set.iter().any(|&d| d > 0)) {
            return Err(Error::BadParameter("seasonal terms need a period of at least 2".into()));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        (self.max_p + 1)
            * (self.max_q + 1)
            * (self.max_seasonal_p + 1)
            * (self.max_seasonal_q + 1)
            * self.d_set.len()
            * self.seasonal_d_set.len()
    }

    pub fn grid(&self) -> Vec<SarimaOrder> {
        let mut out = Vec::with_capacity(self.grid_size());
        for &d in &self.d_set {
            for &sd in &self.seasonal_d_set {
                for p in 0..=self.max_p {
                    for q in 0..=self.max_q {
                        for sp in 0..=self.max_seasonal_p {
                            for sq in 0..=self.max_seasonal_q {
                                out.push(self.order(p, d, q, sp, sd, sq));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn order(&self, p: usize, d: usize, q: usize, sp: usize, sd: usize, sq: usize) -> SarimaOrder {
        SarimaOrder { p, d, q, seasonal_p: sp, seasonal_d: sd, seasonal_q: sq, period: self.period }
    }

    /// Weeks excluded from every candidate's score.
    pub fn common_burn(&self) -> usize {
        self.d_set.iter().max().copied().unwrap_or(0)
            + self.period * self.seasonal_d_set.iter().max().copied().unwrap_or(0)
    }

    fn contains(&self, o: &SarimaOrder) -> bool {
        o.p <= self.max_p
            && o.q <= self.max_q
            && o.seasonal_p <= self.max_seasonal_p
            && o.seasonal_q <= self.max_seasonal_q
            && self.d_set.contains(&o.d)
            && self.seasonal_d_set.contains(&o.seasonal_d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub order: SarimaOrder,
    /// AICc on the common scoring window; `None` when the candidate did not converge.
    pub aicc: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: FittedSarimax,
    pub best_score: f64,
    pub leaderboard: Vec<LeaderboardEntry>,
    pub n_evaluated: usize,
    pub scoring_window: usize,
}

impl SearchResult {
    pub fn leaderboard_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Numerical(e.to_string());
        w.write_record(["p", "d", "q", "P", "D", "Q", "s", "aicc", "loglik", "converged"]).map_err(io)?;
        for e in &self.leaderboard {
            let o = e.order;
            w.write_record([
                o.p.to_string(),
                o.d.to_string(),
                o.q.to_string(),
                o.seasonal_p.to_string(),
                o.seasonal_d.to_string(),
                o.seasonal_q.to_string(),
                o.period.to_string(),
                e.aicc.map(|v| v.to_string()).unwrap_or_default(),
                e.loglik.map(|v| v.to_string()).unwrap_or_default(),
                e.converged.to_string(),
            ])
            .map_err(io)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?)
            .map_err(|e| Error::Numerical(e.to_string()))
    }
}

struct Evaluated {
    entry: LeaderboardEntry,
    model: Option<FittedSarimax>,
}

fn candidate_seed(base: u64, o: &SarimaOrder) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for v in [o.p, o.d, o.q, o.seasonal_p, o.seasonal_d, o.seasonal_q, o.period] {
        h = (h ^ v as u64).wrapping_mul(0x0100_0000_01B3);
        h ^= h >> 29;
    }
    h
}

fn evaluate(y: &WeeklySeries, exog: &[FlagSeries], order: SarimaOrder, space: &SearchSpace) -> Evaluated {
    let burn = space.common_burn();
    let skipped = |note: String| Evaluated {
        entry: LeaderboardEntry { order, aicc: None, loglik: None, converged: false, note: Some(note) },
        model: None,
    };
    if y.len() < sarimax::min_length(&order, exog.len()) || y.len() <= burn {
        return skipped("series too short".into());
    }
    let opts = FitOptions { seed: candidate_seed(space.seed, &order), ..FitOptions::default() };
    let model = match sarimax::fit_with(y, exog, order, &opts) {
        Ok(m) => m,
        Err(e) => return skipped(e.to_string()),
    };
    let scored = sarimax::innovations_at(y, exog, &order, &model.params()).and_then(|inn| {
        let from = burn - order.lost();
        let ll = inn.loglik(model.sigma2, from);
        let n = y.len() - burn;
        aicc(ll, model.n_params, n).map(|a| (ll, a))
    });
    match scored {
        Ok((ll, a)) if a.is_finite() => Evaluated {
            entry: LeaderboardEntry { order, aicc: Some(a), loglik: Some(ll), converged: true, note: None },
            model: Some(model),
        },
        Ok(_) => skipped("non-finite score".into()),
        Err(e) => skipped(e.to_string()),
    }
}

fn rank(a: &LeaderboardEntry, b: &LeaderboardEntry) -> std::cmp::Ordering {
    match (a.aicc, b.aicc) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.order.cmp(&b.order)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.order.cmp(&b.order),
    }
}

pub fn select_order(y: &WeeklySeries, exog: &[FlagSeries], space: &SearchSpace) -> Result<SearchResult> {
    space.validate()?;
    for f in exog {
        f.check_aligned(y)?;
    }
    let evaluated: BTreeMap<SarimaOrder, Evaluated> = match space.mode {
        SearchMode::Exhaustive => space
            .grid()
            .into_par_iter()
            .map(|o| (o, evaluate(y, exog, o, space)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect(),
        SearchMode::Stepwise => stepwise(y, exog, space),
    };
    finish(evaluated, y.len().saturating_sub(space.common_burn()))
}

fn finish(evaluated: BTreeMap<SarimaOrder, Evaluated>, scoring_window: usize) -> Result<SearchResult> {
    let n_evaluated = evaluated.len();
    let mut leaderboard: Vec<LeaderboardEntry> = evaluated.values().map(|e| e.entry.clone()).collect();
    leaderboard.sort_by(rank);
    let head = leaderboard.first().filter(|e| e.converged).ok_or(Error::NoConvergedCandidate)?;
    let best_eval = &evaluated[&head.order];
    Ok(SearchResult {
        best: best_eval.model.clone().expect("converged entries carry a model"),
        best_score: head.aicc.expect("converged entries are scored"),
        leaderboard,
        n_evaluated,
        scoring_window,
    })
}

fn neighbors(o: &SarimaOrder, space: &SearchSpace) -> Vec<SarimaOrder> {
    let mut out = Vec::new();
    let fields: [fn(&mut SarimaOrder) -> &mut usize; 6] = [
        |o| &mut o.p,
        |o| &mut o.q,
        |o| &mut o.seasonal_p,
        |o| &mut o.seasonal_q,
        |o| &mut o.d,
        |o| &mut o.seasonal_d,
    ];
    for get in fields {
        for delta in [-1i64, 1] {
            let mut c = *o;
            let v = get(&mut c);
            let nv = *v as i64 + delta;
            if nv < 0 {
                continue;
            }
            *v = nv as usize;
            if space.contains(&c) {
                out.push(c);
            }
        }
    }
    out
}

fn stepwise(y: &WeeklySeries, exog: &[FlagSeries], space: &SearchSpace) -> BTreeMap<SarimaOrder, Evaluated> {
    let d = *space.d_set.iter().min().expect("validated");
    let sd = *space.seasonal_d_set.iter().min().expect("validated");
    let clamp = |p: usize, q: usize, sp: usize, sq: usize| {
        space.order(p.min(space.max_p), d, q.min(space.max_q), sp.min(space.max_seasonal_p), sd, sq.min(space.max_seasonal_q))
    };
    let mut starts = vec![clamp(2, 2, 1, 1), clamp(0, 0, 0, 0), clamp(1, 0, 1, 0), clamp(0, 1, 0, 1)];
    starts.dedup();

    let mut seen: BTreeMap<SarimaOrder, Evaluated> = BTreeMap::new();
    let eval_batch = |orders: Vec<SarimaOrder>, seen: &mut BTreeMap<SarimaOrder, Evaluated>| {
        let fresh: Vec<SarimaOrder> = orders.into_iter().filter(|o| !seen.contains_key(o)).collect();
        let results: Vec<(SarimaOrder, Evaluated)> =
            fresh.into_par_iter().map(|o| (o, evaluate(y, exog, o, space))).collect();
        let n = results.len();
        seen.extend(results);
        n
    };
    eval_batch(starts.clone(), &mut seen);

    let best_of = |seen: &BTreeMap<SarimaOrder, Evaluated>, orders: &[SarimaOrder]| -> Option<SarimaOrder> {
        orders
            .iter()
            .filter_map(|o| seen.get(o).map(|e| &e.entry))
            .filter(|e| e.converged)
            .min_by(|a, b| rank(a, b))
            .map(|e| e.order)
    };
    let Some(mut current) = best_of(&seen, &starts) else {
        return seen;
    };
    for _ in 0..space.stepwise_patience {
        let nbrs = neighbors(&current, space);
        eval_batch(nbrs.clone(), &mut seen);
        let cand = best_of(&seen, &nbrs);
        match cand.filter(|c| rank(&seen[c].entry, &seen[&current].entry).is_lt()) {
            Some(c) => current = c,
            None => break,
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::testutil::randn;

    #[test]
    fn aicc_hand_values() {
        let v = aicc(0.0, 1, 100).unwrap();
        assert!((v - 200.0 / 98.0).abs() < 1e-12);
        assert!((v - 2.0408).abs() < 1e-4);
        assert!(aicc(-10.0, 3, 50).unwrap() > aicc(-5.0, 3, 50).unwrap());
        for k in 1..=5 {
            let a = aicc(-123.4, k, 10_000).unwrap();
            assert!((a - (246.8 + 2.0 * k as f64)).abs() < 0.1);
        }
        assert!(matches!(aicc(0.0, 5, 6), Err(Error::DegenerateSampleSize { .. })));
    }

    #[test]
    fn default_grid_has_576_candidates() {
        let s = SearchSpace::default();
        assert_eq!(s.grid_size(), 576);
        let g = s.grid();
        assert_eq!(g.len(), 576);
        let unique: std::collections::BTreeSet<_> = g.iter().collect();
        assert_eq!(unique.len(), 576);
    }

    fn small_space(mode: SearchMode) -> SearchSpace {
        SearchSpace {
            max_p: 2,
            max_q: 1,
            max_seasonal_p: 1,
            max_seasonal_q: 0,
            d_set: vec![0, 1],
            seasonal_d_set: vec![0],
            period: 4,
            mode,
            ..SearchSpace::default()
        }
    }

    fn ar_series(seed: u64) -> WeeklySeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![0.0; 200];
        for t in 1..200 {
            y[t] = 0.6 * y[t - 1] + randn(&mut rng);
        }
        WeeklySeries::new("y", NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(), y).unwrap()
    }

    #[test]
    fn exhaustive_leaderboard_is_sorted_permutation() {
        let space = small_space(SearchMode::Exhaustive);
        let r = select_order(&ar_series(1), &[], &space).unwrap();
        assert_eq!(r.n_evaluated, space.grid_size());
        assert_eq!(r.leaderboard.len(), space.grid_size());
        let scores: Vec<f64> = r.leaderboard.iter().filter_map(|e| e.aicc).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.leaderboard[0].aicc, Some(r.best_score));
        assert_eq!(r.best.order, r.leaderboard[0].order);
        let mut orders: Vec<_> = r.leaderboard.iter().map(|e| e.order).collect();
        orders.sort();
        let mut grid = space.grid();
        grid.sort();
        assert_eq!(orders, grid);
        assert!(r.leaderboard_csv().unwrap().lines().count() == space.grid_size() + 1);
    }

    #[test]
    fn stepwise_never_beats_exhaustive_and_is_deterministic() {
        let y = ar_series(2);
        let ex = select_order(&y, &[], &small_space(SearchMode::Exhaustive)).unwrap();
        let sw = select_order(&y, &[], &small_space(SearchMode::Stepwise)).unwrap();
        let sw2 = select_order(&y, &[], &small_space(SearchMode::Stepwise)).unwrap();
        assert!(sw.best_score >= ex.best_score - 1e-12);
        assert_eq!(sw.best_score.to_bits(), sw2.best_score.to_bits());
        assert_eq!(sw.leaderboard, sw2.leaderboard);
        assert!(sw.n_evaluated <= ex.n_evaluated);
    }

    #[test]
    fn too_short_candidates_are_recorded() {
        let y = ar_series(3).slice(0, 9).unwrap();
        let space = small_space(SearchMode::Exhaustive);
        let r = select_order(&y, &[], &space);
        match r {
            Ok(r) => {
                assert_eq!(r.n_evaluated, space.grid_size());
                assert!(r.leaderboard.iter().any(|e| !e.converged));
            }
            Err(e) => assert!(matches!(e, Error::NoConvergedCandidate)),
        }
    }
}
