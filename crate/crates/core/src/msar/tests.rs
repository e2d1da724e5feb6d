use super::*;
use crate::testutil::randn;

fn simulate(params: &MsarParams, n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = params.ar_order();
    let mut g = vec![0.0; n];
    let mut s = vec![0usize; n];
    let mut state = 0usize;
    for t in 0..n {
        if t > 0 {
            let stay = params.trans.get(state, state);
            if rng.gen::<f64>() > stay {
                state = 1 - state;
            }
        }
        s[t] = state;
        let reg = &params.regimes[state];
        let mut v = reg.intercept + reg.sigma2.sqrt() * randn(&mut rng);
        for i in 0..r {
            if t > i {
                v += reg.ar_coeffs[i] * g[t - i - 1];
            }
        }
        g[t] = v;
    }
    (g, s)
}

fn truth() -> MsarParams {
    MsarParams {
        regimes: [
            RegimeParams { intercept: 0.0, ar_coeffs: vec![0.3], sigma2: 0.01 },
            RegimeParams { intercept: -0.05, ar_coeffs: vec![0.1], sigma2: 0.16 },
        ],
        trans: TransitionMatrix::new(0.97, 0.9).unwrap(),
    }
}

fn week0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 1, 5).unwrap()
}

#[test]
fn stationary_distribution_solves_balance() {
    let t = TransitionMatrix::new(0.9, 0.7).unwrap();
    let pi = t.stationary().unwrap();
    assert!((pi[0] - 0.75).abs() < 1e-12);
    assert!((pi[0] * t.p00 + pi[1] * t.p10 - pi[0]).abs() < 1e-12);
    assert!(TransitionMatrix::new(1.0, 1.0).unwrap().stationary().is_none());
    assert!(TransitionMatrix::new(1.1, 0.5).is_err());
}

// Brute-force oracle: sum over all 2^n regime paths.
fn brute_loglik(g: &[f64], p: &MsarParams, init: [f64; 2]) -> f64 {
    let r = p.ar_order();
    let n = g.len() - r;
    let mut total = 0.0;
    for mask in 0..(1u32 << n) {
        let path: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        let mut prob = init[path[0]];
        for i in 1..n {
            prob *= p.trans.get(path[i - 1], path[i]);
        }
        for (i, &s) in path.iter().enumerate() {
            let t = i + r;
            let reg = &p.regimes[s];
            prob *= normal_log_density(g[t], regime_mean(reg, g, t), reg.sigma2).exp();
        }
        total += prob;
    }
    total.ln()
}

#[test]
fn filter_matches_path_enumeration() {
    let p = truth();
    let (g, _) = simulate(&p, 11, 3);
    let f = hamilton_filter(&g, &p, None).unwrap();
    let want = brute_loglik(&g, &p, p.trans.stationary().unwrap());
    assert!((f.loglik - want).abs() < 1e-9, "{} vs {}", f.loglik, want);
    for pr in &f.filtered {
        assert!((pr[0] + pr[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn smoother_matches_path_enumeration() {
    let p = truth();
    let (g, _) = simulate(&p, 9, 8);
    let init = p.trans.stationary().unwrap();
    let f = hamilton_filter(&g, &p, None).unwrap();
    let (sm, pairs) = kim_smoother(&f, &p.trans);
    let r = p.ar_order();
    let n = g.len() - r;
    let mut marg = vec![0.0; n];
    let mut total = 0.0;
    for mask in 0..(1u32 << n) {
        let path: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        let mut prob = init[path[0]];
        for i in 1..n {
            prob *= p.trans.get(path[i - 1], path[i]);
        }
        for (i, &s) in path.iter().enumerate() {
            let reg = &p.regimes[s];
            prob *= normal_log_density(g[i + r], regime_mean(reg, &g, i + r), reg.sigma2).exp();
        }
        total += prob;
        for i in 0..n {
            if path[i] == 1 {
                marg[i] += prob;
            }
        }
    }
    for i in 0..n {
        assert!((sm[i][1] - marg[i] / total).abs() < 1e-9);
        let ps: f64 = pairs.get(i).map_or(1.0, |m| m.iter().flatten().sum());
        assert!((ps - 1.0).abs() < 1e-9);
    }
}

#[test]
fn absorbing_regime_with_explicit_start() {
    let mut p = truth();
    p.trans = TransitionMatrix::new(1.0, 0.5).unwrap();
    let (g, _) = simulate(&truth(), 30, 1);
    assert!(hamilton_filter(&g, &p, None).is_ok());
    let mut q = truth();
    q.trans = TransitionMatrix::new(1.0, 1.0).unwrap();
    assert!(hamilton_filter(&g, &q, None).is_err());
    let f = hamilton_filter(&g, &q, Some([1.0, 0.0])).unwrap();
    assert!(f.filtered.iter().all(|pr| pr[1] == 0.0));
}

#[test]
fn em_is_monotone_and_recovers_regimes() {
    let p = truth();
    let (g, s) = simulate(&p, 400, 42);
    let series = WeeklySeries::new("g", week0(), g).unwrap();
    let fit = fit_msar(&series, 1).unwrap();
    for w in fit.loglik_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "EM decreased: {} -> {}", w[0], w[1]);
    }
    assert!(fit.params.regimes[1].sigma2 > fit.params.regimes[0].sigma2);
    let probs = fit.covid_probs();
    let hits = probs.iter().zip(&s[1..]).filter(|(p, &st)| (**p > 0.5) == (st == 1)).count();
    assert!(hits as f64 / probs.len() as f64 > 0.9, "accuracy {}", hits);
    assert!((fit.params.trans.p00 - 0.97).abs() < 0.05);
}

#[test]
fn fit_is_deterministic_and_label_invariant() {
    let (g, _) = simulate(&truth(), 300, 5);
    let series = WeeklySeries::new("g", week0(), g).unwrap();
    let a = fit_msar(&series, 1).unwrap();
    let b = fit_msar(&series, 1).unwrap();
    assert_eq!(a, b);
    let swapped = a.params.swapped();
    let f1 = hamilton_filter(series.values(), &a.params, None).unwrap();
    let f2 = hamilton_filter(series.values(), &swapped, None).unwrap();
    assert!((f1.loglik - f2.loglik).abs() < 1e-9);
}

#[test]
fn report_spans_cover_threshold_runs() {
    let (g, _) = simulate(&truth(), 300, 9);
    let series = WeeklySeries::new("g", week0(), g).unwrap();
    let fit = fit_msar(&series, 1).unwrap();
    let spans = regime_report(&fit, 0.5).unwrap();
    let probs = fit.covid_probs();
    let mut covered = vec![false; probs.len()];
    for s in &spans {
        for i in s.first_index..=s.last_index {
            covered[i] = true;
        }
        assert_eq!(s.first_week, fit.start_week + chrono::Duration::weeks(s.first_index as i64));
    }
    for (c, p) in covered.iter().zip(&probs) {
        assert_eq!(*c, *p > 0.5);
    }
    assert!(regime_report(&fit, 1.0).is_err());
}

#[test]
fn growth_conversion() {
    let y = WeeklySeries::new("y", week0(), vec![100.0, 110.0, 99.0]).unwrap();
    let g = to_growth(&y, GrowthMode::Weekly).unwrap();
    assert!((g.values()[0] - 0.1).abs() < 1e-12);
    assert!((g.values()[1] + 0.1).abs() < 1e-12);
    assert_eq!(g.start_week(), week0() + chrono::Duration::weeks(1));
    let z = WeeklySeries::new("y", week0(), vec![0.0, 1.0]).unwrap();
    assert!(matches!(to_growth(&z, GrowthMode::Weekly), Err(Error::DivisionByZeroValue { index: 0 })));
    assert!(to_growth(&y, GrowthMode::Yoy).is_err());
}

#[test]
fn short_series_rejected() {
    let y = WeeklySeries::new("g", week0(), vec![0.1; 20]).unwrap();
    assert!(matches!(fit_msar(&y, 1), Err(Error::SeriesTooShort { .. })));
}
