//! False-peak detection on forecast streams.
//!
//! A value is a false peak when it sits more than `k` standard deviations away
//! from the mean of the previous `window_n` adjusted values. Flagged values are
//! replaced by the average of the previous adjusted value and themselves, and
//! the replacement is what later windows see.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::WeeklySeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdVariant {
    /// Sample SD of the window values.
    #[default]
    WindowValues,
    /// Sample SD of the last `window_n` trailing averages.
    RollingAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakConfig {
    pub window_n: usize,
    pub k: f64,
    pub sd_variant: SdVariant,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig { window_n: 8, k: 3.0, sd_variant: SdVariant::WindowValues }
    }
}

impl PeakConfig {
    pub fn new(window_n: usize, k: f64) -> Result<Self> {
        let cfg = PeakConfig { window_n, k, sd_variant: SdVariant::WindowValues };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_n < 2 {
            return Err(Error::BadParameter(format!("window_n must be at least 2, got {}", self.window_n)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::BadParameter(format!("k must be positive, got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakStat {
    pub moving_avg: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakScanResult {
    pub flags: Vec<bool>,
    pub adjusted: WeeklySeries,
    /// `None` for the first `window_n` indices, which are never tested.
    pub stats: Vec<Option<PeakStat>>,
}

impl PeakScanResult {
    pub fn n_flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

fn mean_sd(w: &[f64]) -> (f64, f64) {
    let n = w.len() as f64;
    let avg = w.iter().sum::<f64>() / n;
    let ss = w.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>();
    (avg, (ss / (n - 1.0)).sqrt())
}

/// Mean and sample SD of `values[at - window_n .. at]`.
pub fn moving_stats(values: &[f64], window_n: usize, at: usize) -> Result<(f64, f64)> {
    if window_n < 2 {
        return Err(Error::BadParameter(format!("window_n must be at least 2, got {window_n}")));
    }
    if at < window_n || at > values.len() {
        return Err(Error::IndexOutOfRange { index: at });
    }
    Ok(mean_sd(&values[at - window_n..at]))
}

pub fn scan_peaks(f: &WeeklySeries, cfg: &PeakConfig) -> Result<PeakScanResult> {
    cfg.validate()?;
    let n = cfg.window_n;
    let x = f.values();
    if x.len() <= n {
        return Err(Error::SeriesTooShort { needed: n + 1, got: x.len() });
    }
    let mut adjusted = x.to_vec();
    let mut flags = vec![false; x.len()];
    let mut stats = vec![None; x.len()];
    // trailing averages of the adjusted series, indexed by decision point
    let mut rolling: Vec<f64> = Vec::with_capacity(x.len());
    for i in n..x.len() {
        let (avg, window_sd) = mean_sd(&adjusted[i - n..i]);
        rolling.push(avg);
        let sd = match cfg.sd_variant {
            SdVariant::WindowValues => window_sd,
            SdVariant::RollingAverage if rolling.len() >= 2 => mean_sd(&rolling[rolling.len().saturating_sub(n)..]).1,
            SdVariant::RollingAverage => window_sd,
        };
        stats[i] = Some(PeakStat { moving_avg: avg, sd });
        if (x[i] - avg).abs() > cfg.k * sd {
            flags[i] = true;
            adjusted[i] = (adjusted[i - 1] + x[i]) / 2.0;
        }
    }
    Ok(PeakScanResult { flags, adjusted: f.with_values(adjusted)?, stats })
}

/// CSV with columns week_start, raw, adjusted, flagged, moving_avg, sd.
pub fn scan_csv(raw: &WeeklySeries, scan: &PeakScanResult) -> String {
    let mut out = String::from("week_start,raw,adjusted,flagged,moving_avg,sd\n");
    for i in 0..raw.len() {
        let (ma, sd) = match scan.stats[i] {
            Some(s) => (s.moving_avg.to_string(), s.sd.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            raw.week(i),
            raw.values()[i],
            scan.adjusted.values()[i],
            u8::from(scan.flags[i]),
            ma,
            sd
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use crate::testutil::randn;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series(v: Vec<f64>) -> WeeklySeries {
        WeeklySeries::new("f", NaiveDate::from_ymd_opt(2022, 1, 3).unwrap(), v).unwrap()
    }

    #[test]
    fn worked_example() {
        // mean 100, sample sd 5, last value 104
        let hist = vec![93.0, 97.0, 101.0, 105.0, 104.0];
        let (avg, sd) = moving_stats(&hist, 5, 5).unwrap();
        assert_eq!(avg, 100.0);
        assert_eq!(sd, 5.0);
        let cfg = PeakConfig::new(5, 3.0).unwrap();
        let mut v = hist.clone();
        v.push(120.0);
        let r = scan_peaks(&series(v), &cfg).unwrap();
        assert!(r.flags[5]);
        assert_eq!(r.adjusted.values()[5], 112.0);
        let mut v = hist;
        v.push(114.0);
        let r = scan_peaks(&series(v), &cfg).unwrap();
        assert!(!r.flags[5]);
        assert_eq!(r.adjusted.values()[5], 114.0);
    }

    #[test]
    fn moving_stats_cases() {
        let (a, s) = moving_stats(&[1.0, 2.0, 3.0, 4.0], 4, 4).unwrap();
        assert_eq!(a, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(moving_stats(&[7.0; 5], 3, 4).unwrap(), (7.0, 0.0));
        assert!(matches!(moving_stats(&[1.0, 2.0], 2, 1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn zero_sd_window() {
        let cfg = PeakConfig::new(3, 3.0).unwrap();
        let r = scan_peaks(&series(vec![5.0, 5.0, 5.0, 5.0, 5.0]), &cfg).unwrap();
        assert_eq!(r.n_flagged(), 0);
        let r = scan_peaks(&series(vec![5.0, 5.0, 5.0, 5.0 + 1e-9]), &cfg).unwrap();
        assert!(r.flags[3]);
    }

    #[test]
    fn config_and_length_errors() {
        assert!(PeakConfig::new(1, 3.0).is_err());
        assert!(PeakConfig::new(4, 0.0).is_err());
        let cfg = PeakConfig::new(4, 3.0).unwrap();
        assert!(matches!(scan_peaks(&series(vec![1.0; 4]), &cfg), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn rolling_average_variant_runs() {
        let cfg = PeakConfig { window_n: 4, k: 2.0, sd_variant: SdVariant::RollingAverage };
        let v: Vec<f64> = (0..30).map(|i| 100.0 + (i as f64).sin() + if i == 20 { 30.0 } else { 0.0 }).collect();
        let r = scan_peaks(&series(v), &cfg).unwrap();
        assert!(r.flags[20]);
    }

    fn check_decisions(x: &[f64], r: &PeakScanResult, cfg: &PeakConfig) {
        for i in cfg.window_n..x.len() {
            let (avg, sd) = moving_stats(r.adjusted.values(), cfg.window_n, i).unwrap();
            assert_eq!(r.flags[i], (x[i] - avg).abs() > cfg.k * sd);
        }
    }

    proptest! {
        #[test]
        fn unflagged_are_verbatim_and_decisions_use_adjusted_history(
            v in prop::collection::vec(50.0f64..150.0, 10..60),
            n in 2usize..8,
            k in 0.5f64..4.0,
        ) {
            prop_assume!(v.len() > n);
            let cfg = PeakConfig::new(n, k).unwrap();
            let r = scan_peaks(&series(v.clone()), &cfg).unwrap();
            for i in 0..v.len() {
                if !r.flags[i] {
                    prop_assert_eq!(r.adjusted.values()[i].to_bits(), v[i].to_bits());
                }
            }
            check_decisions(&v, &r, &cfg);
        }

        // Single isolated spike on a smooth base: no cascading, so the flag set
        // can only grow as k falls.
        #[test]
        fn smaller_k_flags_superset(
            base in 90.0f64..110.0,
            amp in 0.5f64..3.0,
            spike in 5.0f64..60.0,
            at in 12usize..30,
            k1 in 1.0f64..4.0,
            dk in 0.0f64..1.0,
        ) {
            let v: Vec<f64> = (0..40).map(|i| base + amp * ((i as f64) * 0.7).sin() + if i == at { spike } else { 0.0 }).collect();
            let hi = PeakConfig::new(8, k1 + dk).unwrap();
            let lo = PeakConfig::new(8, k1).unwrap();
            let a = scan_peaks(&series(v.clone()), &hi).unwrap();
            let b = scan_peaks(&series(v), &lo).unwrap();
            if a.flags[at] {
                prop_assert!(b.flags[at]);
            }
        }
    }

    #[test]
    fn rescan_flags_nothing_once_settled() {
        let cfg = PeakConfig::default();
        let mut settled_cases = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let height = 4.0 + (seed % 9) as f64 * 0.5;
            let v: Vec<f64> = (0..80)
                .map(|i| 100.0 + randn(&mut rng) + if i % 23 == 11 { height } else { 0.0 })
                .collect();
            let r = scan_peaks(&series(v), &cfg).unwrap();
            let again = scan_peaks(&r.adjusted, &cfg).unwrap();
            let settled = (0..r.flags.len()).all(|i| !(r.flags[i] && again.flags[i]));
            if settled {
                settled_cases += 1;
                assert_eq!(again.n_flagged(), 0, "seed {seed}");
            }
        }
        assert!(settled_cases > 0);
    }

    #[test]
    fn sustained_spike_onset_is_damped() {
        let cfg = PeakConfig::default();
        for ph in 0..2 {
            for j in 0..17 {
                let c = 1.1 + 0.05 * j as f64;
                let base: Vec<f64> = (0..60).map(|i| 100.0 + if (i + ph) % 2 == 0 { 1.0 } else { -1.0 }).collect();
                let pre = &base[30 - cfg.window_n..30];
                let (mean, sd) = moving_stats(pre, cfg.window_n, cfg.window_n).unwrap();
                let h = c * cfg.k * sd;
                let v: Vec<f64> = base.iter().enumerate().map(|(i, b)| if (30..40).contains(&i) { b + h } else { *b }).collect();
                let r = scan_peaks(&series(v.clone()), &cfg).unwrap();
                if ph == 0 {
                    assert!(r.flags[30], "c {c}");
                }
                if r.flags[30] {
                    let a = r.adjusted.values()[30];
                    assert!(a < v[30] && (a - mean).abs() <= cfg.k * r.stats[30].unwrap().sd);
                }
                for i in 30..40 {
                    assert!(r.adjusted.values()[i] <= v[i]);
                }
            }
        }
    }
}
