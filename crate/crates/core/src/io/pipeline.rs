//! End-to-end run: ingest, flags, order search, SARIMAX forecast, false-peak
//! scan, regime report, backtests and the summary table, for a with-COVID and
//! a without-COVID scenario.
//!
//! Every artifact is built in memory first. Files are then written to a
//! hidden temporary directory which is renamed into place, so a failed run
//! leaves nothing behind.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::summary::{emit_summary, SummaryOptions, SummaryTable};
use super::synth::{generate_synthetic, SyntheticParams};
use super::{ingest, Dataset, IngestOptions};
use crate::auto_order::{select_order, SearchSpace};
use crate::calendar::IsoWeekId;
use crate::error::{Error, Result};
use crate::eval::{aggregate_pinball90, backtest, AggregateError, BacktestPlan, BacktestReport, BaselineMethod, ModelSpec};
use crate::keywords::KeywordConfig;
use crate::msar::{fit_msar_with, regime_report, to_growth, GrowthMode, MsarOptions, RegimeFit, RegimeSpan};
use crate::peaks::{scan_csv, scan_peaks, PeakConfig, PeakScanResult};
use crate::sarimax::{self, FitOptions, FittedSarimax, SarimaOrder};
use crate::series::{self, FlagSeries, ScenarioConfig, WeeklySeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticInput {
    pub years: usize,
    pub params: SyntheticParams,
}

impl Default for SyntheticInput {
    fn default() -> Self {
        SyntheticInput { years: 6, params: SyntheticParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSelection {
    pub with_covid: bool,
    pub without_covid: bool,
    /// The without-COVID scenario trains on weeks before this one.
    pub cutoff: IsoWeekId,
}

impl Default for ScenarioSelection {
    fn default() -> Self {
        ScenarioSelection { with_covid: true, without_covid: true, cutoff: IsoWeekId { year: 2020, week: 1 } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSettings {
    pub ar_order: usize,
    pub growth: GrowthMode,
    pub threshold: f64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for RegimeSettings {
    fn default() -> Self {
        RegimeSettings { ar_order: 1, growth: GrowthMode::Weekly, threshold: 0.5, max_iter: 1000, restarts: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSettings {
    pub enabled: bool,
    pub n_folds: usize,
    pub step_weeks: usize,
    pub horizon_weeks: usize,
    /// Defaults to whatever leaves room for all folds at the end of the history.
    pub initial_train_weeks: Option<usize>,
}

impl Default for BacktestSettings {
    fn default() -> Self {
        BacktestSettings { enabled: true, n_folds: 4, step_weeks: 13, horizon_weeks: 13, initial_train_weeks: None }
    }
}

impl BacktestSettings {
    fn plan(&self, len: usize) -> Result<BacktestPlan> {
        let tail = self.n_folds * self.step_weeks + self.horizon_weeks;
        let initial = match self.initial_train_weeks {
            Some(w) => w,
            None => len.checked_sub(tail).ok_or(Error::PlanTooLarge { needed: tail, got: len })?,
        };
        let plan = BacktestPlan { initial_train_weeks: initial, step_weeks: self.step_weeks, horizon_weeks: self.horizon_weeks, n_folds: self.n_folds };
        plan.validate(len)?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// CSV input. When absent, synthetic data is generated.
    pub input: Option<PathBuf>,
    pub ingest: IngestOptions,
    pub synthetic: SyntheticInput,
    /// Metrics to forecast; all ingested metrics when empty.
    pub metrics: Vec<String>,
    pub summary: SummaryOptions,
    pub scenario: ScenarioConfig,
    pub scenarios: ScenarioSelection,
    /// Fit in log space.
    pub log_transform: bool,
    /// Skip the order search and use this order.
    pub order: Option<SarimaOrder>,
    pub search: SearchSpace,
    pub peaks: PeakConfig,
    pub regimes: RegimeSettings,
    pub backtest: BacktestSettings,
    pub keywords: KeywordConfig,
    pub output_dir: PathBuf,
    /// Run directory name; defaults to `run-<UTC timestamp>-seed<seed>`.
    pub run_name: Option<String>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            ingest: IngestOptions::default(),
            synthetic: SyntheticInput::default(),
            metrics: Vec::new(),
            summary: SummaryOptions::default(),
            scenario: ScenarioConfig::default(),
            scenarios: ScenarioSelection::default(),
            log_transform: true,
            order: None,
            search: SearchSpace { mode: crate::auto_order::SearchMode::Stepwise, ..SearchSpace::default() },
            peaks: PeakConfig::default(),
            regimes: RegimeSettings::default(),
            backtest: BacktestSettings::default(),
            keywords: KeywordConfig::default(),
            output_dir: PathBuf::from("runs"),
            run_name: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.scenario.validate().map_err(cfg_err)?;
        self.peaks.validate().map_err(cfg_err)?;
        if self.order.is_none() {
            self.search.validate().map_err(cfg_err)?;
        }
        if let Some(o) = &self.order {
            o.validate().map_err(cfg_err)?;
        }
        if !self.scenarios.with_covid && !self.scenarios.without_covid {
            return Err(Error::Config("no scenario enabled".into()));
        }
        if !(self.regimes.threshold > 0.0 && self.regimes.threshold < 1.0) {
            return Err(Error::Config(format!("regime threshold {} outside (0, 1)", self.regimes.threshold)));
        }
        if self.input.is_none() {
            self.synthetic.params.validate().map_err(cfg_err)?;
        }
        Ok(())
    }
}

/// Files of one run, as paths relative to the run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(PathBuf, String)>,
}

impl Artifacts {
    pub fn get(&self, rel: &str) -> Option<&str> {
        self.files.iter().find(|(p, _)| p == Path::new(rel)).map(|(_, c)| c.as_str())
    }

    fn push(&mut self, rel: impl Into<PathBuf>, contents: String) {
        self.files.push((rel.into(), contents));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    WithCovid,
    WithoutCovid,
}

impl Scenario {
    pub fn dir(self) -> &'static str {
        match self {
            Scenario::WithCovid => "with_covid",
            Scenario::WithoutCovid => "without_covid",
        }
    }
}

/// Everything computed for one metric in one scenario.
#[derive(Debug, Clone)]
pub struct MetricRun {
    pub metric: String,
    pub history: WeeklySeries,
    pub model: FittedSarimax,
    pub regressors: Vec<String>,
    pub dropped_regressors: Vec<String>,
    pub search_leaderboard: Option<String>,
    pub fitted: Vec<Option<f64>>,
    pub p50: WeeklySeries,
    pub p90: Vec<f64>,
    pub peaks: PeakScanResult,
    pub regimes: RegimeFit,
    pub regime_spans: Vec<RegimeSpan>,
    pub backtests: Vec<BacktestReport>,
    pub flags: Vec<FlagSeries>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    seed: u64,
    metrics: Vec<&'a str>,
    scenarios: Vec<ScenarioManifest<'a>>,
    files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct ScenarioManifest<'a> {
    scenario: Scenario,
    history_start: NaiveDate,
    history_end: NaiveDate,
    forecast_start: NaiveDate,
    horizon_weeks: usize,
    models: Vec<ModelManifest<'a>>,
}

#[derive(Debug, Clone, Serialize)]
struct ModelManifest<'a> {
    metric: &'a str,
    order: String,
    aicc: f64,
    regressors: &'a [String],
    dropped_regressors: &'a [String],
    false_peaks: usize,
    covid_spans: usize,
}

pub fn load_input(cfg: &PipelineConfig) -> Result<Dataset> {
    match &cfg.input {
        Some(path) => ingest(path, &cfg.ingest),
        None => {
            let ms = generate_synthetic(cfg.synthetic.years, cfg.seed, &cfg.synthetic.params)?;
            Ok(Dataset { metrics: ms.series().to_vec(), flags: Vec::new() })
        }
    }
}

/// Regressors that still vary over `[0, train_len)` after the differencing of
/// `order` (when known); the rest cannot be estimated.
/// Splits flags into those that vary over the first `train_len` weeks after the
/// order's differencing, and the names of the ones that do not.
pub fn usable_flags(flags: Vec<FlagSeries>, train_len: usize, order: Option<&SarimaOrder>) -> (Vec<FlagSeries>, Vec<String>) {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for f in flags {
        let mut v = f.as_f64();
        v.truncate(train_len);
        if let Some(o) = order {
            for _ in 0..o.d {
                v = series::difference(&v, 1);
            }
            for _ in 0..o.seasonal_d {
                v = series::difference(&v, o.period);
            }
        }
        if v.iter().any(|&x| x != v[0]) {
            keep.push(f);
        } else {
            dropped.push(f.name().to_string());
        }
    }
    (keep, dropped)
}

/// Calendar regressors by name: `peak` (Black Friday / Cyber Monday weeks) and
/// `covid` (scenario weeks). Other names have no known future values.
pub fn calendar_flags(names: &[String], start: NaiveDate, n: usize, scenario: &ScenarioConfig) -> Result<Vec<FlagSeries>> {
    names
        .iter()
        .map(|name| match name.as_str() {
            "peak" => series::build_peak_flag(start, n),
            "covid" => series::build_covid_flag(start, n, scenario),
            other => Err(Error::MissingFutureExog(format!("`{other}` is not a calendar flag"))),
        })
        .collect()
}

fn build_flags(start: NaiveDate, n: usize, scenario: Scenario, cfg: &PipelineConfig) -> Result<Vec<FlagSeries>> {
    let mut flags = vec![series::build_peak_flag(start, n)?];
    if scenario == Scenario::WithCovid {
        flags.push(series::build_covid_flag(start, n, &cfg.scenario)?);
    }
    Ok(flags)
}

fn run_metric(y: &WeeklySeries, scenario: Scenario, cfg: &PipelineConfig) -> Result<MetricRun> {
    let horizon = cfg.scenario.horizon_weeks;
    let n = y.len();
    let model_y = if cfg.log_transform { series::log_transform(y).map_err(|e| e.in_stage("transform"))? } else { y.clone() };

    let all_flags = build_flags(y.start_week(), n + horizon, scenario, cfg).map_err(|e| e.in_stage("flags"))?;
    let (all_flags, dropped) = usable_flags(all_flags, n, cfg.order.as_ref());
    let hist_flags: Vec<FlagSeries> = all_flags.iter().map(|f| f.slice(0, n)).collect::<Result<_>>()?;
    let future_flags: Vec<FlagSeries> = all_flags.iter().map(|f| f.slice(n, n + horizon)).collect::<Result<_>>()?;

    let (model, leaderboard) = match cfg.order {
        Some(order) => {
            let opts = FitOptions { seed: cfg.seed, ..FitOptions::default() };
            (sarimax::fit_with(&model_y, &hist_flags, order, &opts).map_err(|e| e.in_stage("fit"))?, None)
        }
        None => {
            let space = SearchSpace { seed: cfg.seed, ..cfg.search.clone() };
            let r = select_order(&model_y, &hist_flags, &space).map_err(|e| e.in_stage("auto_order"))?;
            let board = r.leaderboard_csv().map_err(|e| e.in_stage("auto_order"))?;
            (r.best, Some(board))
        }
    };

    let fd = sarimax::forecast(&model, &model_y, &hist_flags, &future_flags, horizon).map_err(|e| e.in_stage("forecast"))?;
    let q = |tau: f64| (1..=horizon).map(|h| sarimax::quantile(&fd, h, tau)).collect::<Result<Vec<_>>>();
    let p50_vals = q(0.5).map_err(|e| e.in_stage("forecast"))?;
    let p90 = q(0.9).map_err(|e| e.in_stage("forecast"))?;
    let p50 = WeeklySeries::new(y.name(), fd.start_week, p50_vals)?;
    let fitted = sarimax::fitted_values(&model, &model_y, &hist_flags)
        .map_err(|e| e.in_stage("forecast"))?
        .into_iter()
        .map(|v| v.map(|x| if cfg.log_transform { x.exp() } else { x }))
        .collect();

    let peaks = scan_forecast(y, &p50, &cfg.peaks).map_err(|e| e.in_stage("peaks"))?;

    let growth = to_growth(y, cfg.regimes.growth).map_err(|e| e.in_stage("regimes"))?;
    let mopts = MsarOptions { max_iter: cfg.regimes.max_iter, restarts: cfg.regimes.restarts, seed: cfg.seed, ..MsarOptions::default() };
    let regimes = fit_msar_with(&growth, cfg.regimes.ar_order, &mopts).map_err(|e| e.in_stage("regimes"))?;
    let regime_spans = regime_report(&regimes, cfg.regimes.threshold).map_err(|e| e.in_stage("regimes"))?;

    let backtests = if cfg.backtest.enabled {
        run_backtests(y, &hist_flags, model.order, cfg).map_err(|e| e.in_stage("backtest"))?
    } else {
        Vec::new()
    };

    Ok(MetricRun {
        metric: y.name().to_string(),
        history: y.clone(),
        regressors: model.exog_names.clone(),
        model,
        dropped_regressors: dropped,
        search_leaderboard: leaderboard,
        fitted,
        p50,
        p90,
        peaks,
        regimes,
        regime_spans,
        backtests,
        flags: hist_flags,
    })
}

/// Scans history followed by the P50 path and keeps the forecast part.
fn scan_forecast(y: &WeeklySeries, p50: &WeeklySeries, cfg: &PeakConfig) -> Result<PeakScanResult> {
    let mut joined = y.values().to_vec();
    joined.extend_from_slice(p50.values());
    let scan = scan_peaks(&WeeklySeries::new(y.name(), y.start_week(), joined)?, cfg)?;
    let n = y.len();
    Ok(PeakScanResult {
        flags: scan.flags[n..].to_vec(),
        adjusted: scan.adjusted.slice(n, scan.adjusted.len())?,
        stats: scan.stats[n..].to_vec(),
    })
}

fn run_backtests(y: &WeeklySeries, flags: &[FlagSeries], order: SarimaOrder, cfg: &PipelineConfig) -> Result<Vec<BacktestReport>> {
    let plan = cfg.backtest.plan(y.len())?;
    // the earliest fold must be able to estimate every regressor
    let (flags, _) = usable_flags(flags.to_vec(), plan.initial_train_weeks, Some(&order));
    let mut specs: Vec<ModelSpec> = BaselineMethod::default_set().into_iter().map(|method| ModelSpec::Baseline { method }).collect();
    specs.push(ModelSpec::TrailingYoy);
    specs.push(ModelSpec::Sarimax { order, log: cfg.log_transform });
    specs.iter().map(|s| backtest(y, &flags, s, &plan)).collect()
}

fn scenario_history(data: &Dataset, metric: &str, scenario: Scenario, cfg: &PipelineConfig) -> Result<WeeklySeries> {
    let y = data.metric(metric)?;
    match scenario {
        Scenario::WithCovid => Ok(y.clone()),
        Scenario::WithoutCovid => {
            let cut = cfg.scenarios.cutoff.monday();
            let end = (0..y.len()).find(|&i| y.week(i) >= cut).unwrap_or(y.len());
            if end == 0 {
                return Err(Error::Config(format!("no history before the cutoff week {}", cfg.scenarios.cutoff)));
            }
            y.slice(0, end)
        }
    }
}

/// Runs every stage and returns the artifacts without touching the file system.
pub fn build_artifacts(cfg: &PipelineConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let data = load_input(cfg).map_err(|e| e.in_stage("ingest"))?;
    let metrics: Vec<String> = if cfg.metrics.is_empty() {
        data.metrics.iter().map(|s| s.name().to_string()).collect()
    } else {
        cfg.metrics.clone()
    };
    for m in &metrics {
        data.metric(m).map_err(|e| e.in_stage("ingest"))?;
    }

    let mut scenarios = Vec::new();
    if cfg.scenarios.with_covid {
        scenarios.push(Scenario::WithCovid);
    }
    if cfg.scenarios.without_covid {
        scenarios.push(Scenario::WithoutCovid);
    }

    let mut art = Artifacts { files: Vec::new() };
    art.push("config.json", cfg.to_json());
    art.push("input.csv", data.to_csv());
    let mut manifests = Vec::new();
    let mut runs_by_scenario = Vec::new();
    for &sc in &scenarios {
        let runs: Vec<MetricRun> = metrics
            .par_iter()
            .map(|m| run_metric(&scenario_history(&data, m, sc, cfg)?, sc, cfg))
            .collect::<Result<_>>()?;
        runs_by_scenario.push((sc, runs));
    }

    for (sc, runs) in &runs_by_scenario {
        let dir = Path::new(sc.dir());
        for r in runs {
            write_metric(&mut art, &dir.join(&r.metric), r)?;
        }
        let hist: Vec<WeeklySeries> = runs.iter().map(|r| r.history.clone()).collect();
        let fc: Vec<WeeklySeries> = runs.iter().map(|r| r.p50.clone()).collect();
        let table: SummaryTable = emit_summary(&hist, &fc, &cfg.summary).map_err(|e| e.in_stage("summary"))?;
        art.push(dir.join("summary.csv"), table.to_csv());
        art.push(dir.join("summary.json"), json(&table)?);
        if cfg.backtest.enabled {
            let agg = aggregate_backtests(runs)?;
            art.push(dir.join("backtest_aggregate.json"), json(&agg)?);
        }
        let first = &runs[0];
        manifests.push(ScenarioManifest {
            scenario: *sc,
            history_start: first.history.start_week(),
            history_end: first.history.end_week(),
            forecast_start: first.p50.start_week(),
            horizon_weeks: first.p50.len(),
            models: runs
                .iter()
                .map(|r| ModelManifest {
                    metric: &r.metric,
                    order: r.model.order.to_string(),
                    aicc: r.model.aicc,
                    regressors: &r.regressors,
                    dropped_regressors: &r.dropped_regressors,
                    false_peaks: r.peaks.n_flagged(),
                    covid_spans: r.regime_spans.len(),
                })
                .collect(),
        });
    }
    let mut files: Vec<String> = art.files.iter().map(|(p, _)| p.display().to_string()).collect();
    files.push("manifest.json".into());
    files.sort();
    let manifest = Manifest { seed: cfg.seed, metrics: metrics.iter().map(String::as_str).collect(), scenarios: manifests, files };
    let manifest = json(&manifest)?;
    art.push("manifest.json", manifest);
    Ok(art)
}

#[derive(Debug, Clone, Serialize)]
struct ModelAggregate {
    model: String,
    pinball90: AggregateError,
}

fn aggregate_backtests(runs: &[MetricRun]) -> Result<Vec<ModelAggregate>> {
    let n_models = runs.first().map_or(0, |r| r.backtests.len());
    (0..n_models)
        .map(|i| {
            let reports: Vec<BacktestReport> = runs.iter().map(|r| r.backtests[i].clone()).collect();
            Ok(ModelAggregate { model: reports[0].model.clone(), pinball90: aggregate_pinball90(&reports)? })
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("backtest"))
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Error::Numerical(format!("cannot serialize: {e}")))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_metric(art: &mut Artifacts, dir: &Path, r: &MetricRun) -> Result<()> {
    let mut fc = String::from("week_start,p50,p90,flagged\n");
    for h in 0..r.p50.len() {
        fc.push_str(&format!("{},{},{},{}\n", r.p50.week(h), r.p50.values()[h], r.p90[h], u8::from(r.peaks.flags[h])));
    }
    art.push(dir.join("forecast.csv"), fc);
    art.push(dir.join("peaks.csv"), scan_csv(&r.p50, &r.peaks));

    let probs = r.regimes.covid_probs();
    let mut reg = String::from("week_start,growth_index,filtered_covid_prob,smoothed_covid_prob,regime\n");
    let t0 = r.regimes.params.ar_order();
    for (i, p) in probs.iter().enumerate() {
        let label = if *p > 0.5 { "covid" } else { "normal" };
        reg.push_str(&format!(
            "{},{},{},{},{}\n",
            r.regimes.start_week + Duration::weeks(i as i64),
            i + t0,
            r.regimes.filtered_probs[i][1],
            p,
            label
        ));
    }
    art.push(dir.join("regimes.csv"), reg);
    #[derive(Serialize)]
    struct RegimeOut<'a> {
        params: &'a crate::msar::MsarParams,
        loglik: f64,
        iterations: usize,
        spans: &'a [RegimeSpan],
    }
    art.push(
        dir.join("regimes.json"),
        json(&RegimeOut { params: &r.regimes.params, loglik: r.regimes.loglik, iterations: r.regimes.iterations, spans: &r.regime_spans })?,
    );

    art.push(dir.join("model.json"), r.model.to_json()? + "\n");
    if let Some(board) = &r.search_leaderboard {
        art.push(dir.join("order_search.csv"), board.clone());
    }
    if !r.backtests.is_empty() {
        let mut csv = String::new();
        for (i, b) in r.backtests.iter().enumerate() {
            let body = b.to_csv();
            csv.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |x| x.1) });
        }
        art.push(dir.join("backtest.csv"), csv);
        art.push(dir.join("backtest.json"), json(&r.backtests)?);
    }
    art.push(dir.join("plot.csv"), plot_csv(r));
    Ok(())
}

/// Tidy plotting table over history and forecast weeks.
fn plot_csv(r: &MetricRun) -> String {
    let probs = r.regimes.covid_probs();
    let offset = r.history.len() - probs.len();
    let mut out = String::from("week_start,actual,fitted,p50,p90,regime_prob,peak_flag,covid_flag,false_peak\n");
    let flag = |name: &str, i: usize| r.flags.iter().find(|f| f.name() == name).map(|f| f.values()[i].to_string()).unwrap_or_default();
    for i in 0..r.history.len() {
        let prob = i.checked_sub(offset).map(|j| probs[j].to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},,,{},{},{},\n",
            r.history.week(i),
            r.history.values()[i],
            opt(r.fitted[i]),
            prob,
            flag("peak", i),
            flag("covid", i)
        ));
    }
    for h in 0..r.p50.len() {
        out.push_str(&format!("{},,,{},{},,,,{}\n", r.p50.week(h), r.p50.values()[h], r.p90[h], u8::from(r.peaks.flags[h])));
    }
    out
}

fn run_dir_name(cfg: &PipelineConfig) -> String {
    cfg.run_name
        .clone()
        .unwrap_or_else(|| format!("run-{}-seed{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), cfg.seed))
}

/// Writes all artifacts into a fresh run directory under `cfg.output_dir`.
pub fn write_run(cfg: &PipelineConfig, art: &Artifacts) -> Result<PathBuf> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let base = run_dir_name(cfg);
    let mut target = out.join(&base);
    let mut k = 1;
    while target.exists() {
        k += 1;
        target = out.join(format!("{base}-{k}"));
    }
    let tmp = tempfile::Builder::new().prefix(".partial-").tempdir_in(out).map_err(|e| Error::io(out, e))?;
    for (rel, contents) in &art.files {
        let p = tmp.path().join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
    }
    let tmp_path = tmp.keep();
    if let Err(e) = std::fs::rename(&tmp_path, &target) {
        let _ = std::fs::remove_dir_all(&tmp_path);
        return Err(Error::io(&target, e));
    }
    Ok(target)
}

/// Computes everything, then writes the run directory. Nothing is written on failure.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PathBuf> {
    let art = build_artifacts(cfg)?;
    write_run(cfg, &art).map_err(|e| e.in_stage("write"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> PipelineConfig {
        PipelineConfig {
            synthetic: SyntheticInput { years: 4, params: SyntheticParams { start_year: 2017, ..SyntheticParams::default() } },
            order: Some(SarimaOrder::new(1, 0, 0).seasonal(0, 1, 0, 52)),
            metrics: vec!["tpv".into(), "new_buyers".into()],
            scenario: ScenarioConfig { horizon_weeks: 20, ..ScenarioConfig::default() },
            backtest: BacktestSettings { n_folds: 2, ..BacktestSettings::default() },
            seed: 3,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let cfg = quick();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let d = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(d, PipelineConfig::default());
        assert!(matches!(PipelineConfig::from_json(r#"{"bogus": 1}"#), Err(Error::Config(_))));
        let bad = r#"{"scenarios": {"with_covid": false, "without_covid": false}}"#;
        assert!(matches!(PipelineConfig::from_json(bad), Err(Error::Config(_))));
    }

    #[test]
    fn artifacts_cover_both_scenarios() {
        let art = build_artifacts(&quick()).unwrap();
        for sc in ["with_covid", "without_covid"] {
            let fc = art.get(&format!("{sc}/tpv/forecast.csv")).unwrap();
            assert_eq!(fc.lines().count(), 21);
            assert_eq!(fc.lines().next().unwrap(), "week_start,p50,p90,flagged");
            for f in ["peaks.csv", "regimes.csv", "regimes.json", "model.json", "backtest.csv", "plot.csv"] {
                assert!(art.get(&format!("{sc}/new_buyers/{f}")).is_some(), "{sc} {f}");
            }
            assert!(art.get(&format!("{sc}/summary.csv")).is_some());
        }
        // the without-COVID scenario forecasts from the cutoff
        let fc = art.get("without_covid/tpv/forecast.csv").unwrap();
        assert!(fc.lines().nth(1).unwrap().starts_with("2019-12-30"));
        let m: FittedSarimax = FittedSarimax::from_json(art.get("without_covid/tpv/model.json").unwrap()).unwrap();
        assert_eq!(m.exog_names, ["peak"]);
        let m = FittedSarimax::from_json(art.get("with_covid/tpv/model.json").unwrap()).unwrap();
        assert_eq!(m.exog_names, ["peak", "covid"]);
    }

    #[test]
    fn missing_input_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("runs");
        let cfg = PipelineConfig { input: Some(dir.path().join("gone.csv")), output_dir: out.clone(), ..quick() };
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "ingest", .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
        assert!(!out.exists());
    }

    #[test]
    fn run_directory_is_complete_and_unique() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { output_dir: dir.path().to_path_buf(), run_name: Some("r".into()), ..quick() };
        let art = build_artifacts(&cfg).unwrap();
        let a = write_run(&cfg, &art).unwrap();
        let b = write_run(&cfg, &art).unwrap();
        assert_ne!(a, b);
        assert!(b.ends_with("r-2"));
        for (rel, contents) in &art.files {
            assert_eq!(&std::fs::read_to_string(b.join(rel)).unwrap(), contents);
        }
        let leftovers = std::fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.')).count();
        assert_eq!(leftovers, 0);
    }
}
