use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use weekcast::auto_order::{select_order, SearchMode};
use weekcast::eval::{backtest, BacktestReport, BaselineMethod, ModelSpec};
use weekcast::io::pipeline::{calendar_flags, run_pipeline, usable_flags, PipelineConfig};
use weekcast::io::summary::emit_summary;
use weekcast::io::synth::generate_synthetic;
use weekcast::io::{ingest, write_atomic, Dataset, IngestOptions};
use weekcast::keywords::{fit_lda, keyword_csv, keyword_report, Corpus, EmbeddingTable, SeedTags};
use weekcast::msar::{fit_msar_with, regime_report, to_growth, GrowthMode, MsarOptions};
use weekcast::peaks::{scan_csv, scan_peaks, SdVariant};
use weekcast::sarimax::{self, FitOptions, FittedSarimax, SarimaOrder};
use weekcast::series::{self, FlagSeries, Transform, WeeklySeries};
use weekcast::{Error, Result};

/// Crisis-aware weekly retail forecasting.
#[derive(Parser)]
#[command(name = "weekcast", version)]
struct Cli {
    /// Pipeline configuration (JSON); its sections supply defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Subcommands print to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Weekly CSV with a week_start column.
    #[arg(long)]
    input: PathBuf,
    /// Interpolate missing weeks instead of failing.
    #[arg(long)]
    fill_gaps: bool,
}

#[derive(Args)]
struct MetricInput {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    metric: String,
}

#[derive(Args)]
struct ModelArgs {
    /// Regress on the COVID scenario flag in addition to the peak flag.
    #[arg(long)]
    covid: bool,
    /// Fit on raw levels instead of logs.
    #[arg(long)]
    no_log: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Growth {
    Weekly,
    Yoy,
}

#[derive(Clone, Copy, ValueEnum)]
enum SdArg {
    WindowValues,
    RollingAverage,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a CSV file and describe it.
    Ingest(Input),
    /// Write synthetic weekly data.
    Generate {
        #[arg(long, default_value_t = 6)]
        years: usize,
        /// Leave out the COVID shock.
        #[arg(long)]
        no_covid: bool,
    },
    /// Fit a SARIMAX model of a given order.
    Fit {
        #[command(flatten)]
        data: MetricInput,
        /// p,d,q or p,d,q,P,D,Q,s
        #[arg(long)]
        order: String,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Select the order by AICc and fit.
    Autofit {
        #[command(flatten)]
        data: MetricInput,
        #[command(flatten)]
        model: ModelArgs,
        /// Stepwise search instead of the full grid.
        #[arg(long)]
        stepwise: bool,
    },
    /// Forecast from a fitted model.
    Forecast {
        #[command(flatten)]
        data: MetricInput,
        /// Model JSON written by fit or autofit.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Scan a series for false peaks.
    Peaks {
        #[command(flatten)]
        data: MetricInput,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long, value_enum)]
        sd: Option<SdArg>,
    },
    /// Two-regime Markov-switching fit on growth rates.
    Regimes {
        #[command(flatten)]
        data: MetricInput,
        #[arg(long)]
        ar_order: Option<usize>,
        #[arg(long, value_enum)]
        growth: Option<Growth>,
    },
    /// Score keywords: topics, saliency, relevance, essentiality, trends.
    Keywords {
        /// One document per line.
        #[arg(long)]
        corpus: PathBuf,
        /// CSV term,score.
        #[arg(long, requires = "embeddings")]
        seeds: Option<PathBuf>,
        /// Term followed by vector components per line.
        #[arg(long, requires = "seeds")]
        embeddings: Option<PathBuf>,
        /// Earlier corpus for trend ratios.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Rolling-origin backtest of baselines, the trailing-YoY benchmark and SARIMAX.
    Backtest {
        #[command(flatten)]
        data: MetricInput,
        /// SARIMAX order (p,d,q,P,D,Q,s); SARIMAX is skipped when absent.
        #[arg(long)]
        order: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Annual summary table from history and optional forecast CSVs.
    Report {
        #[command(flatten)]
        input: Input,
        /// metric=path of a forecast CSV (week_start,p50,...); repeatable.
        #[arg(long = "forecast")]
        forecasts: Vec<String>,
    },
    /// Full run into a fresh run directory.
    Pipeline,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn emit(out: &Option<PathBuf>, file: &str, contents: &str) -> Result<()> {
    match out {
        Some(dir) => {
            let p = dir.join(file);
            write_atomic(&p, contents)?;
            eprintln!("wrote {}", p.display());
            Ok(())
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn load(input: &Input, cfg: &PipelineConfig) -> Result<Dataset> {
    let opts = IngestOptions { fill_gaps: input.fill_gaps || cfg.ingest.fill_gaps, ..cfg.ingest.clone() };
    ingest(&input.input, &opts)
}

fn load_metric(m: &MetricInput, cfg: &PipelineConfig) -> Result<WeeklySeries> {
    Ok(load(&m.input, cfg)?.metric(&m.metric)?.clone())
}

fn parse_order(s: &str) -> Result<SarimaOrder> {
    let nums = s
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::BadParameter(format!("order `{s}` must be comma-separated integers")))?;
    let o = match nums[..] {
        [p, d, q] => SarimaOrder::new(p, d, q),
        [p, d, q, sp, sd, sq, s] => SarimaOrder::new(p, d, q).seasonal(sp, sd, sq, s),
        _ => return Err(Error::BadParameter(format!("order `{s}` needs 3 or 7 numbers"))),
    };
    o.validate()?;
    Ok(o)
}

fn flag_names(m: &ModelArgs) -> Vec<String> {
    let mut v = vec!["peak".to_string()];
    if m.covid {
        v.push("covid".into());
    }
    v
}

fn model_series(y: &WeeklySeries, log: bool) -> Result<WeeklySeries> {
    if log {
        series::log_transform(y)
    } else {
        Ok(y.clone())
    }
}

/// Calendar flags, minus those constant over the training weeks after differencing.
fn regressors(y: &WeeklySeries, m: &ModelArgs, cfg: &PipelineConfig, train_len: usize, order: Option<&SarimaOrder>) -> Result<Vec<FlagSeries>> {
    let all = calendar_flags(&flag_names(m), y.start_week(), y.len(), &cfg.scenario)?;
    let (keep, dropped) = usable_flags(all, train_len, order);
    for name in dropped {
        eprintln!("note: dropping regressor `{name}`, constant over the training data");
    }
    Ok(keep)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone();
    match cli.command {
        Command::Ingest(input) => {
            let d = load(&input, &cfg)?;
            let mut text = format!("weeks: {} ({} .. {})\n", d.len(), d.metrics[0].start_week(), d.metrics[0].end_week());
            for m in &d.metrics {
                text.push_str(&format!("metric: {}\n", m.name()));
            }
            for f in &d.flags {
                text.push_str(&format!("flag: {}\n", f.name()));
            }
            emit(&out, "ingest.txt", &text)
        }
        Command::Generate { years, no_covid } => {
            let mut params = cfg.synthetic.params.clone();
            if no_covid {
                params.covid = None;
            }
            let ms = generate_synthetic(years, cfg.seed, &params)?;
            let d = Dataset { metrics: ms.series().to_vec(), flags: Vec::new() };
            emit(&out, "synthetic.csv", &d.to_csv())
        }
        Command::Fit { data, order, model } => {
            let y = load_metric(&data, &cfg)?;
            let order = parse_order(&order)?;
            let ym = model_series(&y, !model.no_log)?;
            let x = regressors(&y, &model, &cfg, y.len(), Some(&order))?;
            let m = sarimax::fit_with(&ym, &x, order, &FitOptions { seed: cfg.seed, ..FitOptions::default() })?;
            emit(&out, "model.json", &(m.to_json()? + "\n"))
        }
        Command::Autofit { data, model, stepwise } => {
            let y = load_metric(&data, &cfg)?;
            let ym = model_series(&y, !model.no_log)?;
            let x = regressors(&y, &model, &cfg, y.len(), None)?;
            let mut space = cfg.search.clone();
            space.seed = cfg.seed;
            if stepwise {
                space.mode = SearchMode::Stepwise;
            }
            let r = select_order(&ym, &x, &space)?;
            eprintln!("selected {} (AICc {:.3}, {} candidates)", r.best.order, r.best_score, r.n_evaluated);
            if out.is_some() {
                emit(&out, "order_search.csv", &r.leaderboard_csv()?)?;
            }
            emit(&out, "model.json", &(r.best.to_json()? + "\n"))
        }
        Command::Forecast { data, model, horizon } => {
            let y = load_metric(&data, &cfg)?;
            let text = std::fs::read_to_string(&model).map_err(|e| Error::io(&model, e))?;
            let m = FittedSarimax::from_json(&text)?;
            let horizon = horizon.unwrap_or(cfg.scenario.horizon_weeks);
            let ym = model_series(&y, m.transform == Transform::Log)?;
            let all = calendar_flags(&m.exog_names, y.start_week(), y.len() + horizon, &cfg.scenario)?;
            let hist = all.iter().map(|f| f.slice(0, y.len())).collect::<Result<Vec<_>>>()?;
            let fut = all.iter().map(|f| f.slice(y.len(), y.len() + horizon)).collect::<Result<Vec<_>>>()?;
            let fd = sarimax::forecast(&m, &ym, &hist, &fut, horizon)?;
            let mut csv = String::from("week_start,p50,p90\n");
            for h in 1..=horizon {
                csv.push_str(&format!("{},{},{}\n", fd.week(h), sarimax::quantile(&fd, h, 0.5)?, sarimax::quantile(&fd, h, 0.9)?));
            }
            emit(&out, "forecast.csv", &csv)
        }
        Command::Peaks { data, window, k, sd } => {
            let y = load_metric(&data, &cfg)?;
            let mut pc = cfg.peaks;
            pc.window_n = window.unwrap_or(pc.window_n);
            pc.k = k.unwrap_or(pc.k);
            if let Some(v) = sd {
                pc.sd_variant = match v {
                    SdArg::WindowValues => SdVariant::WindowValues,
                    SdArg::RollingAverage => SdVariant::RollingAverage,
                };
            }
            let scan = scan_peaks(&y, &pc)?;
            eprintln!("{} weeks flagged", scan.n_flagged());
            emit(&out, "peaks.csv", &scan_csv(&y, &scan))
        }
        Command::Regimes { data, ar_order, growth } => {
            let y = load_metric(&data, &cfg)?;
            let mode = match growth {
                Some(Growth::Weekly) => GrowthMode::Weekly,
                Some(Growth::Yoy) => GrowthMode::Yoy,
                None => cfg.regimes.growth,
            };
            let g = to_growth(&y, mode)?;
            let opts = MsarOptions { max_iter: cfg.regimes.max_iter, restarts: cfg.regimes.restarts, seed: cfg.seed, ..MsarOptions::default() };
            let fit = fit_msar_with(&g, ar_order.unwrap_or(cfg.regimes.ar_order), &opts)?;
            for s in regime_report(&fit, cfg.regimes.threshold)? {
                eprintln!("covid regime {} .. {}", s.first_week, s.last_week);
            }
            let mut csv = String::from("week_start,filtered_covid_prob,smoothed_covid_prob\n");
            for (i, p) in fit.smoothed_probs.iter().enumerate() {
                csv.push_str(&format!("{},{},{}\n", fit.start_week + chrono::Duration::weeks(i as i64), fit.filtered_probs[i][1], p[1]));
            }
            emit(&out, "regimes.csv", &csv)
        }
        Command::Keywords { corpus, seeds, embeddings, baseline, topics, iterations } => {
            let c = Corpus::read(&corpus)?;
            let mut kc = cfg.keywords;
            kc.lda.seed = cfg.seed;
            if let Some(k) = topics {
                kc.lda.k = k;
                kc.lda.alpha = 50.0 / k as f64;
            }
            kc.lda.iterations = iterations.unwrap_or(kc.lda.iterations);
            let m = fit_lda(&c, &kc.lda)?;
            let tags = match (seeds, embeddings) {
                (Some(s), Some(e)) => Some((SeedTags::read(&s)?, EmbeddingTable::read(&e)?)),
                _ => None,
            };
            let base = baseline.as_deref().map(Corpus::read).transpose()?;
            let rows = keyword_report(&c, &m, &kc, tags.as_ref().map(|(s, e)| (s, e)), base.as_ref())?;
            emit(&out, "keywords.csv", &keyword_csv(&rows))
        }
        Command::Backtest { data, order, model } => {
            let y = load_metric(&data, &cfg)?;
            let plan = cfg.backtest;
            let tail = plan.n_folds * plan.step_weeks + plan.horizon_weeks;
            let bp = weekcast::eval::BacktestPlan {
                initial_train_weeks: plan.initial_train_weeks.unwrap_or(y.len().saturating_sub(tail)),
                step_weeks: plan.step_weeks,
                horizon_weeks: plan.horizon_weeks,
                n_folds: plan.n_folds,
            };
            let mut specs: Vec<ModelSpec> = BaselineMethod::default_set().into_iter().map(|method| ModelSpec::Baseline { method }).collect();
            specs.push(ModelSpec::TrailingYoy);
            let mut flags = Vec::new();
            if let Some(o) = order {
                let order = parse_order(&o)?;
                specs.push(ModelSpec::Sarimax { order, log: !model.no_log });
                flags = regressors(&y, &model, &cfg, bp.initial_train_weeks, Some(&order))?;
            }
            let reports = specs.iter().map(|s| backtest(&y, &flags, s, &bp)).collect::<Result<Vec<BacktestReport>>>()?;
            let mut csv = String::from("model,mean_mape,mean_rmse,mean_pinball50,mean_pinball90\n");
            for r in &reports {
                csv.push_str(&format!("{},{},{},{},{}\n", r.model, r.mean_mape, r.mean_rmse, r.mean_pinball50, r.mean_pinball90));
            }
            if out.is_some() {
                let folds: String = reports.iter().enumerate().map(|(i, r)| {
                    let body = r.to_csv();
                    if i == 0 { body } else { body.split_once('\n').map_or(String::new(), |x| x.1.to_string()) }
                }).collect();
                emit(&out, "backtest_folds.csv", &folds)?;
            }
            emit(&out, "backtest.csv", &csv)
        }
        Command::Report { input, forecasts } => {
            let d = load(&input, &cfg)?;
            let fc = forecasts.iter().map(|spec| read_forecast(spec)).collect::<Result<Vec<_>>>()?;
            let table = emit_summary(&d.metrics, &fc, &cfg.summary)?;
            emit(&out, "summary.csv", &table.to_csv())
        }
        Command::Pipeline => {
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let dir = run_pipeline(&cfg)?;
            println!("{}", dir.display());
            Ok(())
        }
    }
}

/// `metric=path` to a CSV with week_start and p50 columns.
fn read_forecast(spec: &str) -> Result<WeeklySeries> {
    let (metric, path) = spec
        .split_once('=')
        .ok_or_else(|| Error::BadParameter(format!("--forecast expects metric=path, got `{spec}`")))?;
    let opts = IngestOptions { metric_columns: vec!["p50".into()], ..IngestOptions::default() };
    let d = ingest(Path::new(path), &opts)?;
    let s = &d.metrics[0];
    WeeklySeries::new(metric, s.start_week(), s.values().to_vec())
}
