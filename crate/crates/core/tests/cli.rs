use std::path::Path;
use std::process::{Command, Output};

fn weekcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weekcast")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = weekcast(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_fit_forecast_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "--years", "3", "--seed", "4", "--out", path(d)]);
    let data = d.join("synthetic.csv");
    let csv = std::fs::read_to_string(&data).unwrap();
    assert!(csv.starts_with("week_start,"));
    assert_eq!(csv.lines().count(), 1 + 52 * 3 + 1);

    let described = ok(&["ingest", "--input", path(&data)]);
    assert!(described.contains("tpv"), "{described}");

    let m = d.join("m");
    ok(&["fit", "--input", path(&data), "--metric", "tpv", "--order", "1,0,0,0,1,0,52", "--out", path(&m)]);
    let model = m.join("model.json");
    assert!(std::fs::read_to_string(&model).unwrap().contains("\"ar_coeffs\""));

    let fc = ok(&["forecast", "--input", path(&data), "--metric", "tpv", "--model", path(&model), "--horizon", "10"]);
    let mut lines = fc.lines();
    assert!(lines.next().unwrap().starts_with("week_start,p50,p90"));
    assert_eq!(lines.count(), 10);

    let fc_path = d.join("fc.csv");
    std::fs::write(&fc_path, &fc).unwrap();
    let summary = ok(&["report", "--input", path(&data), "--forecast", &format!("tpv={}", path(&fc_path))]);
    assert!(summary.lines().any(|l| l.starts_with("yoy_pct,tpv,")), "{summary}");

    let peaks = ok(&["peaks", "--input", path(&data), "--metric", "new_buyers", "--window", "6", "--k", "2.5"]);
    assert!(peaks.starts_with("week_start,raw,adjusted,flagged"));
    assert_eq!(peaks.lines().count(), csv.lines().count());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");

    let out = weekcast(&["fit", "--metric", "tpv"]);
    assert_eq!(out.status.code(), Some(1));

    let out = weekcast(&["ingest", "--input", path(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "week_start,tpv\n2015-01-06,1\n").unwrap();
    let out = weekcast(&["ingest", "--input", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));

    ok(&["generate", "--years", "2", "--out", path(dir.path())]);
    let data = dir.path().join("synthetic.csv");
    let out = weekcast(&["fit", "--input", path(&data), "--metric", "tpv", "--order", "1,x,0"]);
    assert_eq!(out.status.code(), Some(1));

    assert!(weekcast(&["--help"]).status.success());
}

#[test]
fn keywords_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    let mut text = String::new();
    for i in 0..40 {
        if i % 2 == 0 {
            text.push_str("toilet paper masks gloves sanitizer masks\n");
        } else {
            text.push_str("flour yeast baking bread flour sourdough\n");
        }
    }
    std::fs::write(&corpus, text).unwrap();
    let out = ok(&["keywords", "--corpus", path(&corpus), "--topics", "2", "--iterations", "50"]);
    let header = out.lines().next().unwrap();
    assert!(header.contains("saliency"), "{header}");
    assert!(out.lines().count() > 5);
}

#[test]
fn pipeline_from_documented_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/quick.json");
    let printed = ok(&["pipeline", "--config", cfg, "--out", path(dir.path())]);
    let run = Path::new(printed.trim());
    assert!(run.starts_with(dir.path()));
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("-seed7"));
    let fc = std::fs::read_to_string(run.join("with_covid/tpv/forecast.csv")).unwrap();
    assert_eq!(fc.lines().count(), 27);
    assert!(run.join("without_covid/new_buyers/regimes.csv").exists());
    assert!(run.join("manifest.json").exists());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(weekcast(&["pipeline", "--config", path(&bad)]).status.code(), Some(1));
}
