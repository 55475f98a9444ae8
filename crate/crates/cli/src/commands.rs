//! One function per pipeline stage. Each reads and writes only the files it
//! is given.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use busflux_core::aggregation::{
    hourly_counts, minute_counts, read_hourly_counts_csv, write_hourly_counts_csv, write_minute_counts_csv, DateRange,
};
use busflux_core::cleaning::{clean, read_segments_csv, write_segments_csv, CleaningConfig, CleaningReport};
use busflux_core::features::{
    fit_transform, join, read_joined_csv, read_matrix_csv, write_joined_csv, write_matrix_csv, CampusCalendar,
    FeatureMatrix, FeatureMeta, JoinReport, SplitSpec,
};
use busflux_core::ingest::{parse_frame_csv, FrameParse, RowError};
use busflux_core::models::{
    self, compare, evaluate, gbt_fit, ComparisonReport, GbtConfig, ModelFile, ModelKind, ModelParams, ModelScore,
    TrainConfig,
};
use busflux_core::synth::{write_scenario, Scenario, ScenarioConfig};
use busflux_core::weather::{hourly_lookup, parse_weather, WeatherFormat};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestBuilder;
use crate::plot::{bar_chart, line_chart, Series};
use crate::CliError;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(busflux_core::Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Core(busflux_core::Error::Format(format!("{}: {e}", path.display()))))
}

fn report_row_errors(what: &Path, errors: &[RowError]) {
    if errors.is_empty() {
        return;
    }
    warn!("{}: skipped {} malformed rows", what.display(), errors.len());
    for e in errors.iter().take(10) {
        warn!("  line {}: {}", e.line, e.message);
    }
}

pub fn synth(cfg: &ScenarioConfig, out_dir: &Path, anonymize: bool, m: &mut ManifestBuilder) -> Result<Scenario, CliError> {
    let scenario = m.time("synth", || Scenario::generate(cfg))?;
    let files = m.time("synth_write", || write_scenario(&scenario, out_dir, anonymize))?;
    for p in [&files.frames, &files.weather, &files.truth, &files.hourly] {
        m.output(p);
    }
    info!("synth: {} devices, {} frames", scenario.devices.len(), scenario.frame_count());
    Ok(scenario)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CleanOutput {
    pub report: CleaningReport,
    pub parse_errors: usize,
    pub first_parse_errors: Vec<RowError>,
}

pub fn clean_cmd(
    frames: &Path,
    cfg: &CleaningConfig,
    out_segments: &Path,
    out_report: Option<&Path>,
    m: &mut ManifestBuilder,
) -> Result<CleanOutput, CliError> {
    m.input(frames);
    let empty = std::fs::metadata(frames).map_err(|e| CliError::io(frames, e))?.len() == 0;
    let parsed = if empty {
        FrameParse::default()
    } else {
        m.time("parse_frames", || parse_frame_csv(open(frames)?).map_err(CliError::from))?
    };
    report_row_errors(frames, &parsed.errors);
    let (segments, report) = m.time("clean", || clean(parsed.records, cfg));
    if report.randomized_check_skipped {
        warn!("frames carry digests only; the randomized-MAC filter was skipped");
    }
    let mut w = create(out_segments)?;
    write_segments_csv(&mut w, &segments)?;
    finish(w, out_segments)?;
    m.output(out_segments);
    let out = CleanOutput {
        report,
        parse_errors: parsed.errors.len(),
        first_parse_errors: parsed.errors.into_iter().take(100).collect(),
    };
    if let Some(p) = out_report {
        write_json(p, &out)?;
        m.output(p);
    }
    Ok(out)
}

pub fn aggregate_cmd(
    segments_path: &Path,
    range: Option<DateRange>,
    stops: &[String],
    out_hourly: &Path,
    out_minutes: Option<&Path>,
    m: &mut ManifestBuilder,
) -> Result<usize, CliError> {
    m.input(segments_path);
    let segments = read_segments_csv(open(segments_path)?)?;
    let minutes = m.time("minute_counts", || minute_counts(&segments));
    let range = match range {
        Some(r) => Some(r),
        None => {
            let first = segments.iter().map(|s| s.start.date()).min();
            let last = segments.iter().map(|s| s.end.date()).max();
            first.zip(last).map(|(a, b)| DateRange { start: a, end: b })
        }
    };
    let hourly = match &range {
        Some(r) => m.time("hourly_counts", || hourly_counts(&minutes, r, stops)),
        None => {
            warn!("no segments and no date range; writing empty hourly counts");
            Vec::new()
        }
    };
    let mut w = create(out_hourly)?;
    write_hourly_counts_csv(&mut w, &hourly)?;
    finish(w, out_hourly)?;
    m.output(out_hourly);
    if let Some(p) = out_minutes {
        let mut w = create(p)?;
        write_minute_counts_csv(&mut w, &minutes)?;
        finish(w, p)?;
        m.output(p);
    }
    Ok(hourly.len())
}

pub fn join_cmd(
    counts: &Path,
    weather: &Path,
    cal: &CampusCalendar,
    out: &Path,
    out_report: Option<&Path>,
    m: &mut ManifestBuilder,
) -> Result<JoinReport, CliError> {
    m.input(counts);
    m.input(weather);
    let hourly = read_hourly_counts_csv(open(counts)?)?;
    let wx = parse_weather(open(weather)?, WeatherFormat::from_path(weather))?;
    report_row_errors(weather, &wx.errors);
    if wx.duplicate_dt > 0 {
        warn!("{}: {} duplicate timestamps, kept the first of each", weather.display(), wx.duplicate_dt);
    }
    let lookup = hourly_lookup(&wx.observations);
    let (rows, report) = m.time("join", || join(&hourly, &lookup, cal));
    if report.dropped_no_weather > 0 {
        warn!("{} hourly rows had no weather and were dropped", report.dropped_no_weather);
    }
    let mut w = create(out)?;
    write_joined_csv(&mut w, &rows)?;
    finish(w, out)?;
    m.output(out);
    if let Some(p) = out_report {
        write_json(p, &report)?;
        m.output(p);
    }
    Ok(report)
}

/// Paths inside a featurized directory.
pub struct FeatureDir {
    pub meta: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

impl FeatureDir {
    pub fn new(dir: &Path) -> Self {
        FeatureDir {
            meta: dir.join("features.json"),
            train: dir.join("train.csv"),
            val: dir.join("val.csv"),
            test: dir.join("test.csv"),
        }
    }

    pub fn load_meta(&self) -> Result<FeatureMeta, CliError> {
        read_json(&self.meta)
    }

    pub fn load(&self, path: &Path, meta: &FeatureMeta) -> Result<FeatureMatrix, CliError> {
        Ok(read_matrix_csv(open(path)?, &meta.encoder.columns)?)
    }
}

pub fn featurize_cmd(joined: &Path, split: &SplitSpec, out_dir: &Path, m: &mut ManifestBuilder) -> Result<FeatureMeta, CliError> {
    m.input(joined);
    let rows = read_joined_csv(open(joined)?)?;
    let f = m.time("featurize", || fit_transform(&rows, split))?;
    let dir = FeatureDir::new(out_dir);
    for (path, mat) in [(&dir.train, &f.train), (&dir.val, &f.val), (&dir.test, &f.test)] {
        let mut w = create(path)?;
        write_matrix_csv(&mut w, mat)?;
        finish(w, path)?;
        m.output(path);
    }
    if !f.encoder.dropped_constant.is_empty() {
        info!("dropped constant features: {:?}", f.encoder.dropped_constant);
    }
    let meta = FeatureMeta {
        encoder: f.encoder,
        split: split.clone(),
        rows: BTreeMap::from([
            ("train".to_string(), f.train.n_rows()),
            ("val".to_string(), f.val.n_rows()),
            ("test".to_string(), f.test.n_rows()),
        ]),
    };
    write_json(&dir.meta, &meta)?;
    m.output(&dir.meta);
    Ok(meta)
}

pub fn train_cmd(
    kind: ModelKind,
    features: &Path,
    cfg: &TrainConfig,
    out: &Path,
    history_out: Option<&Path>,
    m: &mut ManifestBuilder,
) -> Result<ModelFile, CliError> {
    let dir = FeatureDir::new(features);
    m.input(&dir.meta);
    m.input(&dir.train);
    m.input(&dir.val);
    let meta = dir.load_meta()?;
    let train = dir.load(&dir.train, &meta)?;
    let val = dir.load(&dir.val, &meta)?;
    let trained = m.time(&format!("train_{kind}"), || models::train(kind, &train, &val, cfg))?;
    if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(out, trained.file.to_json()? + "\n").map_err(|e| CliError::io(out, e))?;
    m.output(out);
    if let (Some(h), Some(p)) = (&trained.history, history_out) {
        std::fs::write(p, h.to_csv()).map_err(|e| CliError::io(p, e))?;
        m.output(p);
    }
    Ok(trained.file)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluatedModel {
    pub name: String,
    pub kind: ModelKind,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub test_rows: usize,
    pub models: Vec<EvaluatedModel>,
    pub comparison: ComparisonReport,
}

pub fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(ModelFile::from_json(&text)?)
}

pub fn evaluate_cmd(
    model_paths: &[PathBuf],
    test: &Path,
    out: &Path,
    predictions_out: Option<&Path>,
    m: &mut ManifestBuilder,
) -> Result<EvaluationReport, CliError> {
    m.input(test);
    let mut entries = Vec::new();
    let mut preds: Vec<(String, Vec<f64>)> = Vec::new();
    let mut test_rows = 0;
    let mut keys = Vec::new();
    let mut target = Vec::new();
    for p in model_paths {
        m.input(p);
        let model = load_model(p)?;
        let mat = read_matrix_csv(open(test)?, &model.columns)?;
        test_rows = mat.n_rows();
        keys.clone_from(&mat.keys);
        target.clone_from(&mat.target);
        let e = m.time("evaluate", || evaluate(&model, &mat))?;
        let kind = model.kind();
        let mut name = kind.to_string();
        if entries.iter().any(|x: &EvaluatedModel| x.name == name) {
            name = p.file_stem().map_or(name, |s| s.to_string_lossy().into_owned());
        }
        entries.push(EvaluatedModel {
            name: name.clone(),
            kind,
            mse: e.mse,
            mae: e.mae,
        });
        preds.push((name, e.predictions));
    }
    let scores: Vec<ModelScore> = entries
        .iter()
        .map(|e| ModelScore {
            name: e.name.clone(),
            mse: e.mse,
            mae: e.mae,
        })
        .collect();
    let report = EvaluationReport {
        test_rows,
        models: entries,
        comparison: compare(&scores),
    };
    write_json(out, &report)?;
    m.output(out);
    if let Some(p) = predictions_out {
        let mut w = create(p)?;
        let names: Vec<&str> = preds.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(w, "bus_stop,hour_utc,count,{}", names.join(",")).map_err(|e| CliError::io(p, e))?;
        for (i, k) in keys.iter().enumerate() {
            let cells: Vec<String> = preds.iter().map(|(_, v)| v[i].to_string()).collect();
            writeln!(w, "{},{},{},{}", k.stop, k.hour, target[i], cells.join(",")).map_err(|e| CliError::io(p, e))?;
        }
        finish(w, p)?;
        m.output(p);
    }
    for s in &report.comparison.ranking {
        info!("{:>5}  mse {:.4}  mae {:.4}", s.name, s.mse, s.mae);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub rank: usize,
    pub feature: String,
    pub importance: f64,
}

/// Ranked GBT importances, from a saved model or by fitting on `features/train.csv`.
pub fn importance_cmd(
    model: Option<&Path>,
    features: Option<&Path>,
    gbt: &GbtConfig,
    out: &Path,
    m: &mut ManifestBuilder,
) -> Result<Vec<ImportanceRow>, CliError> {
    let (names, ensemble) = match (model, features) {
        (Some(p), _) => {
            m.input(p);
            let file = load_model(p)?;
            let names: Vec<String> = file.columns.iter().map(|c| c.name.clone()).collect();
            match file.model {
                ModelParams::Gbt(g) => (names, g),
                other => {
                    return Err(CliError::Domain(format!(
                        "{} holds a {} model; importance needs a gbt model",
                        p.display(),
                        other.kind()
                    )))
                }
            }
        }
        (None, Some(dir)) => {
            let dir = FeatureDir::new(dir);
            m.input(&dir.meta);
            m.input(&dir.train);
            let meta = dir.load_meta()?;
            let train = dir.load(&dir.train, &meta)?;
            let g = m.time("gbt_fit", || gbt_fit(&train, gbt));
            (train.column_names(), g)
        }
        (None, None) => return Err(CliError::Usage("importance needs --model or --features".into())),
    };
    let rows: Vec<ImportanceRow> = ensemble
        .ranking()
        .into_iter()
        .enumerate()
        .map(|(r, j)| ImportanceRow {
            rank: r + 1,
            feature: names[j].clone(),
            importance: ensemble.importance[j],
        })
        .collect();
    let mut w = create(out)?;
    writeln!(w, "rank,feature,importance").map_err(|e| CliError::io(out, e))?;
    for r in &rows {
        writeln!(w, "{},{},{}", r.rank, r.feature, r.importance).map_err(|e| CliError::io(out, e))?;
    }
    finish(w, out)?;
    m.output(out);
    Ok(rows)
}

pub enum PlotInput<'a> {
    History(&'a Path),
    Counts(&'a Path),
    MseReport(&'a Path),
}

fn schema(path: &Path, what: &str) -> CliError {
    CliError::Schema(format!("{} is not a {what}", path.display()))
}

fn read_csv_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>, CliError> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let found: Vec<String> = rdr
        .headers()
        .map_err(|_| schema(path, "CSV table"))?
        .iter()
        .map(String::from)
        .collect();
    if found != header {
        return Err(schema(path, &format!("CSV with header {}", header.join(","))));
    }
    rdr.records()
        .map(|r| {
            r.map(|r| r.iter().map(String::from).collect())
                .map_err(|e| CliError::Core(busflux_core::Error::Format(format!("{}: {e}", path.display()))))
        })
        .collect()
}

fn num(path: &Path, s: &str) -> Result<f64, CliError> {
    s.parse().map_err(|_| schema(path, &format!("numeric table (bad value {s:?})")))
}

/// Writes the SVG to `out` and, optionally, the plotted series as CSV.
pub fn plot_cmd(input: PlotInput<'_>, out: &Path, csv_out: Option<&Path>, m: &mut ManifestBuilder) -> Result<(), CliError> {
    let mut csv_text = String::new();
    let svg = match input {
        PlotInput::History(p) => {
            m.input(p);
            let rows = read_csv_table(p, &["epoch", "train_mse", "val_mse"])?;
            let mut train = Vec::new();
            let mut val = Vec::new();
            csv_text.push_str("series,x,y\n");
            for r in &rows {
                let e = num(p, &r[0])?;
                train.push((e, num(p, &r[1])?));
                val.push((e, num(p, &r[2])?));
            }
            for (name, pts) in [("train", &train), ("val", &val)] {
                for (x, y) in pts.iter() {
                    csv_text.push_str(&format!("{name},{x},{y}\n"));
                }
            }
            let series = [
                Series {
                    name: "train".into(),
                    points: train,
                },
                Series {
                    name: "val".into(),
                    points: val,
                },
            ];
            line_chart("Training and validation MSE", "epoch", "MSE", &series)
        }
        PlotInput::Counts(p) => {
            m.input(p);
            let rows = read_csv_table(p, &["bus_stop", "hour_utc", "count"])?;
            let mut by_stop: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            let mut origin = None;
            csv_text.push_str("series,x,y\n");
            for r in &rows {
                let hour: busflux_core::time::Timestamp = r[1].parse().map_err(|_| schema(p, "hourly counts table"))?;
                let o = *origin.get_or_insert(hour.0);
                let x = (hour.0 - o) as f64 / 3600.0;
                let y = num(p, &r[2])?;
                csv_text.push_str(&format!("{},{x},{y}\n", r[0]));
                by_stop.entry(r[0].clone()).or_default().push((x, y));
            }
            let series: Vec<Series> = by_stop.into_iter().map(|(name, points)| Series { name, points }).collect();
            line_chart("Waiting passengers per stop", "hours since start", "passengers", &series)
        }
        PlotInput::MseReport(p) => {
            m.input(p);
            let v: serde_json::Value = read_json(p).map_err(|_| schema(p, "JSON evaluation report"))?;
            let ranking = v
                .get("comparison")
                .and_then(|c| c.get("ranking"))
                .or_else(|| v.get("ranking"))
                .ok_or_else(|| schema(p, "evaluation report"))?;
            let scores: Vec<ModelScore> =
                serde_json::from_value(ranking.clone()).map_err(|_| schema(p, "evaluation report"))?;
            csv_text.push_str("model,mse\n");
            let bars: Vec<(String, f64)> = scores.iter().map(|s| (s.name.clone(), s.mse)).collect();
            for (n, v) in &bars {
                csv_text.push_str(&format!("{n},{v}\n"));
            }
            bar_chart("Test MSE by model", "MSE", &bars)
        }
    };
    if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(out, svg).map_err(|e| CliError::io(out, e))?;
    m.output(out);
    if let Some(c) = csv_out {
        std::fs::write(c, csv_text).map_err(|e| CliError::io(c, e))?;
        m.output(c);
    }
    Ok(())
}

/// Summary of a full pipeline run.
pub struct PipelineRun {
    pub manifest: PathBuf,
    pub evaluation: EvaluationReport,
    pub cleaning: CleaningReport,
}

/// synth -> clean -> aggregate -> join -> featurize -> train -> evaluate -> importance -> plots.
pub fn pipeline(cfg: &crate::config::RunConfig, out_dir: &Path, m: &mut ManifestBuilder) -> Result<PipelineRun, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let scenario = synth(&cfg.scenario, &out_dir.join("scenario"), false, m)?;
    let p = |name: &str| out_dir.join(name);
    let frames = p("scenario/frames.csv");
    let cleaned = clean_cmd(&frames, &cfg.cleaning, &p("segments.csv"), Some(&p("cleaning_report.json")), m)?;
    let range = cfg.date_range.unwrap_or_else(|| scenario.config.range());
    let mut stops = cfg.stops.clone();
    stops.extend(scenario.config.stops.iter().cloned());
    aggregate_cmd(&p("segments.csv"), Some(range), &stops, &p("hourly.csv"), None, m)?;
    join_cmd(&p("hourly.csv"), &p("scenario/weather.json"), &cfg.calendar, &p("joined.csv"), Some(&p("join_report.json")), m)?;
    featurize_cmd(&p("joined.csv"), &cfg.split, &p("features"), m)?;
    let mut model_paths = Vec::new();
    for kind in &cfg.models {
        let path = p(&format!("models/{kind}.json"));
        let hist = p(&format!("models/{kind}_history.csv"));
        train_cmd(*kind, &p("features"), &cfg.train, &path, Some(&hist), m)?;
        if matches!(kind, ModelKind::Wnn | ModelKind::Dnn) {
            plot_cmd(PlotInput::History(&hist), &p(&format!("plots/{kind}_history.svg")), None, m)?;
        }
        model_paths.push(path);
    }
    let evaluation = evaluate_cmd(&model_paths, &p("features/test.csv"), &p("evaluation.json"), None, m)?;
    if let Some(gbt) = cfg.models.iter().position(|k| *k == ModelKind::Gbt) {
        importance_cmd(Some(&model_paths[gbt]), None, &cfg.train.gbt, &p("importance.csv"), m)?;
    }
    plot_cmd(PlotInput::Counts(&p("hourly.csv")), &p("plots/hourly.svg"), None, m)?;
    if !model_paths.is_empty() {
        plot_cmd(PlotInput::MseReport(&p("evaluation.json")), &p("plots/mse.svg"), None, m)?;
    }
    Ok(PipelineRun {
        manifest: p("manifest.json"),
        evaluation,
        cleaning: cleaned.report,
    })
}
