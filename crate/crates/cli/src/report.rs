//! Per-run artifacts and the aggregate report: metrics CSV, the
//! comparison table, and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spectral_distill_core::pipeline::experiment::{AblationRow, Spread};
use spectral_distill_core::pipeline::{MetricsReport, TrainLog};

use crate::error::{CliError, Result};
use crate::io::{csv_text, json, num, parse_num, read_csv, read_string, write, write_manifest};

/// Summary of one trained student, stored as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub row: AblationRow,
    pub seed: u64,
    pub config_hash: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub validation: MetricsReport,
    pub test: MetricsReport,
}

impl RunRecord {
    pub fn name(&self) -> String {
        run_name(self.row, self.seed)
    }
}

pub fn run_name(row: AblationRow, seed: u64) -> String {
    format!("{}-seed{seed}", row.as_str())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub split: String,
    pub site: usize,
    pub label: f64,
    pub prediction: f64,
}

pub fn predictions_csv(p: &[Prediction]) -> String {
    let rows: Vec<Vec<String>> = p
        .iter()
        .map(|p| {
            vec![
                p.split.clone(),
                p.site.to_string(),
                num(p.label),
                num(p.prediction),
            ]
        })
        .collect();
    csv_text(&["split", "site", "label", "prediction"], &rows)
}

pub fn parse_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let (_, rows) = read_csv(path)?;
    let at = path.display().to_string();
    rows.iter()
        .map(|r| {
            if r.len() != 4 {
                return Err(CliError::invalid(format!("{at}: expected 4 cells")));
            }
            Ok(Prediction {
                split: r[0].clone(),
                site: r[1]
                    .parse()
                    .map_err(|_| CliError::invalid(format!("{at}: bad site id")))?,
                label: parse_num(&r[2], &at)?,
                prediction: parse_num(&r[3], &at)?,
            })
        })
        .collect()
}

/// Writes one run directory: record, per-stratum metrics, predictions,
/// and the training and plateau logs.
pub fn write_run(
    dir: &Path,
    record: &RunRecord,
    predictions: &[Prediction],
    log: &TrainLog,
) -> Result<()> {
    write(&dir.join("run.json"), json(record))?;
    write(
        &dir.join("metrics.csv"),
        metrics_csv(std::slice::from_ref(record)),
    )?;
    write(&dir.join("predictions.csv"), predictions_csv(predictions))?;
    write(&dir.join("log.csv"), log.to_csv())?;
    write(&dir.join("plateau.csv"), log.plateau_csv())
}

/// A run read back from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub record: RunRecord,
    pub predictions: Vec<Prediction>,
    /// `(epoch, validation MAE)` per logged epoch.
    pub curve: Vec<(usize, f64)>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let record: RunRecord = serde_json::from_str(&read_string(&dir.join("run.json"))?)
        .map_err(|e| CliError::invalid(format!("{}: {e}", dir.join("run.json").display())))?;
    let predictions = parse_predictions(&dir.join("predictions.csv"))?;
    let (header, rows) = read_csv(&dir.join("log.csv"))?;
    let col = header.iter().position(|h| h == "val_mae").ok_or_else(|| {
        CliError::invalid(format!(
            "{}: no val_mae column",
            dir.join("log.csv").display()
        ))
    })?;
    let at = dir.join("log.csv").display().to_string();
    let curve = rows
        .iter()
        .map(|r| {
            let e = r[0]
                .parse()
                .map_err(|_| CliError::invalid(format!("{at}: bad epoch")))?;
            Ok((e, parse_num(&r[col], &at)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedRun {
        record,
        predictions,
        curve,
    })
}

/// Run directories under `dir/runs`, in name order.
pub fn find_runs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::invalid(format!(
            "run directory {} does not exist",
            dir.display()
        )));
    }
    let runs = dir.join("runs");
    if !runs.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&runs).map_err(|e| CliError::io(&runs, e))? {
        let p = entry.map_err(|e| CliError::io(&runs, e))?.path();
        if p.join("run.json").is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub const METRICS_HEADER: [&str; 10] = [
    "run",
    "row",
    "seed",
    "config_hash",
    "split",
    "stratum",
    "count",
    "mae",
    "rmse",
    "r2",
];

/// One line per run, split, and stratum; stratum `all` is the overall line.
pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut rows = Vec::new();
    for r in records {
        for m in [&r.validation, &r.test] {
            let lead = |stratum: String, count: usize| {
                vec![
                    r.name(),
                    r.row.as_str().to_string(),
                    r.seed.to_string(),
                    r.config_hash.clone(),
                    m.split.clone(),
                    stratum,
                    count.to_string(),
                ]
            };
            let total = m.strata.iter().map(|s| s.count).sum();
            let mut all = lead("all".into(), total);
            all.extend([num(m.overall.mae), num(m.overall.rmse), num(m.overall.r2)]);
            rows.push(all);
            for s in &m.strata {
                let mut line = lead(s.stratum.to_string(), s.count);
                line.extend([num(s.mae), num(s.rmse), s.r2.map(num).unwrap_or_default()]);
                rows.push(line);
            }
        }
    }
    csv_text(&METRICS_HEADER, &rows)
}

/// Median and range of each metric over the seeds of one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub row: AblationRow,
    pub config_hash: String,
    pub runs: usize,
    pub mae: Spread,
    pub r2: Spread,
    pub rmse: Spread,
}

pub fn summarize_records(records: &[RunRecord]) -> Vec<RowSummary> {
    AblationRow::ALL
        .iter()
        .filter_map(|&row| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.row == row).collect();
            let first = rs.first()?;
            let col =
                |f: fn(&RunRecord) -> f64| Spread::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some(RowSummary {
                row,
                config_hash: first.config_hash.clone(),
                runs: rs.len(),
                mae: col(|r| r.validation.overall.mae),
                r2: col(|r| r.validation.overall.r2),
                rmse: col(|r| r.validation.overall.rmse),
            })
        })
        .collect()
}

pub fn row_label(row: AblationRow) -> &'static str {
    match row {
        AblationRow::AncillaryOnly => "Ancillary only",
        AblationRow::HsiAncillary => "HSI + ancillary",
        AblationRow::HsiAncillaryKd => "HSI + ancillary + KD",
        AblationRow::HsiOnly => "HSI-only transformer",
    }
}

pub const COMPARISON_HEADER: [&str; 13] = [
    "row",
    "model",
    "runs",
    "config_hash",
    "mae_median",
    "mae_min",
    "mae_max",
    "r2_median",
    "r2_min",
    "r2_max",
    "rmse_median",
    "rmse_min",
    "rmse_max",
];

/// Validation metrics per ablation row: median, then min and max over seeds.
pub fn comparison_csv(summary: &[RowSummary]) -> String {
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            let mut r = vec![
                s.row.as_str().to_string(),
                row_label(s.row).to_string(),
                s.runs.to_string(),
                s.config_hash.clone(),
            ];
            for sp in [s.mae, s.r2, s.rmse] {
                r.extend([num(sp.median), num(sp.min), num(sp.max)]);
            }
            r
        })
        .collect();
    csv_text(&COMPARISON_HEADER, &rows)
}

/// Axis bounds of the predicted-versus-true plot, dS/m.
pub const SALINITY_AXIS: (f64, f64) = (0.0, 90.0);

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    /// Plot area, ticks, and labels. The axis ranges are also recorded as
    /// attributes so they can be checked without rendering.
    fn axes(&self, title: &str, xlabel: &str, ylabel: &str, ticks: usize) -> String {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{title}</text>",
            W / 2.0
        );
        let _ = writeln!(
            s,
            "<g id=\"axes\" data-x-min=\"{}\" data-x-max=\"{}\" data-y-min=\"{}\" data-y-max=\"{}\" stroke=\"black\">",
            self.x.0, self.x.1, self.y.0, self.y.1
        );
        let (x0, x1, y0, y1) = (
            self.px(self.x.0),
            self.px(self.x.1),
            self.py(self.y.0),
            self.py(self.y.1),
        );
        let _ = writeln!(
            s,
            "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\"/>"
        );
        let _ = writeln!(
            s,
            "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\"/>"
        );
        s.push_str("</g>\n<g id=\"ticks\" text-anchor=\"middle\">\n");
        for i in 0..=ticks {
            let t = i as f64 / ticks as f64;
            let (vx, vy) = (
                self.x.0 + t * (self.x.1 - self.x.0),
                self.y.0 + t * (self.y.1 - self.y.0),
            );
            let (px, py) = (self.px(vx), self.py(vy));
            let _ = writeln!(s, "<line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", y0 + 4.0);
            let _ = writeln!(
                s,
                "<text x=\"{px:.2}\" y=\"{:.2}\">{}</text>",
                y0 + 16.0,
                tick_label(vx)
            );
            let _ = writeln!(s, "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0:.2}\" y2=\"{py:.2}\" stroke=\"black\"/>", x0 - 4.0);
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                x0 - 6.0,
                py + 4.0,
                tick_label(vy)
            );
        }
        s.push_str("</g>\n");
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{xlabel}</text>",
            (x0 + x1) / 2.0,
            H - 10.0
        );
        let _ = writeln!(
            s,
            "<text x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{ylabel}</text>",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
        s
    }
}

fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.2}")
    }
}

fn legend(s: &mut String, entries: &[(usize, &str)]) {
    for (k, (color, label)) in entries.iter().enumerate() {
        let y = TOP + 12.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{:.2}\">{label}</text>",
            LEFT + 12.0,
            y - 9.0,
            COLORS[*color % COLORS.len()],
            LEFT + 28.0,
            y
        );
    }
}

fn row_color(row: AblationRow) -> usize {
    AblationRow::ALL.iter().position(|r| *r == row).unwrap_or(0)
}

/// Predicted against measured salinity on the validation split, one color
/// per ablation row, with the identity line.
pub fn scatter_svg(runs: &[LoadedRun]) -> String {
    let f = Frame {
        x: SALINITY_AXIS,
        y: SALINITY_AXIS,
    };
    let mut s = f.axes(
        "Validation: predicted vs measured salinity",
        "measured (dS/m)",
        "predicted (dS/m)",
        6,
    );
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        f.px(0.0),
        f.py(0.0),
        f.px(90.0),
        f.py(90.0)
    );
    let clamp = |v: f64| v.clamp(SALINITY_AXIS.0, SALINITY_AXIS.1);
    for r in runs {
        let c = COLORS[row_color(r.record.row)];
        let _ = writeln!(
            s,
            "<g class=\"points\" data-run=\"{}\" fill=\"{c}\" fill-opacity=\"0.5\">",
            r.record.name()
        );
        for p in r.predictions.iter().filter(|p| p.split == "validation") {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\"/>",
                f.px(clamp(p.label)),
                f.py(clamp(p.prediction))
            );
        }
        s.push_str("</g>\n");
    }
    let mut rows: Vec<AblationRow> = runs.iter().map(|r| r.record.row).collect();
    rows.sort();
    rows.dedup();
    legend(
        &mut s,
        &rows
            .iter()
            .map(|r| (row_color(*r), row_label(*r)))
            .collect::<Vec<_>>(),
    );
    s.push_str("</svg>\n");
    s
}

/// Validation MAE per epoch, one polyline per run.
pub fn loss_svg(runs: &[LoadedRun]) -> String {
    let max_epoch = runs
        .iter()
        .flat_map(|r| r.curve.iter().map(|c| c.0))
        .max()
        .unwrap_or(1)
        .max(2);
    let top = runs
        .iter()
        .flat_map(|r| r.curve.iter().map(|c| c.1))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let f = Frame {
        x: (1.0, max_epoch as f64),
        y: (0.0, nice_ceiling(top)),
    };
    let mut s = f.axes("Validation MAE by epoch", "epoch", "MAE (dS/m)", 5);
    for r in runs {
        let pts: Vec<String> = r
            .curve
            .iter()
            .filter(|c| c.1.is_finite())
            .map(|&(e, v)| format!("{:.2},{:.2}", f.px(e as f64), f.py(v.min(f.y.1))))
            .collect();
        let _ = writeln!(
            s,
            "<polyline data-run=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>",
            r.record.name(),
            COLORS[row_color(r.record.row)],
            pts.join(" ")
        );
    }
    let mut rows: Vec<AblationRow> = runs.iter().map(|r| r.record.row).collect();
    rows.sort();
    rows.dedup();
    legend(
        &mut s,
        &rows
            .iter()
            .map(|r| (row_color(*r), row_label(*r)))
            .collect::<Vec<_>>(),
    );
    s.push_str("</svg>\n");
    s
}

/// Smallest of 1, 2, or 5 times a power of ten at or above `v`.
fn nice_ceiling(v: f64) -> f64 {
    if v.is_nan() || v <= 0.0 {
        return 1.0;
    }
    let p = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * p)
        .find(|c| *c >= v)
        .unwrap_or(10.0 * p)
}

/// Files written by [`report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub runs: usize,
    pub files: Vec<PathBuf>,
}

/// Aggregates the completed runs under `data_dir` into `out_dir`. With no
/// runs the CSV files hold only their headers and no plots are drawn.
pub fn report(data_dir: &Path, out_dir: &Path) -> Result<ReportOutput> {
    let runs = find_runs(data_dir)?
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let mut files = vec![out_dir.join("metrics.csv"), out_dir.join("comparison.csv")];
    write(&files[0], metrics_csv(&records))?;
    write(&files[1], comparison_csv(&summarize_records(&records)))?;
    if !runs.is_empty() {
        files.push(out_dir.join("scatter.svg"));
        files.push(out_dir.join("loss.svg"));
        write(&files[2], scatter_svg(&runs))?;
        write(&files[3], loss_svg(&runs))?;
    }
    write_manifest(out_dir)?;
    files.push(out_dir.join("manifest.txt"));
    Ok(ReportOutput {
        runs: runs.len(),
        files,
    })
}
