use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::config::{InitMode, PipelineConfig};
use super::{io_err, CliError};
use crate::model::{resolve_backbone, HeadSpec, PretrainTag, ResizeMode};
use crate::stats::pearson_r;
use crate::train::{ProtocolResult, TrainConfig};

pub const BUILTIN_TOP1: &str = include_str!("../../data/backbone_top1.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct Top1Entry {
    pub backbone: String,
    pub pretrain_tag: PretrainTag,
    pub top1: f64,
    pub source: String,
}

pub fn read_top1_table(text: &str) -> Result<Vec<Top1Entry>, CliError> {
    let bad = |e: String| CliError::Config(format!("top-1 table: {e}"));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| row.get(i).unwrap_or("").trim();
        out.push(Top1Entry {
            backbone: f(0).to_string(),
            pretrain_tag: f(1).parse().map_err(bad)?,
            top1: f(2).parse().map_err(|e: std::num::ParseFloatError| bad(format!("{}: {e}", f(2))))?,
            source: f(3).to_string(),
        });
    }
    Ok(out)
}

/// One run ledger, flattened for tabulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub name: String,
    pub backbone: String,
    pub pretrain_tag: PretrainTag,
    pub variant: String,
    pub metric: &'static str,
    pub config: TrainConfig,
    pub result: ProtocolResult,
}

fn variant(config: &TrainConfig, init: Option<InitMode>) -> String {
    let m = &config.model;
    let mut v = match m.head {
        HeadSpec::PatchHead { .. } => return "patch".into(),
        HeadSpec::TwoViewHead => "two-view".to_string(),
        HeadSpec::WholeImageHead => match init {
            Some(InitMode::FromImagenet) => "DC".into(),
            _ => "PBC".into(),
        },
    };
    match m.resize_mode {
        ResizeMode::Fixed { .. } => v.push_str("-FRC"),
        ResizeMode::Learned { .. } => v.push_str("-LRC"),
        ResizeMode::None => {}
    }
    v
}

pub fn load_ledger(dir: &Path) -> Result<LedgerRow, CliError> {
    let bad = |reason: String| CliError::BadLedger { path: dir.display().to_string(), reason };
    let read = |name: &str| -> Result<serde_json::Value, CliError> {
        let p = dir.join(name);
        let text = std::fs::read_to_string(&p).map_err(|e| bad(format!("{name}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| bad(format!("{name}: {e}")))
    };
    let cfg_json = read("config.json")?;
    let config: TrainConfig = serde_json::from_value(cfg_json.get("config").cloned().unwrap_or_default())
        .map_err(|e| bad(format!("config.json: {e}")))?;
    let result: ProtocolResult =
        serde_json::from_value(read("protocol.json")?).map_err(|e| bad(format!("protocol.json: {e}")))?;
    let init = std::fs::read_to_string(dir.join("pipeline.toml"))
        .ok()
        .and_then(|t| PipelineConfig::from_toml_str(&t, &[]).ok())
        .and_then(|p| p.init.mode);
    let (entry, alias_tag) = resolve_backbone(&config.model.backbone)?;
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
    Ok(LedgerRow {
        name,
        backbone: entry.name.to_string(),
        pretrain_tag: alias_tag.unwrap_or(config.model.pretrain_tag),
        variant: variant(&config, init),
        metric: crate::train::metric_name(config.objective),
        config,
        result,
    })
}

#[derive(Debug)]
pub struct ReportOutcome {
    pub rows: Vec<LedgerRow>,
    pub table_text: String,
    pub table_csv: String,
    /// Pearson r between backbone top-1 accuracy and best test metric.
    pub pearson_r: Option<f64>,
    pub plot_path: Option<PathBuf>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn results_csv(rows: &[LedgerRow]) -> String {
    let mut s = String::from(
        "ledger,backbone,pretrain_tag,variant,input_size,metric,rounds,test_mean,test_std,best_round,best_test,best_test_se,best_test_tta\n",
    );
    for r in rows {
        let p = &r.result;
        let std = if p.std_defined { format!("{:.4}", p.test_std) } else { String::new() };
        let (h, w) = r.config.model.input_size;
        let _ = writeln!(
            s,
            "{},{},{},{},{h}x{w},{},{},{:.4},{std},{},{:.4},{},{}",
            r.name,
            r.backbone,
            r.pretrain_tag,
            r.variant,
            r.metric,
            p.per_round.len(),
            p.test_mean,
            p.best_round,
            p.best_test,
            opt(p.best_test_se),
            opt(p.best_test_tta)
        );
    }
    s
}

fn results_text(rows: &[LedgerRow]) -> String {
    let header = ["Model", "Variant", "Input", "Test mean ± std", "Best test ± SE", "Best test (TTA)"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            let p = &r.result;
            let (h, w) = r.config.model.input_size;
            let mean = if p.std_defined {
                format!("{:.4} ± {:.4}", p.test_mean, p.test_std)
            } else {
                format!("{:.4}", p.test_mean)
            };
            let best = match p.best_test_se {
                Some(se) => format!("{:.4} ± {se:.4}", p.best_test),
                None => format!("{:.4}", p.best_test),
            };
            [
                format!("{}-{}", r.backbone, r.pretrain_tag.short()),
                r.variant.clone(),
                format!("{h}x{w}"),
                mean,
                best,
                p.best_test_tta.map(|t| format!("{t:.4}")).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        let mut l = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if i < 3 {
                l.push_str(c);
                l.push_str(&" ".repeat(pad));
            } else {
                l.push_str(&" ".repeat(pad));
                l.push_str(c);
            }
            l.push_str("  ");
        }
        l.trim_end().to_string() + "\n"
    };
    let mut s = line(&header);
    s.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    s.push('\n');
    for row in &body {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        s.push_str(&line(&cells));
    }
    s
}

struct Point {
    label: String,
    top1: f64,
    metric: f64,
}

fn scatter_svg(path: &Path, points: &[Point], r: f64, metric: &str) -> Result<(), CliError> {
    let err = |e: String| CliError::Plot(e);
    let (x0, x1) = points.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.top1), b.max(p.top1)));
    let (y0, y1) = points.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.metric), b.max(p.metric)));
    let pad = |lo: f64, hi: f64| {
        let m = ((hi - lo) * 0.1).max(1e-3);
        (lo - m, hi + m)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);

    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("ImageNet top-1 vs best test {metric} (Pearson r = {r:.3})"), ("sans-serif", 20))
        .margin(20)
        .x_label_area_size(45)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("ImageNet top-1 accuracy (%)")
        .y_desc(format!("best test {metric}"))
        .draw()
        .map_err(|e| err(e.to_string()))?;

    // least-squares fit
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.top1).sum::<f64>() / n;
    let my = points.iter().map(|p| p.metric).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.top1 - mx) * (p.metric - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.top1 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    chart
        .draw_series(LineSeries::new([x0, x1].map(|x| (x, my + slope * (x - mx))), RED.stroke_width(1)))
        .map_err(|e| err(e.to_string()))?;
    chart
        .draw_series(points.iter().map(|p| Circle::new((p.top1, p.metric), 4, BLUE.filled())))
        .map_err(|e| err(e.to_string()))?;
    chart
        .draw_series(points.iter().map(|p| Text::new(p.label.clone(), (p.top1, p.metric), ("sans-serif", 12))))
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))?;
    Ok(())
}

/// Writes `results.csv`, `results.txt` and, when at least three ledgers have
/// a known backbone accuracy, `correlation.csv` and `correlation.svg`.
pub fn cmd_report(ledgers: &[PathBuf], top1: Option<&Path>, out: &Path) -> Result<ReportOutcome, CliError> {
    if ledgers.is_empty() {
        return Err(CliError::EmptyLedgerSet);
    }
    let rows = ledgers.iter().map(|d| load_ledger(d)).collect::<Result<Vec<_>, _>>()?;
    let table = match top1 {
        Some(p) => read_top1_table(&std::fs::read_to_string(p).map_err(io_err(p))?)?,
        None => read_top1_table(BUILTIN_TOP1)?,
    };
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let table_csv = results_csv(&rows);
    let table_text = results_text(&rows);
    for (name, body) in [("results.csv", &table_csv), ("results.txt", &table_text)] {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(io_err(&p))?;
    }

    let points: Vec<Point> = rows
        .iter()
        .filter_map(|r| {
            let e = table.iter().find(|e| e.backbone == r.backbone && e.pretrain_tag == r.pretrain_tag)?;
            Some(Point { label: r.name.clone(), top1: e.top1, metric: r.result.best_test })
        })
        .collect();
    let mut pearson = None;
    let mut plot_path = None;
    if points.len() >= 3 {
        let xs: Vec<f64> = points.iter().map(|p| p.top1).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.metric).collect();
        match pearson_r(&xs, &ys) {
            Ok(r) => {
                let mut csv = String::from("ledger,top1,best_test\n");
                for p in &points {
                    let _ = writeln!(csv, "{},{:.3},{:.4}", p.label, p.top1, p.metric);
                }
                let _ = writeln!(csv, "# pearson_r,{r:.4}");
                let cp = out.join("correlation.csv");
                std::fs::write(&cp, csv).map_err(io_err(&cp))?;
                let sp = out.join("correlation.svg");
                scatter_svg(&sp, &points, r, rows[0].metric)?;
                pearson = Some(r);
                plot_path = Some(sp);
            }
            Err(e) => log::warn!("no correlation plot: {e}"),
        }
    } else {
        log::info!("correlation plot needs three ledgers with known top-1 accuracy, have {}", points.len());
    }
    Ok(ReportOutcome { rows, table_text, table_csv, pearson_r: pearson, plot_path })
}
