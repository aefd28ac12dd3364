use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::commands::{read_json, EvaluationReport, OperatingReport, TrainSummary, SUMMARY_FILE};
use super::config::RunConfig;
use super::sweeps::{read_sweep_csv, RowKind, SweepRow};
use crate::error::{Error, Result};

/// A named polyline for [`svg_line_chart`].
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal SVG line chart with axes, min/max tick labels and a legend.
/// Non-finite points are dropped; `log_x` plots ln(x) for x > 0.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let tx = |x: f64| if log_x { x.ln() } else { x };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| y.is_finite() && x.is_finite() && (!log_x || *x > 0.0))
                .map(|&(x, y)| (tx(x), y))
                .collect()
        })
        .collect();
    let all: Vec<(f64, f64)> = pts.iter().flatten().copied().collect();
    let fold = |f: fn(&(f64, f64)) -> f64| {
        let v: Vec<f64> = all.iter().map(f).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() { (0.0, 1.0) } else if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
    };
    let (x0, x1) = fold(|p| p.0);
    let (y0, y1) = fold(|p| p.1);
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let shown = |x: f64| if log_x { x.exp() } else { x };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        t = m,
        b = h - m,
        r = w - m
    );
    let _ = writeln!(s, r#"<text x="{m}" y="{}" text-anchor="middle">{:.3}</text>"#, h - m + 16.0, shown(x0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.3}</text>"#, w - m, h - m + 16.0, shown(x1));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, m - 4.0, h - m, y0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, m - 4.0, m + 4.0, y1);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, (series, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="2"/>"#, d.join(" "));
        for &(x, y) in p {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, w - m - 120.0, escape(&series.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

fn sweep_table(out: &mut String, rows: &[SweepRow], axis: &str, axis_of: impl Fn(&SweepRow) -> String) {
    let _ = writeln!(out, "| {axis} | seeds | base rate | AUPRC ± SE | AUROC ± SE | Acc | best F1 | AUPRC/base | p |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|");
    for r in rows.iter().filter(|r| r.kind == RowKind::Mean) {
        if !r.feasible {
            let _ = writeln!(out, "| {} | 0 | infeasible: {} |||||||", axis_of(r), r.note);
            continue;
        }
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} ± {} | {} ± {} | {} | {} | {} | {} |",
            axis_of(r),
            r.n_seeds,
            fmt(r.base_rate),
            fmt(r.auprc),
            fmt(r.auprc_se),
            fmt(r.auroc),
            fmt(r.auroc_se),
            fmt(r.accuracy),
            fmt(r.best_f1),
            fmt(r.ratio),
            fmt(r.cell_p_value)
        );
    }
    out.push('\n');
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Collect whatever outputs exist under `output_dir` into `report.md`,
/// with SVG charts for the scaling sweep and recall-FA/h curves.
pub fn cmd_report(cfg: &RunConfig, svg: bool) -> Result<PathBuf> {
    let root = &cfg.output_dir;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut out = String::from("# Keyword spotting run report\n\n");
    let _ = writeln!(out, "Config hash `{}`.\n", cfg.hash());
    let mut sections = 0;

    if let Ok(t) = read_json::<TrainSummary>(&root.join("train").join(SUMMARY_FILE)) {
        sections += 1;
        let _ = writeln!(out, "## Training\n");
        let _ = writeln!(
            out,
            "Keywords {:?}, window {:.3} s, test session `{}`, validation `{}`, {} parameters.\n",
            t.keywords, t.task.window_s, t.split.test, t.split.validation, t.n_parameters
        );
        let _ = writeln!(out, "| seed | best epoch | epochs | val AUPRC | seconds |\n|---|---|---|---|---|");
        for r in &t.runs {
            let _ = writeln!(out, "| {} | {} | {} | {} | {:.1} |", r.seed, r.best_epoch, r.epochs_run, fmt(r.best_val_auprc), r.wall_clock_s);
        }
        out.push('\n');
    }

    if let Ok(e) = read_json::<EvaluationReport>(&root.join("evaluate").join("report.json")) {
        sections += 1;
        let _ = writeln!(out, "## Test performance against permutation baselines (τ = {})\n", e.threshold);
        let _ = writeln!(out, "| Metric | Baseline | Model ± SE | % improvement | p-value |\n|---|---|---|---|---|");
        for r in &e.table {
            let pct = r.pct_improvement.map_or("n/a".to_string(), |p| format!("{p:+.1}%"));
            let _ = writeln!(out, "| {} | {} | {} ± {} | {} | {} |", r.metric, fmt(r.baseline), fmt(r.model), fmt(r.se), pct, fmt(r.p_value));
        }
        let _ = writeln!(
            out,
            "\nAUPRC is {:.2}× the permutation null mean and {:.2}× the base rate (seed mean).\n",
            e.auprc_over_null, e.auprc_over_base_rate
        );
    }

    if let Ok(o) = read_json::<OperatingReport>(&root.join("operating_points").join("report.json")) {
        sections += 1;
        let _ = writeln!(out, "## Operating points ({:?} selection)\n", o.mode);
        let _ = writeln!(out, "| Scenario | Quantity | Target | Value ± SE | feasible |\n|---|---|---|---|---|");
        for r in &o.rows {
            let _ = writeln!(out, "| {} | {} | {} | {} ± {} | {} |", r.scenario, r.quantity, r.target, fmt(r.value), fmt(r.se), r.feasible);
        }
        out.push('\n');
        if svg {
            let series: Vec<Series> = o
                .curves
                .iter()
                .map(|(name, c)| Series { name: name.clone(), points: c.iter().map(|p| (p.fa_per_hour, p.recall)).collect() })
                .collect();
            let path = root.join("recall_fa.svg");
            write_file(&path, &svg_line_chart("Recall vs FA/h", "FA/h", "recall", &series, false))?;
            let _ = writeln!(out, "![recall vs FA/h](recall_fa.svg)\n");
        }
    }

    for (name, axis) in [("scaling", "fraction"), ("offsets", "β− / β+"), ("keywords", "keyword")] {
        let Ok(rows) = read_sweep_csv(&root.join("sweeps").join(format!("{name}.csv"))) else { continue };
        sections += 1;
        let _ = writeln!(out, "## Sweep: {name}\n");
        sweep_table(&mut out, &rows, axis, |r| match name {
            "scaling" => r.fraction.map_or(String::new(), |f| f.to_string()),
            "offsets" => format!("{:.2} / {:.2}", r.beta_neg_s.unwrap_or(f64::NAN), r.beta_pos_s.unwrap_or(f64::NAN)),
            _ => r.keyword.clone().unwrap_or_default(),
        });
        if let Ok(v) = read_json::<serde_json::Value>(&root.join("sweeps").join(format!("{name}_summary.json"))) {
            let _ = writeln!(out, "```json\n{}\n```\n", serde_json::to_string_pretty(&v["summary"])?);
        }
        if svg && name == "scaling" {
            let pts = rows
                .iter()
                .filter(|r| r.kind == RowKind::Mean && r.feasible)
                .filter_map(|r| r.fraction.map(|f| (f, r.auprc)))
                .collect();
            let path = root.join("scaling.svg");
            write_file(&path, &svg_line_chart("AUPRC vs training fraction", "fraction (log)", "AUPRC", &[Series { name: "seed mean".into(), points: pts }], true))?;
            let _ = writeln!(out, "![scaling](scaling.svg)\n");
        }
    }

    if sections == 0 {
        return Err(Error::validation(format!("nothing to report under {}", root.display())));
    }
    let path = root.join("report.md");
    write_file(&path, &out)?;
    Ok(path)
}
