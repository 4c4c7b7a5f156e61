use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use kbnet_core::metrics::MetricReport;

use super::eval::{RunSummary, REPORT_JSON, SUMMARY_JSON};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{prepare_out_dir, read_json, write_text};
use crate::plot::line_chart;

pub const TABLE_TXT: &str = "comparison.txt";
pub const TABLE_CSV: &str = "comparison.csv";
pub const FRAMES_PNG: &str = "psnr_vs_frames.png";
pub const LOSS_PNG: &str = "training_loss.png";

#[derive(Debug, Clone)]
pub struct RunRow {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub report: MetricReport,
}

/// Loads evaluation runs, ordered by ablation variant and then label.
pub fn load_runs(runs: &[PathBuf]) -> Result<Vec<RunRow>> {
    if runs.is_empty() {
        return Err(CliError::Validation("no runs given".into()));
    }
    let missing: Vec<String> = runs
        .iter()
        .filter(|r| !r.join(SUMMARY_JSON).is_file() || !r.join(REPORT_JSON).is_file())
        .map(|r| r.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Validation(format!(
            "not evaluation run directories (need {SUMMARY_JSON} and {REPORT_JSON}): {}",
            missing.join(", ")
        )));
    }
    let mut rows = runs
        .iter()
        .map(|dir| {
            Ok(RunRow {
                dir: dir.clone(),
                summary: read_json(&dir.join(SUMMARY_JSON))?,
                report: read_json(&dir.join(REPORT_JSON))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // runs without a variant letter sort after A..E
    rows.sort_by(|a, b| {
        let key = |r: &RunRow| (r.summary.variant.unwrap_or('~'), r.summary.label.clone(), r.dir.clone());
        key(a).cmp(&key(b))
    });
    Ok(rows)
}

/// CSV with one row per run: mean PSNR per frame count, SSIM at the largest count, bicubic PSNR.
pub fn table_csv(rows: &[RunRow]) -> String {
    let counts = frame_counts(rows);
    let mut s = String::from("run,label,variant,step");
    for n in &counts {
        s.push_str(&format!(",psnr_n{n}"));
    }
    s.push_str(",ssim_max_n,bicubic_psnr\n");
    for r in rows {
        let v = r.summary.variant.map(String::from).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{v},{}",
            r.dir.display(),
            r.summary.label,
            r.summary.step
        ));
        for n in &counts {
            match r.report.aggregate_for(*n) {
                Some(a) => s.push_str(&format!(",{:.4}", a.mean_psnr)),
                None => s.push(','),
            }
        }
        let ssim = r.report.aggregate.last().map(|a| a.mean_ssim).unwrap_or(f64::NAN);
        s.push_str(&format!(",{ssim:.5},{:.4}\n", r.summary.baseline_psnr));
    }
    s
}

pub fn table_text(rows: &[RunRow]) -> String {
    let counts = frame_counts(rows);
    let mut s = format!("{:<14}{:>8}", "run", "step");
    for n in &counts {
        s.push_str(&format!("{:>10}", format!("N={n}")));
    }
    s.push_str(&format!("{:>10}{:>10}\n", "SSIM", "bicubic"));
    for r in rows {
        s.push_str(&format!("{:<14}{:>8}", r.summary.label, r.summary.step));
        for n in &counts {
            match r.report.aggregate_for(*n) {
                Some(a) => s.push_str(&format!("{:>10.3}", a.mean_psnr)),
                None => s.push_str(&format!("{:>10}", "-")),
            }
        }
        let ssim = r.report.aggregate.last().map(|a| a.mean_ssim).unwrap_or(f64::NAN);
        s.push_str(&format!("{ssim:>10.4}{:>10.3}\n", r.summary.baseline_psnr));
    }
    s
}

fn frame_counts(rows: &[RunRow]) -> Vec<usize> {
    let set: BTreeSet<usize> = rows
        .iter()
        .flat_map(|r| r.report.aggregate.iter().map(|a| a.n_frames))
        .collect();
    set.into_iter().collect()
}

/// Training SR loss per logged epoch, if the run directory holds a metrics log.
fn loss_curve(dir: &Path) -> Option<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(dir.join(kbnet_model::train::METRICS_FILE)).ok()?;
    let pts = text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some((f.first()?.parse().ok()?, f.get(3)?.parse().ok()?))
        })
        .collect();
    Some(pts)
}

pub fn run(cfg: &ExperimentConfig, runs: &[PathBuf], out: &Path) -> Result<Vec<RunRow>> {
    let rows = load_runs(runs)?;
    prepare_out_dir(out, cfg)?;
    let text = table_text(&rows);
    write_text(&out.join(TABLE_TXT), &text)?;
    write_text(&out.join(TABLE_CSV), &table_csv(&rows))?;
    let curves: Vec<Vec<(f64, f64)>> = rows
        .iter()
        .map(|r| {
            r.report
                .aggregate
                .iter()
                .map(|a| (a.n_frames as f64, a.mean_psnr))
                .collect()
        })
        .collect();
    line_chart(&out.join(FRAMES_PNG), &curves)?;
    let losses: Vec<_> = rows.iter().filter_map(|r| loss_curve(&r.dir)).collect();
    if !losses.is_empty() {
        line_chart(&out.join(LOSS_PNG), &losses)?;
    }
    print!("{text}");
    Ok(rows)
}
