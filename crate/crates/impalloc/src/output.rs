//! CSV and JSON artifacts: traces, learning curves, oracle records and
//! yield reports.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use impalloc_core::baselines::StepTrace;
use impalloc_core::learner::{CurvePoint, LearningCurve, Method};
use impalloc_core::marlenv::StepRecord;
use impalloc_core::oracle::DualSolution;
use impalloc_core::report::YieldReport;
use serde::{Deserialize, Serialize};

fn numbered(prefix: &str, m: usize) -> impl Iterator<Item = String> + '_ {
    (1..=m).map(move |j| format!("{prefix}_{j}"))
}

/// Per-step baseline trace: `step, alpha_j.., delivered_j.., rtb_revenue, fallback`.
pub fn write_baseline_trace<W: Write>(trace: &[StepTrace], m: usize, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string()];
    header.extend(numbered("alpha", m));
    header.extend(numbered("delivered", m));
    header.push("rtb_revenue".into());
    header.push("fallback".into());
    out.write_record(&header)?;
    for t in trace {
        let mut row = vec![t.step.to_string()];
        row.extend(t.alphas.iter().map(f64::to_string));
        row.extend(t.delivered.iter().map(u64::to_string));
        row.push(t.rtb_revenue.to_string());
        row.push(u8::from(t.fallback).to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Episode trace: `step, alpha_j.., action_j.., reward, cumulative_yield`.
pub fn write_episode_trace<W: Write>(trace: &[StepRecord], m: usize, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string()];
    header.extend(numbered("alpha", m));
    header.extend(numbered("action", m));
    header.push("reward".into());
    header.push("cumulative_yield".into());
    out.write_record(&header)?;
    for t in trace {
        let mut row = vec![t.step.to_string()];
        row.extend(t.alphas.iter().map(f64::to_string));
        row.extend(t.actions.iter().map(f64::to_string));
        row.push(t.reward.to_string());
        row.push(t.cumulative_yield.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub const CURVE_HEADER: [&str; 4] = ["method", "elapsed_seconds", "episode", "ratio"];

/// Convergence CSV: one row per evaluation point, then one
/// `# average seconds per episode` comment per method.
pub fn write_curves<W: Write>(curves: &[LearningCurve], mut w: W) -> io::Result<()> {
    {
        let mut out = csv::Writer::from_writer(&mut w);
        out.write_record(CURVE_HEADER)?;
        for c in curves {
            for p in &c.points {
                out.write_record([
                    c.method.name().to_string(),
                    p.seconds.to_string(),
                    p.episode.to_string(),
                    p.ratio.to_string(),
                ])?;
            }
        }
        out.flush()?;
    }
    for c in curves {
        if c.episodes > 0 {
            writeln!(
                w,
                "# average seconds per episode {} {}",
                c.method.name(),
                c.mean_episode_seconds()
            )?;
        }
    }
    Ok(())
}

/// Reads the rows written by [`write_curves`], comments skipped.
pub fn read_curve_rows(text: &str) -> csv::Result<Vec<(Method, CurvePoint)>> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = |what: &str| csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, format!("bad {what}")));
        let method = rec[0].parse::<Method>().map_err(|_| bad("method"))?;
        rows.push((
            method,
            CurvePoint {
                seconds: rec[1].parse().map_err(|_| bad("seconds"))?,
                episode: rec[2].parse().map_err(|_| bad("episode"))?,
                ratio: rec[3].parse().map_err(|_| bad("ratio"))?,
            },
        ));
    }
    Ok(rows)
}

/// What `solve-optimal` saves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub scenario: String,
    pub alpha: Vec<f64>,
    pub r_star: f64,
    pub primal_yield: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl OracleRecord {
    pub fn new(scenario: &str, d: &DualSolution) -> Self {
        OracleRecord {
            scenario: scenario.to_string(),
            alpha: d.alpha.clone(),
            r_star: d.upper_bound,
            primal_yield: d.primal_yield,
            gap: d.gap,
            iterations: d.iterations,
            converged: d.converged,
        }
    }
}

/// A yield report tagged with the method and scenario that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub method: String,
    pub scenario: String,
    pub report: YieldReport,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}
