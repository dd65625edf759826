//! Yield reports and the tables built from them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

/// Tolerance, in money units, for a report's components to sum to its yield.
pub const ADDITIVITY_TOLERANCE: f64 = 0.01;

/// Yield decomposition of one allocation day.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct YieldReport {
    /// Contract revenue net of shortfall penalties.
    pub r_gc: f64,
    pub r_rtb: f64,
    /// Quality-weighted contract value.
    pub q_gc: f64,
    /// `r_gc + r_rtb + q_gc`.
    pub total: f64,
    pub delivered: Vec<u64>,
    pub shortfall: Vec<u64>,
    /// `R / R*` once an oracle value is attached.
    pub ratio: Option<f64>,
}

impl YieldReport {
    pub fn new(r_gc: f64, r_rtb: f64, q_gc: f64, delivered: Vec<u64>, shortfall: Vec<u64>) -> Self {
        YieldReport {
            r_gc,
            r_rtb,
            q_gc,
            total: r_gc + r_rtb + q_gc,
            delivered,
            shortfall,
            ratio: None,
        }
    }

    /// A report carrying printed totals only, e.g. rows copied from a table.
    pub fn from_components(r_gc: f64, r_rtb: f64, q_gc: f64, total: f64) -> Self {
        YieldReport {
            r_gc,
            r_rtb,
            q_gc,
            total,
            delivered: Vec::new(),
            shortfall: Vec::new(),
            ratio: None,
        }
    }

    pub fn with_oracle(mut self, r_star: f64) -> Self {
        self.ratio = Some(self.total / r_star);
        self
    }

    /// `Some(components - total)` when the components miss the total by more
    /// than [`ADDITIVITY_TOLERANCE`].
    pub fn additivity_mismatch(&self) -> Option<f64> {
        let diff = self.r_gc + self.r_rtb + self.q_gc - self.total;
        (libm::fabs(diff) > ADDITIVITY_TOLERANCE).then_some(diff)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ReportError {
    #[error("report for method {method} on scenario {scenario} has no oracle value")]
    MissingOracle { method: String, scenario: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    /// Ratio per method, in [`Summary::methods`] order.
    pub ratios: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdditivityFlag {
    pub method: String,
    pub scenario: String,
    pub mismatch: f64,
}

/// One row per scenario, one column per method, plus per-method averages.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub methods: Vec<String>,
    pub rows: Vec<SummaryRow>,
    /// Unweighted mean of each column's two-decimal ratios.
    pub averages: Vec<Option<f64>>,
    pub flags: Vec<AdditivityFlag>,
}

fn hundredths(x: f64) -> i64 {
    libm::round(x * 100.0) as i64
}

/// Builds the method-by-scenario `R/R*` table.
///
/// Averages are taken over ratios rounded to two decimals, so they agree with
/// a table whose cells are printed at that precision.
pub fn summarize(reports: &[(String, String, YieldReport)]) -> Result<Summary, ReportError> {
    let mut methods: Vec<String> = Vec::new();
    let mut scenarios: Vec<String> = Vec::new();
    let mut flags = Vec::new();
    for (method, scenario, r) in reports {
        if r.ratio.is_none() {
            return Err(ReportError::MissingOracle {
                method: method.clone(),
                scenario: scenario.clone(),
            });
        }
        if !methods.contains(method) {
            methods.push(method.clone());
        }
        if !scenarios.contains(scenario) {
            scenarios.push(scenario.clone());
        }
        if let Some(mismatch) = r.additivity_mismatch() {
            flags.push(AdditivityFlag {
                method: method.clone(),
                scenario: scenario.clone(),
                mismatch,
            });
        }
    }
    let mut rows: Vec<SummaryRow> = scenarios
        .iter()
        .map(|s| SummaryRow {
            scenario: s.clone(),
            ratios: alloc::vec![None; methods.len()],
        })
        .collect();
    for (method, scenario, r) in reports {
        let m = methods.iter().position(|x| x == method).unwrap();
        let s = scenarios.iter().position(|x| x == scenario).unwrap();
        rows[s].ratios[m] = r.ratio;
    }
    let averages = (0..methods.len())
        .map(|m| {
            let cells: Vec<i64> = rows.iter().filter_map(|r| r.ratios[m]).map(hundredths).collect();
            if cells.is_empty() {
                None
            } else {
                Some(cells.iter().sum::<i64>() as f64 / cells.len() as f64 / 100.0)
            }
        })
        .collect();
    Ok(Summary {
        methods,
        rows,
        averages,
        flags,
    })
}

fn cell(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.2}"),
        None => String::from("-"),
    }
}

/// Plain-text rendering of a [`Summary`].
pub fn render_summary(s: &Summary) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "scenario");
    for m in &s.methods {
        let _ = write!(out, " {m:>10}");
    }
    out.push('\n');
    for row in &s.rows {
        let _ = write!(out, "{:<16}", row.scenario);
        for r in &row.ratios {
            let _ = write!(out, " {:>10}", cell(*r));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<16}", "Average");
    for a in &s.averages {
        let _ = write!(out, " {:>10}", cell(*a));
    }
    out.push('\n');
    for f in &s.flags {
        let _ = writeln!(
            out,
            "warning: {} on {} does not add up (components - yield = {:.2})",
            f.method, f.scenario, f.mismatch
        );
    }
    out
}

/// Plain-text yield decomposition, one line per method.
pub fn render_decomposition(rows: &[(String, YieldReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>12} {:>12} {:>12} {:>12}",
        "method", "R_GC", "R_RTB", "Q_GC", "yield"
    );
    for (m, r) in rows {
        let _ = write!(
            out,
            "{:<10} {:>12.2} {:>12.2} {:>12.2} {:>12.2}",
            m, r.r_gc, r.r_rtb, r.q_gc, r.total
        );
        if let Some(d) = r.additivity_mismatch() {
            let _ = write!(out, "  (components off by {d:.2})");
        }
        out.push('\n');
    }
    out
}
