//! Evaluation reports: canonical JSON and markdown tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{mean, sample_std, FoldResult, SignificanceResult};
use super::split::Facet;
use crate::corpus::{BloomLabel, SentimentLabel};
use crate::error::{Error, Result};
use crate::hierarchy::{decode_joint, Mode};

pub const REPORT_VERSION: u32 = 1;

/// Indonesian short forms used when presenting labels to learners.
pub fn indonesian_label(english: &str) -> Option<&'static str> {
    Some(match english {
        "positive" => "positif",
        "neutral" => "netral",
        "negative" => "negatif",
        "remembering" => "rem",
        "understanding" => "und",
        "applying" => "app",
        "analyzing" => "ana",
        "evaluating" => "eva",
        "creating" => "cre",
        _ => return None,
    })
}

pub fn label_map() -> BTreeMap<String, String> {
    let names = SentimentLabel::ALL
        .iter()
        .map(|s| s.name())
        .chain(BloomLabel::ALL.iter().map(|b| b.name()));
    names
        .map(|n| (n.to_string(), indonesian_label(n).expect("all labels mapped").to_string()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelStyle {
    #[default]
    English,
    /// Indonesian short codes.
    Id,
}

impl std::str::FromStr for LabelStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "english" | "en" => Ok(LabelStyle::English),
            "id" | "indonesian" => Ok(LabelStyle::Id),
            other => Err(Error::Config(format!("unknown label style `{other}`"))),
        }
    }
}

impl LabelStyle {
    pub fn render(self, english: &str) -> String {
        match self {
            LabelStyle::English => english.to_string(),
            LabelStyle::Id => indonesian_label(english).unwrap_or(english).to_string(),
        }
    }
}

/// Display name of class `id` of `facet`.
pub fn class_name(facet: Facet, id: usize, style: LabelStyle) -> String {
    let fallback = || format!("#{id}");
    match facet {
        Facet::Sentiment => SentimentLabel::from_code(id).map_or_else(fallback, |s| style.render(s.name())),
        Facet::Bloom => BloomLabel::from_code(id).map_or_else(fallback, |b| style.render(b.name())),
        Facet::Pair => decode_joint(id).map_or_else(
            |_| fallback(),
            |(s, b)| format!("{}/{}", style.render(s.name()), style.render(b.name())),
        ),
    }
}

/// Fold accuracies of one method on one facet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub mode: Mode,
    pub facet: Facet,
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    pub std_dev: f64,
    /// For two-step pair rows: mean over folds of the average of the
    /// sentiment and Bloom accuracies, the alternative single-number summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_mean: Option<f64>,
}

impl MethodResult {
    pub fn new(method: impl Into<String>, mode: Mode, facet: Facet, folds: Vec<FoldResult>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        MethodResult {
            method: method.into(),
            mode,
            facet,
            mean: mean(&acc),
            std_dev: sample_std(&acc),
            folds,
            stage_mean: None,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub facet: Facet,
    pub method_a: String,
    pub method_b: String,
    pub result: SignificanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub seed: u64,
    pub config_digest: String,
    /// Human-readable description of the split protocol.
    pub protocol: String,
    pub methods: Vec<MethodResult>,
    pub significance: Vec<SignificanceEntry>,
    /// English label → Indonesian presentation code.
    pub label_map: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(seed: u64, config_digest: impl Into<String>, protocol: impl Into<String>) -> Self {
        EvalReport {
            report_version: REPORT_VERSION,
            seed,
            config_digest: config_digest.into(),
            protocol: protocol.into(),
            methods: Vec::new(),
            significance: Vec::new(),
            label_map: label_map(),
            notes: Vec::new(),
        }
    }

    /// Checks the internal invariants: means match their folds, fold
    /// accuracies match their confusion matrices.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Data("report has no results to emit".into()));
        }
        if self.report_version != REPORT_VERSION {
            return Err(Error::Config(format!(
                "report_version {} is not supported (expected {REPORT_VERSION})",
                self.report_version
            )));
        }
        for m in &self.methods {
            if m.folds.is_empty() {
                return Err(Error::Data(format!("method {} has no folds", m.method)));
            }
            if (m.mean - mean(&m.accuracies())).abs() > 1e-9 {
                return Err(Error::Data(format!("mean of {} does not match its folds", m.method)));
            }
            for f in &m.folds {
                if (f.accuracy - f.confusion.accuracy()).abs() > 1e-12 {
                    return Err(Error::Data(format!(
                        "fold {} of {} disagrees with its confusion matrix",
                        f.fold_index, m.method
                    )));
                }
            }
        }
        Ok(())
    }

    /// Adds a paired t-test between two methods on the same facet.
    pub fn compare(&mut self, facet: Facet, a: &str, b: &str, alpha: f64) -> Result<()> {
        let find = |name: &str| {
            self.methods
                .iter()
                .find(|m| m.method == name && m.facet == facet)
                .ok_or_else(|| Error::Data(format!("no {} results for {name}", facet.as_str())))
        };
        let result = super::metrics::paired_t_test(&find(a)?.accuracies(), &find(b)?.accuracies(), alpha)?;
        self.significance.push(SignificanceEntry {
            facet,
            method_a: a.to_string(),
            method_b: b.to_string(),
            result,
        });
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Renders a report. JSON is the canonical form; markdown is for reading.
pub fn emit_report(report: &EvalReport, format: ReportFormat, labels: LabelStyle) -> Result<String> {
    report.validate()?;
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Markdown => Ok(markdown(report, labels)),
    }
}

pub fn write_report(path: &Path, report: &EvalReport, format: ReportFormat, labels: LabelStyle) -> Result<()> {
    let text = emit_report(report, format, labels)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn markdown(report: &EvalReport, labels: LabelStyle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Evaluation report\n");
    let _ = writeln!(out, "- protocol: {}", report.protocol);
    let _ = writeln!(out, "- seed: {}", report.seed);
    let _ = writeln!(out, "- config digest: `{}`\n", report.config_digest);

    let mut facets: Vec<Facet> = report.methods.iter().map(|m| m.facet).collect();
    facets.sort_unstable();
    facets.dedup();
    for facet in &facets {
        let rows: Vec<&MethodResult> = report.methods.iter().filter(|m| m.facet == *facet).collect();
        let n_folds = rows.iter().map(|m| m.folds.len()).max().unwrap_or(0);
        let _ = writeln!(out, "## Accuracy per fold ({}, %)\n", facet.as_str());
        let header: Vec<&str> = rows.iter().map(|m| m.method.as_str()).collect();
        let _ = writeln!(out, "| Fold | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(rows.len()));
        for i in 0..n_folds {
            let cells: Vec<String> = rows
                .iter()
                .map(|m| m.folds.get(i).map_or_else(|| "-".to_string(), |f| pct(f.accuracy)))
                .collect();
            let _ = writeln!(out, "| {} | {} |", i + 1, cells.join(" | "));
        }
        let means: Vec<String> = rows.iter().map(|m| pct(m.mean)).collect();
        let _ = writeln!(out, "| Mean | {} |", means.join(" | "));
        let stds: Vec<String> = rows.iter().map(|m| pct(m.std_dev)).collect();
        let _ = writeln!(out, "| Std. Dev. | {} |", stds.join(" | "));
        if rows.iter().any(|m| m.stage_mean.is_some()) {
            let sm: Vec<String> = rows
                .iter()
                .map(|m| m.stage_mean.map_or_else(|| "-".to_string(), pct))
                .collect();
            let _ = writeln!(out, "| Stage mean | {} |", sm.join(" | "));
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Confusion matrices (summed over folds, rows = gold)\n");
    for m in &report.methods {
        let classes = &m.folds[0].confusion.classes;
        let n = classes.len();
        let mut total = vec![vec![0usize; n]; n];
        for f in &m.folds {
            for (r, row) in f.confusion.counts.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    total[r][c] += v;
                }
            }
        }
        let names: Vec<String> = classes.iter().map(|&c| class_name(m.facet, c, labels)).collect();
        let _ = writeln!(out, "### {} ({}, {})\n", m.method, m.mode.as_str(), m.facet.as_str());
        let _ = writeln!(out, "| gold \\ pred | {} |", names.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(n));
        for (name, row) in names.iter().zip(&total) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
        }
        out.push('\n');
    }

    if !report.significance.is_empty() {
        let _ = writeln!(out, "## Significance\n");
        let _ = writeln!(out, "| Facet | A | B | t | df | p | α | significant |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
        for s in &report.significance {
            let r = &s.result;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3} | {} | {:.4} | {} | {} |",
                s.facet.as_str(),
                s.method_a,
                s.method_b,
                r.t_stat,
                r.df,
                r.p_value,
                r.alpha,
                if r.significant { "yes" } else { "no" }
            );
        }
        out.push('\n');
    }
    if !report.notes.is_empty() {
        let _ = writeln!(out, "## Notes\n");
        for n in &report.notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}
