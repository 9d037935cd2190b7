use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::intervals::Method;
use crate::model::fmt_f64;
use crate::{Error, Result};

/// Running coverage / width statistics of one tracked slot.
#[derive(Debug, Clone, Default)]
pub(crate) struct Accumulator {
    total: usize,
    covered: usize,
    failures: usize,
    pathological: usize,
    widths: usize,
    mean: f64,
    m2: f64,
    infinite: bool,
}

impl Accumulator {
    pub fn push(&mut self, lower: f64, upper: f64, theta: f64) {
        self.total += 1;
        if lower <= theta && theta <= upper {
            self.covered += 1;
        }
        if lower > upper {
            self.pathological += 1;
        }
        let w = upper - lower;
        if w.is_infinite() {
            self.infinite = true;
            return;
        }
        self.widths += 1;
        let delta = w - self.mean;
        self.mean += delta / self.widths as f64;
        self.m2 += delta * (w - self.mean);
    }

    /// A failed replication counts as not covering.
    pub fn push_failure(&mut self) {
        self.total += 1;
        self.failures += 1;
    }

    pub fn row(
        &self,
        bin: usize,
        method: Method,
        constraints: String,
        prior: String,
    ) -> CoverageRow {
        let m = self.total as f64;
        let coverage = self.covered as f64 / m;
        let (mean_width, width_se) = if self.infinite {
            (f64::INFINITY, f64::NAN)
        } else if self.widths == 0 {
            (f64::NAN, f64::NAN)
        } else if self.widths == 1 {
            (self.mean, 0.0)
        } else {
            let n = self.widths as f64;
            (self.mean, (self.m2 / (n - 1.0)).sqrt() / n.sqrt())
        };
        CoverageRow {
            bin,
            method,
            constraints,
            prior,
            coverage,
            coverage_se: (coverage * (1.0 - coverage) / m).sqrt(),
            mean_width,
            width_se,
            pathological_count: self.pathological,
            failure_count: self.failures,
            replications: self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub bin: usize,
    pub method: Method,
    pub constraints: String,
    /// Prior label (PO only).
    pub prior: String,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_width: f64,
    pub width_se: f64,
    pub pathological_count: usize,
    pub failure_count: usize,
    pub replications: usize,
}

/// Fixed-width minimax bracket `[ω(2z_{1−α}), ω(2z_{1−α/2})]` for one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxRow {
    pub bin: usize,
    pub constraints: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub name: String,
    pub alpha: f64,
    pub config: serde_json::Value,
    pub wide_edges: Vec<f64>,
    pub theta: Vec<f64>,
    pub rows: Vec<CoverageRow>,
    pub minimax: Vec<MinimaxRow>,
    /// SHA-256 of the CSV body.
    pub sha256: String,
}

pub const CSV_HEADER: &str = "bin,method,constraints,coverage,coverage_se,mean_width,width_se,pathological_count,failure_count,prior,replications";
pub const MINIMAX_HEADER: &str = "bin,constraints,lower,upper";

impl CoverageReport {
    pub fn new(
        config: &ExperimentConfig,
        wide_edges: Vec<f64>,
        theta: Vec<f64>,
        rows: Vec<CoverageRow>,
        minimax: Vec<MinimaxRow>,
    ) -> Self {
        let mut r = CoverageReport {
            name: config.name.clone(),
            alpha: config.alpha,
            config: serde_json::to_value(config).expect("config serializes"),
            wide_edges,
            theta,
            rows,
            minimax,
            sha256: String::new(),
        };
        r.sha256 = hex::encode(Sha256::digest(r.csv_body().as_bytes()));
        r
    }

    fn csv_body(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.bin,
                r.method,
                r.constraints,
                fmt_f64(r.coverage),
                fmt_f64(r.coverage_se),
                fmt_f64(r.mean_width),
                fmt_f64(r.width_se),
                r.pathological_count,
                r.failure_count,
                r.prior,
                r.replications
            );
        }
        s
    }

    /// CSV with the study name, config snapshot and content hash as
    /// leading `#` comments.
    pub fn to_csv(&self) -> String {
        format!(
            "# study: {}\n# config: {}\n# sha256: {}\n{}",
            self.name,
            self.config,
            self.sha256,
            self.csv_body()
        )
    }

    pub fn minimax_csv(&self) -> String {
        let mut s = format!("# study: {}\n{MINIMAX_HEADER}\n", self.name);
        for r in &self.minimax {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.bin,
                r.constraints,
                fmt_f64(r.lower),
                fmt_f64(r.upper)
            );
        }
        s
    }

    /// Wide-bin edges and true functional values.
    pub fn truth_csv(&self) -> String {
        let mut s = String::from("bin,lower_edge,upper_edge,theta\n");
        for (j, t) in self.theta.iter().enumerate() {
            let _ = writeln!(
                s,
                "{j},{},{},{}",
                fmt_f64(self.wide_edges[j]),
                fmt_f64(self.wide_edges[j + 1]),
                fmt_f64(*t)
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&JsonReport::from(self))?)
    }

    /// Rows for one (method, constraint setup, prior) triple, by bin.
    pub fn select(&self, method: Method, constraints: &str, prior: &str) -> Vec<&CoverageRow> {
        let mut rows: Vec<&CoverageRow> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.constraints == constraints && r.prior == prior)
            .collect();
        rows.sort_by_key(|r| r.bin);
        rows
    }

    pub fn minimax_for(&self, constraints: &str) -> Vec<&MinimaxRow> {
        self.minimax
            .iter()
            .filter(|r| r.constraints == constraints)
            .collect()
    }

    /// Parses the rows of a CSV written by [`CoverageReport::to_csv`] and
    /// checks the embedded hash.
    pub fn verify_csv(text: &str) -> Result<Vec<CoverageRow>> {
        let mut hash = None;
        let mut body = String::new();
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# sha256: ") {
                hash = Some(h.to_string());
            } else if !line.starts_with('#') {
                body.push_str(line);
                body.push('\n');
            }
        }
        let expected = hash.ok_or_else(|| Error::Parse("report has no sha256 line".into()))?;
        if hex::encode(Sha256::digest(body.as_bytes())) != expected {
            return Err(Error::Parse(
                "report content does not match its sha256".into(),
            ));
        }
        let mut lines = body.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Parse("unexpected report header".into()));
        }
        lines
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 11 {
                    return Err(Error::Parse(format!(
                        "expected 11 fields, got {}: `{l}`",
                        f.len()
                    )));
                }
                let int = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
                };
                let num = crate::model::parse_f64;
                Ok(CoverageRow {
                    bin: int(f[0])?,
                    method: f[1].parse()?,
                    constraints: f[2].to_string(),
                    coverage: num(f[3])?,
                    coverage_se: num(f[4])?,
                    mean_width: num(f[5])?,
                    width_se: num(f[6])?,
                    pathological_count: int(f[7])?,
                    failure_count: int(f[8])?,
                    prior: f[9].to_string(),
                    replications: int(f[10])?,
                })
            })
            .collect()
    }
}

/// JSON mirror with non-finite numbers written as strings.
#[derive(Serialize)]
struct JsonReport<'a> {
    name: &'a str,
    alpha: f64,
    sha256: &'a str,
    config: &'a serde_json::Value,
    wide_edges: &'a [f64],
    theta: &'a [f64],
    rows: Vec<serde_json::Value>,
    minimax: Vec<serde_json::Value>,
}

fn num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::json!(fmt_f64(x))
    }
}

impl<'a> From<&'a CoverageReport> for JsonReport<'a> {
    fn from(r: &'a CoverageReport) -> Self {
        JsonReport {
            name: &r.name,
            alpha: r.alpha,
            sha256: &r.sha256,
            config: &r.config,
            wide_edges: &r.wide_edges,
            theta: &r.theta,
            rows: r
                .rows
                .iter()
                .map(|row| {
                    serde_json::json!({
                        "bin": row.bin,
                        "method": row.method,
                        "constraints": row.constraints,
                        "prior": row.prior,
                        "coverage": num(row.coverage),
                        "coverage_se": num(row.coverage_se),
                        "mean_width": num(row.mean_width),
                        "width_se": num(row.width_se),
                        "pathological_count": row.pathological_count,
                        "failure_count": row.failure_count,
                        "replications": row.replications,
                    })
                })
                .collect(),
            minimax: r
                .minimax
                .iter()
                .map(|m| serde_json::json!({"bin": m.bin, "constraints": m.constraints, "lower": num(m.lower), "upper": num(m.upper)}))
                .collect(),
        }
    }
}
