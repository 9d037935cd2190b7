//! Command-line front end: `matrix`, `intervals`, `study` and `rules`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical error,
//! 4 I/O error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::ConstraintSetup;
use crate::intervals::{
    minimax_halfwidth_bounds, osb_dual_interval, osb_interval, po_interval, po_rule, ssb_interval,
    DecisionRule, IntervalResult, LsOperator, Method,
};
use crate::model::{fmt_f64, parse_f64, whiten, Covariance, GaussianModel};
use crate::sim::{self, ExperimentConfig, RunOptions, StudyOutput};
use crate::{Error, Result};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "unfold-ci",
    version,
    about = "Confidence intervals for constrained unfolding problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the response matrix of a config and write it out.
    Matrix(CommonArgs),
    /// Compute intervals for one observed data vector.
    Intervals {
        #[command(flatten)]
        common: CommonArgs,
        /// Data file: one `count` or `count,variance` per line.
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `rules.json` from the `rules` subcommand.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Run a coverage / expected-width study.
    Study(CommonArgs),
    /// Precompute PO decision rules and persist them as JSON.
    Rules(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Caps worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        self != Format::Json
    }
    fn json(self) -> bool {
        self != Format::Csv
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Matrix(a) => with_threads(a, || cmd_matrix(a)),
        Command::Intervals {
            common,
            data,
            rules,
        } => with_threads(common, || cmd_intervals(common, data, rules.as_deref())),
        Command::Study(a) => with_threads(a, || cmd_study(a)),
        Command::Rules(a) => with_threads(a, || cmd_rules(a)),
    }
}

fn with_threads<F: FnOnce() -> Result<()> + Send>(args: &CommonArgs, f: F) -> Result<()> {
    match args.threads {
        None => f(),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(f),
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match ExperimentConfig::read(&args.config) {
        Err(Error::Io(e)) => {
            return Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", args.config.display()),
            )))
        }
        other => other?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Files written by one command, hashed for the manifest.
#[derive(Debug, Default)]
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.files.push((
            name.to_string(),
            hex::encode(Sha256::digest(contents.as_bytes())),
        ));
        Ok(())
    }

    fn finish(self, command: &str, args: &CommonArgs, configs: &[ExperimentConfig]) -> Result<()> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_path: args.config.display().to_string(),
            output_dir: self.dir.display().to_string(),
            configs: configs
                .iter()
                .map(|c| serde_json::to_value(c).expect("config serializes"))
                .collect(),
            files: self
                .files
                .into_iter()
                .map(|(path, sha256)| ManifestEntry { path, sha256 })
                .collect(),
        };
        std::fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to replay a run and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: String,
    pub output_dir: String,
    /// Resolved configs (after `--seed` and sweep expansion).
    pub configs: Vec<serde_json::Value>,
    pub files: Vec<ManifestEntry>,
}

fn cmd_matrix(args: &CommonArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let (k, ansatz) = sim::build_matrix(&cfg)?;
    let mut out = Outputs::new(&args.out)?;
    if args.format.csv() {
        out.write("matrix.csv", &k.to_csv())?;
    }
    if args.format.json() {
        out.write("matrix.json", &k.to_json()?)?;
    }
    out.write("ansatz.json", &serde_json::to_string_pretty(&ansatz)?)?;
    let sums = k.column_sums();
    let lo = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "matrix {}x{} ansatz={} column sums in [{lo:.6}, {hi:.6}] rank {}",
        k.nrows(),
        k.ncols(),
        k.ansatz_id,
        k.rank(1e-12)
    );
    out.finish("matrix", args, &[cfg])
}

/// Counts and (optional) variances from a data file.
pub fn read_data(path: &Path) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut y = Vec::new();
    let mut var = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let at = |e: Error| Error::Parse(format!("{}:{}: {e}", path.display(), no + 1));
        match fields.as_slice() {
            [a] => y.push(parse_f64(a).map_err(at)?),
            [a, b] => {
                y.push(parse_f64(a).map_err(at)?);
                var.push(parse_f64(b).map_err(at)?);
            }
            _ => {
                return Err(Error::Parse(format!(
                    "{}:{}: expected `count[,variance]`",
                    path.display(),
                    no + 1
                )))
            }
        }
    }
    if !var.is_empty() && var.len() != y.len() {
        return Err(Error::Parse(format!(
            "{}: variances must be given on every line or none",
            path.display()
        )));
    }
    Ok((y, (!var.is_empty()).then_some(var)))
}

/// Persisted PO rule with the setup it belongs to. The rule acts on counts
/// multiplied elementwise by `whitening`, the `Σ^{-1/2}` it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRule {
    pub constraints: ConstraintSetup,
    pub prior: String,
    pub bin: usize,
    pub whitening: Vec<f64>,
    pub rule: DecisionRule,
}

pub const INTERVAL_HEADER: &str =
    "method,functional,alpha,lower,upper,s2,pathological,constraints,prior,error";

fn interval_row(
    out: &mut String,
    method: Method,
    functional: &str,
    alpha: f64,
    setup: &str,
    prior: &str,
    r: &Result<IntervalResult>,
) {
    let _ = match r {
        Ok(iv) => writeln!(
            out,
            "{},{},{},{},{},{},{},{setup},{prior},",
            iv.method,
            iv.functional,
            fmt_f64(iv.alpha),
            fmt_f64(iv.lower),
            fmt_f64(iv.upper),
            iv.diagnostics.slack_s2.map(fmt_f64).unwrap_or_default(),
            iv.diagnostics.pathological
        ),
        Err(e) => writeln!(
            out,
            "{method},{functional},{},,,,,{setup},{prior},{}",
            fmt_f64(alpha),
            error_tag(e)
        ),
    };
}

/// Short machine-readable tag for a per-row failure.
pub fn error_tag(e: &Error) -> &'static str {
    match e {
        Error::RankDeficient { .. } => "rank_deficient",
        Error::NoFeasibleRule(_) => "no_feasible_rule",
        Error::InfeasibleRegion { .. } => "infeasible_region",
        Error::Solver(_) => "solver_failure",
        Error::Dimension(_) => "dimension_mismatch",
        _ => "error",
    }
}

fn cmd_intervals(args: &CommonArgs, data: &Path, rules_dir: Option<&Path>) -> Result<()> {
    let cfg = load_config(args)?;
    let (k, ansatz) = sim::build_matrix(&cfg)?;
    let (y, var) = read_data(data)?;
    if y.len() != k.nrows() {
        return Err(Error::Config(format!(
            "data has {} entries but the matrix has {} rows",
            y.len(),
            k.nrows()
        )));
    }
    let covariance = var.map_or(Covariance::Identity, Covariance::Diagonal);
    let model = whiten(&GaussianModel::new(
        k.entries.clone(),
        DVector::from_column_slice(&y),
        covariance,
    )?)?;
    let agg = sim::aggregation_for(&cfg.wide_bins, &k.true_grid)?;
    let n = k.ncols();
    let stored: Option<Vec<StoredRule>> = rules_dir
        .map(|d| -> Result<_> {
            Ok(serde_json::from_str(&std::fs::read_to_string(
                d.join("rules.json"),
            )?)?)
        })
        .transpose()?;
    let priors = cfg
        .priors
        .iter()
        .map(|p| sim::prior_without_truth(p, &cfg, &ansatz))
        .collect::<Result<Vec<_>>>()?;
    let settings = cfg.solver_settings();
    let alpha = cfg.alpha;

    let mut csv = String::from(INTERVAL_HEADER);
    csv.push('\n');
    let mut rows = Vec::new();
    let mut record =
        |csv: &mut String, method, h: &str, setup: &str, prior: &str, r: Result<IntervalResult>| {
            interval_row(csv, method, h, alpha, setup, prior, &r);
            rows.push(r.map_err(|e| e.to_string()));
        };
    if cfg.methods.contains(&Method::Ls) {
        for h in &agg.h_vectors {
            let r =
                LsOperator::new(&model.k, h, alpha).and_then(|op| op.interval(model.y.as_slice()));
            record(&mut csv, Method::Ls, &h.label, "none", "", r);
        }
    }
    for &setup in &cfg.constraints {
        let c = setup.build(n, Some(&k.true_grid))?;
        let label = setup.to_string();
        for h in &agg.h_vectors {
            for &m in &cfg.methods {
                let r = match m {
                    Method::Osb => osb_interval(&model, h, &c, alpha, &settings),
                    Method::OsbDual => osb_dual_interval(&model, h, &c, alpha, &settings),
                    Method::Ssb => ssb_interval(&model, h, &c, alpha, &settings),
                    _ => continue,
                };
                record(&mut csv, m, &h.label, &label, "", r);
            }
            if cfg.methods.contains(&Method::Po) {
                for prior in &priors {
                    let bin = agg
                        .h_vectors
                        .iter()
                        .position(|x| x.label == h.label)
                        .expect("label from agg");
                    let r = match &stored {
                        Some(list) => list
                            .iter()
                            .find(|s| {
                                s.constraints == setup && s.prior == prior.label && s.bin == bin
                            })
                            .ok_or_else(|| {
                                Error::Config(format!(
                                    "no stored rule for {label}/{}/bin {bin}",
                                    prior.label
                                ))
                            })
                            .and_then(|s| {
                                if s.whitening.len() != y.len() {
                                    return Err(Error::Dimension(format!(
                                        "stored rule expects {} counts",
                                        s.whitening.len()
                                    )));
                                }
                                let yw: Vec<f64> =
                                    y.iter().zip(&s.whitening).map(|(a, b)| a * b).collect();
                                po_interval(&s.rule, &yw)
                            }),
                        None => po_rule(&model.k, h, &c, prior, alpha, &settings)
                            .and_then(|rule| po_interval(&rule, model.y.as_slice())),
                    };
                    record(&mut csv, Method::Po, &h.label, &label, &prior.label, r);
                }
            }
        }
        if cfg
            .methods
            .iter()
            .any(|m| matches!(m, Method::MinimaxLower | Method::MinimaxUpper))
        {
            for h in &agg.h_vectors {
                let b = minimax_halfwidth_bounds(
                    &model.k,
                    h,
                    &c,
                    alpha,
                    1.0,
                    cfg.minimax_both_signs,
                    &settings,
                )?;
                let _ = writeln!(
                    csv,
                    "MINIMAX_LOWER,{},{},,{},,false,{label},,",
                    h.label,
                    fmt_f64(alpha),
                    fmt_f64(b.lower)
                );
                let _ = writeln!(
                    csv,
                    "MINIMAX_UPPER,{},{},,{},,false,{label},,",
                    h.label,
                    fmt_f64(alpha),
                    fmt_f64(b.upper)
                );
            }
        }
    }
    let mut out = Outputs::new(&args.out)?;
    if args.format.csv() {
        out.write("intervals.csv", &csv)?;
    }
    if args.format.json() {
        out.write("intervals.json", &serde_json::to_string_pretty(&rows)?)?;
    }
    out.finish("intervals", args, &[cfg])?;
    let failed = rows.iter().filter(|r| r.is_err()).count();
    if !rows.is_empty() && failed == rows.len() {
        return Err(Error::Solver(format!("all {failed} interval rows failed")));
    }
    if failed > 0 {
        eprintln!(
            "{failed} of {} interval rows failed; see the error column",
            rows.len()
        );
    }
    Ok(())
}

fn cmd_rules(args: &CommonArgs) -> Result<()> {
    let mut cfg = load_config(args)?;
    if !cfg.methods.contains(&Method::Po) {
        cfg.methods.push(Method::Po);
        cfg.validate()?;
    }
    let mut out = Outputs::new(&args.out)?;
    let mut configs = Vec::new();
    for c in cfg.expand() {
        let study = sim::prepare(&c)?;
        let settings = c.solver_settings();
        let mut stored = Vec::new();
        for (setup, cons) in &study.constraints {
            for prior in &study.priors {
                for (bin, h) in study.aggregation.h_vectors.iter().enumerate() {
                    let rule = po_rule(&study.k_white, h, cons, prior, c.alpha, &settings)?;
                    stored.push(StoredRule {
                        constraints: *setup,
                        prior: prior.label.clone(),
                        bin,
                        whitening: study.whitening.clone(),
                        rule,
                    });
                }
            }
        }
        let name = if cfg.grid.true_bins_sweep.is_some() {
            format!("{}/rules.json", c.name)
        } else {
            "rules.json".into()
        };
        if let Some(parent) = Path::new(&name).parent() {
            std::fs::create_dir_all(out.dir.join(parent))?;
        }
        out.write(&name, &serde_json::to_string_pretty(&stored)?)?;
        eprintln!("{}: {} rules", c.name, stored.len());
        configs.push(c);
    }
    out.finish("rules", args, &configs)
}

fn cmd_study(args: &CommonArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let mut out = Outputs::new(&args.out)?;
    let mut configs = Vec::new();
    for c in cfg.expand() {
        eprintln!("{}: preparing", c.name);
        let study = sim::prepare(&c)?;
        let name = c.name.clone();
        let step = (c.replications / 20).max(1);
        let progress = |done: usize, total: usize| {
            if done % step == 0 || done == total {
                eprintln!("{name}: {done}/{total} replications");
            }
        };
        let result = sim::run_study(
            &study,
            &RunOptions {
                progress: Some(&progress),
            },
        )?;
        write_study(&mut out, &c.name, &study, &result, args.format)?;
        let failures: usize = result.report.rows.iter().map(|r| r.failure_count).sum();
        if failures > 0 {
            eprintln!(
                "{}: {failures} interval failures recorded in failure_count",
                c.name
            );
        }
        configs.push(c);
    }
    out.finish("study", args, &configs)
}

fn write_study(
    out: &mut Outputs,
    name: &str,
    study: &sim::PreparedStudy,
    result: &StudyOutput,
    format: Format,
) -> Result<()> {
    let report = &result.report;
    if format.csv() {
        out.write(&format!("{name}.csv"), &report.to_csv())?;
        out.write(&format!("{name}_truth.csv"), &report.truth_csv())?;
        if !report.minimax.is_empty() {
            out.write(&format!("{name}_minimax.csv"), &report.minimax_csv())?;
        }
        let mut ex = String::from(INTERVAL_HEADER);
        ex.push_str(",bin,truth\n");
        for e in &result.example {
            let mut row = String::new();
            let r = e.result.clone().map_err(Error::Solver);
            let method = r.as_ref().map(|iv| iv.method).unwrap_or(Method::Osb);
            interval_row(
                &mut row,
                method,
                &format!("widebin_{}", e.bin),
                report.alpha,
                &e.constraints,
                &e.prior,
                &r,
            );
            let _ = writeln!(ex, "{},{},{}", row.trim_end(), e.bin, fmt_f64(e.truth));
        }
        out.write(&format!("{name}_example.csv"), &ex)?;
    }
    if format.json() {
        out.write(&format!("{name}.json"), &report.to_json()?)?;
    }
    out.write(
        &format!("{name}_ansatz.json"),
        &serde_json::to_string_pretty(&study.ansatz)?,
    )?;
    if !result.rules.is_empty() {
        out.write(
            &format!("{name}_rules.json"),
            &serde_json::to_string_pretty(&result.rules)?,
        )?;
    }
    Ok(())
}
