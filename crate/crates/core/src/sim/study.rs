use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, IntensitySpec, PriorSpec, WideBinSpec};
use super::report::{Accumulator, CoverageReport, MinimaxRow};
use super::{
    adversarial_ansatz, aggregation_sqrt_pt, aggregation_uniform, flat_prior, replication_rng,
    sample_counts, AggregationSet,
};
use crate::constraints::{ConstraintSetup, PolyhedralConstraints};
use crate::intervals::{
    minimax_halfwidth_bounds, osb_dual_interval, osb_interval_with_slack, po_interval, po_rule,
    slack, ssb_interval_with_slack, DecisionRule, IntervalResult, LsOperator, Method, Prior,
};
use crate::model::{
    bin_means, response_matrix, whitening_scale, BinGrid, Covariance, GaussianModel,
    IntensityFunction, ModelSettings, ResponseMatrix,
};
use crate::program::SolverSettings;
use crate::{Error, Result};

/// Everything a study needs that does not depend on the replication.
#[derive(Debug, Clone)]
pub struct PreparedStudy {
    pub config: ExperimentConfig,
    pub true_grid: BinGrid,
    pub smeared_grid: BinGrid,
    pub truth: IntensityFunction,
    pub ansatz: IntensityFunction,
    pub lambda_true: Vec<f64>,
    /// Exact smeared means `K_true λ_true`; also the noise variances.
    pub mu: Vec<f64>,
    pub matrix: ResponseMatrix,
    /// `Σ^{-1/2} K` with `Σ = diag(μ)`.
    pub k_white: DMatrix<f64>,
    pub whitening: Vec<f64>,
    pub aggregation: AggregationSet,
    pub theta: Vec<f64>,
    pub constraints: Vec<(ConstraintSetup, PolyhedralConstraints)>,
    pub priors: Vec<Prior>,
}

/// Intensity lookups that need the study context (adversarial fits).
pub(crate) struct Resolver<'a> {
    pub truth: Option<&'a IntensityFunction>,
    pub config: &'a ExperimentConfig,
    pub smeared_grid: &'a BinGrid,
    pub settings: ModelSettings,
}

impl Resolver<'_> {
    pub fn resolve(&self, spec: &IntensitySpec) -> Result<IntensityFunction> {
        match spec {
            IntensitySpec::Preset { preset } => Ok(preset.build()),
            IntensitySpec::Inline(f) => Ok(f.clone()),
            IntensitySpec::File { file } => {
                let text = std::fs::read_to_string(file)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", file.display())))
            }
            IntensitySpec::Adversarial { adversarial } => {
                let truth = self.truth.ok_or_else(|| {
                    Error::Config("the adversarial ansatz needs a `truth` intensity".into())
                })?;
                let fit_ansatz = self.resolve(&adversarial.fit_ansatz)?;
                let d = self.config.grid.domain;
                let fit_grid = BinGrid::uniform(d[0], d[1], adversarial.fit_true_bins)?;
                let kernel = &self.config.kernel;
                let k_true = response_matrix(
                    kernel,
                    truth,
                    "truth",
                    &fit_grid,
                    self.smeared_grid,
                    &self.settings,
                )?;
                let mu = mat_vec(
                    &k_true.entries,
                    &bin_means(truth, &fit_grid, &self.settings)?,
                );
                let y: Vec<f64> = sample_counts(&mu, &mut replication_rng(adversarial.seed, 0))?
                    .into_iter()
                    .map(|c| c as f64)
                    .collect();
                let k_fit = response_matrix(
                    kernel,
                    &fit_ansatz,
                    "fit",
                    &fit_grid,
                    self.smeared_grid,
                    &self.settings,
                )?;
                let lambda = super::nnls(&k_fit.entries, &y)?;
                let peak = lambda
                    .iter()
                    .zip(fit_grid.widths())
                    .map(|(l, w)| l / w)
                    .fold(0.0, f64::max);
                adversarial_ansatz(&k_fit, &y, adversarial.floor_fraction * peak)
            }
        }
    }
}

fn mat_vec(k: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (k * DVector::from_column_slice(x))
        .iter()
        .copied()
        .collect()
}

pub(crate) fn aggregation_for(spec: &WideBinSpec, fine: &BinGrid) -> Result<AggregationSet> {
    match spec {
        WideBinSpec::Identity => aggregation_uniform(fine, fine.len()),
        WideBinSpec::Uniform { count } => aggregation_uniform(fine, *count),
        WideBinSpec::SqrtPt { count, exponent } => aggregation_sqrt_pt(fine, *count, *exponent),
        WideBinSpec::Ranges { ranges } => {
            AggregationSet::from_ranges(fine, ranges.iter().map(|r| (r[0], r[1])).collect())
        }
    }
}

/// Builds matrices, truth, aggregation functionals, constraints and priors.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedStudy> {
    config.validate()?;
    let settings = config.model_settings();
    let true_grid = config.grid.true_grid()?;
    let smeared_grid = config.grid.smeared_grid()?;
    let truth_spec = config
        .truth
        .as_ref()
        .ok_or_else(|| Error::Config("studies need a `truth` intensity".into()))?;
    let base = Resolver {
        truth: None,
        config,
        smeared_grid: &smeared_grid,
        settings,
    };
    let truth = base.resolve(truth_spec)?;
    let resolver = Resolver {
        truth: Some(&truth),
        ..base
    };
    let ansatz = resolver.resolve(&config.ansatz)?;

    let matrix = match &config.matrix_file {
        Some(path) => {
            let k = ResponseMatrix::read(path)?;
            if k.nrows() != smeared_grid.len() || k.ncols() != true_grid.len() {
                return Err(Error::Config(format!(
                    "matrix file is {}×{} but the grid asks for {}×{}",
                    k.nrows(),
                    k.ncols(),
                    smeared_grid.len(),
                    true_grid.len()
                )));
            }
            k
        }
        None => response_matrix(
            &config.kernel,
            &ansatz,
            &config.ansatz.id(),
            &true_grid,
            &smeared_grid,
            &settings,
        )?,
    };
    let lambda_true = bin_means(&truth, &true_grid, &settings)?;
    let k_true = response_matrix(
        &config.kernel,
        &truth,
        "truth",
        &true_grid,
        &smeared_grid,
        &settings,
    )?;
    let mu = mat_vec(&k_true.entries, &lambda_true);
    let whitening = whitening_scale(&mu)?;
    let mut k_white = matrix.entries.clone();
    for (i, s) in whitening.iter().enumerate() {
        k_white.row_mut(i).scale_mut(*s);
    }

    let aggregation = aggregation_for(&config.wide_bins, &true_grid)?;
    let theta = aggregation.apply(&lambda_true);
    let n = true_grid.len();
    let constraints = config
        .constraints
        .iter()
        .map(|&s| Ok((s, s.build(n, Some(&true_grid))?)))
        .collect::<Result<Vec<_>>>()?;
    let priors = config
        .priors
        .iter()
        .map(|p| {
            let mut prior = match p {
                PriorSpec::Flat { .. } => flat_prior(&lambda_true)?,
                PriorSpec::BinMeans { intensity, .. } => Prior::new(
                    bin_means(&resolver.resolve(intensity)?, &true_grid, &settings)?,
                    "",
                )?,
                PriorSpec::Vector { mean, .. } => {
                    if mean.len() != n {
                        return Err(Error::Config(format!(
                            "prior vector has length {} but n = {n}",
                            mean.len()
                        )));
                    }
                    Prior::new(mean.clone(), "")?
                }
            };
            prior.label = p.label();
            Ok(prior)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PreparedStudy {
        config: config.clone(),
        true_grid,
        smeared_grid,
        truth,
        ansatz,
        lambda_true,
        mu,
        matrix,
        k_white,
        whitening,
        aggregation,
        theta,
        constraints,
        priors,
    })
}

/// One (method, constraint setup, prior, wide bin) combination tracked over
/// replications.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Slot {
    pub method: Method,
    pub setup: Option<usize>,
    pub prior: Option<usize>,
    pub bin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Interval { lower: f64, upper: f64 },
    Failed,
}

/// Intervals of the first replication, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleInterval {
    pub bin: usize,
    pub constraints: String,
    pub prior: String,
    pub truth: f64,
    pub result: std::result::Result<IntervalResult, String>,
}

pub struct RunOptions<'a> {
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions { progress: None }
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub report: CoverageReport,
    pub rules: Vec<DecisionRule>,
    pub example: Vec<ExampleInterval>,
    pub example_counts: Vec<u64>,
}

struct Engine<'a> {
    study: &'a PreparedStudy,
    slots: Vec<Slot>,
    ls: Vec<LsOperator>,
    /// Indexed `[setup][prior][bin]`; a numerical failure counts against
    /// every replication of that slot.
    rules: Vec<Vec<Vec<std::result::Result<DecisionRule, Error>>>>,
    settings: SolverSettings,
}

impl Engine<'_> {
    fn setup_label(&self, setup: Option<usize>) -> String {
        setup.map_or_else(
            || "none".to_string(),
            |s| self.study.constraints[s].0.to_string(),
        )
    }

    fn prior_label(&self, prior: Option<usize>) -> String {
        prior.map_or_else(String::new, |p| self.study.priors[p].label.clone())
    }

    /// Results for every slot, in slot order.
    fn replicate(&self, counts: &[u64]) -> Vec<std::result::Result<IntervalResult, Error>> {
        let st = self.study;
        let y = DVector::from_iterator(
            counts.len(),
            counts.iter().zip(&st.whitening).map(|(&c, s)| c as f64 * s),
        );
        let model = GaussianModel {
            k: st.k_white.clone(),
            y,
            covariance: Covariance::Identity,
        };
        let alpha = st.config.alpha;
        let h = &st.aggregation.h_vectors;
        let mut slacks: Vec<Option<std::result::Result<f64, String>>> =
            vec![None; st.constraints.len()];
        let mut out = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            let hb = &h[slot.bin];
            let mut slack_for = |s: usize| -> Result<f64> {
                let entry = slacks[s].get_or_insert_with(|| {
                    slack(&model, &st.constraints[s].1, &self.settings).map_err(|e| e.to_string())
                });
                entry.clone().map_err(Error::Solver)
            };
            let r = match (slot.method, slot.setup) {
                (Method::Ls, _) => self.ls[slot.bin].interval(model.y.as_slice()),
                (Method::Osb, Some(s)) => slack_for(s).and_then(|s2| {
                    osb_interval_with_slack(
                        &model,
                        hb,
                        &st.constraints[s].1,
                        alpha,
                        s2,
                        &self.settings,
                    )
                }),
                (Method::OsbDual, Some(s)) => {
                    osb_dual_interval(&model, hb, &st.constraints[s].1, alpha, &self.settings)
                }
                (Method::Ssb, Some(s)) => slack_for(s).and_then(|s2| {
                    ssb_interval_with_slack(
                        &model,
                        hb,
                        &st.constraints[s].1,
                        alpha,
                        s2,
                        &self.settings,
                    )
                }),
                (Method::Po, Some(s)) => {
                    match &self.rules[s][slot.prior.expect("PO slot has a prior")][slot.bin] {
                        Ok(rule) => po_interval(rule, model.y.as_slice()),
                        Err(e) => Err(Error::Solver(format!("no decision rule: {e}"))),
                    }
                }
                (m, _) => Err(Error::InvalidArgument(format!(
                    "{m} is not a per-replication method"
                ))),
            };
            out.push(r);
        }
        out
    }
}

/// Runs every replication of a prepared study.
pub fn run_study(study: &PreparedStudy, options: &RunOptions<'_>) -> Result<StudyOutput> {
    let cfg = &study.config;
    let settings = cfg.solver_settings();
    let nbins = study.aggregation.len();
    let methods = &cfg.methods;

    let mut slots = Vec::new();
    if methods.contains(&Method::Ls) {
        slots.extend((0..nbins).map(|bin| Slot {
            method: Method::Ls,
            setup: None,
            prior: None,
            bin,
        }));
    }
    for s in 0..study.constraints.len() {
        for &m in &[Method::Osb, Method::OsbDual, Method::Ssb] {
            if methods.contains(&m) {
                slots.extend((0..nbins).map(|bin| Slot {
                    method: m,
                    setup: Some(s),
                    prior: None,
                    bin,
                }));
            }
        }
        if methods.contains(&Method::Po) {
            for p in 0..study.priors.len() {
                slots.extend((0..nbins).map(|bin| Slot {
                    method: Method::Po,
                    setup: Some(s),
                    prior: Some(p),
                    bin,
                }));
            }
        }
    }

    let ls = if methods.contains(&Method::Ls) {
        study
            .aggregation
            .h_vectors
            .iter()
            .map(|h| LsOperator::new(&study.k_white, h, cfg.alpha))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    // Decision rules never see data, so they are fixed before the loop.
    let mut rules = Vec::new();
    if methods.contains(&Method::Po) {
        for (_, c) in &study.constraints {
            let mut per_prior = Vec::new();
            for prior in &study.priors {
                let jobs: Vec<_> = study.aggregation.h_vectors.iter().collect();
                let results: Vec<_> = jobs
                    .par_iter()
                    .map(|h| po_rule(&study.k_white, h, c, prior, cfg.alpha, &settings))
                    .collect();
                let mut r = Vec::with_capacity(results.len());
                for rule in results {
                    match rule {
                        Err(e) if !e.is_numerical() => return Err(e),
                        other => r.push(other),
                    }
                }
                per_prior.push(r);
            }
            rules.push(per_prior);
        }
    }

    let mut minimax = Vec::new();
    let wants_minimax = methods
        .iter()
        .any(|m| matches!(m, Method::MinimaxLower | Method::MinimaxUpper));
    if wants_minimax {
        for (setup, c) in &study.constraints {
            let bounds = study
                .aggregation
                .h_vectors
                .par_iter()
                .map(|h| {
                    minimax_halfwidth_bounds(
                        &study.k_white,
                        h,
                        c,
                        cfg.alpha,
                        1.0,
                        cfg.minimax_both_signs,
                        &settings,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            for (bin, b) in bounds.into_iter().enumerate() {
                minimax.push(MinimaxRow {
                    bin,
                    constraints: setup.to_string(),
                    lower: b.lower,
                    upper: b.upper,
                });
            }
        }
    }

    let engine = Engine {
        study,
        slots,
        ls,
        rules,
        settings,
    };
    let total = cfg.replications;
    let done = AtomicUsize::new(0);
    let per_rep: Vec<(Vec<Outcome>, Option<(Vec<u64>, Vec<ExampleInterval>)>)> = (0..total)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(cfg.seed, rep as u64);
            let counts =
                sample_counts(&study.mu, &mut rng).expect("means are validated non-negative");
            let results = engine.replicate(&counts);
            let outcomes = results
                .iter()
                .map(|r| match r {
                    Ok(iv) => Outcome::Interval {
                        lower: iv.lower,
                        upper: iv.upper,
                    },
                    Err(_) => Outcome::Failed,
                })
                .collect();
            let example = (rep == 0).then(|| {
                let ex = engine
                    .slots
                    .iter()
                    .zip(results)
                    .map(|(slot, r)| ExampleInterval {
                        bin: slot.bin,
                        constraints: engine.setup_label(slot.setup),
                        prior: engine.prior_label(slot.prior),
                        truth: study.theta[slot.bin],
                        result: r.map_err(|e| e.to_string()),
                    })
                    .collect();
                (counts, ex)
            });
            let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
            if let Some(cb) = options.progress {
                cb(finished, total);
            }
            (outcomes, example)
        })
        .collect();

    let mut acc = vec![Accumulator::default(); engine.slots.len()];
    let mut example = Vec::new();
    let mut example_counts = Vec::new();
    for (outcomes, ex) in per_rep {
        for (a, (o, slot)) in acc.iter_mut().zip(outcomes.iter().zip(&engine.slots)) {
            match *o {
                Outcome::Interval { lower, upper } => a.push(lower, upper, study.theta[slot.bin]),
                Outcome::Failed => a.push_failure(),
            }
        }
        if let Some((c, e)) = ex {
            example_counts = c;
            example = e;
        }
    }

    let rows = engine
        .slots
        .iter()
        .zip(&acc)
        .map(|(slot, a)| {
            a.row(
                slot.bin,
                slot.method,
                engine.setup_label(slot.setup),
                engine.prior_label(slot.prior),
            )
        })
        .collect();
    let report = CoverageReport::new(
        cfg,
        study.aggregation.wide_edges.edges().to_vec(),
        study.theta.clone(),
        rows,
        minimax,
    );
    let rules = engine
        .rules
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|r| r.ok())
        .collect();
    Ok(StudyOutput {
        report,
        rules,
        example,
        example_counts,
    })
}

/// Response matrix of a config (its `matrix_file` if given) together with
/// the resolved ansatz. Does not need a truth unless the ansatz is
/// adversarial.
pub fn build_matrix(config: &ExperimentConfig) -> Result<(ResponseMatrix, IntensityFunction)> {
    let settings = config.model_settings();
    let true_grid = config.grid.true_grid()?;
    let smeared_grid = config.grid.smeared_grid()?;
    let base = Resolver {
        truth: None,
        config,
        smeared_grid: &smeared_grid,
        settings,
    };
    let truth = config.truth.as_ref().map(|t| base.resolve(t)).transpose()?;
    let resolver = Resolver {
        truth: truth.as_ref(),
        ..base
    };
    let ansatz = resolver.resolve(&config.ansatz)?;
    let k = match &config.matrix_file {
        Some(path) => ResponseMatrix::read(path)?,
        None => response_matrix(
            &config.kernel,
            &ansatz,
            &config.ansatz.id(),
            &true_grid,
            &smeared_grid,
            &settings,
        )?,
    };
    Ok((k, ansatz))
}

/// Bin means of a prior that does not need the truth; a flat prior uses
/// the ansatz bin means instead.
pub fn prior_without_truth(
    spec: &PriorSpec,
    config: &ExperimentConfig,
    ansatz: &IntensityFunction,
) -> Result<Prior> {
    let settings = config.model_settings();
    let true_grid = config.grid.true_grid()?;
    let smeared_grid = config.grid.smeared_grid()?;
    let resolver = Resolver {
        truth: None,
        config,
        smeared_grid: &smeared_grid,
        settings,
    };
    let mut prior = match spec {
        PriorSpec::Flat { .. } => flat_prior(&bin_means(ansatz, &true_grid, &settings)?)?,
        PriorSpec::BinMeans { intensity, .. } => Prior::new(
            bin_means(&resolver.resolve(intensity)?, &true_grid, &settings)?,
            "",
        )?,
        PriorSpec::Vector { mean, .. } => Prior::new(mean.clone(), "")?,
    };
    prior.label = spec.label();
    Ok(prior)
}
