use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSetup;
use crate::intervals::Method;
use crate::model::{BinGrid, IntensityFunction, ModelSettings, SmearingKernel};
use crate::program::SolverSettings;
use crate::{Error, Result};

/// Named intensity presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    GmmTruth,
    GmmMisspecified,
    JetTruth,
    JetAnsatz,
}

impl Preset {
    pub fn build(self) -> IntensityFunction {
        match self {
            Preset::GmmTruth => super::make_gmm_truth(),
            Preset::GmmMisspecified => super::make_gmm_misspecified(),
            Preset::JetTruth => super::make_jet_truth(),
            Preset::JetAnsatz => super::make_jet_ansatz(),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Preset::GmmTruth => "gmm_truth",
            Preset::GmmMisspecified => "gmm_misspecified",
            Preset::JetTruth => "jet_truth",
            Preset::JetAnsatz => "jet_ansatz",
        }
    }
}

/// How to obtain the adversarial ansatz: NNLS on one realization drawn from
/// the study truth, with `fit_ansatz` providing the fitting matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialSpec {
    pub seed: u64,
    #[serde(default = "default_fit_bins")]
    pub fit_true_bins: usize,
    #[serde(default = "default_fit_ansatz")]
    pub fit_ansatz: Box<IntensitySpec>,
    /// Spline clamp as a fraction of the largest fitted density.
    #[serde(default = "default_floor")]
    pub floor_fraction: f64,
}

fn default_fit_bins() -> usize {
    40
}

fn default_fit_ansatz() -> Box<IntensitySpec> {
    Box::new(IntensitySpec::Preset {
        preset: Preset::GmmMisspecified,
    })
}

fn default_floor() -> f64 {
    1e-6
}

/// An intensity given by preset name, by an adversarial construction, by a
/// JSON file, or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntensitySpec {
    Preset { preset: Preset },
    Adversarial { adversarial: AdversarialSpec },
    File { file: PathBuf },
    Inline(IntensityFunction),
}

impl IntensitySpec {
    pub fn id(&self) -> String {
        match self {
            IntensitySpec::Preset { preset } => preset.id().to_string(),
            IntensitySpec::Adversarial { adversarial } => {
                format!("adversarial_seed{}", adversarial.seed)
            }
            IntensitySpec::File { file } => file.display().to_string(),
            IntensitySpec::Inline(f) => match f {
                IntensityFunction::GaussianMixture(_) => "gaussian_mixture".into(),
                IntensityFunction::TabulatedSpline(_) => "tabulated_spline".into(),
                IntensityFunction::PowerLawSpectrum(_) => "power_law_spectrum".into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub domain: [f64; 2],
    pub true_bins: usize,
    pub smeared_bins: usize,
    /// Runs the study once per entry, overriding `true_bins`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_bins_sweep: Option<Vec<usize>>,
}

impl GridSpec {
    pub fn true_grid(&self) -> Result<BinGrid> {
        BinGrid::uniform(self.domain[0], self.domain[1], self.true_bins)
    }

    pub fn smeared_grid(&self) -> Result<BinGrid> {
        BinGrid::uniform(self.domain[0], self.domain[1], self.smeared_bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WideBinSpec {
    /// One functional per fine bin.
    Identity,
    Uniform {
        count: usize,
    },
    SqrtPt {
        count: usize,
        #[serde(default = "default_exponent")]
        exponent: f64,
    },
    Ranges {
        ranges: Vec<[usize; 2]>,
    },
}

fn default_exponent() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Average true bin count in every bin.
    Flat { label: Option<String> },
    /// Bin means of an intensity on the true grid.
    BinMeans {
        intensity: IntensitySpec,
        label: Option<String>,
    },
    Vector {
        mean: Vec<f64>,
        label: Option<String>,
    },
}

impl PriorSpec {
    pub fn label(&self) -> String {
        match self {
            PriorSpec::Flat { label } => label.clone().unwrap_or_else(|| "flat".into()),
            PriorSpec::BinMeans { intensity, label } => {
                label.clone().unwrap_or_else(|| intensity.id())
            }
            PriorSpec::Vector { label, .. } => label.clone().unwrap_or_else(|| "vector".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_solver_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: u32,
}

fn default_solver_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> u32 {
    200
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: default_solver_tol(),
            max_iter: default_max_iter(),
        }
    }
}

/// Declarative description of a coverage / width study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Data-generating intensity; required for studies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<IntensitySpec>,
    pub ansatz: IntensitySpec,
    pub kernel: SmearingKernel,
    pub grid: GridSpec,
    #[serde(default = "default_wide")]
    pub wide_bins: WideBinSpec,
    pub methods: Vec<Method>,
    #[serde(default = "default_constraints")]
    pub constraints: Vec<ConstraintSetup>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub priors: Vec<PriorSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Precomputed response matrix (CSV or JSON) replacing the quadrature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_file: Option<PathBuf>,
    /// Reserved: whiten with a covariance estimated from the data.
    #[serde(default)]
    pub estimated_covariance: bool,
    /// Solve both signs of the modulus program.
    #[serde(default)]
    pub minimax_both_signs: bool,
    #[serde(default = "default_quad_tol")]
    pub quadrature_tol: f64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_wide() -> WideBinSpec {
    WideBinSpec::Identity
}

fn default_constraints() -> Vec<ConstraintSetup> {
    vec![ConstraintSetup::None]
}

fn default_alpha() -> f64 {
    0.05
}

fn default_replications() -> usize {
    1000
}

fn default_quad_tol() -> f64 {
    1e-10
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config, resolving relative file references against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        fn fix(spec: &mut IntensitySpec, dir: &Path) {
            match spec {
                IntensitySpec::File { file } if file.is_relative() => *file = dir.join(&*file),
                IntensitySpec::Adversarial { adversarial } => fix(&mut adversarial.fit_ansatz, dir),
                _ => {}
            }
        }
        if let Some(t) = self.truth.as_mut() {
            fix(t, dir);
        }
        fix(&mut self.ansatz, dir);
        for p in &mut self.priors {
            if let PriorSpec::BinMeans { intensity, .. } = p {
                fix(intensity, dir);
            }
        }
        if let Some(f) = self.matrix_file.as_mut() {
            if f.is_relative() {
                *f = dir.join(&*f);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.grid.true_bins == 0 || self.grid.smeared_bins == 0 {
            return bad("grid needs at least one true and one smeared bin".into());
        }
        if !(self.grid.domain[0] < self.grid.domain[1]) {
            return bad(format!("domain {:?} is empty", self.grid.domain));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} not in (0, 1)", self.alpha));
        }
        if self.methods.is_empty() {
            return bad("no interval methods requested".into());
        }
        if self.constraints.is_empty() {
            return bad("at least one constraint setup is required (use \"none\")".into());
        }
        if self.methods.contains(&Method::Po) && self.priors.is_empty() {
            return bad("PO requested but no priors configured".into());
        }
        if self.estimated_covariance {
            return bad(
                "estimated covariance is not supported; whitening uses the true means".into(),
            );
        }
        if let Some(sweep) = &self.grid.true_bins_sweep {
            if sweep.is_empty() || sweep.contains(&0) {
                return bad("true_bins_sweep entries must be positive".into());
            }
        }
        if !(self.quadrature_tol > 0.0) || !(self.solver.tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }

    /// One config per entry of `true_bins_sweep` (or just `self`).
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        match &self.grid.true_bins_sweep {
            None => vec![self.clone()],
            Some(sweep) => sweep
                .iter()
                .map(|&n| {
                    let mut c = self.clone();
                    c.grid.true_bins = n;
                    c.grid.true_bins_sweep = None;
                    c.name = format!("{}_n{n}", self.name);
                    c
                })
                .collect(),
        }
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            rel_tol: self.quadrature_tol,
            ..Default::default()
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol_gap_abs: self.solver.tol,
            tol_gap_rel: self.solver.tol,
            tol_feas: self.solver.tol,
            max_iter: self.solver.max_iter,
        }
    }

    /// Compact single-line JSON snapshot, used in report headers.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
