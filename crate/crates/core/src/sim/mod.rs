//! Simulation harness: Poisson data, intensity presets, the adversarial
//! ansatz, aggregation functionals and the replication engine.

mod config;
pub(crate) use study::aggregation_for;
mod report;
mod study;

pub use config::{
    AdversarialSpec, ExperimentConfig, GridSpec, IntensitySpec, Preset, PriorSpec, WideBinSpec,
};
pub use report::{CoverageReport, CoverageRow, MinimaxRow};
pub use study::{
    build_matrix, prepare, prior_without_truth, run_study, ExampleInterval, PreparedStudy,
    RunOptions, StudyOutput,
};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::intervals::{FunctionalSpec, Prior};
use crate::model::{
    BinGrid, GaussianMixture, IntensityFunction, PowerLawSpectrum, Resolution, ResponseMatrix,
    TabulatedSpline,
};
use crate::{Error, Result};

/// Generator for replication `rep` of a study seeded with `seed`.
///
/// Each replication owns an independent ChaCha stream, so results do not
/// depend on scheduling or thread count.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Independent Poisson draws with means `mu`.
pub fn sample_counts<R: rand::Rng + ?Sized>(mu: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    mu.iter()
        .enumerate()
        .map(|(i, &m)| {
            if !(m >= 0.0) || !m.is_finite() {
                Err(Error::InvalidArgument(format!(
                    "Poisson mean {m} at index {i} must be finite and non-negative"
                )))
            } else if m == 0.0 {
                Ok(0)
            } else {
                let d = Poisson::new(m).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(d.sample(rng) as u64)
            }
        })
        .collect()
}

pub const GMM_DOMAIN: (f64, f64) = (-7.0, 7.0);
pub const GMM_SMEARING_SD: f64 = 0.35;
pub const JET_DOMAIN: (f64, f64) = (400.0, 1000.0);

pub fn make_gmm_truth() -> IntensityFunction {
    IntensityFunction::GaussianMixture(
        GaussianMixture::new(10_000.0, vec![0.3, 0.7], vec![-2.0, 2.0], vec![1.0, 1.0])
            .expect("valid mixture"),
    )
}

/// Shifted means and standard deviations (0.8, 1.2).
pub fn make_gmm_misspecified() -> IntensityFunction {
    IntensityFunction::GaussianMixture(
        GaussianMixture::new(10_000.0, vec![0.3, 0.7], vec![-1.8, 1.8], vec![0.64, 1.44])
            .expect("valid mixture"),
    )
}

/// Inclusive-jet spectrum at √s = 7 TeV with integrated luminosity 5.1.
pub fn make_jet_truth() -> IntensityFunction {
    IntensityFunction::PowerLawSpectrum(PowerLawSpectrum {
        luminosity: 5.1,
        n0: 1e17,
        exponent: 5.0,
        beta: 10.0,
        gamma: 10.0,
        sqrt_s: 7000.0,
    })
}

/// Same family with the alternative (misspecified) shape parameters.
pub fn make_jet_ansatz() -> IntensityFunction {
    IntensityFunction::PowerLawSpectrum(PowerLawSpectrum {
        luminosity: 5.1,
        n0: 5.5e19,
        exponent: 6.0,
        beta: 12.0,
        gamma: 10.0,
        sqrt_s: 7000.0,
    })
}

/// Calorimeter resolution `σ(p_T) = √(N² + S² p_T + C² p_T²)` in GeV.
pub fn jet_resolution() -> Resolution {
    Resolution::Calorimeter {
        noise: 1.0,
        stochastic: 1.0,
        constant: 0.05,
    }
}

/// `argmin_{λ ≥ 0} ‖y − Kλ‖₂` (Lawson–Hanson).
pub fn nnls(k: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = k.shape();
    if y.len() != m {
        return Err(Error::Dimension(format!(
            "y has length {} but K has {m} rows",
            y.len()
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::Dimension("NNLS needs a non-empty matrix".into()));
    }
    let a = Array2::from_shape_fn((m, n), |(i, j)| k[(i, j)]);
    let b = Array1::from_vec(y.to_vec());
    let (x, _) = nnls::nnls(a.view(), b.view());
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

/// Oscillatory ansatz that fits one realization `y` well: NNLS bin counts
/// turned into densities and interpolated by a natural cubic spline through
/// the bin centres. Evaluations are clamped below at `floor` (≥ 0).
pub fn adversarial_ansatz(k: &ResponseMatrix, y: &[f64], floor: f64) -> Result<IntensityFunction> {
    if !(floor >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "spline floor {floor} must be non-negative"
        )));
    }
    let lambda = nnls(&k.entries, y)?;
    let densities: Vec<f64> = lambda
        .iter()
        .zip(k.true_grid.widths())
        .map(|(l, w)| l / w)
        .collect();
    let spline = TabulatedSpline::natural(k.true_grid.centers(), densities, Some(floor))?;
    Ok(IntensityFunction::TabulatedSpline(spline))
}

/// 0/1 functionals partitioning the fine bins into wide bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSet {
    pub h_vectors: Vec<FunctionalSpec>,
    pub wide_edges: BinGrid,
    /// Fine-bin index range `[start, end)` of each wide bin.
    pub ranges: Vec<(usize, usize)>,
}

impl AggregationSet {
    /// Builds the indicator functionals for contiguous `ranges` covering
    /// every fine bin exactly once.
    pub fn from_ranges(fine: &BinGrid, ranges: Vec<(usize, usize)>) -> Result<Self> {
        let n = fine.len();
        let mut next = 0;
        for (k, &(a, b)) in ranges.iter().enumerate() {
            if a != next || b <= a || b > n {
                return Err(Error::InvalidArgument(format!(
                    "wide bin {k} = [{a}, {b}) does not continue a partition of the {n} fine bins"
                )));
            }
            next = b;
        }
        if next != n || ranges.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "wide bins cover {next} of {n} fine bins"
            )));
        }
        let h_vectors = ranges
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                let mut h = vec![0.0; n];
                h[a..b].fill(1.0);
                FunctionalSpec {
                    h,
                    label: format!("widebin_{k}"),
                }
            })
            .collect();
        let mut edges: Vec<f64> = ranges.iter().map(|&(a, _)| fine.edges()[a]).collect();
        edges.push(fine.hi());
        Ok(AggregationSet {
            h_vectors,
            wide_edges: BinGrid::new(edges)?,
            ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.h_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_vectors.is_empty()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|(a, b)| b - a).collect()
    }

    /// `θ_k = h_kᵀλ` for every wide bin.
    pub fn apply(&self, lambda: &[f64]) -> Vec<f64> {
        self.ranges
            .iter()
            .map(|&(a, b)| lambda[a..b].iter().sum())
            .collect()
    }
}

/// Consecutive blocks of `n_fine / n_wide` fine bins.
pub fn aggregation_uniform(fine: &BinGrid, n_wide: usize) -> Result<AggregationSet> {
    let n = fine.len();
    if n_wide == 0 || n % n_wide != 0 {
        return Err(Error::InvalidArgument(format!(
            "{n_wide} wide bins do not evenly divide {n} fine bins"
        )));
    }
    let size = n / n_wide;
    AggregationSet::from_ranges(
        fine,
        (0..n_wide).map(|k| (k * size, (k + 1) * size)).collect(),
    )
}

/// Wide bins whose width grows like `p_T^exponent` from the left edge, each
/// edge snapped to the nearest fine edge. `exponent = 0.5` follows the
/// detector resolution; `0` gives equal widths.
pub fn aggregation_sqrt_pt(fine: &BinGrid, n_wide: usize, exponent: f64) -> Result<AggregationSet> {
    if n_wide == 0 || n_wide > fine.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot form {n_wide} wide bins from {} fine bins",
            fine.len()
        )));
    }
    if fine.lo() <= 0.0 && exponent != 0.0 {
        return Err(Error::InvalidArgument(
            "power-law widths need a positive domain".into(),
        ));
    }
    let (lo, hi) = (fine.lo(), fine.hi());
    let end = |c: f64| {
        let mut e = lo;
        for _ in 0..n_wide {
            e += c * e.powf(exponent);
        }
        e
    };
    // end(c) is increasing in c; bisect for end(c) = hi.
    let (mut a, mut b) = (0.0, (hi - lo) / lo.powf(exponent));
    while end(b) < hi {
        b *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if end(mid) < hi {
            a = mid;
        } else {
            b = mid;
        }
    }
    let c = 0.5 * (a + b);
    let mut raw = vec![lo];
    for k in 0..n_wide {
        let e = raw[k];
        raw.push(e + c * e.powf(exponent));
    }
    let fine_edges = fine.edges();
    let snap = |x: f64| {
        let mut best = 0;
        for (i, &e) in fine_edges.iter().enumerate() {
            if (e - x).abs() < (fine_edges[best] - x).abs() {
                best = i;
            }
        }
        best
    };
    let mut idx: Vec<usize> = raw.iter().map(|&x| snap(x)).collect();
    idx[0] = 0;
    idx[n_wide] = fine.len();
    let ranges: Vec<(usize, usize)> = idx.windows(2).map(|w| (w[0], w[1])).collect();
    if let Some(k) = ranges.iter().position(|(a, b)| b <= a) {
        return Err(Error::InvalidArgument(format!(
            "wide bin {k} contains no fine bins"
        )));
    }
    AggregationSet::from_ranges(fine, ranges)
}

/// Every component set to the average bin count `(λᵀ1)/n`.
pub fn flat_prior(lambda: &[f64]) -> Result<Prior> {
    if lambda.is_empty() {
        return Err(Error::InvalidArgument(
            "flat prior needs at least one bin".into(),
        ));
    }
    let avg = lambda.iter().sum::<f64>() / lambda.len() as f64;
    Prior::new(vec![avg; lambda.len()], "flat")
}
