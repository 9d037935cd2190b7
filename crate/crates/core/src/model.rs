//! Forward model: intensities, bin grids, smearing kernels, response matrices
//! and whitening of the Gaussian approximation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::quadrature::{integrate, QuadratureSettings};
use crate::stats::normal_mass;
use crate::{Error, Result};

/// Partition of an interval into `n ≥ 1` bins by strictly increasing edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinGrid {
    edges: Vec<f64>,
}

impl BinGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidArgument(
                "a bin grid needs at least two edges".into(),
            ));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("bin edges must be finite".into()));
        }
        if let Some(i) = edges.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "bin edges must be strictly increasing (edge {} = {} ≥ edge {} = {})",
                i,
                edges[i],
                i + 1,
                edges[i + 1]
            )));
        }
        Ok(BinGrid { edges })
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("a bin grid needs n ≥ 1".into()));
        }
        let step = (hi - lo) / n as f64;
        let mut edges: Vec<f64> = (0..=n).map(|k| lo + step * k as f64).collect();
        edges[n] = hi;
        Self::new(edges)
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bin(&self, j: usize) -> (f64, f64) {
        (self.edges[j], self.edges[j + 1])
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

impl TryFrom<Vec<f64>> for BinGrid {
    type Error = Error;
    fn try_from(edges: Vec<f64>) -> Result<Self> {
        BinGrid::new(edges)
    }
}

impl From<BinGrid> for Vec<f64> {
    fn from(g: BinGrid) -> Self {
        g.edges
    }
}

/// `N_c Σ_k π_k N(t; μ_k, σ_k²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub total: f64,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(
        total: f64,
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    ) -> Result<Self> {
        let g = GaussianMixture {
            total,
            weights,
            means,
            variances,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::InvalidArgument(
                "mixture components must have matching lengths".into(),
            ));
        }
        if !(self.total > 0.0) {
            return Err(Error::InvalidArgument(
                "mixture total must be positive".into(),
            ));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0))
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidArgument(
                "mixture weights must be non-negative and sum to 1".into(),
            ));
        }
        if self.variances.iter().any(|&v| !(v > 0.0)) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "mixture variances must be positive, means finite".into(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let density: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| {
                let z = (t - m) / v.sqrt();
                w * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
            })
            .sum();
        self.total * density
    }
}

/// Natural cubic spline through `(knots, values)`, optionally clamped from
/// below at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedSpline {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Second derivatives at the knots.
    pub second_derivatives: Vec<f64>,
    /// Lower clamp applied after evaluation; `Some(0.0)` forces non-negativity.
    pub clamp_below: Option<f64>,
}

impl TabulatedSpline {
    pub fn natural(knots: Vec<f64>, values: Vec<f64>, clamp_below: Option<f64>) -> Result<Self> {
        let n = knots.len();
        if n == 0 || values.len() != n {
            return Err(Error::InvalidArgument(
                "spline knots and values must be non-empty and equal length".into(),
            ));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "spline knots must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "spline values must be finite".into(),
            ));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm for the interior second derivatives.
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let size = n - 2;
            let mut diag = vec![0.0; size];
            let mut rhs = vec![0.0; size];
            let mut upper = vec![0.0; size];
            for i in 0..size {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                upper[i] = h[i + 1];
                rhs[i] = 6.0
                    * ((values[i + 2] - values[i + 1]) / h[i + 1]
                        - (values[i + 1] - values[i]) / h[i]);
            }
            for i in 1..size {
                let factor = h[i] / diag[i - 1];
                diag[i] -= factor * upper[i - 1];
                rhs[i] -= factor * rhs[i - 1];
            }
            let mut sol = vec![0.0; size];
            sol[size - 1] = rhs[size - 1] / diag[size - 1];
            for i in (0..size - 1).rev() {
                sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        Ok(TabulatedSpline {
            knots,
            values,
            second_derivatives: m,
            clamp_below,
        })
    }

    /// The unclamped spline value; outside the knot range the end segments are
    /// extended.
    pub fn raw(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return self.values[0];
        }
        let i = match self.knots.partition_point(|&k| k <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second_derivatives[i], self.second_derivatives[i + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0
    }

    pub fn eval(&self, t: f64) -> f64 {
        let v = self.raw(t);
        match self.clamp_below {
            Some(floor) => v.max(floor),
            None => v,
        }
    }
}

/// Steeply falling spectrum
/// `L N₀ t^{-a} (1 − 2t/√s)^β exp(−γ/t)` (t in GeV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawSpectrum {
    pub luminosity: f64,
    pub n0: f64,
    pub exponent: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sqrt_s: f64,
}

impl PowerLawSpectrum {
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 || 2.0 * t >= self.sqrt_s {
            return 0.0;
        }
        self.luminosity
            * self.n0
            * t.powf(-self.exponent)
            * (1.0 - 2.0 * t / self.sqrt_s).powf(self.beta)
            * (-self.gamma / t).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntensityFunction {
    GaussianMixture(GaussianMixture),
    TabulatedSpline(TabulatedSpline),
    PowerLawSpectrum(PowerLawSpectrum),
}

impl IntensityFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            IntensityFunction::GaussianMixture(g) => g.eval(t),
            IntensityFunction::TabulatedSpline(s) => s.eval(t),
            IntensityFunction::PowerLawSpectrum(p) => p.eval(t),
        }
    }

    /// Points where the intensity may fail to be smooth.
    fn breakpoints(&self) -> &[f64] {
        match self {
            IntensityFunction::TabulatedSpline(s) => &s.knots,
            _ => &[],
        }
    }
}

/// Resolution σ(t) of a heteroskedastic Gaussian smearing kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Resolution {
    /// σ(t) = scale · √t
    SqrtProportional { scale: f64 },
    /// σ(t) = t √(N²/t² + S²/t + C²)
    Calorimeter {
        noise: f64,
        stochastic: f64,
        constant: f64,
    },
}

impl Resolution {
    pub fn sd(&self, t: f64) -> f64 {
        match *self {
            Resolution::SqrtProportional { scale } => scale * t.max(0.0).sqrt(),
            Resolution::Calorimeter {
                noise,
                stochastic,
                constant,
            } => (noise * noise + stochastic * stochastic * t + constant * constant * t * t)
                .max(0.0)
                .sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmearingKernel {
    HomoskedasticGaussian { sd: f64 },
    HeteroskedasticGaussian { resolution: Resolution },
}

impl SmearingKernel {
    pub fn sd(&self, t: f64) -> f64 {
        match self {
            SmearingKernel::HomoskedasticGaussian { sd } => *sd,
            SmearingKernel::HeteroskedasticGaussian { resolution } => resolution.sd(t),
        }
    }

    /// `P(Y ∈ [lo, hi] | X = t)`.
    pub fn probability(&self, t: f64, lo: f64, hi: f64) -> f64 {
        let s = self.sd(t);
        normal_mass((lo - t) / s, (hi - t) / s)
    }

    fn validate_on(&self, grid: &BinGrid) -> Result<()> {
        let probe = grid.edges().iter().copied().chain(grid.centers());
        for t in probe {
            let s = self.sd(t);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "kernel standard deviation {s} at t = {t} is not positive"
                )));
            }
        }
        Ok(())
    }
}

/// Quadrature tolerances for bin integrals and response-matrix entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSettings {
    pub rel_tol: f64,
    pub initial_panels: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            rel_tol: 1e-10,
            initial_panels: 1,
        }
    }
}

impl ModelSettings {
    fn quadrature(&self, abs_tol: f64) -> QuadratureSettings {
        QuadratureSettings {
            rel_tol: self.rel_tol,
            abs_tol,
            initial_panels: self.initial_panels,
            ..Default::default()
        }
    }
}

/// `λ_j = ∫_{T_j} f(t) dt` for every bin of `grid`.
pub fn bin_means(
    intensity: &IntensityFunction,
    grid: &BinGrid,
    settings: &ModelSettings,
) -> Result<Vec<f64>> {
    let q = settings.quadrature(0.0);
    (0..grid.len())
        .map(|j| {
            let (lo, hi) = grid.bin(j);
            let v = integrate(|t| intensity.eval(t), lo, hi, intensity.breakpoints(), &q)?;
            Ok(v.max(0.0))
        })
        .collect()
}

/// m×n smearing matrix `K_ij = P(Y ∈ S_i | X ∈ T_j)` under an ansatz intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub entries: DMatrix<f64>,
    pub true_grid: BinGrid,
    pub smeared_grid: BinGrid,
    pub ansatz_id: String,
}

/// Beyond this many standard deviations the kernel mass is below 1e-32.
const KERNEL_REACH: f64 = 12.0;

pub fn response_matrix(
    kernel: &SmearingKernel,
    ansatz: &IntensityFunction,
    ansatz_id: &str,
    true_grid: &BinGrid,
    smeared_grid: &BinGrid,
    settings: &ModelSettings,
) -> Result<ResponseMatrix> {
    kernel.validate_on(true_grid)?;
    let (m, n) = (smeared_grid.len(), true_grid.len());
    let mut entries = DMatrix::zeros(m, n);
    let den = bin_means(ansatz, true_grid, settings)?;
    for j in 0..n {
        if !(den[j] > 0.0 && den[j].is_finite()) {
            return Err(Error::DegenerateBin { index: j });
        }
        let (tlo, thi) = true_grid.bin(j);
        let reach = KERNEL_REACH
            * kernel
                .sd(tlo)
                .max(kernel.sd(thi))
                .max(kernel.sd(0.5 * (tlo + thi)));
        let mut breaks: Vec<f64> = ansatz.breakpoints().to_vec();
        breaks.extend(smeared_grid.edges().iter().copied());
        let q = settings.quadrature(1e-3 * settings.rel_tol * den[j]);
        for i in 0..m {
            let (slo, shi) = smeared_grid.bin(i);
            if slo > thi + reach || shi < tlo - reach {
                continue;
            }
            let num = integrate(
                |t| ansatz.eval(t) * kernel.probability(t, slo, shi),
                tlo,
                thi,
                &breaks,
                &q,
            )?;
            entries[(i, j)] = (num / den[j]).clamp(0.0, 1.0);
        }
    }
    Ok(ResponseMatrix {
        entries,
        true_grid: true_grid.clone(),
        smeared_grid: smeared_grid.clone(),
        ansatz_id: ansatz_id.to_string(),
    })
}

/// `μ = K λ`.
pub fn forward_means(k: &ResponseMatrix, lambda: &[f64]) -> Result<Vec<f64>> {
    if lambda.len() != k.entries.ncols() {
        return Err(Error::Dimension(format!(
            "λ has length {} but K has {} columns",
            lambda.len(),
            k.entries.ncols()
        )));
    }
    let v = &k.entries * DVector::from_column_slice(lambda);
    Ok(v.iter().copied().collect())
}

#[derive(Serialize, Deserialize)]
struct ResponseMatrixJson {
    m: usize,
    n: usize,
    ansatz_id: String,
    true_edges: Vec<f64>,
    smeared_edges: Vec<f64>,
    entries: Vec<Vec<f64>>,
}

/// Formats a float with 17 significant digits (exact round trip).
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        t => t
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("`{t}`: {e}"))),
    }
}

const CSV_HEADER: &str = "# m,n,ansatz_id,true_edges,smeared_edges";

impl ResponseMatrix {
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.entries.column_iter().map(|c| c.sum()).collect()
    }

    /// Numerical rank from the singular values (relative cut-off `rel_tol`).
    pub fn rank(&self, rel_tol: f64) -> usize {
        numerical_rank(&self.entries, rel_tol)
    }

    /// Row-major CSV: a header comment, a metadata comment, then `m` rows.
    /// Edges inside the metadata are `;`-separated.
    pub fn to_csv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(";");
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        writeln!(
            out,
            "# {},{},{},{},{}",
            self.nrows(),
            self.ncols(),
            self.ansatz_id.replace([',', '\n'], "_"),
            join(self.true_grid.edges()),
            join(self.smeared_grid.edges())
        )
        .unwrap();
        for row in self.entries.row_iter() {
            let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        if header.trim() != CSV_HEADER {
            return Err(Error::Parse(format!("unexpected matrix header `{header}`")));
        }
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| Error::Parse("missing matrix metadata line".into()))?;
        let fields: Vec<&str> = meta.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse("matrix metadata must have 5 fields".into()));
        }
        let m: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse("bad m".into()))?;
        let n: usize = fields[1]
            .parse()
            .map_err(|_| Error::Parse("bad n".into()))?;
        let edges = |s: &str| -> Result<BinGrid> {
            BinGrid::new(s.split(';').map(parse_f64).collect::<Result<Vec<_>>>()?)
        };
        let true_grid = edges(fields[3])?;
        let smeared_grid = edges(fields[4])?;
        let mut data = Vec::with_capacity(m * n);
        let mut rows = 0;
        for line in lines {
            let row: Vec<f64> = line.split(',').map(parse_f64).collect::<Result<_>>()?;
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "matrix row {rows} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend(row);
            rows += 1;
        }
        if rows != m || true_grid.len() != n || smeared_grid.len() != m {
            return Err(Error::Parse(
                "matrix dimensions disagree with metadata".into(),
            ));
        }
        Ok(ResponseMatrix {
            entries: DMatrix::from_row_slice(m, n, &data),
            true_grid,
            smeared_grid,
            ansatz_id: fields[2].to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let j = ResponseMatrixJson {
            m: self.nrows(),
            n: self.ncols(),
            ansatz_id: self.ansatz_id.clone(),
            true_edges: self.true_grid.edges().to_vec(),
            smeared_edges: self.smeared_grid.edges().to_vec(),
            entries: self
                .entries
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: ResponseMatrixJson = serde_json::from_str(text)?;
        if j.entries.len() != j.m || j.entries.iter().any(|r| r.len() != j.n) {
            return Err(Error::Parse("matrix entries disagree with m, n".into()));
        }
        let flat: Vec<f64> = j.entries.into_iter().flatten().collect();
        Ok(ResponseMatrix {
            entries: DMatrix::from_row_slice(j.m, j.n, &flat),
            true_grid: BinGrid::new(j.true_edges)?,
            smeared_grid: BinGrid::new(j.smeared_edges)?,
            ansatz_id: j.ansatz_id,
        })
    }

    /// Reads either format, chosen by extension (`.json`, otherwise CSV).
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_csv(&text)
        }
    }
}

pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Identity,
    /// Diagonal entries of Σ.
    Diagonal(Vec<f64>),
}

/// `y = K λ + ε`, `ε ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub k: DMatrix<f64>,
    pub y: DVector<f64>,
    pub covariance: Covariance,
}

impl GaussianModel {
    pub fn new(k: DMatrix<f64>, y: DVector<f64>, covariance: Covariance) -> Result<Self> {
        if y.len() != k.nrows() {
            return Err(Error::Dimension(format!(
                "y has length {} but K has {} rows",
                y.len(),
                k.nrows()
            )));
        }
        if let Covariance::Diagonal(d) = &covariance {
            if d.len() != k.nrows() {
                return Err(Error::Dimension(format!(
                    "Σ has {} entries but K has {} rows",
                    d.len(),
                    k.nrows()
                )));
            }
        }
        Ok(GaussianModel { k, y, covariance })
    }

    pub fn is_whitened(&self) -> bool {
        self.covariance == Covariance::Identity
    }
}

/// Transforms to identity covariance: `(L⁻¹K, L⁻¹y, I)` with `Σ = L Lᵀ`.
pub fn whiten(model: &GaussianModel) -> Result<GaussianModel> {
    match &model.covariance {
        Covariance::Identity => Ok(model.clone()),
        Covariance::Diagonal(d) => {
            let scale = whitening_scale(d)?;
            let mut k = model.k.clone();
            for (i, s) in scale.iter().enumerate() {
                k.row_mut(i).scale_mut(*s);
            }
            let y = model.y.component_mul(&DVector::from_column_slice(&scale));
            Ok(GaussianModel {
                k,
                y,
                covariance: Covariance::Identity,
            })
        }
    }
}

/// `1/√Σ_ii`, failing on non-positive entries.
pub fn whitening_scale(diag: &[f64]) -> Result<Vec<f64>> {
    diag.iter()
        .enumerate()
        .map(|(index, &value)| {
            if value > 0.0 && value.is_finite() {
                Ok(1.0 / value.sqrt())
            } else {
                Err(Error::Covariance { index, value })
            }
        })
        .collect()
}
