//! Polyhedral shape constraints `A λ ≤ b`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::BinGrid;
use crate::{Error, Result};

/// Provenance of a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKind {
    /// non-negativity
    N,
    /// monotone decrease
    D,
    /// convexity
    C,
    /// user supplied
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralConstraints {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub labels: Vec<RowKind>,
}

impl PolyhedralConstraints {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, labels: Vec<RowKind>) -> Result<Self> {
        if a.nrows() != b.len() || labels.len() != b.len() {
            return Err(Error::Dimension(format!(
                "constraint system has {} rows, {} right-hand sides and {} labels",
                a.nrows(),
                b.len(),
                labels.len()
            )));
        }
        Ok(PolyhedralConstraints { a, b, labels })
    }

    /// No constraints on `λ ∈ ℝⁿ`.
    pub fn unconstrained(n: usize) -> Self {
        PolyhedralConstraints {
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// Index of the first row with `(Aλ)_i > b_i + tol`, if any.
    pub fn first_violation(&self, lambda: &[f64], tol: f64) -> Option<usize> {
        assert_eq!(lambda.len(), self.dim(), "λ has the wrong length");
        let l = DVector::from_column_slice(lambda);
        let lhs = &self.a * l;
        (0..self.len()).find(|&i| lhs[i] > self.b[i] + tol)
    }

    pub fn contains(&self, lambda: &[f64], tol: f64) -> bool {
        self.first_violation(lambda, tol).is_none()
    }
}

/// `A = −I`, `b = 0`.
pub fn nonneg(n: usize) -> Result<PolyhedralConstraints> {
    if n == 0 {
        return Err(Error::InvalidArgument("non-negativity needs n ≥ 1".into()));
    }
    PolyhedralConstraints::new(
        -DMatrix::identity(n, n),
        DVector::zeros(n),
        vec![RowKind::N; n],
    )
}

/// Rows `λ_{i+1} − λ_i ≤ 0`. Bin widths do not enter.
pub fn decreasing(n: usize) -> Result<PolyhedralConstraints> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "monotonicity needs n ≥ 2, got {n}"
        )));
    }
    let mut a = DMatrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        a[(i, i)] = -1.0;
        a[(i, i + 1)] = 1.0;
    }
    PolyhedralConstraints::new(a, DVector::zeros(n - 1), vec![RowKind::D; n - 1])
}

/// Rows `−λ_i + 2λ_{i+1} − λ_{i+2} ≤ 0` on a uniform grid.
///
/// With `grid` given, each row is the second divided difference of the bin
/// densities `λ_j / w_j` at the bin centers, scaled so a uniform grid gives
/// exactly the `[−1, 2, −1]` stencil.
pub fn convexity(n: usize, grid: Option<&BinGrid>) -> Result<PolyhedralConstraints> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "convexity needs n ≥ 3, got {n}"
        )));
    }
    let mut a = DMatrix::zeros(n - 2, n);
    match grid {
        None => {
            for i in 0..n - 2 {
                a[(i, i)] = -1.0;
                a[(i, i + 1)] = 2.0;
                a[(i, i + 2)] = -1.0;
            }
        }
        Some(g) => {
            if g.len() != n {
                return Err(Error::Dimension(format!(
                    "grid has {} bins, expected {n}",
                    g.len()
                )));
            }
            let w = g.widths();
            let c = g.centers();
            for i in 0..n - 2 {
                let g0 = c[i + 1] - c[i];
                let g1 = c[i + 2] - c[i + 1];
                a[(i, i)] = -2.0 * g1 / (g0 + g1) * w[i + 1] / w[i];
                a[(i, i + 1)] = 2.0;
                a[(i, i + 2)] = -2.0 * g0 / (g0 + g1) * w[i + 1] / w[i + 2];
            }
        }
    }
    PolyhedralConstraints::new(a, DVector::zeros(n - 2), vec![RowKind::C; n - 2])
}

/// Vertical concatenation, preserving row order and labels.
pub fn stack(n: usize, parts: &[PolyhedralConstraints]) -> Result<PolyhedralConstraints> {
    if let Some(p) = parts.iter().find(|p| p.dim() != n) {
        return Err(Error::Dimension(format!(
            "cannot stack a {}-column system into n = {n}",
            p.dim()
        )));
    }
    let q: usize = parts.iter().map(|p| p.len()).sum();
    let mut a = DMatrix::zeros(q, n);
    let mut b = DVector::zeros(q);
    let mut labels = Vec::with_capacity(q);
    let mut row = 0;
    for p in parts {
        a.view_mut((row, 0), (p.len(), n)).copy_from(&p.a);
        b.rows_mut(row, p.len()).copy_from(&p.b);
        labels.extend_from_slice(&p.labels);
        row += p.len();
    }
    PolyhedralConstraints::new(a, b, labels)
}

/// Named constraint configurations: `none`, `N`, `ND`, `NDC`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ConstraintSetup {
    None,
    N,
    ND,
    NDC,
}

impl ConstraintSetup {
    pub fn build(self, n: usize, grid: Option<&BinGrid>) -> Result<PolyhedralConstraints> {
        match self {
            ConstraintSetup::None => Ok(PolyhedralConstraints::unconstrained(n)),
            ConstraintSetup::N => nonneg(n),
            ConstraintSetup::ND => stack(n, &[nonneg(n)?, decreasing(n)?]),
            ConstraintSetup::NDC => stack(n, &[nonneg(n)?, decreasing(n)?, convexity(n, grid)?]),
        }
    }
}

impl fmt::Display for ConstraintSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintSetup::None => "none",
            ConstraintSetup::N => "N",
            ConstraintSetup::ND => "ND",
            ConstraintSetup::NDC => "NDC",
        })
    }
}

impl FromStr for ConstraintSetup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ConstraintSetup::None),
            "N" => Ok(ConstraintSetup::N),
            "ND" => Ok(ConstraintSetup::ND),
            "NDC" => Ok(ConstraintSetup::NDC),
            other => Err(Error::Config(format!(
                "unknown constraint setup `{other}` (expected none, N, ND or NDC)"
            ))),
        }
    }
}

impl TryFrom<String> for ConstraintSetup {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ConstraintSetup> for String {
    fn from(c: ConstraintSetup) -> String {
        c.to_string()
    }
}
