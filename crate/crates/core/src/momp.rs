//! Modified orthogonal matching pursuit: greedy selection with separate
//! sparsity budgets for the common and innovation column groups of a stacked
//! dictionary.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::least_squares;

/// Residual norm below which the pursuit stops, relative to `||b||`.
pub const EARLY_EXIT_RATIO: f64 = 1e-12;

/// Stacked dictionary with its columns split into the common group `I` and
/// the innovation group `J`.
#[derive(Debug, Clone)]
pub struct GroupedDictionary {
    theta: DMatrix<f64>,
    is_common: Vec<bool>,
    /// Position of each column inside its own group.
    group_pos: Vec<usize>,
    n_common: usize,
}

impl GroupedDictionary {
    /// Builds the dictionary from the explicit common index set; every other
    /// column is an innovation column.
    pub fn new(theta: DMatrix<f64>, common: &[usize]) -> Result<Self> {
        let dict = Self::new_unchecked(theta, common)?;
        if let Some(k) =
            (0..dict.theta.ncols()).find(|&k| dict.theta.column(k).iter().all(|&v| v == 0.0))
        {
            return Err(Error::arg(format!("dictionary column {k} is all zero")));
        }
        Ok(dict)
    }

    /// Common columns first (`0..gamma`), innovation columns after.
    pub fn stacked(theta: DMatrix<f64>, gamma: usize) -> Result<Self> {
        let common: Vec<usize> = (0..gamma).collect();
        Self::new(theta, &common)
    }

    /// Like [`GroupedDictionary::new`] but tolerates all-zero columns, which
    /// the pursuit never selects. Masked coding produces such columns.
    pub(crate) fn new_unchecked(theta: DMatrix<f64>, common: &[usize]) -> Result<Self> {
        let cols = theta.ncols();
        let mut is_common = vec![false; cols];
        for &k in common {
            if k >= cols {
                return Err(Error::arg(format!(
                    "common index {k} out of range for {cols} columns"
                )));
            }
            if is_common[k] {
                return Err(Error::arg(format!("duplicate common index {k}")));
            }
            is_common[k] = true;
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("dictionary contains non-finite entries"));
        }
        let mut group_pos = vec![0; cols];
        let (mut nc, mut ni) = (0, 0);
        for k in 0..cols {
            if is_common[k] {
                group_pos[k] = nc;
                nc += 1;
            } else {
                group_pos[k] = ni;
                ni += 1;
            }
        }
        Ok(Self {
            theta,
            is_common,
            group_pos,
            n_common: nc,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn n_common(&self) -> usize {
        self.n_common
    }

    pub fn n_innovation(&self) -> usize {
        self.theta.ncols() - self.n_common
    }

    pub fn is_common(&self, column: usize) -> bool {
        self.is_common[column]
    }

    /// Reassembles `w` in column order from a code.
    pub fn full_vector(&self, code: &SparseCode) -> DVector<f64> {
        DVector::from_fn(self.theta.ncols(), |k, _| {
            if self.is_common[k] {
                code.z[self.group_pos[k]]
            } else {
                code.v[self.group_pos[k]]
            }
        })
    }
}

/// Maximum nonzeros on the common (`s_z`) and innovation (`s_v`) groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparsityBudget {
    pub s_z: usize,
    pub s_v: usize,
}

impl SparsityBudget {
    pub fn new(s_z: usize, s_v: usize) -> Result<Self> {
        if s_z + s_v == 0 {
            return Err(Error::arg("sparsity budget must allow at least one atom"));
        }
        Ok(Self { s_z, s_v })
    }

    pub fn total(&self) -> usize {
        self.s_z + self.s_v
    }

    pub fn check_against(&self, dict: &GroupedDictionary) -> Result<()> {
        if self.s_z > dict.n_common() || self.s_v > dict.n_innovation() {
            return Err(Error::arg(format!(
                "budget (s_z={}, s_v={}) exceeds group sizes ({}, {})",
                self.s_z,
                self.s_v,
                dict.n_common(),
                dict.n_innovation()
            )));
        }
        Ok(())
    }
}

/// Common (`z`) and innovation (`v`) coefficients with the selected columns in
/// selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub z: DVector<f64>,
    pub v: DVector<f64>,
    pub support: Vec<usize>,
}

impl SparseCode {
    pub fn zeros(gamma: usize, d: usize) -> Self {
        Self {
            z: DVector::zeros(gamma),
            v: DVector::zeros(d),
            support: Vec::new(),
        }
    }
}

/// Codes plus the residual norm after every selection.
#[derive(Debug, Clone)]
pub struct PursuitTrace {
    pub code: SparseCode,
    pub residual_norms: Vec<f64>,
    pub residual: DVector<f64>,
}

pub fn momp(
    b: &DVector<f64>,
    dict: &GroupedDictionary,
    budget: SparsityBudget,
) -> Result<SparseCode> {
    momp_traced(b, dict, budget).map(|t| t.code)
}

pub fn momp_traced(
    b: &DVector<f64>,
    dict: &GroupedDictionary,
    budget: SparsityBudget,
) -> Result<PursuitTrace> {
    let theta = &dict.theta;
    if b.len() != theta.nrows() {
        return Err(Error::arg(format!(
            "signal has {} entries, dictionary has {} rows",
            b.len(),
            theta.nrows()
        )));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::arg("signal contains non-finite entries"));
    }
    budget.check_against(dict)?;

    let b_norm = b.norm();
    let stop = EARLY_EXIT_RATIO * b_norm;
    let mut residual = b.clone();
    let mut residual_norms = Vec::with_capacity(budget.total());
    let mut support: Vec<usize> = Vec::with_capacity(budget.total());
    let mut selected = vec![false; theta.ncols()];
    let (mut used_z, mut used_v) = (0usize, 0usize);
    let mut weights = DVector::zeros(0);

    for _ in 0..budget.total() {
        if b_norm == 0.0 || residual.norm() < stop {
            break;
        }
        let correlations = theta.tr_mul(&residual);
        // Highest |<r, theta_k>| among admissible columns; ties go to the
        // lower index because the scan is ascending with a strict compare.
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in correlations.iter().enumerate() {
            if selected[k] {
                continue;
            }
            let admissible = if dict.is_common[k] {
                used_z < budget.s_z
            } else {
                used_v < budget.s_v
            };
            if !admissible || theta.column(k).iter().all(|&x| x == 0.0) {
                continue;
            }
            let score = c.abs();
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        let (kappa, _) =
            best.ok_or_else(|| Error::Numerical("no admissible column left for pursuit".into()))?;
        selected[kappa] = true;
        if dict.is_common[kappa] {
            used_z += 1;
        } else {
            used_v += 1;
        }
        support.push(kappa);

        let chosen = theta.select_columns(support.iter());
        weights = least_squares(&chosen, b)?;
        residual = b - &chosen * &weights;
        residual_norms.push(residual.norm());
    }

    let mut code = SparseCode::zeros(dict.n_common(), dict.n_innovation());
    for (&k, &w) in support.iter().zip(weights.iter()) {
        if dict.is_common[k] {
            code.z[dict.group_pos[k]] = w;
        } else {
            code.v[dict.group_pos[k]] = w;
        }
    }
    code.support = support;
    Ok(PursuitTrace {
        code,
        residual_norms,
        residual,
    })
}
