//! Crack-aware coupled dictionary learning: every residual is weighted by a
//! binary pixel mask, coding runs on the valid rows only and the dictionaries
//! are updated row by row from their own normal equations.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coupled_dl::{
    check_code_shapes, converged, finalize_update, keep_better, warn_if_undersampled, CodeMatrices,
    DictionaryTriple, TrainConfig, TrainOutcome, TrainingSet, TrainingView, UpdateOptions,
};
use crate::error::{Error, Result};
use crate::momp::{momp, GroupedDictionary, SparseCode, SparsityBudget};
use crate::numerics::solve_psd;
use crate::storage::MaskMatrix;

const RIDGE: f64 = 1e-8;

/// Training pairs with a validity mask shared by both modalities: entry
/// `(i, tau)` is 0 when pixel `i` of patch `tau` lies on a crack.
#[derive(Debug, Clone)]
pub struct MaskedTrainingSet {
    pub base: TrainingSet,
    pub mask: MaskMatrix,
}

impl MaskedTrainingSet {
    pub fn new(base: TrainingSet, mask: MaskMatrix) -> Result<Self> {
        if mask.shape() != base.y.shape() {
            return Err(Error::arg(format!(
                "mask is {}x{} but training data is {}x{}",
                mask.nrows(),
                mask.ncols(),
                base.n(),
                base.len()
            )));
        }
        Ok(Self { base, mask })
    }

    /// All-ones mask.
    pub fn unmasked(base: TrainingSet) -> Self {
        let mask = MaskMatrix::ones(base.n(), base.len());
        Self { base, mask }
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Number of valid samples of every pixel row.
    pub fn row_support(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                (0..self.len())
                    .filter(|&tau| self.mask.is_valid(i, tau))
                    .count()
            })
            .collect()
    }

    /// Rows whose valid sample count is below `atoms`. Their normal matrices
    /// are singular whenever all atoms are in use.
    pub fn undersupported_rows(&self, atoms: usize) -> Vec<usize> {
        self.row_support()
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s < atoms)
            .map(|(i, _)| i)
            .collect()
    }

    fn column_state(&self, tau: usize) -> ColumnState {
        let valid = (0..self.n())
            .filter(|&i| self.mask.is_valid(i, tau))
            .count();
        match valid {
            0 => ColumnState::Empty,
            v if v == self.n() => ColumnState::Full,
            _ => ColumnState::Partial,
        }
    }
}

impl TrainingView for MaskedTrainingSet {
    fn data(&self) -> &TrainingSet {
        &self.base
    }

    fn weight(&self, row: usize, tau: usize) -> f64 {
        self.mask.as_matrix()[(row, tau)]
    }
}

enum ColumnState {
    Empty,
    Partial,
    Full,
}

/// Codes of a masked coding pass plus the columns whose mask was all zero.
#[derive(Debug, Clone)]
pub struct MaskedCodes {
    pub codes: CodeMatrices,
    /// Columns with no valid pixel; their codes are zero.
    pub flagged: Vec<usize>,
}

/// `0.5 ||(Y - psi_c Z) . L||^2 + 0.5 ||(X - phi_c Z - phi V) . L||^2`.
pub fn masked_objective(
    data: &MaskedTrainingSet,
    dict: &DictionaryTriple,
    codes: &CodeMatrices,
) -> f64 {
    let visual = &data.base.y - &dict.psi_c * &codes.z;
    let xray = &data.base.x - &dict.phi_c * &codes.z - &dict.phi * &codes.v;
    let mask = data.mask.as_matrix();
    0.5 * visual
        .iter()
        .zip(xray.iter())
        .zip(mask.iter())
        .map(|((ey, ex), w)| w * (ey * ey + ex * ex))
        .sum::<f64>()
}

/// Grouped pursuit of every column against the dictionary with its crack
/// rows zeroed in both halves.
pub fn masked_sparse_code_step(
    data: &MaskedTrainingSet,
    dict: &DictionaryTriple,
    budget: SparsityBudget,
) -> Result<MaskedCodes> {
    let n = data.n();
    if dict.n() != n {
        return Err(Error::arg(format!(
            "dictionary patch dimension {} does not match data dimension {n}",
            dict.n()
        )));
    }
    let grouped = dict.grouped()?;
    budget.check_against(&grouped)?;
    let common: Vec<usize> = (0..dict.gamma()).collect();
    let coded = (0..data.len())
        .into_par_iter()
        .map(|tau| -> Result<Option<SparseCode>> {
            match data.column_state(tau) {
                ColumnState::Empty => Ok(None),
                ColumnState::Full => {
                    momp(&data.base.stacked_column(tau), &grouped, budget).map(Some)
                }
                ColumnState::Partial => {
                    let mut theta = grouped.matrix().clone();
                    let mut b = data.base.stacked_column(tau);
                    for i in (0..n).filter(|&i| !data.mask.is_valid(i, tau)) {
                        theta.row_mut(i).fill(0.0);
                        theta.row_mut(n + i).fill(0.0);
                        b[i] = 0.0;
                        b[n + i] = 0.0;
                    }
                    let masked = GroupedDictionary::new_unchecked(theta, &common)?;
                    momp(&b, &masked, budget).map(Some)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut flagged = Vec::new();
    let codes: Vec<SparseCode> = coded
        .into_iter()
        .enumerate()
        .map(|(tau, code)| {
            code.unwrap_or_else(|| {
                flagged.push(tau);
                SparseCode::zeros(dict.gamma(), dict.d())
            })
        })
        .collect();
    if !flagged.is_empty() {
        debug!("flagged_columns={}", flagged.len());
    }
    Ok(MaskedCodes {
        codes: CodeMatrices::from_codes(dict.gamma(), dict.d(), &codes),
        flagged,
    })
}

/// Normal equations `A_i = sum z z^T`, `c_i = sum T(i, tau) z` of row `i` over
/// its valid samples, restricted to the atoms those samples use. Returns the
/// used atom indices with the system.
pub(crate) fn row_system(
    targets: &DMatrix<f64>,
    nonzeros: &[Vec<(usize, f64)>],
    atoms: usize,
    mask: &MaskMatrix,
    row: usize,
) -> (Vec<usize>, DMatrix<f64>, DVector<f64>) {
    let support: Vec<usize> = (0..targets.ncols())
        .filter(|&tau| mask.is_valid(row, tau))
        .collect();
    let mut local = vec![usize::MAX; atoms];
    let mut active = Vec::new();
    for &tau in &support {
        for &(k, _) in &nonzeros[tau] {
            if local[k] == usize::MAX {
                local[k] = 0;
                active.push(k);
            }
        }
    }
    active.sort_unstable();
    for (pos, &k) in active.iter().enumerate() {
        local[k] = pos;
    }
    let dim = active.len();
    let mut a = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    for &tau in &support {
        let t = targets[(row, tau)];
        for &(k, zk) in &nonzeros[tau] {
            let p = local[k];
            c[p] += t * zk;
            for &(l, zl) in &nonzeros[tau] {
                a[(p, local[l])] += zk * zl;
            }
        }
    }
    (active, a, c)
}

fn column_nonzeros(codes: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    codes
        .column_iter()
        .map(|col| {
            col.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, &v)| (k, v))
                .collect()
        })
        .collect()
}

/// Row-wise solution of `min sum_tau L(i, tau) (T(i, tau) - d_i^T code_tau)^2`.
/// Atoms that no valid sample of a row uses get a zero entry in that row.
fn solve_rows(
    targets: &DMatrix<f64>,
    codes: &DMatrix<f64>,
    mask: &MaskMatrix,
    ridge: bool,
    problem: &'static str,
) -> Result<DMatrix<f64>> {
    let atoms = codes.nrows();
    let nonzeros = column_nonzeros(codes);
    let rows = (0..targets.nrows())
        .into_par_iter()
        .map(|i| {
            let (active, a, c) = row_system(targets, &nonzeros, atoms, mask, i);
            let support = (0..targets.ncols())
                .filter(|&tau| mask.is_valid(i, tau))
                .count();
            let singular = || Error::SingularRow {
                row: i,
                problem,
                support,
                atoms: active.len(),
            };
            let mut row = vec![0.0; atoms];
            if support == 0 {
                return if ridge { Ok(row) } else { Err(singular()) };
            }
            let solution = solve_psd(&a, &c, ridge.then_some(RIDGE)).ok_or_else(singular)?;
            for (&k, &v) in active.iter().zip(solution.iter()) {
                row[k] = v;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(targets.nrows(), atoms, |i, k| rows[i][k]))
}

/// Row-wise solutions for `psi_c` and `[phi_c, phi]` before normalization.
pub fn weighted_row_update(
    data: &MaskedTrainingSet,
    codes: &CodeMatrices,
    ridge: bool,
) -> Result<DictionaryTriple> {
    if codes.z.iter().all(|&v| v == 0.0) {
        return Err(Error::CollapsedCodes("common"));
    }
    let psi_c = solve_rows(&data.base.y, &codes.z, &data.mask, ridge, "common")?;
    let phi_bar = solve_rows(&data.base.x, &codes.stacked(), &data.mask, ridge, "stacked")?;
    let gamma = codes.z.nrows();
    let phi_c = phi_bar.columns(0, gamma).into_owned();
    let phi = phi_bar.columns(gamma, codes.v.nrows()).into_owned();
    Ok(DictionaryTriple { psi_c, phi_c, phi })
}

/// Masked counterpart of [`crate::coupled_dl::dictionary_update`]: row-wise
/// closed form, then the same normalization and dead-atom handling with
/// crack pixels excluded. Never reads `Y` or `X` where the mask is zero.
pub fn weighted_dictionary_update(
    data: &MaskedTrainingSet,
    codes: &CodeMatrices,
    previous: &DictionaryTriple,
    opts: UpdateOptions,
) -> Result<(DictionaryTriple, CodeMatrices)> {
    check_code_shapes(&data.base, codes, previous)?;
    let raw = weighted_row_update(data, codes, opts.ridge)?;
    Ok(finalize_update(raw, codes.clone(), previous, opts, data))
}

/// Alternates masked coding and row-wise updates; the trace holds the masked
/// objective after every dictionary update.
pub fn train_weighted(data: &MaskedTrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(data.n())?;
    warn_if_undersampled(data.len(), cfg.gamma, cfg.d);
    let thin = data.undersupported_rows(cfg.gamma + cfg.d);
    if !thin.is_empty() {
        warn!(
            "rows={} first_row={} fewer valid samples than atoms ({}), row systems may be singular",
            thin.len(),
            thin[0],
            cfg.gamma + cfg.d
        );
    }
    let opts = UpdateOptions::from(cfg);
    let mut dict = cfg.initial_dictionary(data.n())?;
    let mut codes = CodeMatrices::zeros(cfg.gamma, cfg.d, data.len());
    let mut trace = Vec::with_capacity(cfg.max_iters);
    for iter in 0..cfg.max_iters {
        let mut fresh = masked_sparse_code_step(data, &dict, cfg.budget)?.codes;
        if cfg.keep_better_codes {
            fresh = keep_better(data, &dict, fresh, &codes);
        }
        let (next, rescaled) = weighted_dictionary_update(data, &fresh, &dict, opts)?;
        dict = next;
        codes = rescaled;
        let value = masked_objective(data, &dict, &codes);
        debug!("iter={iter} masked_objective={value:.6e}");
        trace.push(value);
        if converged(&trace, cfg.objective_tol) {
            break;
        }
    }
    Ok(TrainOutcome { dict, codes, trace })
}
