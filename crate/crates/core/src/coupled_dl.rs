//! Coupled dictionary learning: alternate grouped sparse coding of stacked
//! visual/X-ray patch pairs with closed-form dictionary updates.

use std::f64::consts::PI;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::momp::{momp, GroupedDictionary, SparseCode, SparsityBudget};
use crate::numerics::min_norm_right_solve;

mod moves;

pub use moves::AtomMoves;
use moves::MoveState;

/// How the common atoms `[psi_c_j; phi_c_j]` are scaled after an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// The stacked column `[psi_c_j; phi_c_j]` has unit norm.
    #[default]
    Stacked,
    /// The visual column `psi_c_j` has unit norm; `phi_c_j` shares its scale.
    Separate,
}

/// The visual common dictionary `psi_c`, the X-ray common dictionary `phi_c`
/// and the X-ray innovation dictionary `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryTriple {
    pub psi_c: DMatrix<f64>,
    pub phi_c: DMatrix<f64>,
    pub phi: DMatrix<f64>,
}

impl DictionaryTriple {
    pub fn new(psi_c: DMatrix<f64>, phi_c: DMatrix<f64>, phi: DMatrix<f64>) -> Result<Self> {
        let n = psi_c.nrows();
        if phi_c.nrows() != n || phi.nrows() != n {
            return Err(Error::arg(format!(
                "dictionary row counts differ: {}, {}, {}",
                n,
                phi_c.nrows(),
                phi.nrows()
            )));
        }
        if psi_c.ncols() != phi_c.ncols() {
            return Err(Error::arg(format!(
                "common dictionaries have {} and {} atoms",
                psi_c.ncols(),
                phi_c.ncols()
            )));
        }
        if ![&psi_c, &phi_c, &phi]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
        {
            return Err(Error::arg("dictionary contains non-finite entries"));
        }
        Ok(Self { psi_c, phi_c, phi })
    }

    /// Patch dimension `n`.
    pub fn n(&self) -> usize {
        self.psi_c.nrows()
    }

    /// Common atom count.
    pub fn gamma(&self) -> usize {
        self.psi_c.ncols()
    }

    /// Innovation atom count.
    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    /// `[[psi_c, 0], [phi_c, phi]]`, a `2n x (gamma + d)` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, gamma, d) = (self.n(), self.gamma(), self.d());
        let mut theta = DMatrix::zeros(2 * n, gamma + d);
        theta.view_mut((0, 0), (n, gamma)).copy_from(&self.psi_c);
        theta.view_mut((n, 0), (n, gamma)).copy_from(&self.phi_c);
        theta.view_mut((n, gamma), (n, d)).copy_from(&self.phi);
        theta
    }

    pub fn grouped(&self) -> Result<GroupedDictionary> {
        GroupedDictionary::stacked(self.stacked(), self.gamma())
    }

    /// `[phi_c, phi]`.
    pub fn phi_bar(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n(), self.gamma() + self.d());
        m.columns_mut(0, self.gamma()).copy_from(&self.phi_c);
        m.columns_mut(self.gamma(), self.d()).copy_from(&self.phi);
        m
    }

    /// Scales atoms to the unit-norm convention without touching any codes.
    pub fn normalized(mut self, mode: Normalization) -> Self {
        for j in 0..self.gamma() {
            let s = common_scale(&self.psi_c, &self.phi_c, j, mode);
            if s > 0.0 {
                self.psi_c.column_mut(j).unscale_mut(s);
                self.phi_c.column_mut(j).unscale_mut(s);
            }
        }
        for j in 0..self.d() {
            let s = self.phi.column(j).norm();
            if s > 0.0 {
                self.phi.column_mut(j).unscale_mut(s);
            }
        }
        self
    }

    /// Largest deviation from the unit-norm convention over all atoms.
    pub fn norm_deviation(&self, mode: Normalization) -> f64 {
        let common = (0..self.gamma())
            .map(|j| (common_scale(&self.psi_c, &self.phi_c, j, mode) - 1.0).abs());
        let innovation = self.phi.column_iter().map(|c| (c.norm() - 1.0).abs());
        common.chain(innovation).fold(0.0, f64::max)
    }

    /// Overcomplete 2-D DCT for all three dictionaries.
    pub fn dct(n: usize, gamma: usize, d: usize, mode: Normalization) -> Result<Self> {
        let common = init_overcomplete_dct(n, gamma)?;
        let innovation = init_overcomplete_dct(n, d)?;
        Ok(Self::new(common.clone(), common, innovation)?.normalized(mode))
    }

    /// Standard-normal entries, normalized per `mode`.
    pub fn random(
        n: usize,
        gamma: usize,
        d: usize,
        mode: Normalization,
        rng: &mut impl Rng,
    ) -> Self {
        let mut draw =
            |cols| DMatrix::from_fn(n, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let psi_c = draw(gamma);
        let phi_c = draw(gamma);
        let phi = draw(d);
        Self { psi_c, phi_c, phi }.normalized(mode)
    }
}

fn common_scale(psi_c: &DMatrix<f64>, phi_c: &DMatrix<f64>, j: usize, mode: Normalization) -> f64 {
    match mode {
        Normalization::Stacked => {
            (psi_c.column(j).norm_squared() + phi_c.column(j).norm_squared()).sqrt()
        }
        Normalization::Separate => psi_c.column(j).norm(),
    }
}

/// Co-located visual (`y`) and X-ray (`x`) patches, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.shape() != x.shape() {
            return Err(Error::arg(format!(
                "visual data is {:?} but X-ray data is {:?}",
                y.shape(),
                x.shape()
            )));
        }
        if !y.iter().chain(x.iter()).all(|v| v.is_finite()) {
            return Err(Error::arg("training data contains non-finite entries"));
        }
        Ok(Self { y, x })
    }

    /// Builds a set from raw patches, removing each column's mean.
    pub fn from_patches(mut y: DMatrix<f64>, mut x: DMatrix<f64>) -> Result<Self> {
        for m in [&mut y, &mut x] {
            for mut col in m.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
        }
        Self::new(y, x)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    /// `[y_tau; x_tau]`.
    pub fn stacked_column(&self, tau: usize) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(2 * n, |i, _| {
            if i < n {
                self.y[(i, tau)]
            } else {
                self.x[(i - n, tau)]
            }
        })
    }
}

/// Common codes `z` (gamma x t) and innovation codes `v` (d x t).
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrices {
    pub z: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl CodeMatrices {
    pub fn zeros(gamma: usize, d: usize, t: usize) -> Self {
        Self {
            z: DMatrix::zeros(gamma, t),
            v: DMatrix::zeros(d, t),
        }
    }

    pub fn from_codes(gamma: usize, d: usize, codes: &[SparseCode]) -> Self {
        let mut out = Self::zeros(gamma, d, codes.len());
        for (tau, code) in codes.iter().enumerate() {
            out.z.set_column(tau, &code.z);
            out.v.set_column(tau, &code.v);
        }
        out
    }

    /// `[z; v]`, the code matrix of `[phi_c, phi]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (gamma, d, t) = (self.z.nrows(), self.v.nrows(), self.z.ncols());
        let mut m = DMatrix::zeros(gamma + d, t);
        m.rows_mut(0, gamma).copy_from(&self.z);
        m.rows_mut(gamma, d).copy_from(&self.v);
        m
    }

    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.ncols() == 0
    }
}

/// Outer-loop settings shared by the plain and crack-weighted learners.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub budget: SparsityBudget,
    pub gamma: usize,
    pub d: usize,
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this value.
    /// `None` always runs `max_iters` iterations.
    pub objective_tol: Option<f64>,
    pub dead_atom_replacement: bool,
    /// Keep a column's previous code when fresh pursuit fits it worse, which
    /// makes the objective trace non-increasing.
    pub keep_better_codes: bool,
    pub normalization: Normalization,
    pub init: Init,
    pub seed: u64,
    /// See [`UpdateOptions::ridge`].
    pub ridge: bool,
    /// Split and hand-over moves between dictionary updates, stopped
    /// `settle` iterations before the end. The objective trace is then only
    /// non-increasing over the settling iterations, and the lowest-objective
    /// iterate is returned. Plain learner only.
    pub atom_moves: Option<AtomMoves>,
}

impl TrainConfig {
    pub fn new(gamma: usize, d: usize, budget: SparsityBudget) -> Self {
        Self {
            budget,
            gamma,
            d,
            max_iters: 100,
            objective_tol: Some(1e-6),
            dead_atom_replacement: true,
            keep_better_codes: true,
            normalization: Normalization::Stacked,
            init: Init::Dct,
            seed: 0,
            ridge: false,
            atom_moves: None,
        }
    }

    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::arg("max_iters must be at least 1"));
        }
        if self.budget.s_z > self.gamma || self.budget.s_v > self.d {
            return Err(Error::arg(format!(
                "budget (s_z={}, s_v={}) exceeds atom counts ({}, {})",
                self.budget.s_z, self.budget.s_v, self.gamma, self.d
            )));
        }
        if let Init::Given(dict) = &self.init {
            if dict.n() != n || dict.gamma() != self.gamma || dict.d() != self.d {
                return Err(Error::arg(
                    "initial dictionary shape does not match configuration",
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn initial_dictionary(&self, n: usize) -> Result<DictionaryTriple> {
        match &self.init {
            Init::Dct => DictionaryTriple::dct(n, self.gamma, self.d, self.normalization),
            Init::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok(DictionaryTriple::random(
                    n,
                    self.gamma,
                    self.d,
                    self.normalization,
                    &mut rng,
                ))
            }
            Init::Given(dict) => Ok(dict.clone()),
        }
    }
}

/// Starting point of the alternation.
#[derive(Debug, Clone)]
pub enum Init {
    Dct,
    /// Gaussian atoms drawn from the configured seed.
    Random,
    Given(DictionaryTriple),
}

/// Settings of one dictionary update.
#[derive(Debug, Clone, Copy)]
pub struct UpdateOptions {
    pub normalization: Normalization,
    pub dead_atom_replacement: bool,
    /// Tikhonov shift `1e-8 * trace(A_i) / dim` for near-singular row systems
    /// of the crack-weighted update. The plain update ignores it.
    pub ridge: bool,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self {
            normalization: Normalization::Stacked,
            dead_atom_replacement: true,
            ridge: false,
        }
    }
}

impl From<&TrainConfig> for UpdateOptions {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            normalization: cfg.normalization,
            dead_atom_replacement: cfg.dead_atom_replacement,
            ridge: cfg.ridge,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dict: DictionaryTriple,
    pub codes: CodeMatrices,
    /// Objective after every dictionary update.
    pub trace: Vec<f64>,
}

/// Separable overcomplete 2-D DCT with `atoms` unit-norm columns over
/// `sqrt(n) x sqrt(n)` patches; every column but the first has zero mean.
pub fn init_overcomplete_dct(n: usize, atoms: usize) -> Result<DMatrix<f64>> {
    let side = exact_sqrt(n)
        .ok_or_else(|| Error::arg(format!("patch dimension {n} is not a perfect square")))?;
    let per_axis = exact_sqrt(atoms)
        .ok_or_else(|| Error::arg(format!("atom count {atoms} is not a perfect square")))?;
    if atoms < n {
        return Err(Error::arg(format!(
            "atom count {atoms} is below patch dimension {n}"
        )));
    }
    let mut one_d = DMatrix::from_fn(side, per_axis, |i, k| {
        (PI * k as f64 * (i as f64 + 0.5) / per_axis as f64).cos()
    });
    for (k, mut col) in one_d.column_iter_mut().enumerate() {
        if k > 0 {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let norm = col.norm();
        col /= norm;
    }
    Ok(one_d.kronecker(&one_d))
}

fn exact_sqrt(v: usize) -> Option<usize> {
    let r = (v as f64).sqrt().round() as usize;
    (r * r == v).then_some(r)
}

/// `0.5 ||Y - psi_c Z||^2 + 0.5 ||X - phi_c Z - phi V||^2`.
pub fn objective(data: &TrainingSet, dict: &DictionaryTriple, codes: &CodeMatrices) -> f64 {
    let visual = &data.y - &dict.psi_c * &codes.z;
    let xray = &data.x - &dict.phi_c * &codes.z - &dict.phi * &codes.v;
    0.5 * (visual.norm_squared() + xray.norm_squared())
}

/// Codes every training column independently with the grouped pursuit.
pub fn sparse_code_step(
    data: &TrainingSet,
    dict: &DictionaryTriple,
    budget: SparsityBudget,
) -> Result<CodeMatrices> {
    if dict.n() != data.n() {
        return Err(Error::arg(format!(
            "dictionary patch dimension {} does not match data dimension {}",
            dict.n(),
            data.n()
        )));
    }
    let grouped = dict.grouped()?;
    let codes = (0..data.len())
        .into_par_iter()
        .map(|tau| momp(&data.stacked_column(tau), &grouped, budget))
        .collect::<Result<Vec<_>>>()?;
    Ok(CodeMatrices::from_codes(dict.gamma(), dict.d(), &codes))
}

/// Closed-form minimum-norm update of both dictionaries for fixed codes,
/// followed by renormalization (codes rescaled so products are unchanged)
/// and dead-atom handling.
///
/// Returns the new dictionaries with the matching rescaled codes. Atoms that
/// no code uses either take the worst-represented training column or, with
/// replacement disabled, keep their value from `previous`.
pub fn dictionary_update(
    data: &TrainingSet,
    codes: &CodeMatrices,
    previous: &DictionaryTriple,
    opts: UpdateOptions,
) -> Result<(DictionaryTriple, CodeMatrices)> {
    check_code_shapes(data, codes, previous)?;
    if codes.z.iter().all(|&v| v == 0.0) {
        return Err(Error::CollapsedCodes("common"));
    }
    let psi_c = min_norm_right_solve(&data.y, &codes.z).map_err(collapsed("common"))?;
    let phi_bar = min_norm_right_solve(&data.x, &codes.stacked()).map_err(collapsed("stacked"))?;
    let gamma = codes.z.nrows();
    let phi_c = phi_bar.columns(0, gamma).into_owned();
    let phi = phi_bar.columns(gamma, codes.v.nrows()).into_owned();
    let raw = DictionaryTriple { psi_c, phi_c, phi };
    Ok(finalize_update(
        raw,
        codes.clone(),
        previous,
        opts,
        &Unmasked(data),
    ))
}

fn collapsed(which: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::EmptyCodeMatrix => Error::CollapsedCodes(which),
        other => other,
    }
}

pub(crate) fn check_code_shapes(
    data: &TrainingSet,
    codes: &CodeMatrices,
    dict: &DictionaryTriple,
) -> Result<()> {
    if codes.len() != data.len() || codes.z.nrows() != dict.gamma() || codes.v.nrows() != dict.d() {
        return Err(Error::arg(format!(
            "codes ({}x{}, {}x{}) do not match {} samples and ({}, {}) atoms",
            codes.z.nrows(),
            codes.z.ncols(),
            codes.v.nrows(),
            codes.v.ncols(),
            data.len(),
            dict.gamma(),
            dict.d()
        )));
    }
    if dict.n() != data.n() {
        return Err(Error::arg("dictionary and data patch dimensions differ"));
    }
    Ok(())
}

/// Data columns as seen by the update: raw, or with crack pixels zeroed.
pub(crate) trait TrainingView: Sync {
    fn data(&self) -> &TrainingSet;
    /// Entry mask applied to both halves of a stacked column.
    fn weight(&self, row: usize, tau: usize) -> f64;
}

pub(crate) struct Unmasked<'a>(pub &'a TrainingSet);

impl TrainingView for Unmasked<'_> {
    fn data(&self) -> &TrainingSet {
        self.0
    }

    fn weight(&self, _row: usize, _tau: usize) -> f64 {
        1.0
    }
}

pub(crate) fn finalize_update(
    mut dict: DictionaryTriple,
    mut codes: CodeMatrices,
    previous: &DictionaryTriple,
    opts: UpdateOptions,
    view: &dyn TrainingView,
) -> (DictionaryTriple, CodeMatrices) {
    let (gamma, d) = (dict.gamma(), dict.d());
    let mut dead_common = Vec::new();
    for j in 0..gamma {
        let used = codes.z.row(j).iter().any(|&v| v != 0.0);
        let s = common_scale(&dict.psi_c, &dict.phi_c, j, opts.normalization);
        if !used || s == 0.0 || !s.is_finite() {
            dead_common.push(j);
            continue;
        }
        dict.psi_c.column_mut(j).unscale_mut(s);
        dict.phi_c.column_mut(j).unscale_mut(s);
        codes.z.row_mut(j).scale_mut(s);
    }
    let mut dead_innovation = Vec::new();
    for j in 0..d {
        let used = codes.v.row(j).iter().any(|&v| v != 0.0);
        let s = dict.phi.column(j).norm();
        if !used || s == 0.0 || !s.is_finite() {
            dead_innovation.push(j);
            continue;
        }
        dict.phi.column_mut(j).unscale_mut(s);
        codes.v.row_mut(j).scale_mut(s);
    }
    if dead_common.is_empty() && dead_innovation.is_empty() {
        return (dict, codes);
    }
    debug!(
        "dead_common={} dead_innovation={} replacement={}",
        dead_common.len(),
        dead_innovation.len(),
        opts.dead_atom_replacement
    );
    // Unused atoms carry zero codes, so replacing them leaves every product
    // (and the objective) unchanged. A dead atom's previous value is only
    // kept if it still has nonzero norm.
    for &j in &dead_common {
        codes.z.row_mut(j).fill(0.0);
        dict.psi_c.set_column(j, &previous.psi_c.column(j));
        dict.phi_c.set_column(j, &previous.phi_c.column(j));
    }
    for &j in &dead_innovation {
        codes.v.row_mut(j).fill(0.0);
        dict.phi.set_column(j, &previous.phi.column(j));
    }
    if opts.dead_atom_replacement {
        replace_dead_atoms(
            &mut dict,
            &codes,
            &dead_common,
            &dead_innovation,
            opts.normalization,
            view,
        );
    }
    (dict, codes)
}

fn replace_dead_atoms(
    dict: &mut DictionaryTriple,
    codes: &CodeMatrices,
    dead_common: &[usize],
    dead_innovation: &[usize],
    mode: Normalization,
    view: &dyn TrainingView,
) {
    let data = view.data();
    let n = data.n();
    let visual_fit = &dict.psi_c * &codes.z;
    let xray_fit = &dict.phi_c * &codes.z + &dict.phi * &codes.v;
    let mut errors: Vec<(usize, f64)> = (0..data.len())
        .map(|tau| {
            let e: f64 = (0..n)
                .map(|i| {
                    let w = view.weight(i, tau);
                    let ey = w * (data.y[(i, tau)] - visual_fit[(i, tau)]);
                    let ex = w * (data.x[(i, tau)] - xray_fit[(i, tau)]);
                    ey * ey + ex * ex
                })
                .sum();
            (tau, e)
        })
        .collect();
    errors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut candidates = errors.into_iter().map(|(tau, _)| tau);

    let masked = |m: &DMatrix<f64>, tau: usize| {
        DVector::from_fn(n, |i, _| view.weight(i, tau) * m[(i, tau)])
    };
    for &j in dead_common {
        for tau in candidates.by_ref() {
            let y = masked(&data.y, tau);
            let x = masked(&data.x, tau);
            let s = match mode {
                Normalization::Stacked => (y.norm_squared() + x.norm_squared()).sqrt(),
                Normalization::Separate => y.norm(),
            };
            if s > 0.0 {
                dict.psi_c.set_column(j, &(y / s));
                dict.phi_c.set_column(j, &(x / s));
                break;
            }
        }
    }
    for &j in dead_innovation {
        for tau in candidates.by_ref() {
            let x = masked(&data.x, tau);
            let s = x.norm();
            if s > 0.0 {
                dict.phi.set_column(j, &(x / s));
                break;
            }
        }
    }
}

pub(crate) fn warn_if_undersampled(t: usize, gamma: usize, d: usize) {
    if t < gamma + d {
        warn!(
            "samples={t} atoms={} fewer training samples than atoms",
            gamma + d
        );
    }
}

/// Per column, the code with the smaller (masked) residual energy under
/// `dict`; ties keep the fresh code.
pub(crate) fn keep_better(
    view: &dyn TrainingView,
    dict: &DictionaryTriple,
    mut fresh: CodeMatrices,
    previous: &CodeMatrices,
) -> CodeMatrices {
    let data = view.data();
    let energy = |codes: &CodeMatrices| -> Vec<f64> {
        let visual = &dict.psi_c * &codes.z;
        let xray = &dict.phi_c * &codes.z + &dict.phi * &codes.v;
        (0..data.len())
            .map(|tau| {
                (0..data.n())
                    .map(|i| {
                        let w = view.weight(i, tau);
                        let ey = w * (data.y[(i, tau)] - visual[(i, tau)]);
                        let ex = w * (data.x[(i, tau)] - xray[(i, tau)]);
                        ey * ey + ex * ex
                    })
                    .sum()
            })
            .collect()
    };
    let (new_e, old_e) = (energy(&fresh), energy(previous));
    for tau in 0..data.len() {
        if old_e[tau] < new_e[tau] {
            fresh.z.set_column(tau, &previous.z.column(tau));
            fresh.v.set_column(tau, &previous.v.column(tau));
        }
    }
    fresh
}

/// Relative-decrease stopping rule shared by both learners.
pub(crate) fn converged(trace: &[f64], tol: Option<f64>) -> bool {
    let Some(tol) = tol else { return false };
    match trace {
        [.., prev, cur] => *cur == 0.0 || (prev - cur) < tol * prev,
        [only] => *only == 0.0,
        [] => false,
    }
}

/// Alternates sparse coding and dictionary updates from the configured
/// initialization until `max_iters` or the objective stalls.
pub fn train_coupled(data: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(data.n())?;
    warn_if_undersampled(data.len(), cfg.gamma, cfg.d);
    let opts = UpdateOptions::from(cfg);
    let mut dict = cfg.initial_dictionary(data.n())?;
    let mut codes = CodeMatrices::zeros(cfg.gamma, cfg.d, data.len());
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut moves = cfg.atom_moves.map(|m| MoveState::new(m, cfg.gamma, cfg.d));
    let mut best: Option<(f64, DictionaryTriple, CodeMatrices)> = None;
    for iter in 0..cfg.max_iters {
        let mut fresh = sparse_code_step(data, &dict, cfg.budget)?;
        if cfg.keep_better_codes {
            fresh = keep_better(&Unmasked(data), &dict, fresh, &codes);
        }
        let (next, rescaled) = dictionary_update(data, &fresh, &dict, opts)?;
        dict = next;
        codes = rescaled;
        let value = objective(data, &dict, &codes);
        debug!("iter={iter} objective={value:.6e}");
        trace.push(value);
        if let Some(state) = moves.as_mut() {
            if best.as_ref().is_none_or(|(b, ..)| value < *b) {
                best = Some((value, dict.clone(), codes.clone()));
            }
            if state.active(iter, cfg.max_iters) {
                let done = state.apply(iter, data, &mut dict, &mut codes, cfg.normalization);
                if done.splits + done.handovers > 0 {
                    debug!(
                        "iter={iter} splits={} handovers={}",
                        done.splits, done.handovers
                    );
                }
                continue;
            }
        }
        if converged(&trace, cfg.objective_tol) {
            break;
        }
    }
    if let Some((value, best_dict, best_codes)) = best {
        if value < objective(data, &dict, &codes) {
            dict = best_dict;
            codes = best_codes;
        }
    }
    Ok(TrainOutcome { dict, codes, trace })
}
