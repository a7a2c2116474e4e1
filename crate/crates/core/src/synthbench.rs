//! Synthetic experiments on data drawn from the coupled sparse model:
//! dictionary identifiability and separation error across noise levels.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::coupled_dl::{
    train_coupled, AtomMoves, CodeMatrices, DictionaryTriple, Init, Normalization, TrainConfig,
    TrainingSet,
};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::metrics::{psnr, ssim};
use crate::momp::SparsityBudget;
use crate::patchwork::separate_single_scale;
use crate::pyramid::{decompose, scale_training_set, separate_multiscale, PyramidSpec};
use crate::separator::{reconstruct_patches, BPConfig, SeparationProblem, SeparationSolver};

/// Shape and sampling of one synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub gamma: usize,
    pub d: usize,
    pub t: usize,
    pub s_z: usize,
    pub s_v: usize,
    /// Nonzero coefficients are uniform on `[-coeff_range, coeff_range]`.
    pub coeff_range: f64,
    pub snrs_db: Vec<f64>,
    pub trials: usize,
    /// Held-out mixtures per trial for the separation table.
    pub mixtures: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 40,
            gamma: 60,
            d: 60,
            t: 1500,
            s_z: 2,
            s_v: 3,
            coeff_range: 1.0,
            snrs_db: vec![f64::INFINITY],
            trials: 5,
            mixtures: 200,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.gamma == 0 || self.d == 0 || self.t == 0 || self.trials == 0 {
            return Err(Error::arg(
                "synthetic dimensions and trial count must be positive",
            ));
        }
        if self.s_z > self.gamma || self.s_v > self.d {
            return Err(Error::arg(format!(
                "budget (s_z={}, s_v={}) exceeds atom counts ({}, {})",
                self.s_z, self.s_v, self.gamma, self.d
            )));
        }
        if !(self.coeff_range > 0.0 && self.coeff_range.is_finite()) {
            return Err(Error::arg("coefficient range must be positive"));
        }
        if let Some(bad) = self.snrs_db.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::arg(format!("SNR {bad} dB must be positive or inf")));
        }
        Ok(())
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

/// Code matrix with exactly `s` nonzeros per column at uniform positions.
fn sparse_codes(rows: usize, t: usize, s: usize, range: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, t);
    for tau in 0..t {
        for j in sample(rng, rows, s) {
            m[(j, tau)] = rng.random_range(-range..=range);
        }
    }
    m
}

/// Ground-truth dictionaries (standard normal, every column of each
/// dictionary unit norm), codes and the noiseless training pairs they
/// generate.
pub fn generate(
    spec: &SynthSpec,
    rng: &mut impl Rng,
) -> Result<(DictionaryTriple, CodeMatrices, TrainingSet)> {
    spec.validate()?;
    let mut gaussian = |cols| {
        normalize_columns(&DMatrix::from_fn(spec.n, cols, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }))
    };
    let psi_c = gaussian(spec.gamma);
    let phi_c = gaussian(spec.gamma);
    let phi = gaussian(spec.d);
    let dict = DictionaryTriple::new(psi_c, phi_c, phi)?;
    let codes = CodeMatrices {
        z: sparse_codes(spec.gamma, spec.t, spec.s_z, spec.coeff_range, rng),
        v: sparse_codes(spec.d, spec.t, spec.s_v, spec.coeff_range, rng),
    };
    let y = &dict.psi_c * &codes.z;
    let x = &dict.phi_c * &codes.z + &dict.phi * &codes.v;
    Ok((dict, codes, TrainingSet::new(y, x)?))
}

/// Adds white Gaussian noise scaled so the Frobenius-power SNR is exactly
/// `snr_db`. Infinite SNR returns the input unchanged.
pub fn add_noise_snr(m: &DMatrix<f64>, snr_db: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(m.clone());
    }
    if !(snr_db > 0.0) {
        return Err(Error::arg(format!(
            "SNR {snr_db} dB must be positive or inf"
        )));
    }
    let power = m.norm_squared();
    if power == 0.0 {
        return Err(Error::arg("zero-power signal"));
    }
    let noise = DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let target = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let scale = target / noise.norm();
    Ok(m + noise * scale)
}

/// How learned atoms are paired with true atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Matching {
    /// Each true atom takes its nearest learned atom; learned atoms may repeat.
    #[default]
    Nearest,
    /// One-to-one assignment maximizing the total `|<truth, learned>|`.
    Injective,
}

pub fn normalize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let s = col.norm();
        if s > 0.0 {
            col /= s;
        }
    }
    out
}

/// Percentage of true atoms with a learned atom at distance
/// `1 - |<truth, learned>|` below 0.01.
pub fn atom_recovery_rate(truth: &DMatrix<f64>, learned: &DMatrix<f64>) -> Result<f64> {
    atom_recovery_rate_with(truth, learned, Matching::Nearest)
}

pub fn atom_recovery_rate_with(
    truth: &DMatrix<f64>,
    learned: &DMatrix<f64>,
    matching: Matching,
) -> Result<f64> {
    if truth.nrows() != learned.nrows() {
        return Err(Error::arg(format!(
            "atom dimensions differ: {} vs {}",
            truth.nrows(),
            learned.nrows()
        )));
    }
    if truth.ncols() == 0 {
        return Err(Error::arg("empty true dictionary"));
    }
    for (name, m) in [("true", truth), ("learned", learned)] {
        if let Some(j) = m.column_iter().position(|c| (c.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::arg(format!(
                "{name} atom {j} does not have unit norm"
            )));
        }
    }
    let similarity = (truth.transpose() * learned).abs();
    let best: Vec<f64> = match matching {
        Matching::Nearest => similarity.row_iter().map(|r| r.max()).collect(),
        Matching::Injective => {
            if learned.ncols() < truth.ncols() {
                return Err(Error::arg(
                    "injective matching needs at least as many learned atoms as true atoms",
                ));
            }
            let assignment = max_weight_assignment(&similarity);
            assignment
                .iter()
                .enumerate()
                .map(|(i, &j)| similarity[(i, j)])
                .collect()
        }
    };
    let hits = best.iter().filter(|&&s| 1.0 - s < 0.01).count();
    Ok(100.0 * hits as f64 / truth.ncols() as f64)
}

/// Hungarian algorithm on `rows <= cols`; returns the column of each row.
fn max_weight_assignment(weights: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = weights.shape();
    let cost = |i: usize, j: usize| -weights[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// `||x - x_hat||^2 / ||x||^2`.
pub fn nmse(x: &DVector<f64>, x_hat: &DVector<f64>) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::arg(format!(
            "vector lengths differ: {} vs {}",
            x.len(),
            x_hat.len()
        )));
    }
    let reference = x.norm_squared();
    if reference == 0.0 {
        return Err(Error::arg("zero reference signal"));
    }
    Ok((x - x_hat).norm_squared() / reference)
}

/// One of the three learned dictionaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictName {
    PsiC,
    PhiC,
    Phi,
}

impl fmt::Display for DictName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DictName::PsiC => "psi_c",
            DictName::PhiC => "phi_c",
            DictName::Phi => "phi",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub snr_db: f64,
    pub dict: DictName,
    pub recovery_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmseRow {
    pub snr_db: f64,
    /// 1 or 2.
    pub side: usize,
    pub nmse: f64,
}

/// Learner settings for the synthetic runs: random initialization and a
/// fixed iteration count.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub iters: usize,
    pub objective_tol: Option<f64>,
    pub normalization: Normalization,
    pub dead_atom_replacement: bool,
    pub keep_better_codes: bool,
    /// On by default: without the moves the learner stalls with a few
    /// merged or misplaced atoms, which dominates the separation error.
    pub atom_moves: Option<AtomMoves>,
    pub matching: Matching,
    pub bp: BPConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            iters: 100,
            objective_tol: None,
            normalization: Normalization::Stacked,
            dead_atom_replacement: true,
            keep_better_codes: true,
            atom_moves: Some(AtomMoves::default()),
            matching: Matching::Nearest,
            bp: BPConfig::default(),
        }
    }
}

fn train_config(spec: &SynthSpec, cfg: &BenchConfig, seed: u64) -> Result<TrainConfig> {
    let mut tc = TrainConfig::new(spec.gamma, spec.d, SparsityBudget::new(spec.s_z, spec.s_v)?);
    tc.max_iters = cfg.iters;
    tc.objective_tol = cfg.objective_tol;
    tc.normalization = cfg.normalization;
    tc.dead_atom_replacement = cfg.dead_atom_replacement;
    tc.keep_better_codes = cfg.keep_better_codes;
    tc.atom_moves = cfg.atom_moves;
    tc.init = Init::Random;
    tc.seed = seed;
    Ok(tc)
}

/// Draws a trial's data, adds noise to both modalities, and trains.
fn noisy_trial(
    spec: &SynthSpec,
    cfg: &BenchConfig,
    snr_db: f64,
    trial: usize,
) -> Result<(DictionaryTriple, DictionaryTriple, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.trial_seed(trial));
    let (truth, _, clean) = generate(spec, &mut rng)?;
    let data = TrainingSet::new(
        add_noise_snr(&clean.y, snr_db, &mut rng)?,
        add_noise_snr(&clean.x, snr_db, &mut rng)?,
    )?;
    let init_seed = rng.random();
    let learned = train_coupled(&data, &train_config(spec, cfg, init_seed)?)?.dict;
    Ok((truth, learned, rng))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// Mean atom recovery per dictionary and SNR; trials run in parallel and
/// each trial is seeded by `seed + trial`.
pub fn run_table1(spec: &SynthSpec, cfg: &BenchConfig) -> Result<Vec<RecoveryRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &snr_db in &spec.snrs_db {
        let per_trial = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let (truth, learned, _) = noisy_trial(spec, cfg, snr_db, trial)?;
                let score = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
                    atom_recovery_rate_with(
                        &normalize_columns(a),
                        &normalize_columns(b),
                        cfg.matching,
                    )
                };
                Ok([
                    score(&truth.psi_c, &learned.psi_c)?,
                    score(&truth.phi_c, &learned.phi_c)?,
                    score(&truth.phi, &learned.phi)?,
                ])
            })
            .collect::<Result<Vec<[f64; 3]>>>()?;
        for (k, dict) in [DictName::PsiC, DictName::PhiC, DictName::Phi]
            .into_iter()
            .enumerate()
        {
            rows.push(RecoveryRow {
                snr_db,
                dict,
                recovery_pct: mean(per_trial.iter().map(|r| r[k])),
            });
        }
    }
    Ok(rows)
}

/// Mean separation NMSE per side and SNR on fresh mixtures `m = x1 + x2`
/// with a shared innovation component, using dictionaries learned from
/// noisy training data. Mixtures and side information carry noise at the
/// same SNR.
pub fn run_table2(spec: &SynthSpec, cfg: &BenchConfig) -> Result<Vec<NmseRow>> {
    spec.validate()?;
    if spec.mixtures == 0 {
        return Err(Error::arg("mixture count must be positive"));
    }
    let mut rows = Vec::new();
    for &snr_db in &spec.snrs_db {
        let per_trial = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let (truth, learned, mut rng) = noisy_trial(spec, cfg, snr_db, trial)?;
                let solver = SeparationSolver::new(&learned)?;
                let mut totals = [0.0, 0.0];
                for _ in 0..spec.mixtures {
                    let (m, y1, y2, x1, x2) = planted_mixture(spec, &truth, &mut rng);
                    let problem = SeparationProblem {
                        m: add_noise_vec(&m, snr_db, &mut rng)?,
                        y1: add_noise_vec(&y1, snr_db, &mut rng)?,
                        y2: add_noise_vec(&y2, snr_db, &mut rng)?,
                    };
                    let (sol, _) = solver.solve_or_project(&problem, &cfg.bp)?;
                    let (e1, e2) = reconstruct_patches(&sol, &learned, true);
                    totals[0] += nmse(&x1, &e1)?;
                    totals[1] += nmse(&x2, &e2)?;
                }
                Ok(totals.map(|t| t / spec.mixtures as f64))
            })
            .collect::<Result<Vec<[f64; 2]>>>()?;
        for side in 0..2 {
            rows.push(NmseRow {
                snr_db,
                side: side + 1,
                nmse: mean(per_trial.iter().map(|r| r[side])),
            });
        }
    }
    Ok(rows)
}

fn add_noise_vec(v: &DVector<f64>, snr_db: f64, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    Ok(add_noise_snr(&m, snr_db, rng)?.column(0).into_owned())
}

/// Returns `(m, y1, y2, x1, x2)` for one planted pair sharing `v`.
fn planted_mixture(
    spec: &SynthSpec,
    dict: &DictionaryTriple,
    rng: &mut impl Rng,
) -> (
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
) {
    let z1 = sparse_codes(spec.gamma, 1, spec.s_z, spec.coeff_range, rng)
        .column(0)
        .into_owned();
    let z2 = sparse_codes(spec.gamma, 1, spec.s_z, spec.coeff_range, rng)
        .column(0)
        .into_owned();
    let v = sparse_codes(spec.d, 1, spec.s_v, spec.coeff_range, rng)
        .column(0)
        .into_owned();
    let innovation = &dict.phi * &v;
    let x1 = &dict.phi_c * &z1 + &innovation;
    let x2 = &dict.phi_c * &z2 + &innovation;
    (&x1 + &x2, &dict.psi_c * z1, &dict.psi_c * z2, x1, x2)
}

fn snr_label(snr_db: f64) -> String {
    if snr_db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{snr_db}")
    }
}

pub fn write_table1_csv(rows: &[RecoveryRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Numerical(format!("csv output failed: {e}"));
    w.write_record(["snr_db", "dict", "recovery_pct"])
        .map_err(wrap)?;
    for r in rows {
        w.write_record([
            snr_label(r.snr_db),
            r.dict.to_string(),
            format!("{:.4}", r.recovery_pct),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_table2_csv(rows: &[NmseRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Numerical(format!("csv output failed: {e}"));
    w.write_record(["snr_db", "side", "nmse"]).map_err(wrap)?;
    for r in rows {
        w.write_record([
            snr_label(r.snr_db),
            format!("x{}", r.side),
            format!("{:.6e}", r.nmse),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Parses a comma-separated SNR list such as `inf,40,15`.
pub fn parse_snr_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .map(|s| match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" => Ok(f64::INFINITY),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0)
                .ok_or_else(|| Error::arg(format!("bad SNR value {s:?}"))),
        })
        .collect()
}

/// Synthetic painted panel: smooth tonal regions plus brush-stroke texture
/// patches of random orientation and wavelength, clamped to `[0, 255]`.
pub fn paint_texture(height: usize, width: usize, rng: &mut impl Rng) -> ImagePlane {
    let scale = height.min(width) as f64;
    let blobs: Vec<[f64; 4]> = (0..8)
        .map(|_| {
            [
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                rng.random_range(scale / 10.0..scale / 4.0),
                rng.random_range(-70.0..70.0),
            ]
        })
        .collect();
    let strokes: Vec<[f64; 6]> = (0..6)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            [
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                rng.random_range(scale / 8.0..scale / 3.0),
                angle,
                rng.random_range(3.0..10.0),
                rng.random_range(15.0..35.0),
            ]
        })
        .collect();
    let base = rng.random_range(100.0..150.0);
    ImagePlane::from_fn(height, width, |r, c| {
        let (r, c) = (r as f64, c as f64);
        let mut v = base;
        for &[br, bc, sigma, amp] in &blobs {
            let d2 = (r - br).powi(2) + (c - bc).powi(2);
            v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        for &[sr, sc, radius, angle, wavelength, amp] in &strokes {
            let d2 = (r - sr).powi(2) + (c - sc).powi(2);
            let envelope = (-d2 / (2.0 * radius * radius)).exp();
            let phase =
                (r * angle.cos() + c * angle.sin()) * 2.0 * std::f64::consts::PI / wavelength;
            v += amp * envelope * phase.sin();
        }
        v.clamp(0.0, 255.0)
    })
}

/// Zero-mean wood-grain pattern shared by both sides of a panel.
pub fn wood_grain(height: usize, width: usize, rng: &mut impl Rng) -> ImagePlane {
    let period = rng.random_range(5.0..9.0);
    let wobble = rng.random_range(40.0..90.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    ImagePlane::from_fn(height, width, |r, c| {
        let t = c as f64 + 3.0 * (std::f64::consts::TAU * r as f64 / wobble + phase).sin();
        6.0 * (std::f64::consts::TAU * t / period).sin()
    })
}

/// X-ray appearance of a painted side: an affine response `1.5 v - 70` to
/// the paint layer, clamped to `[0, 255]`, plus the panel's grain.
pub fn simulate_xray(visual: &ImagePlane, grain: &ImagePlane) -> Result<ImagePlane> {
    let paint = visual.map(|v| (1.5 * v - 70.0).clamp(0.0, 255.0));
    paint.zip_map(grain, |p, g| p + g)
}

/// Ground truth and inputs of one simulated double-sided panel.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub y1: ImagePlane,
    pub y2: ImagePlane,
    pub x1: ImagePlane,
    pub x2: ImagePlane,
    /// `x1 + x2`.
    pub m: ImagePlane,
}

impl SimulatedPanel {
    /// Panel from two given visual sides and a shared grain.
    pub fn from_visuals(y1: ImagePlane, y2: ImagePlane, grain: &ImagePlane) -> Result<Self> {
        y1.check_same_dims(&y2)?;
        let x1 = simulate_xray(&y1, grain)?;
        let x2 = simulate_xray(&y2, grain)?;
        let m = &x1 + &x2;
        Ok(Self { y1, y2, x1, x2, m })
    }

    /// Panel from two given visual sides and a grain drawn from `seed`.
    pub fn from_visuals_seeded(y1: ImagePlane, y2: ImagePlane, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grain = wood_grain(y1.height(), y1.width(), &mut rng);
        Self::from_visuals(y1, y2, &grain)
    }

    /// Two independently painted sides on one panel.
    pub fn generate(height: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y1 = paint_texture(height, width, &mut rng);
        let y2 = paint_texture(height, width, &mut rng);
        let grain = wood_grain(height, width, &mut rng);
        Self::from_visuals(y1, y2, &grain)
    }
}

/// Simulated-panel benchmark: per-scale dictionaries learned on generated
/// training panels, then naive, single-scale and multi-scale separation of a
/// held-out panel.
#[derive(Debug, Clone)]
pub struct MixConfig {
    /// Side of the square generated panels.
    pub size: usize,
    pub patch_side: usize,
    /// `gamma = d`.
    pub atoms: usize,
    pub s_z: usize,
    pub s_v: usize,
    pub iters: usize,
    pub train_panels: usize,
    /// Scales with their own dictionary; deeper scales reuse the last one.
    pub trained_scales: usize,
    /// Grid step of every pyramid scale, finest first.
    pub steps: Vec<usize>,
    /// The held-out panel uses `seed`, training panel `k` uses `seed + 100 + k`.
    pub seed: u64,
    pub include_v: bool,
    pub bp: BPConfig,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            size: 128,
            patch_side: 4,
            atoms: 32,
            s_z: 3,
            s_v: 2,
            iters: 20,
            train_panels: 4,
            trained_scales: 2,
            steps: vec![2, 4, 4, 2],
            seed: 7,
            include_v: true,
            bp: BPConfig::default(),
        }
    }
}

impl MixConfig {
    pub fn pyramid(&self) -> Result<PyramidSpec> {
        PyramidSpec::uniform(self.patch_side, &self.steps)
    }

    pub fn test_panel(&self) -> Result<SimulatedPanel> {
        SimulatedPanel::generate(self.size, self.size, self.seed)
    }
}

/// Dictionaries for the first `trained_scales` scales, each trained on
/// every grid patch of that scale over all training panels.
pub fn train_mix_dictionaries(cfg: &MixConfig) -> Result<Vec<DictionaryTriple>> {
    if cfg.trained_scales == 0 || cfg.train_panels == 0 {
        return Err(Error::arg(
            "need at least one training panel and one trained scale",
        ));
    }
    let spec = cfg.pyramid()?;
    let mut pairs = Vec::with_capacity(2 * cfg.train_panels);
    for k in 0..cfg.train_panels {
        let panel =
            SimulatedPanel::generate(cfg.size, cfg.size, cfg.seed.wrapping_add(100 + k as u64))?;
        pairs.push((panel.y1, panel.x1));
        pairs.push((panel.y2, panel.x2));
    }
    (0..cfg.trained_scales.min(spec.levels()))
        .map(|l| {
            let data = scale_training_set(&pairs, &spec, l)?;
            let mut tc =
                TrainConfig::new(cfg.atoms, cfg.atoms, SparsityBudget::new(cfg.s_z, cfg.s_v)?);
            tc.max_iters = cfg.iters;
            tc.init = Init::Random;
            tc.seed = cfg.seed.wrapping_add(l as u64);
            let out = train_coupled(&data, &tc)?;
            log::info!(
                "scale={} samples={} objective_start={:.4e} objective_end={:.4e}",
                l + 1,
                data.len(),
                out.trace[0],
                out.trace.last().copied().unwrap_or(f64::NAN)
            );
            Ok(out.dict)
        })
        .collect()
}

/// Scores of one separation method against the panel's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MixRow {
    pub method: &'static str,
    pub psnr: [f64; 2],
    pub ssim: [f64; 2],
    /// Energy of the scale-2 low band of `x1 - x2`.
    pub low_band_energy: f64,
}

/// Energy of the first DC map (scale-2 low band) of `a - b`.
pub fn low_band_energy(a: &ImagePlane, b: &ImagePlane, spec: &PyramidSpec) -> Result<f64> {
    Ok(decompose(&(a - b), spec)?.low[1].energy())
}

/// Rows `truth`, `naive` (`m / 2` on both sides), `single_scale` and
/// `multiscale`.
pub fn run_mix_bench(
    cfg: &MixConfig,
    panel: &SimulatedPanel,
    dicts: &[DictionaryTriple],
) -> Result<Vec<MixRow>> {
    let spec = cfg.pyramid()?;
    let first = dicts.first().ok_or_else(|| Error::arg("no dictionaries"))?;
    let single = separate_single_scale(
        &panel.m,
        &panel.y1,
        &panel.y2,
        first,
        spec.scales[0],
        &cfg.bp,
        cfg.include_v,
    )?;
    log::info!("method=single_scale {}", single.stats);
    let multi = separate_multiscale(
        &panel.m,
        &panel.y1,
        &panel.y2,
        &spec,
        dicts,
        &cfg.bp,
        cfg.include_v,
    )?;
    log::info!("method=multiscale {}", multi.stats);
    let half = &panel.m * 0.5;
    let score = |method: &'static str, x1: &ImagePlane, x2: &ImagePlane| -> Result<MixRow> {
        Ok(MixRow {
            method,
            psnr: [psnr(&panel.x1, x1, 255.0)?, psnr(&panel.x2, x2, 255.0)?],
            ssim: [ssim(&panel.x1, x1)?, ssim(&panel.x2, x2)?],
            low_band_energy: low_band_energy(x1, x2, &spec)?,
        })
    };
    Ok(vec![
        score("truth", &panel.x1, &panel.x2)?,
        score("naive", &half, &half)?,
        score("single_scale", &single.x1, &single.x2)?,
        score("multiscale", &multi.x1, &multi.x2)?,
    ])
}

pub fn write_mix_csv(rows: &[MixRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Numerical(format!("csv output failed: {e}"));
    w.write_record([
        "method",
        "psnr_x1",
        "psnr_x2",
        "ssim_x1",
        "ssim_x2",
        "low_band_energy",
    ])
    .map_err(wrap)?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            format!("{:.4}", r.psnr[0]),
            format!("{:.4}", r.psnr[1]),
            format!("{:.6}", r.ssim[0]),
            format!("{:.6}", r.ssim[1]),
            format!("{:.6e}", r.low_band_energy),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
