//! Per-patch separation of a mixed X-ray patch into its two sides using the
//! visual patches as side information, posed as weighted basis pursuit.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::coupled_dl::DictionaryTriple;
use crate::error::{Error, Result};
use crate::numerics::{least_squares, thin_svd};

const CERTIFY_EVERY: usize = 50;
const KKT_TOL: f64 = 1e-9;

/// ADMM settings. Tolerances are relative to `||b||`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BPConfig {
    pub rho: f64,
    pub feas_tol: f64,
    pub dual_tol: f64,
    pub max_iters: usize,
}

impl Default for BPConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            feas_tol: 1e-6,
            dual_tol: 1e-6,
            max_iters: 5000,
        }
    }
}

impl BPConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rho, self.feas_tol, self.dual_tol]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.max_iters == 0 {
            return Err(Error::arg(format!(
                "invalid basis pursuit configuration {self:?}"
            )));
        }
        Ok(())
    }
}

/// DC-removed mixture patch `m` and side-information patches `y1`, `y2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationProblem {
    pub m: DVector<f64>,
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationSolution {
    pub z1c: DVector<f64>,
    pub z2c: DVector<f64>,
    pub v: DVector<f64>,
    /// `||z1c||_1 + ||z2c||_1 + 2 ||v||_1`.
    pub objective: f64,
    /// `||A w - b||_2`.
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SeparationSolution {
    fn zeros(gamma: usize, d: usize) -> Self {
        Self {
            z1c: DVector::zeros(gamma),
            z2c: DVector::zeros(gamma),
            v: DVector::zeros(d),
            objective: 0.0,
            constraint_residual: 0.0,
            iterations: 0,
            converged: true,
        }
    }
}

/// Plain basis pursuit `min ||w||_1 s.t. A w = b` with the affine projection
/// precomputed from a pseudo-inverse of `A`.
#[derive(Debug, Clone)]
pub struct BasisPursuit {
    a: DMatrix<f64>,
    pinv: DMatrix<f64>,
    /// `I - pinv(A) A`.
    projector: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct BasisPursuitResult {
    pub w: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BasisPursuit {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let pinv = thin_svd(&a)?.pseudo_inverse();
        let projector = DMatrix::identity(a.ncols(), a.ncols()) - &pinv * &a;
        Ok(Self { a, pinv, projector })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Distance from `b` to the range of `A`.
    pub fn range_residual(&self, b: &DVector<f64>) -> f64 {
        (&self.a * (&self.pinv * b) - b).norm()
    }

    /// Minimum-norm least-squares solution `pinv(A) b`.
    pub fn min_norm(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.pinv * b
    }

    /// Orthogonal projection of `b` onto the range of `A`.
    pub fn project_onto_range(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.a * (&self.pinv * b)
    }

    /// Solves after scaling `b` to unit norm, so `rho` and the tolerances
    /// act on a problem of fixed scale. Errors if `b` is outside the range
    /// of `A` by more than `feas_tol`.
    pub fn solve(&self, b: &DVector<f64>, cfg: &BPConfig) -> Result<BasisPursuitResult> {
        cfg.validate()?;
        if b.len() != self.a.nrows() {
            return Err(Error::arg(format!(
                "right-hand side has {} entries, constraint matrix has {} rows",
                b.len(),
                self.a.nrows()
            )));
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("right-hand side contains non-finite entries"));
        }
        let scale = b.norm();
        let cols = self.a.ncols();
        if scale == 0.0 {
            return Ok(BasisPursuitResult {
                w: DVector::zeros(cols),
                iterations: 0,
                converged: true,
            });
        }
        let bn = b / scale;
        let residual = self.range_residual(&bn);
        if residual > cfg.feas_tol {
            return Err(Error::Infeasible {
                residual: residual * scale,
                tolerance: cfg.feas_tol * scale,
            });
        }

        let offset = &self.pinv * &bn;
        let threshold = 1.0 / cfg.rho;
        let mut z = DVector::zeros(cols);
        let mut u = DVector::zeros(cols);
        let mut x = offset.clone();
        let mut converged = false;
        let mut iterations = 0;
        for k in 1..=cfg.max_iters {
            iterations = k;
            x = &self.projector * (&z - &u) + &offset;
            let z_old = std::mem::replace(&mut z, (&x + &u).map(|t| soft_threshold(t, threshold)));
            u += &x - &z;
            let primal = (&x - &z).norm();
            let dual = cfg.rho * (&z - &z_old).norm();
            if primal < cfg.feas_tol && dual < cfg.dual_tol {
                converged = true;
                break;
            }
            if k % CERTIFY_EVERY == 0 {
                if let Some(w) = self
                    .polish(&z, &bn, cfg.feas_tol)
                    .filter(|w| self.certified_optimal(w))
                {
                    return Ok(BasisPursuitResult {
                        w: w * scale,
                        iterations,
                        converged: true,
                    });
                }
            }
        }
        let w = self
            .polish(&z, &bn, cfg.feas_tol)
            .filter(|w| w.lp_norm(1) <= x.lp_norm(1))
            .unwrap_or(x);
        Ok(BasisPursuitResult {
            w: w * scale,
            iterations,
            converged,
        })
    }

    /// KKT check for `min ||w||_1 s.t. A w = b`: some `y` with
    /// `A_S^T y = sign(w_S)` on the support and `|A_j^T y| <= 1` elsewhere.
    fn certified_optimal(&self, w: &DVector<f64>) -> bool {
        let support: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
        let a_s = self.a.select_columns(support.iter());
        let signs = DVector::from_iterator(support.len(), support.iter().map(|&j| w[j].signum()));
        let Ok(y) = least_squares(&a_s.transpose(), &signs) else {
            return false;
        };
        let correlations = self.a.tr_mul(&y);
        if (0..support.len()).any(|p| (correlations[support[p]] - signs[p]).abs() > KKT_TOL) {
            return false;
        }
        correlations.iter().all(|c| c.abs() <= 1.0 + KKT_TOL)
    }

    /// Least squares restricted to the support of the sparse iterate, kept
    /// only if it satisfies the constraints.
    fn polish(&self, z: &DVector<f64>, b: &DVector<f64>, feas_tol: f64) -> Option<DVector<f64>> {
        let support: Vec<usize> = (0..z.len()).filter(|&j| z[j] != 0.0).collect();
        if support.is_empty() {
            return None;
        }
        let sub = self.a.select_columns(support.iter());
        let coeffs = least_squares(&sub, b).ok()?;
        if (&sub * &coeffs - b).norm() > feas_tol * 1e-3 {
            return None;
        }
        let mut w = DVector::zeros(z.len());
        for (&j, &c) in support.iter().zip(coeffs.iter()) {
            w[j] = c;
        }
        Some(w)
    }
}

fn soft_threshold(t: f64, k: f64) -> f64 {
    if t > k {
        t - k
    } else if t < -k {
        t + k
    } else {
        0.0
    }
}

/// Separation solver for one dictionary triple, reusable across patches.
#[derive(Debug, Clone)]
pub struct SeparationSolver {
    dict: DictionaryTriple,
    bp: BasisPursuit,
}

impl SeparationSolver {
    pub fn new(dict: &DictionaryTriple) -> Result<Self> {
        let bp = BasisPursuit::new(scaled_constraint_matrix(dict))?;
        Ok(Self {
            dict: dict.clone(),
            bp,
        })
    }

    pub fn dict(&self) -> &DictionaryTriple {
        &self.dict
    }

    fn rhs(&self, p: &SeparationProblem) -> Result<DVector<f64>> {
        let n = self.dict.n();
        if p.m.len() != n || p.y1.len() != n || p.y2.len() != n {
            return Err(Error::arg(format!(
                "patches have {}, {}, {} entries, dictionary patch dimension is {n}",
                p.m.len(),
                p.y1.len(),
                p.y2.len()
            )));
        }
        let mut b = DVector::zeros(3 * n);
        b.rows_mut(0, n).copy_from(&p.m);
        b.rows_mut(n, n).copy_from(&p.y1);
        b.rows_mut(2 * n, n).copy_from(&p.y2);
        Ok(b)
    }

    pub fn solve(&self, p: &SeparationProblem, cfg: &BPConfig) -> Result<SeparationSolution> {
        let b = self.rhs(p)?;
        self.solve_rhs(&b, cfg)
    }

    /// Like [`SeparationSolver::solve`], but an infeasible right-hand side is
    /// first projected onto the range of the constraint matrix. The flag
    /// reports whether that happened.
    pub fn solve_or_project(
        &self,
        p: &SeparationProblem,
        cfg: &BPConfig,
    ) -> Result<(SeparationSolution, bool)> {
        let b = self.rhs(p)?;
        match self.solve_rhs(&b, cfg) {
            Err(Error::Infeasible { .. }) => {
                let projected = self.bp.project_onto_range(&b);
                let mut sol = self.solve_rhs(&projected, cfg)?;
                sol.constraint_residual = self.constraint_residual(&sol, &b);
                Ok((sol, true))
            }
            other => other.map(|s| (s, false)),
        }
    }

    /// Minimum-norm least-squares codes in the weighted coordinates; the
    /// fallback when pursuit fails on a patch.
    pub fn least_squares(&self, p: &SeparationProblem) -> Result<SeparationSolution> {
        let b = self.rhs(p)?;
        let w = self.bp.min_norm(&b);
        let sol = self.split(&w, 0, false);
        Ok(SeparationSolution {
            constraint_residual: self.constraint_residual(&sol, &b),
            ..sol
        })
    }

    fn split(&self, w: &DVector<f64>, iterations: usize, converged: bool) -> SeparationSolution {
        let (gamma, d) = (self.dict.gamma(), self.dict.d());
        // undo the column scaling of the innovation block (weight 2)
        SeparationSolution {
            z1c: w.rows(0, gamma).into_owned(),
            z2c: w.rows(gamma, gamma).into_owned(),
            v: w.rows(2 * gamma, d) / 2.0,
            objective: w.lp_norm(1),
            constraint_residual: 0.0,
            iterations,
            converged,
        }
    }

    fn solve_rhs(&self, b: &DVector<f64>, cfg: &BPConfig) -> Result<SeparationSolution> {
        let (gamma, d) = (self.dict.gamma(), self.dict.d());
        if b.iter().all(|&v| v == 0.0) {
            cfg.validate()?;
            return Ok(SeparationSolution::zeros(gamma, d));
        }
        let result = self.bp.solve(b, cfg)?;
        if !result.converged {
            debug!("bp_iterations={} converged=false", result.iterations);
        }
        let mut sol = self.split(&result.w, result.iterations, result.converged);
        sol.constraint_residual = self.constraint_residual(&sol, b);
        Ok(sol)
    }

    fn constraint_residual(&self, sol: &SeparationSolution, b: &DVector<f64>) -> f64 {
        let a = constraint_matrix(&self.dict);
        let mut w = DVector::zeros(a.ncols());
        let gamma = self.dict.gamma();
        w.rows_mut(0, gamma).copy_from(&sol.z1c);
        w.rows_mut(gamma, gamma).copy_from(&sol.z2c);
        w.rows_mut(2 * gamma, self.dict.d()).copy_from(&sol.v);
        (a * w - b).norm()
    }
}

/// `[[phi_c, phi_c, 2 phi], [psi_c, 0, 0], [0, psi_c, 0]]`.
pub fn constraint_matrix(dict: &DictionaryTriple) -> DMatrix<f64> {
    let mut a = scaled_constraint_matrix(dict);
    let (n, gamma, d) = (dict.n(), dict.gamma(), dict.d());
    a.view_mut((0, 2 * gamma), (n, d)).scale_mut(2.0);
    a
}

/// The constraint matrix with each column divided by its objective weight.
fn scaled_constraint_matrix(dict: &DictionaryTriple) -> DMatrix<f64> {
    let (n, gamma, d) = (dict.n(), dict.gamma(), dict.d());
    let mut a = DMatrix::zeros(3 * n, 2 * gamma + d);
    a.view_mut((0, 0), (n, gamma)).copy_from(&dict.phi_c);
    a.view_mut((0, gamma), (n, gamma)).copy_from(&dict.phi_c);
    a.view_mut((0, 2 * gamma), (n, d)).copy_from(&dict.phi);
    a.view_mut((n, 0), (n, gamma)).copy_from(&dict.psi_c);
    a.view_mut((2 * n, gamma), (n, gamma))
        .copy_from(&dict.psi_c);
    a
}

pub fn solve_separation(
    p: &SeparationProblem,
    dict: &DictionaryTriple,
    cfg: &BPConfig,
) -> Result<SeparationSolution> {
    SeparationSolver::new(dict)?.solve(p, cfg)
}

/// X-ray patches of both sides, with or without the shared innovation term.
pub fn reconstruct_patches(
    sol: &SeparationSolution,
    dict: &DictionaryTriple,
    include_v: bool,
) -> (DVector<f64>, DVector<f64>) {
    let mut x1 = &dict.phi_c * &sol.z1c;
    let mut x2 = &dict.phi_c * &sol.z2c;
    if include_v {
        let innovation = &dict.phi * &sol.v;
        x1 += &innovation;
        x2 += &innovation;
    }
    (x1, x2)
}
