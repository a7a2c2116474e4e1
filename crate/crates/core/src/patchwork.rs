//! Single-scale pipeline: overlapping patch grids with per-patch DC removal,
//! per-patch separation, DC splitting by the visual ratio and overlap-add.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coupled_dl::DictionaryTriple;
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::separator::{reconstruct_patches, BPConfig, SeparationProblem, SeparationSolver};

/// Square patches of side `patch_side` whose top-left corners sit on a
/// lattice of pitch `step`. Patches running past the border read
/// edge-replicated pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGridSpec {
    pub patch_side: usize,
    pub step: usize,
}

impl PatchGridSpec {
    /// `1 <= step <= patch_side`; `step == patch_side` tiles without overlap.
    pub fn new(patch_side: usize, step: usize) -> Result<Self> {
        if patch_side == 0 || step == 0 || step > patch_side {
            return Err(Error::arg(format!(
                "patch grid needs 1 <= step <= patch side, got step {step} for side {patch_side}"
            )));
        }
        Ok(Self { patch_side, step })
    }

    /// Pixels per patch.
    pub fn n(&self) -> usize {
        self.patch_side * self.patch_side
    }

    /// `(floor(H / step), floor(W / step))`.
    pub fn grid_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height / self.step, width / self.step)
    }

    fn check_image(&self, height: usize, width: usize) -> Result<()> {
        if height < self.patch_side || width < self.patch_side {
            return Err(Error::arg(format!(
                "image {height}x{width} is smaller than one {0}x{0} patch",
                self.patch_side
            )));
        }
        Ok(())
    }

    /// Last image row (or column) reached by any patch, clamped to the image.
    fn covered_extent(&self, size: usize) -> usize {
        let last_origin = (size / self.step - 1) * self.step;
        (last_origin + self.patch_side).min(size)
    }
}

/// Every grid patch of one image split into its mean and the zero-mean rest.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub spec: PatchGridSpec,
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    /// Patch means in grid row-major order.
    pub dc: Vec<f64>,
    /// One zero-mean patch per column, pixels row-major within the patch.
    pub residuals: DMatrix<f64>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.dc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dc.is_empty()
    }

    /// Top-left pixel of patch `index`.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        (
            (index / self.cols) * self.spec.step,
            (index % self.cols) * self.spec.step,
        )
    }

    pub fn residual(&self, index: usize) -> DVector<f64> {
        self.residuals.column(index).into_owned()
    }

    /// Patch means as a `rows x cols` plane.
    pub fn dc_plane(&self) -> ImagePlane {
        ImagePlane::from_fn(self.rows, self.cols, |r, c| self.dc[r * self.cols + c])
    }
}

/// Cuts `img` into the grid patches of `spec`.
pub fn extract_grid(img: &ImagePlane, spec: PatchGridSpec) -> Result<PatchGrid> {
    let (height, width) = img.dims();
    spec.check_image(height, width)?;
    let (rows, cols) = spec.grid_dims(height, width);
    let side = spec.patch_side;
    let n = spec.n();
    let mut residuals = DMatrix::zeros(n, rows * cols);
    let mut dc = Vec::with_capacity(rows * cols);
    for idx in 0..rows * cols {
        let (r0, c0) = ((idx / cols) * spec.step, (idx % cols) * spec.step);
        let mut col = residuals.column_mut(idx);
        for a in 0..side {
            for b in 0..side {
                col[a * side + b] = img.get((r0 + a).min(height - 1), (c0 + b).min(width - 1));
            }
        }
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        dc.push(mean);
    }
    Ok(PatchGrid {
        spec,
        height,
        width,
        rows,
        cols,
        dc,
        residuals,
    })
}

/// Averages co-located pixels of the grid patches (one per column) into an
/// `height x width` plane. Pixels no patch reaches, possible only when the
/// grid stops short of the border, copy the nearest covered pixel.
pub fn overlap_add(
    patches: &DMatrix<f64>,
    spec: PatchGridSpec,
    height: usize,
    width: usize,
) -> Result<ImagePlane> {
    spec.check_image(height, width)?;
    let (rows, cols) = spec.grid_dims(height, width);
    if patches.shape() != (spec.n(), rows * cols) {
        return Err(Error::arg(format!(
            "expected {}x{} patch matrix for a {rows}x{cols} grid, got {}x{}",
            spec.n(),
            rows * cols,
            patches.nrows(),
            patches.ncols()
        )));
    }
    let side = spec.patch_side;
    let mut sum = vec![0.0; height * width];
    let mut count = vec![0u32; height * width];
    for (idx, patch) in patches.column_iter().enumerate() {
        let (r0, c0) = ((idx / cols) * spec.step, (idx % cols) * spec.step);
        for a in 0..side.min(height - r0) {
            for b in 0..side.min(width - c0) {
                let p = (r0 + a) * width + c0 + b;
                sum[p] += patch[a * side + b];
                count[p] += 1;
            }
        }
    }
    let (h_cov, w_cov) = (spec.covered_extent(height), spec.covered_extent(width));
    Ok(ImagePlane::from_fn(height, width, |r, c| {
        let p = r.min(h_cov - 1) * width + c.min(w_cov - 1);
        sum[p] / count[p] as f64
    }))
}

/// Splits the mixture DC `m_dc` in proportion to the (clamped nonnegative)
/// visual DCs. The two parts always add up to `m_dc` exactly.
pub fn dc_split(m_dc: f64, y1_dc: f64, y2_dc: f64) -> (f64, f64) {
    let (w1, w2) = (y1_dc.max(0.0), y2_dc.max(0.0));
    let total = w1 + w2;
    if !(total >= 1e-9) {
        let half = m_dc / 2.0;
        return (half, m_dc - half);
    }
    // The smaller share is rounded once; `m - large` is then exact
    // (Sterbenz), so the returned pair sums to `m_dc` without error.
    let first_small = w1 <= w2;
    let ratio = if first_small { w1 / total } else { w2 / total };
    let large = m_dc - m_dc * ratio;
    let small = m_dc - large;
    if first_small {
        (small, large)
    } else {
        (large, small)
    }
}

/// Outcome counts of a patchwise separation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatchStats {
    pub patches: usize,
    /// Right-hand side was projected onto the constraint range first.
    pub projected: usize,
    /// Pursuit stopped at its iteration cap.
    pub unconverged: usize,
    /// Pursuit failed; the minimum-norm least-squares codes were used.
    pub fallbacks: usize,
}

impl PatchStats {
    pub fn merge(&mut self, other: PatchStats) {
        self.patches += other.patches;
        self.projected += other.projected;
        self.unconverged += other.unconverged;
        self.fallbacks += other.fallbacks;
    }
}

impl std::fmt::Display for PatchStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "patches={} projected={} unconverged={} fallbacks={}",
            self.patches, self.projected, self.unconverged, self.fallbacks
        )
    }
}

/// Separated zero-mean patches of both sides with the patch DCs of the
/// three inputs.
#[derive(Debug, Clone)]
pub struct TexturePatches {
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub m: PatchGrid,
    pub y1: PatchGrid,
    pub y2: PatchGrid,
    pub stats: PatchStats,
}

enum PatchOutcome {
    Solved,
    Projected,
    Unconverged,
    Fallback,
}

/// Runs the per-patch separation over the grid of `spec` without touching
/// the DC values.
pub fn separate_textures(
    m: &ImagePlane,
    y1: &ImagePlane,
    y2: &ImagePlane,
    solver: &SeparationSolver,
    spec: PatchGridSpec,
    cfg: &BPConfig,
    include_v: bool,
) -> Result<TexturePatches> {
    m.check_same_dims(y1)?;
    m.check_same_dims(y2)?;
    cfg.validate()?;
    if solver.dict().n() != spec.n() {
        return Err(Error::arg(format!(
            "dictionary patch dimension {} does not match {side}x{side} patches",
            solver.dict().n(),
            side = spec.patch_side
        )));
    }
    let gm = extract_grid(m, spec)?;
    let g1 = extract_grid(y1, spec)?;
    let g2 = extract_grid(y2, spec)?;
    let results: Vec<(DVector<f64>, DVector<f64>, PatchOutcome)> = (0..gm.len())
        .into_par_iter()
        .map(|idx| {
            let problem = SeparationProblem {
                m: gm.residual(idx),
                y1: g1.residual(idx),
                y2: g2.residual(idx),
            };
            let (sol, outcome) = match solver.solve_or_project(&problem, cfg) {
                Ok((sol, projected)) => {
                    let outcome = if projected {
                        PatchOutcome::Projected
                    } else if !sol.converged {
                        PatchOutcome::Unconverged
                    } else {
                        PatchOutcome::Solved
                    };
                    (sol, outcome)
                }
                Err(e) => {
                    let (r, c) = gm.origin(idx);
                    warn!("patch_row={r} patch_col={c} error=\"{e}\" using least-squares fallback");
                    (solver.least_squares(&problem)?, PatchOutcome::Fallback)
                }
            };
            let (x1, x2) = reconstruct_patches(&sol, solver.dict(), include_v);
            Ok((x1, x2, outcome))
        })
        .collect::<Result<_>>()?;
    let n = spec.n();
    let mut x1 = DMatrix::zeros(n, gm.len());
    let mut x2 = DMatrix::zeros(n, gm.len());
    let mut stats = PatchStats {
        patches: gm.len(),
        ..Default::default()
    };
    for (idx, (p1, p2, outcome)) in results.into_iter().enumerate() {
        x1.set_column(idx, &p1);
        x2.set_column(idx, &p2);
        match outcome {
            PatchOutcome::Solved => {}
            PatchOutcome::Projected => stats.projected += 1,
            PatchOutcome::Unconverged => stats.unconverged += 1,
            PatchOutcome::Fallback => stats.fallbacks += 1,
        }
    }
    Ok(TexturePatches {
        x1,
        x2,
        m: gm,
        y1: g1,
        y2: g2,
        stats,
    })
}

/// Both separated X-ray sides.
#[derive(Debug, Clone)]
pub struct SeparatedPair {
    pub x1: ImagePlane,
    pub x2: ImagePlane,
    pub stats: PatchStats,
}

/// Separates `m` into two X-ray sides at a single scale: each patch's
/// texture comes from the sparse separation, its DC from [`dc_split`] of the
/// mixture DC by the visual DCs.
#[allow(clippy::too_many_arguments)]
pub fn separate_single_scale(
    m: &ImagePlane,
    y1: &ImagePlane,
    y2: &ImagePlane,
    dict: &DictionaryTriple,
    spec: PatchGridSpec,
    cfg: &BPConfig,
    include_v: bool,
) -> Result<SeparatedPair> {
    let solver = SeparationSolver::new(dict)?;
    let mut tex = separate_textures(m, y1, y2, &solver, spec, cfg, include_v)?;
    for idx in 0..tex.m.len() {
        let (d1, d2) = dc_split(tex.m.dc[idx], tex.y1.dc[idx], tex.y2.dc[idx]);
        tex.x1.column_mut(idx).add_scalar_mut(d1);
        tex.x2.column_mut(idx).add_scalar_mut(d2);
    }
    let (h, w) = m.dims();
    Ok(SeparatedPair {
        x1: overlap_add(&tex.x1, spec, h, w)?,
        x2: overlap_add(&tex.x2, spec, h, w)?,
        stats: tex.stats,
    })
}
