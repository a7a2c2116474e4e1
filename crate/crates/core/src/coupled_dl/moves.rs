//! Structural atom moves that take the alternation out of the local minima
//! greedy coding leaves behind. Two shapes of minimum are handled: one
//! learned atom serving two true directions (split it, reusing the atom that
//! is cheapest to drop), and a common atom whose visual half has vanished
//! (it is really an innovation atom, so it is handed to `phi`).

use nalgebra::{DMatrix, DVector};

use super::{common_scale, CodeMatrices, DictionaryTriple, Normalization, TrainingSet};

/// Tuning of the structural moves; see [`super::TrainConfig::atom_moves`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomMoves {
    /// Iterations a moved atom is exempt from further moves.
    pub protect: usize,
    /// Final iterations run as plain alternation.
    pub settle: usize,
    /// Most-used atoms of each dictionary examined for a split.
    pub candidates: usize,
    /// Visual share of a common atom's energy below which it is handed over.
    pub handover_share: f64,
}

impl Default for AtomMoves {
    fn default() -> Self {
        Self {
            protect: 15,
            settle: 20,
            candidates: 3,
            handover_share: 0.1,
        }
    }
}

/// Per-run bookkeeping: the iteration each atom was last moved.
#[derive(Debug, Clone)]
pub(crate) struct MoveState {
    cfg: AtomMoves,
    common: Vec<Option<usize>>,
    innovation: Vec<Option<usize>>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub(crate) struct MoveCounts {
    pub splits: usize,
    pub handovers: usize,
}

impl MoveState {
    pub(crate) fn new(cfg: AtomMoves, gamma: usize, d: usize) -> Self {
        Self {
            cfg,
            common: vec![None; gamma],
            innovation: vec![None; d],
        }
    }

    pub(crate) fn active(&self, iter: usize, max_iters: usize) -> bool {
        iter + self.cfg.settle < max_iters
    }

    /// Applies at most one handover per common atom and one split per
    /// dictionary. Moved atoms get zero code rows, so the next coding step
    /// decides who uses them.
    pub(crate) fn apply(
        &mut self,
        iter: usize,
        data: &TrainingSet,
        dict: &mut DictionaryTriple,
        codes: &mut CodeMatrices,
        mode: Normalization,
    ) -> MoveCounts {
        let n = dict.n();
        let visual_residual = &data.y - &dict.psi_c * &codes.z;
        let xray_residual = &data.x - &dict.phi_c * &codes.z - &dict.phi * &codes.v;
        let mut counts = MoveCounts {
            handovers: self.hand_over(iter, dict, codes),
            splits: 0,
        };

        let mut scales = DVector::zeros(dict.gamma());
        let mut common = DMatrix::zeros(2 * n, dict.gamma());
        for j in 0..dict.gamma() {
            let s =
                (dict.psi_c.column(j).norm_squared() + dict.phi_c.column(j).norm_squared()).sqrt();
            scales[j] = s;
            if s > 0.0 {
                common
                    .view_mut((0, j), (n, 1))
                    .copy_from(&(dict.psi_c.column(j) / s));
                common
                    .view_mut((n, j), (n, 1))
                    .copy_from(&(dict.phi_c.column(j) / s));
            }
        }
        let mut common_codes = codes.z.clone();
        for (j, mut row) in common_codes.row_iter_mut().enumerate() {
            row *= scales[j];
        }
        let mut residual = DMatrix::zeros(2 * n, data.len());
        residual.rows_mut(0, n).copy_from(&visual_residual);
        residual.rows_mut(n, n).copy_from(&xray_residual);
        if let Some(slots) = split(
            &mut common,
            &common_codes,
            &residual,
            &self.common,
            iter,
            &self.cfg,
        ) {
            for j in slots {
                dict.psi_c.set_column(j, &common.column(j).rows(0, n));
                dict.phi_c.set_column(j, &common.column(j).rows(n, n));
                let s = common_scale(&dict.psi_c, &dict.phi_c, j, mode);
                dict.psi_c.column_mut(j).unscale_mut(s);
                dict.phi_c.column_mut(j).unscale_mut(s);
                codes.z.row_mut(j).fill(0.0);
                self.common[j] = Some(iter);
            }
            counts.splits += 1;
        }
        if let Some(slots) = split(
            &mut dict.phi,
            &codes.v,
            &xray_residual,
            &self.innovation,
            iter,
            &self.cfg,
        ) {
            for j in slots {
                codes.v.row_mut(j).fill(0.0);
                self.innovation[j] = Some(iter);
            }
            counts.splits += 1;
        }
        counts
    }

    /// Common atoms with almost no visual energy move into the innovation
    /// dictionary, replacing its cheapest atom.
    fn hand_over(
        &mut self,
        iter: usize,
        dict: &mut DictionaryTriple,
        codes: &mut CodeMatrices,
    ) -> usize {
        let mut moved = 0;
        for j in 0..dict.gamma() {
            let visual = dict.psi_c.column(j).norm_squared();
            let xray = dict.phi_c.column(j).norm_squared();
            if xray == 0.0 || visual / (visual + xray) >= self.cfg.handover_share {
                continue;
            }
            let cost = removal_costs(&dict.phi, &codes.v);
            let Some(q) = cheapest(&cost, &self.innovation, iter, self.cfg.protect, None) else {
                break;
            };
            let atom = dict.phi_c.column(j).normalize();
            dict.phi.set_column(q, &atom);
            codes.v.row_mut(q).fill(0.0);
            codes.z.row_mut(j).fill(0.0);
            self.innovation[q] = Some(iter);
            moved += 1;
        }
        moved
    }
}

fn free(last: &[Option<usize>], j: usize, iter: usize, protect: usize) -> bool {
    last[j].is_none_or(|l| iter - l >= protect)
}

/// Approximate objective increase from deleting each unit-norm atom: its
/// code energy times the part of it no other atom can absorb.
fn removal_costs(atoms: &DMatrix<f64>, codes: &DMatrix<f64>) -> Vec<f64> {
    let gram = atoms.transpose() * atoms;
    (0..atoms.ncols())
        .map(|q| {
            let overlap = (0..atoms.ncols())
                .filter(|&m| m != q)
                .map(|m| gram[(q, m)] * gram[(q, m)])
                .fold(0.0, f64::max);
            codes.row(q).norm_squared() * (1.0 - overlap)
        })
        .collect()
}

fn cheapest(
    cost: &[f64],
    last: &[Option<usize>],
    iter: usize,
    protect: usize,
    except: Option<usize>,
) -> Option<usize> {
    (0..cost.len())
        .filter(|&q| Some(q) != except && free(last, q, iter, protect))
        .min_by(|a, b| cost[*a].total_cmp(&cost[*b]).then(a.cmp(b)))
}

/// Splits the most-used atom whose users lie on two lines when the energy
/// gained exceeds the removal cost of the cheapest other atom, which takes
/// the second line. Returns the two rewritten slots.
fn split(
    atoms: &mut DMatrix<f64>,
    codes: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    last: &[Option<usize>],
    iter: usize,
    cfg: &AtomMoves,
) -> Option<[usize; 2]> {
    let usage: Vec<usize> = codes
        .row_iter()
        .map(|r| r.iter().filter(|&&c| c != 0.0).count())
        .collect();
    let mut order: Vec<usize> = (0..atoms.ncols())
        .filter(|&j| usage[j] >= 4 && free(last, j, iter, cfg.protect))
        .collect();
    order.sort_by_key(|&j| (std::cmp::Reverse(usage[j]), j));

    let mut best: Option<(f64, usize, DVector<f64>, DVector<f64>)> = None;
    for &j in order.iter().take(cfg.candidates) {
        let users: Vec<DVector<f64>> = (0..codes.ncols())
            .filter(|&t| codes[(j, t)] != 0.0)
            .map(|t| residual.column(t) + atoms.column(j) * codes[(j, t)])
            .collect();
        let Some((a, b, gain)) = two_lines(&DMatrix::from_columns(&users)) else {
            continue;
        };
        if best.as_ref().is_none_or(|(g, ..)| gain > *g) {
            best = Some((gain, j, a, b));
        }
    }
    let (gain, j, a, b) = best?;
    let cost = removal_costs(atoms, codes);
    let q = cheapest(&cost, last, iter, cfg.protect, Some(j))?;
    if gain <= cost[q] {
        return None;
    }
    atoms.set_column(j, &a);
    atoms.set_column(q, &b);
    Some([j, q])
}

/// Two unit directions fitted to the columns of `p` by k-lines clustering
/// (each column joins the line it projects onto more strongly), started from
/// the bisectors of the two leading singular vectors. Also returns the energy
/// captured beyond the best single line, which is not positive when the
/// columns share one line.
fn two_lines(p: &DMatrix<f64>) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    if p.ncols() < 2 {
        return None;
    }
    let leading = |m: DMatrix<f64>| -> Option<(DVector<f64>, f64, Option<DVector<f64>>)> {
        let svd = m.svd(true, false);
        let u = svd.u?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
        let second = order.get(1).map(|&k| u.column(k).into_owned());
        Some((
            u.column(order[0]).into_owned(),
            svd.singular_values[order[0]],
            second,
        ))
    };
    let (u1, s1, u2) = leading(p.clone())?;
    let u2 = u2?;
    let mut a = (&u1 + &u2).normalize();
    let mut b = (&u1 - &u2).normalize();
    for _ in 0..10 {
        let (mut on_a, mut on_b) = (Vec::new(), Vec::new());
        for c in p.column_iter() {
            if c.dot(&a).abs() >= c.dot(&b).abs() {
                on_a.push(c);
            } else {
                on_b.push(c);
            }
        }
        if on_a.is_empty() || on_b.is_empty() {
            break;
        }
        a = leading(DMatrix::from_columns(&on_a))?.0;
        b = leading(DMatrix::from_columns(&on_b))?.0;
    }
    let two: f64 = p
        .column_iter()
        .map(|c| c.dot(&a).powi(2).max(c.dot(&b).powi(2)))
        .sum();
    Some((a, b, two - s1 * s1))
}
