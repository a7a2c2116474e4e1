//! Multi-scale decomposition: the patch-DC map of each scale is the next
//! scale's image, the band-pass detail is what bilinear upsampling of that
//! map misses. Separation runs patchwise on every scale and the coarsest
//! plane is split by the visual DC ratio.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupled_dl::{DictionaryTriple, TrainingSet};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::patchwork::{
    dc_split, extract_grid, overlap_add, separate_textures, PatchGridSpec, PatchStats,
    SeparatedPair,
};
use crate::separator::{BPConfig, SeparationSolver};
use crate::storage::MaskMatrix;

/// Grid geometry of every scale, finest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidSpec {
    pub scales: Vec<PatchGridSpec>,
}

impl PyramidSpec {
    pub fn new(scales: Vec<PatchGridSpec>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::arg("pyramid needs at least one scale"));
        }
        Ok(Self { scales })
    }

    /// The same patch side on every scale with the given steps.
    pub fn uniform(patch_side: usize, steps: &[usize]) -> Result<Self> {
        let scales = steps
            .iter()
            .map(|&s| PatchGridSpec::new(patch_side, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scales)
    }

    pub fn levels(&self) -> usize {
        self.scales.len()
    }

    /// Plane sizes from the input down to the coarsest low band.
    pub fn plane_dims(&self, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
        let mut dims = vec![(height, width)];
        for (l, spec) in self.scales.iter().enumerate() {
            let (h, w) = dims[l];
            if h < spec.patch_side || w < spec.patch_side {
                return Err(Error::arg(format!(
                    "scale {} plane {h}x{w} is smaller than its {1}x{1} patches",
                    l + 1,
                    spec.patch_side
                )));
            }
            let (gh, gw) = spec.grid_dims(h, w);
            if gh == 0 || gw == 0 {
                return Err(Error::arg(format!(
                    "scale {} grid of a {h}x{w} plane is empty",
                    l + 1
                )));
            }
            dims.push((gh, gw));
        }
        Ok(dims)
    }
}

/// `low[0]` is the input, `low[l + 1]` the patch-DC map of `low[l]` and
/// `high[l] = low[l] - upsample(low[l + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub spec: PyramidSpec,
    pub low: Vec<ImagePlane>,
    pub high: Vec<ImagePlane>,
}

/// Bilinear interpolation of a grid-sampled plane back to `height x width`,
/// grid sample `(u1, u2)` sitting at the centre of the patch with origin
/// `(step * u1, step * u2)`. Beyond the outermost centres the edge value holds.
pub fn upsample(
    grid: &ImagePlane,
    spec: PatchGridSpec,
    height: usize,
    width: usize,
) -> Result<ImagePlane> {
    if grid.dims() != spec.grid_dims(height, width) {
        return Err(Error::arg(format!(
            "{}x{} grid does not match a {height}x{width} plane at step {}",
            grid.height(),
            grid.width(),
            spec.step
        )));
    }
    let rows = axis_weights(height, grid.height(), spec);
    let cols = axis_weights(width, grid.width(), spec);
    let mut tmp = vec![0.0; grid.height() * width];
    for g in 0..grid.height() {
        for (c, &(c0, c1, t)) in cols.iter().enumerate() {
            tmp[g * width + c] = (1.0 - t) * grid.get(g, c0) + t * grid.get(g, c1);
        }
    }
    Ok(ImagePlane::from_fn(height, width, |r, c| {
        let (r0, r1, t) = rows[r];
        (1.0 - t) * tmp[r0 * width + c] + t * tmp[r1 * width + c]
    }))
}

fn axis_weights(size: usize, samples: usize, spec: PatchGridSpec) -> Vec<(usize, usize, f64)> {
    let centre = (spec.patch_side as f64 - 1.0) / 2.0;
    let last = (samples - 1) as f64;
    (0..size)
        .map(|p| {
            let pos = ((p as f64 - centre) / spec.step as f64).clamp(0.0, last);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(samples - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

pub fn decompose(img: &ImagePlane, spec: &PyramidSpec) -> Result<Pyramid> {
    spec.plane_dims(img.height(), img.width())?;
    let mut low = vec![img.clone()];
    let mut high = Vec::with_capacity(spec.levels());
    for (l, &scale) in spec.scales.iter().enumerate() {
        let grid = extract_grid(&low[l], scale)?;
        let coarse = grid.dc_plane();
        let (h, w) = low[l].dims();
        let up = upsample(&coarse, scale, h, w)?;
        high.push(&low[l] - &up);
        low.push(coarse);
    }
    Ok(Pyramid {
        spec: spec.clone(),
        low,
        high,
    })
}

/// Folds the coarsest low band back up through the high bands.
pub fn reconstruct(p: &Pyramid) -> Result<ImagePlane> {
    let levels = p.spec.levels();
    if p.high.len() != levels || p.low.len() != levels + 1 {
        return Err(Error::arg(format!(
            "pyramid with {levels} scales holds {} high and {} low bands",
            p.high.len(),
            p.low.len()
        )));
    }
    fold(&p.low[levels], &p.high, &p.spec)
}

/// `plane_l = detail[l] + upsample(plane_{l+1})` from the coarsest plane up.
fn fold(coarsest: &ImagePlane, details: &[ImagePlane], spec: &PyramidSpec) -> Result<ImagePlane> {
    let mut current = coarsest.clone();
    for (detail, &scale) in details.iter().zip(&spec.scales).rev() {
        let (h, w) = detail.dims();
        current = detail + &upsample(&current, scale, h, w)?;
    }
    Ok(current)
}

/// DC-free co-located patches of every (visual, X-ray) pair at scale `l`,
/// taken from the pairs' scale-`l` low bands.
pub fn scale_training_set(
    pairs: &[(ImagePlane, ImagePlane)],
    spec: &PyramidSpec,
    l: usize,
) -> Result<TrainingSet> {
    let scale = *spec.scales.get(l).ok_or_else(|| {
        Error::arg(format!(
            "scale {} out of range for {} scales",
            l + 1,
            spec.levels()
        ))
    })?;
    let mut visual = Vec::new();
    let mut xray = Vec::new();
    for (y, x) in pairs {
        y.check_same_dims(x)?;
        let (py, px) = (decompose(y, spec)?, decompose(x, spec)?);
        visual.push(extract_grid(&py.low[l], scale)?.residuals);
        xray.push(extract_grid(&px.low[l], scale)?.residuals);
    }
    let concat = |parts: Vec<DMatrix<f64>>| -> DMatrix<f64> {
        let cols: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut out = DMatrix::zeros(scale.n(), cols);
        let mut at = 0;
        for p in parts {
            out.columns_mut(at, p.ncols()).copy_from(&p);
            at += p.ncols();
        }
        out
    };
    TrainingSet::new(concat(visual), concat(xray))
}

/// Randomly placed training patches of one scale.
#[derive(Debug, Clone)]
pub struct ScaleSample {
    pub data: TrainingSet,
    /// Validity of every sampled pixel, present when masks were given.
    pub mask: Option<MaskMatrix>,
}

/// Crack mask of every low band: a pixel of scale `l + 1` is valid only when
/// its whole scale-`l` patch is.
pub fn mask_pyramid(mask: &MaskMatrix, spec: &PyramidSpec) -> Vec<MaskMatrix> {
    let mut out = vec![mask.clone()];
    for scale in &spec.scales {
        let prev = out.last().unwrap();
        let (h, w) = prev.shape();
        let (rows, cols) = scale.grid_dims(h, w);
        let side = scale.patch_side;
        let next = MaskMatrix::from_fn(rows, cols, |u1, u2| {
            (0..side).all(|a| {
                (0..side).all(|b| {
                    prev.is_valid(
                        (u1 * scale.step + a).min(h - 1),
                        (u2 * scale.step + b).min(w - 1),
                    )
                })
            })
        });
        out.push(next);
    }
    out
}

/// Draws `samples` patch origins of scale `l` uniformly without replacement
/// from every position of every pair's scale-`l` low band (seeded), removing
/// each patch's mean. With masks (one per pair, image-sized) the mean runs
/// over valid pixels and masked pixels are stored as zero.
pub fn sample_scale_patches(
    pairs: &[(ImagePlane, ImagePlane)],
    masks: Option<&[MaskMatrix]>,
    spec: &PyramidSpec,
    l: usize,
    samples: usize,
    seed: u64,
) -> Result<ScaleSample> {
    let scale = *spec.scales.get(l).ok_or_else(|| {
        Error::arg(format!(
            "scale {} out of range for {} scales",
            l + 1,
            spec.levels()
        ))
    })?;
    if let Some(masks) = masks {
        if masks.len() != pairs.len() {
            return Err(Error::arg(format!(
                "{} masks for {} image pairs",
                masks.len(),
                pairs.len()
            )));
        }
    }
    let side = scale.patch_side;
    let mut planes = Vec::with_capacity(pairs.len());
    let mut offsets = vec![0usize];
    for (k, (y, x)) in pairs.iter().enumerate() {
        y.check_same_dims(x)?;
        let low_y = decompose(y, spec)?.low.swap_remove(l);
        let low_x = decompose(x, spec)?.low.swap_remove(l);
        let mask = match masks {
            Some(masks) => {
                if masks[k].shape() != y.dims() {
                    return Err(Error::arg(format!(
                        "mask {} is {:?} but its images are {:?}",
                        k + 1,
                        masks[k].shape(),
                        y.dims()
                    )));
                }
                Some(mask_pyramid(&masks[k], spec).swap_remove(l))
            }
            None => None,
        };
        let (h, w) = low_y.dims();
        if h < side || w < side {
            return Err(Error::arg(format!(
                "scale {} plane {h}x{w} is smaller than one patch",
                l + 1
            )));
        }
        offsets.push(offsets.last().unwrap() + (h - side + 1) * (w - side + 1));
        planes.push((low_y, low_x, mask));
    }
    let total = *offsets.last().unwrap();
    if samples == 0 || samples > total {
        return Err(Error::arg(format!(
            "cannot draw {samples} patches from {total} positions"
        )));
    }
    let n = scale.n();
    let mut y = DMatrix::zeros(n, samples);
    let mut x = DMatrix::zeros(n, samples);
    let mut valid = masks.map(|_| DMatrix::zeros(n, samples));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (col, pos) in rand::seq::index::sample(&mut rng, total, samples)
        .into_iter()
        .enumerate()
    {
        let k = offsets.partition_point(|&o| o <= pos) - 1;
        let (low_y, low_x, mask) = &planes[k];
        let span = low_y.width() - side + 1;
        let (r0, c0) = ((pos - offsets[k]) / span, (pos - offsets[k]) % span);
        let ok = |a: usize, b: usize| mask.as_ref().is_none_or(|m| m.is_valid(r0 + a, c0 + b));
        for (plane, out) in [(low_y, &mut y), (low_x, &mut x)] {
            let count = (0..n).filter(|&i| ok(i / side, i % side)).count().max(1);
            let mean = (0..n)
                .filter(|&i| ok(i / side, i % side))
                .map(|i| plane.get(r0 + i / side, c0 + i % side))
                .sum::<f64>()
                / count as f64;
            for i in 0..n {
                if ok(i / side, i % side) {
                    out[(i, col)] = plane.get(r0 + i / side, c0 + i % side) - mean;
                }
            }
        }
        if let Some(v) = valid.as_mut() {
            for i in 0..n {
                v[(i, col)] = if ok(i / side, i % side) { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(ScaleSample {
        data: TrainingSet::new(y, x)?,
        mask: valid.map(MaskMatrix::new).transpose()?,
    })
}

/// Dictionary for scale `l`; scales past the trained ones reuse the deepest.
pub fn dictionary_for_scale(dicts: &[DictionaryTriple], l: usize) -> Option<&DictionaryTriple> {
    dicts.get(l).or_else(|| dicts.last())
}

/// Multi-scale separation. Each scale's texture comes from patchwise
/// separation of that scale's low band (patch DCs removed, not re-added);
/// the coarsest low band is split pixelwise by [`dc_split`]; the results
/// are folded up like [`reconstruct`].
#[allow(clippy::too_many_arguments)]
pub fn separate_multiscale(
    m: &ImagePlane,
    y1: &ImagePlane,
    y2: &ImagePlane,
    spec: &PyramidSpec,
    dicts: &[DictionaryTriple],
    cfg: &BPConfig,
    include_v: bool,
) -> Result<SeparatedPair> {
    m.check_same_dims(y1)?;
    m.check_same_dims(y2)?;
    if dicts.is_empty() {
        return Err(Error::arg(
            "multiscale separation needs at least one dictionary",
        ));
    }
    let pm = decompose(m, spec)?;
    let p1 = decompose(y1, spec)?;
    let p2 = decompose(y2, spec)?;
    let mut t1 = Vec::with_capacity(spec.levels());
    let mut t2 = Vec::with_capacity(spec.levels());
    let mut stats = PatchStats::default();
    let mut solvers: Vec<(usize, SeparationSolver)> = Vec::new();
    for (l, &scale) in spec.scales.iter().enumerate() {
        let idx = l.min(dicts.len() - 1);
        if !solvers.iter().any(|(i, _)| *i == idx) {
            solvers.push((idx, SeparationSolver::new(&dicts[idx])?));
        }
        let solver = &solvers
            .iter()
            .find(|(i, _)| *i == idx)
            .expect("solver just built")
            .1;
        let tex = separate_textures(
            &pm.low[l], &p1.low[l], &p2.low[l], solver, scale, cfg, include_v,
        )?;
        let (h, w) = pm.low[l].dims();
        t1.push(overlap_add(&tex.x1, scale, h, w)?);
        t2.push(overlap_add(&tex.x2, scale, h, w)?);
        stats.merge(tex.stats);
    }
    let (s1, s2) = split_coarsest(&pm, &p1, &p2);
    Ok(SeparatedPair {
        x1: fold(&s1, &t1, spec)?,
        x2: fold(&s2, &t2, spec)?,
        stats,
    })
}

/// Pixelwise [`dc_split`] of the mixture's coarsest low band.
pub fn split_coarsest(m: &Pyramid, y1: &Pyramid, y2: &Pyramid) -> (ImagePlane, ImagePlane) {
    let (lm, l1, l2) = (
        m.low.last().unwrap(),
        y1.low.last().unwrap(),
        y2.low.last().unwrap(),
    );
    let parts: Vec<(f64, f64)> = (0..lm.pixels().len())
        .map(|i| dc_split(lm.pixels()[i], l1.pixels()[i], l2.pixels()[i]))
        .collect();
    let (h, w) = lm.dims();
    (
        ImagePlane::from_fn(h, w, |r, c| parts[r * w + c].0),
        ImagePlane::from_fn(h, w, |r, c| parts[r * w + c].1),
    )
}
