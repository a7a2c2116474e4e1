use std::path::Path;

use xsep_core::coupled_dl::{train_coupled, AtomMoves, Init};
use xsep_core::pyramid::{sample_scale_patches, PyramidSpec};
use xsep_core::storage::{
    read_image, read_mask, save_dictionaries, DictionaryManifest, MaskMatrix,
};
use xsep_core::weighted_dl::{train_weighted, MaskedTrainingSet};
use xsep_core::{ImagePlane, SparsityBudget, TrainConfig};

use crate::args::{InitKind, TrainArgs};
use crate::failure::{Failure, Outcome};

fn load_all<T>(
    paths: &[impl AsRef<Path>],
    read: impl Fn(&Path) -> xsep_core::Result<T>,
) -> Outcome<Vec<T>> {
    paths.iter().map(|p| Ok(read(p.as_ref())?)).collect()
}

/// Grid specs of the scales up to and including `scale`.
pub fn pyramid_prefix(patch: usize, eps: &[usize], scale: usize) -> Outcome<PyramidSpec> {
    if scale == 0 {
        return Err(Failure::Usage("scales are numbered from 1".into()));
    }
    if eps.len() < scale {
        return Err(Failure::Usage(format!(
            "--eps lists {} steps but scale {scale} needs {scale}",
            eps.len()
        )));
    }
    Ok(PyramidSpec::uniform(patch, &eps[..scale])?)
}

pub fn run(args: &TrainArgs) -> Outcome {
    if args.visual.len() != args.xray.len() {
        return Err(Failure::Usage(format!(
            "{} visual images but {} X-ray images",
            args.visual.len(),
            args.xray.len()
        )));
    }
    if !args.mask.is_empty() && !args.weighted {
        return Err(Failure::Usage("--mask needs --weighted".into()));
    }
    if args.atom_moves && args.weighted {
        return Err(Failure::Usage(
            "--atom-moves works with unweighted training only".into(),
        ));
    }
    if args.weighted && !args.mask.is_empty() && args.mask.len() != args.visual.len() {
        return Err(Failure::Usage(format!(
            "{} masks for {} image pairs",
            args.mask.len(),
            args.visual.len()
        )));
    }
    let visual = load_all(&args.visual, read_image)?;
    let xray = load_all(&args.xray, read_image)?;
    let pairs: Vec<(ImagePlane, ImagePlane)> = visual.into_iter().zip(xray).collect();
    let masks = if args.weighted {
        let masks = if args.mask.is_empty() {
            pairs
                .iter()
                .map(|(y, _)| MaskMatrix::ones(y.height(), y.width()))
                .collect()
        } else {
            load_all(&args.mask, read_mask)?
        };
        if let Some(k) = masks.iter().position(|m| m.valid_count() == 0) {
            return Err(Failure::Data(format!(
                "mask {} marks every pixel as a crack",
                args.mask[k].display()
            )));
        }
        Some(masks)
    } else {
        None
    };

    let spec = pyramid_prefix(args.patch, &args.eps, args.scale)?;
    let sample = sample_scale_patches(
        &pairs,
        masks.as_deref(),
        &spec,
        args.scale - 1,
        args.samples,
        args.seed,
    )?;
    let gamma = args.atoms;
    let d = args.innovation_atoms.unwrap_or(args.atoms);
    let mut cfg = TrainConfig::new(gamma, d, SparsityBudget::new(args.sz, args.sv)?);
    cfg.max_iters = args.iters;
    cfg.seed = args.seed;
    cfg.ridge = args.ridge;
    cfg.atom_moves = args.atom_moves.then(AtomMoves::default);
    cfg.init = match args.init {
        InitKind::Dct => Init::Dct,
        InitKind::Random => Init::Random,
    };
    log::info!(
        "command=train scale={} samples={} n={} gamma={gamma} d={d} weighted={}",
        args.scale,
        sample.data.len(),
        sample.data.n(),
        args.weighted
    );
    let outcome = match sample.mask {
        Some(mask) => {
            let data = MaskedTrainingSet::new(sample.data, mask)?;
            let thin = data.undersupported_rows(gamma + d);
            if !thin.is_empty() && !args.ridge {
                let support = data.row_support();
                return Err(Failure::Data(format!(
                    "weighted training needs every patch row valid in at least gamma + d = {} samples, \
                     but row {} is valid in only {}; draw more --samples or pass --ridge",
                    gamma + d,
                    thin[0],
                    support[thin[0]]
                )));
            }
            train_weighted(&data, &cfg)?
        }
        None => train_coupled(&sample.data, &cfg)?,
    };
    log::info!(
        "iterations={} objective_start={:.6e} objective_end={:.6e}",
        outcome.trace.len(),
        outcome.trace.first().copied().unwrap_or(f64::NAN),
        outcome.trace.last().copied().unwrap_or(f64::NAN)
    );
    let meta = DictionaryManifest {
        n: 0,
        gamma: 0,
        d: 0,
        s_z: args.sz,
        s_v: args.sv,
        scale: args.scale,
        weighted: args.weighted,
        psi_c: String::new(),
        phi_c: String::new(),
        phi: String::new(),
    };
    let manifest = save_dictionaries(&args.out, &outcome.dict, &meta)?;
    log::info!("manifest={}", manifest.display());
    Ok(())
}
