use std::path::Path;

use xsep_core::patchwork::{separate_single_scale, PatchGridSpec};
use xsep_core::pyramid::{decompose, separate_multiscale, PyramidSpec};
use xsep_core::separator::BPConfig;
use xsep_core::storage::{load_dictionaries, read_image, write_image};
use xsep_core::DictionaryTriple;

use crate::args::SeparateArgs;
use crate::failure::{Failure, Outcome};

/// One dictionary per scale `1..=levels`; a scale without its own takes the
/// deepest loaded one.
fn per_scale(
    loaded: &[(usize, DictionaryTriple)],
    levels: usize,
) -> Outcome<Vec<DictionaryTriple>> {
    let deepest = loaded
        .iter()
        .max_by_key(|(s, _)| *s)
        .expect("at least one dictionary");
    (1..=levels)
        .map(|l| match loaded.iter().find(|(s, _)| *s == l) {
            Some((_, d)) => Ok(d.clone()),
            None => {
                log::warn!("scale={l} dictionary=missing using_scale={}", deepest.0);
                Ok(deepest.1.clone())
            }
        })
        .collect()
}

fn patch_side(dict: &DictionaryTriple) -> Outcome<usize> {
    let n = dict.n();
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Failure::Data(format!(
            "dictionary atoms have {n} entries, not a square patch"
        )));
    }
    Ok(side)
}

pub fn run(args: &SeparateArgs) -> Outcome {
    let levels = args.multiscale.unwrap_or(1);
    if levels == 0 {
        return Err(Failure::Usage(
            "--multiscale needs at least one scale".into(),
        ));
    }
    if args.eps.len() < levels {
        return Err(Failure::Usage(format!(
            "--eps lists {} steps for {levels} scales",
            args.eps.len()
        )));
    }
    let mut loaded: Vec<(usize, DictionaryTriple)> = Vec::new();
    for path in &args.dict {
        let (dict, meta) = load_dictionaries(path)?;
        if loaded.iter().any(|(s, _)| *s == meta.scale) {
            return Err(Failure::Usage(format!(
                "two dictionaries for scale {}",
                meta.scale
            )));
        }
        loaded.push((meta.scale, dict));
    }
    let dicts = per_scale(&loaded, levels)?;
    let scales = dicts
        .iter()
        .zip(&args.eps)
        .map(|(d, &step)| Ok(PatchGridSpec::new(patch_side(d)?, step)?))
        .collect::<Outcome<Vec<_>>>()?;
    let spec = PyramidSpec::new(scales)?;

    let m = read_image(&args.mixture)?;
    let y1 = read_image(&args.visual1)?;
    let y2 = read_image(&args.visual2)?;
    for (name, img) in [("visual1", &y1), ("visual2", &y2)] {
        if img.dims() != m.dims() {
            return Err(Failure::Data(format!(
                "{name} is {:?} but the mixture is {:?}",
                img.dims(),
                m.dims()
            )));
        }
    }
    if let Some(dir) = &args.dump_pyramid {
        dump_pyramid(&m, &spec, dir)?;
    }
    let bp = BPConfig {
        rho: args.rho,
        max_iters: args.max_iters,
        ..BPConfig::default()
    };
    log::info!(
        "command=separate scales={levels} include_v={} height={} width={}",
        args.include_v,
        m.height(),
        m.width()
    );
    let pair = if levels == 1 {
        separate_single_scale(&m, &y1, &y2, &dicts[0], spec.scales[0], &bp, args.include_v)?
    } else {
        separate_multiscale(&m, &y1, &y2, &spec, &dicts, &bp, args.include_v)?
    };
    log::info!("{}", pair.stats);
    for (img, out) in [(&pair.x1, &args.out1), (&pair.x2, &args.out2)] {
        write_image(img, out)?;
        if args.raw {
            write_image(img, &out.with_extension("cdlm"))?;
        }
    }
    Ok(())
}

fn dump_pyramid(m: &xsep_core::ImagePlane, spec: &PyramidSpec, dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let p = decompose(m, spec)?;
    for (l, low) in p.low.iter().enumerate() {
        write_image(low, &dir.join(format!("low_{}.cdlm", l + 1)))?;
    }
    for (l, high) in p.high.iter().enumerate() {
        write_image(high, &dir.join(format!("high_{}.cdlm", l + 1)))?;
    }
    Ok(())
}
