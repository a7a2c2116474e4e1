use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use xsep_core::storage::read_image;
use xsep_core::synthbench::{
    parse_snr_list, run_mix_bench, run_table1, run_table2, train_mix_dictionaries, write_mix_csv,
    write_table1_csv, write_table2_csv, BenchConfig, Matching, MixConfig, SimulatedPanel,
    SynthSpec,
};

use crate::args::{BenchCommand, MatchingKind, MixArgs, SynthArgs};
use crate::failure::{Failure, Outcome};

fn sink(out: Option<&Path>) -> Outcome<Box<dyn Write>> {
    Ok(match out {
        Some(path) => {
            Box::new(BufWriter::new(File::create(path).map_err(|e| {
                Failure::Data(format!("{}: {e}", path.display()))
            })?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn synth(args: &SynthArgs) -> Outcome<(SynthSpec, BenchConfig)> {
    let spec = SynthSpec {
        n: args.n,
        gamma: args.gamma,
        d: args.d,
        t: args.t,
        s_z: args.sz,
        s_v: args.sv,
        snrs_db: parse_snr_list(&args.snr)?,
        trials: args.trials,
        mixtures: args.mixtures,
        seed: args.seed,
        ..SynthSpec::default()
    };
    let cfg = BenchConfig {
        iters: args.iters,
        matching: match args.matching {
            MatchingKind::Nearest => Matching::Nearest,
            MatchingKind::Injective => Matching::Injective,
        },
        atom_moves: if args.no_atom_moves {
            None
        } else {
            BenchConfig::default().atom_moves
        },
        ..BenchConfig::default()
    };
    Ok((spec, cfg))
}

pub fn run(cmd: &BenchCommand) -> Outcome {
    match cmd {
        BenchCommand::Table1(args) => {
            let (spec, cfg) = synth(args)?;
            log::info!(
                "command=bench_table1 trials={} snrs={}",
                spec.trials,
                args.snr
            );
            let rows = run_table1(&spec, &cfg)?;
            write_table1_csv(&rows, sink(args.out.as_deref())?)?;
        }
        BenchCommand::Table2(args) => {
            let (spec, cfg) = synth(args)?;
            log::info!(
                "command=bench_table2 trials={} mixtures={} snrs={}",
                spec.trials,
                spec.mixtures,
                args.snr
            );
            let rows = run_table2(&spec, &cfg)?;
            write_table2_csv(&rows, sink(args.out.as_deref())?)?;
        }
        BenchCommand::Mix(args) => mix(args)?,
    }
    Ok(())
}

fn mix(args: &MixArgs) -> Outcome {
    let cfg = MixConfig {
        size: args.size,
        patch_side: args.patch,
        atoms: args.atoms,
        s_z: args.sz,
        s_v: args.sv,
        iters: args.iters,
        train_panels: args.train_panels,
        trained_scales: args.trained_scales,
        steps: args.steps.clone(),
        seed: args.seed,
        include_v: !args.without_v,
        ..MixConfig::default()
    };
    let panel = match args.simulated_mix.as_slice() {
        [a, b] => {
            let (a, b) = (read_image(a)?, read_image(b)?);
            if a.dims() != b.dims() {
                return Err(Failure::Data(format!(
                    "mix sides are {:?} and {:?}",
                    a.dims(),
                    b.dims()
                )));
            }
            SimulatedPanel::from_visuals_seeded(a, b, args.seed)?
        }
        _ => cfg.test_panel()?,
    };
    log::info!(
        "command=bench_mix height={} width={}",
        panel.m.height(),
        panel.m.width()
    );
    let dicts = train_mix_dictionaries(&cfg)?;
    let rows = run_mix_bench(&cfg, &panel, &dicts)?;
    write_mix_csv(&rows, sink(args.out.as_deref())?)?;
    Ok(())
}
