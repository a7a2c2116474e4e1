mod args;
mod bench;
mod config;
mod failure;
mod separate;
mod train;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use failure::{Failure, Outcome};

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} {}",
                record.level().as_str().to_lowercase(),
                record.args()
            )
        })
        .init();
}

fn thread_count(flag: Option<usize>) -> Outcome<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("XSEP_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("XSEP_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run() -> Outcome {
    let argv = config::merge(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Failure::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Train(a) => train::run(a),
        Command::Separate(a) => separate::run(a),
        Command::Bench(b) => bench::run(b),
    }
}

fn main() -> ExitCode {
    init_logging();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("exit_code={} error=\"{}\"", f.exit_code(), f);
            ExitCode::from(f.exit_code())
        }
    }
}
