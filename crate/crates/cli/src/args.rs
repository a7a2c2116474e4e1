use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "xsep",
    version,
    about = "Separate mixed X-rays of double-sided paintings with coupled dictionaries"
)]
pub struct Cli {
    /// INI file whose `[xsep]` and per-command sections supply flags by name.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (falls back to `XSEP_THREADS`, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn coupled dictionaries from registered visual/X-ray image pairs.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Split an X-ray mixture into its two sides.
    #[command(args_override_self = true)]
    Separate(SeparateArgs),
    /// Synthetic and simulated benchmarks as CSV.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Visual images, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub visual: Vec<PathBuf>,

    /// X-ray images paired with `--visual`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub xray: Vec<PathBuf>,

    /// Crack masks paired with the images (0 = crack).
    #[arg(long, value_delimiter = ',')]
    pub mask: Vec<PathBuf>,

    /// Manifest to write; matrices go next to it.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 8)]
    pub patch: usize,

    /// Atoms per dictionary (`gamma`).
    #[arg(long, default_value_t = 256)]
    pub atoms: usize,

    /// Innovation atoms (`d`); defaults to `--atoms`.
    #[arg(long)]
    pub innovation_atoms: Option<usize>,

    #[arg(long, default_value_t = 10)]
    pub sz: usize,

    #[arg(long, default_value_t = 8)]
    pub sv: usize,

    #[arg(long, default_value_t = 100)]
    pub iters: usize,

    #[arg(long, default_value_t = 46400)]
    pub samples: usize,

    /// Pyramid scale to train at, 1 being the full-resolution image.
    #[arg(long, default_value_t = 1)]
    pub scale: usize,

    /// Grid step of every pyramid scale, finest first.
    #[arg(long, value_delimiter = ',', default_value = "4,4,7,8")]
    pub eps: Vec<usize>,

    /// Crack-weighted learning; without masks every pixel is valid.
    #[arg(long)]
    pub weighted: bool,

    /// Small diagonal shift for rows whose weighted system is singular.
    #[arg(long)]
    pub ridge: bool,

    /// Split merged atoms and hand misplaced common atoms to the innovation
    /// dictionary while training (unweighted training only).
    #[arg(long)]
    pub atom_moves: bool,

    #[arg(long, value_enum, default_value_t = InitKind::Dct)]
    pub init: InitKind,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Dct,
    Random,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub mixture: PathBuf,

    #[arg(long)]
    pub visual1: PathBuf,

    #[arg(long)]
    pub visual2: PathBuf,

    /// Dictionary manifests, comma separated; each is used at the scale it was trained for.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dict: Vec<PathBuf>,

    #[arg(long)]
    pub out1: PathBuf,

    #[arg(long)]
    pub out2: PathBuf,

    /// Number of pyramid scales; bare `--multiscale` means 4. Single scale when absent.
    #[arg(long, num_args = 0..=1, default_missing_value = "4")]
    pub multiscale: Option<usize>,

    #[arg(long, value_delimiter = ',', default_value = "4,4,7,8")]
    pub eps: Vec<usize>,

    /// Add the innovation term to the reconstructed sides.
    #[arg(long)]
    pub include_v: bool,

    /// Also write full-precision `.cdlm` copies of both outputs.
    #[arg(long)]
    pub raw: bool,

    /// Write every low and high band of the mixture pyramid to this directory.
    #[arg(long, value_name = "DIR")]
    pub dump_pyramid: Option<PathBuf>,

    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,

    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Dictionary identifiability across SNRs.
    #[command(args_override_self = true)]
    Table1(SynthArgs),
    /// Separation NMSE across SNRs.
    #[command(args_override_self = true)]
    Table2(SynthArgs),
    /// Naive, single-scale and multi-scale separation of a simulated panel.
    #[command(args_override_self = true)]
    Mix(MixArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Comma-separated SNRs in dB, `inf` for noiseless.
    #[arg(long, default_value = "inf")]
    pub snr: String,

    #[arg(long, default_value_t = 5)]
    pub trials: usize,

    #[arg(long, default_value_t = 200)]
    pub mixtures: usize,

    #[arg(long, default_value_t = 40)]
    pub n: usize,

    #[arg(long, default_value_t = 60)]
    pub gamma: usize,

    #[arg(long, default_value_t = 60)]
    pub d: usize,

    #[arg(long, default_value_t = 1500)]
    pub t: usize,

    #[arg(long, default_value_t = 2)]
    pub sz: usize,

    #[arg(long, default_value_t = 3)]
    pub sv: usize,

    #[arg(long, default_value_t = 100)]
    pub iters: usize,

    #[arg(long, value_enum, default_value_t = MatchingKind::Nearest)]
    pub matching: MatchingKind,

    /// Plain alternation without split and hand-over moves.
    #[arg(long)]
    pub no_atom_moves: bool,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchingKind {
    Nearest,
    Injective,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Visual images of the two sides; a seeded grain completes the panel.
    /// A generated panel is used when absent.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub simulated_mix: Vec<PathBuf>,

    /// Side of generated panels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,

    #[arg(long, default_value_t = 4)]
    pub patch: usize,

    #[arg(long, default_value_t = 32)]
    pub atoms: usize,

    #[arg(long, default_value_t = 3)]
    pub sz: usize,

    #[arg(long, default_value_t = 2)]
    pub sv: usize,

    #[arg(long, default_value_t = 20)]
    pub iters: usize,

    #[arg(long, default_value_t = 4)]
    pub train_panels: usize,

    #[arg(long, default_value_t = 2)]
    pub trained_scales: usize,

    #[arg(long, value_delimiter = ',', default_value = "2,4,4,2")]
    pub steps: Vec<usize>,

    /// Drop the innovation term from the reconstructions.
    #[arg(long)]
    pub without_v: bool,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    #[arg(long)]
    pub out: Option<PathBuf>,
}
