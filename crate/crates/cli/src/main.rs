use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod io;

#[derive(Parser, Debug)]
#[command(name = "seqcontrast", version, about = "Pulse-sequence adaptive MRI contrast synthesis")]
struct Cli {
    /// Seed for every random choice; equal seeds give byte-identical outputs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tissue NMR table (`field_tesla X` then `tissue rho t1_ms t2_ms` lines).
    #[arg(long, global = true, value_name = "PATH")]
    tissue_table: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate sequence parameters of acquired images.
    Estimate(EstimateArgs),
    /// Build a parameter grid from estimated parameter sets.
    Grid(GridArgs),
    /// Synthesize an image from NMR maps, optionally exporting regression pairs.
    Synth(SynthArgs),
    /// Write contrast-augmented training batches.
    Emit(EmitArgs),
    /// Fit proton density and T1 from multi flip angle FLASH, optionally T2.
    Fitmef(FitmefArgs),
    /// Segmentation consistency and overlap reports.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Image to estimate (NIfTI).
    #[arg(long, conflicts_with = "corpus")]
    pub image: Option<PathBuf>,
    /// Brain mask; positive voxels are brain. Defaults to positive image voxels.
    #[arg(long, requires = "image")]
    pub mask: Option<PathBuf>,
    /// Sequence kind of the image: FLASH, SPGR, MPRAGE or T2SPACE.
    #[arg(long, requires = "image")]
    pub kind: Option<String>,
    /// Tab-separated `image mask kind` lines (mask `-` for positive voxels).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Field strength of the images in tesla; must match the tissue table.
    #[arg(long)]
    pub field: Option<f64>,
    /// Map parameters to this field strength.
    #[arg(long, requires_all = ["field", "map_table"])]
    pub map_to: Option<f64>,
    /// Tissue table at the --map-to field strength.
    #[arg(long, requires = "map_to")]
    pub map_table: Option<PathBuf>,
    /// Write parameter sets here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Parameter set files (`kind theta0 theta1 theta2` lines).
    #[arg(long = "theta", required = true, num_args = 1..)]
    pub theta: Vec<PathBuf>,
    /// Use only parameter sets of this kind.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Bounds [0.8 min, 1.2 max] taken literally instead of widened outward.
    #[arg(long)]
    pub literal_bounds: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub rho: PathBuf,
    #[arg(long)]
    pub t1: PathBuf,
    #[arg(long)]
    pub t2: PathBuf,
    /// Brain mask; defaults to voxels with positive proton density.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Parameter set file; the first set (or the first of --kind) is used.
    #[arg(long, conflicts_with = "grid")]
    pub theta: Option<PathBuf>,
    /// Grid to draw the parameter set from with --seed.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<String>,
    /// Synthetic image output (NIfTI).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write (synthetic patch, NMR patch) regression pairs here.
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
    /// NMR target of the pairs: rho, t1 or t2.
    #[arg(long, default_value = "rho")]
    pub pairs_target: String,
    #[arg(long, default_value_t = 1)]
    pub pairs_count: usize,
    /// Patch edge length of the pairs.
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    #[arg(long, default_value = "subject")]
    pub subject_id: String,
}

#[derive(Args, Debug)]
pub struct EmitArgs {
    /// Tab-separated `id image kind rho t1 t2 labels mask` lines (mask `-`
    /// for nonzero labels).
    #[arg(long)]
    pub subjects: PathBuf,
    /// One grid file each for FLASH/SPGR, T2SPACE and MPRAGE.
    #[arg(long = "grid", required = true, num_args = 3)]
    pub grids: Vec<PathBuf>,
    /// Records to write, a multiple of 4.
    #[arg(long)]
    pub count: usize,
    /// Patch edge length.
    #[arg(long, default_value_t = 96)]
    pub patch: usize,
    /// Size of the label set.
    #[arg(long, default_value_t = 41)]
    pub labels: u32,
    /// Minimum brain fraction of a patch.
    #[arg(long, default_value_t = 0.0)]
    pub min_brain: f64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitmefArgs {
    /// `PATH:DEGREES` per flip angle.
    #[arg(long = "image", required = true, num_args = 2..)]
    pub images: Vec<String>,
    /// Repetition time (ms).
    #[arg(long)]
    pub tr: f64,
    /// Echo time (ms).
    #[arg(long)]
    pub te: f64,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out_rho: PathBuf,
    #[arg(long)]
    pub out_t1: PathBuf,
    /// Validity mask of the fit.
    #[arg(long)]
    pub out_valid: Option<PathBuf>,
    /// FLASH image to solve T2 from, with --t2-theta and --out-t2.
    #[arg(long, requires_all = ["t2_theta", "out_t2"])]
    pub t2_image: Option<PathBuf>,
    /// FLASH parameter set of --t2-image.
    #[arg(long)]
    pub t2_theta: Option<PathBuf>,
    #[arg(long)]
    pub out_t2: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Tab-separated `subject acquisition segmentation` lines.
    #[arg(long, conflicts_with = "dice")]
    pub manifest: Option<PathBuf>,
    /// Two segmentations to compare by Dice.
    #[arg(long, num_args = 2)]
    pub dice: Vec<PathBuf>,
    /// `id acronym` lines; defaults to the standard structure set.
    #[arg(long)]
    pub structures: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub struct Global {
    pub seed: u64,
    pub tissue_table: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error[Usage]: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[Usage]: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let g = Global {
        seed: cli.seed,
        tissue_table: cli.tissue_table,
    };
    let result = match &cli.command {
        Command::Estimate(a) => commands::estimate(&g, a),
        Command::Grid(a) => commands::grid(&g, a),
        Command::Synth(a) => commands::synth(&g, a),
        Command::Emit(a) => commands::emit(&g, a),
        Command::Fitmef(a) => commands::fitmef(&g, a),
        Command::Eval(a) => commands::eval(&g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(if matches!(e, seqcontrast::Error::Usage(_)) { 2 } else { 1 })
        }
    }
}
