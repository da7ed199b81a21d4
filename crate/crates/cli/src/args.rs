//! Command-line grammar.
//!
//! The classification commands accept the single-dash multi-letter flags of
//! the original scripts (`-qi1 1.0`); [`normalize`] rewrites them to the
//! double-dash form clap understands before parsing.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "quadstab", version, about = "Dynamical stability of hierarchical triple and quadruple stars")]
pub struct Cli {
    /// key=value configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a 2+2 quadruple with the trained network.
    #[command(name = "classify-2p2")]
    Classify2p2(Classify2p2Args),
    /// Classify a 3+1 quadruple with the trained network.
    #[command(name = "classify-3p1")]
    Classify3p1(Classify3p1Args),
    /// Draw systems and write their parameters.
    Sample(SampleArgs),
    /// Label systems by N-body integration (resumable).
    Label(LabelArgs),
    /// Train a network on a labeled file.
    Train(TrainArgs),
    /// Score classifiers on a labeled file.
    Eval(EvalArgs),
    /// Label a zero-inclination parameter-space slice on a grid.
    Slice(SliceArgs),
    /// Check long-term boundedness of labeled systems.
    Bounded(BoundedArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file; defaults to `$QUADSTAB_MODEL_DIR/mlp_<topology>.json`.
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// CSV of feature vectors (radians, header with feature names); prints
    /// one verdict per row.
    #[arg(long)]
    pub batch: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Classify2p2Args {
    #[command(flatten)]
    pub common: ModelArgs,
    #[arg(long = "qi1", visible_alias = "q-in1", allow_negative_numbers = true, required_unless_present = "batch")]
    pub qi1: Option<f64>,
    #[arg(long = "qi2", visible_alias = "q-in2", allow_negative_numbers = true, required_unless_present = "batch")]
    pub qi2: Option<f64>,
    #[arg(long = "qo", visible_alias = "q-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub qo: Option<f64>,
    #[arg(long = "ali1o", visible_alias = "alpha-in1-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub ali1o: Option<f64>,
    #[arg(long = "ali2o", visible_alias = "alpha-in2-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub ali2o: Option<f64>,
    #[arg(long = "ei1", visible_alias = "e-in1", allow_negative_numbers = true, required_unless_present = "batch")]
    pub ei1: Option<f64>,
    #[arg(long = "ei2", visible_alias = "e-in2", allow_negative_numbers = true, required_unless_present = "batch")]
    pub ei2: Option<f64>,
    #[arg(long = "eo", visible_alias = "e-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub eo: Option<f64>,
    /// Degrees.
    #[arg(long = "ii1i2", visible_alias = "i-in1-in2", allow_negative_numbers = true, required_unless_present = "batch")]
    pub ii1i2: Option<f64>,
    /// Degrees.
    #[arg(long = "ii1o", visible_alias = "i-in1-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub ii1o: Option<f64>,
    /// Degrees.
    #[arg(long = "ii2o", visible_alias = "i-in2-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub ii2o: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Classify3p1Args {
    #[command(flatten)]
    pub common: ModelArgs,
    #[arg(long = "qi", visible_alias = "q-in", allow_negative_numbers = true, required_unless_present = "batch")]
    pub qi: Option<f64>,
    #[arg(long = "qm", visible_alias = "q-mid", allow_negative_numbers = true, required_unless_present = "batch")]
    pub qm: Option<f64>,
    #[arg(long = "qo", visible_alias = "q-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub qo: Option<f64>,
    #[arg(
        long = "alim",
        visible_aliases = ["alio", "alpha-in-mid"],
        allow_negative_numbers = true,
        required_unless_present = "batch"
    )]
    pub alim: Option<f64>,
    #[arg(long = "almo", visible_alias = "alpha-mid-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub almo: Option<f64>,
    #[arg(long = "ei", visible_alias = "e-in", allow_negative_numbers = true, required_unless_present = "batch")]
    pub ei: Option<f64>,
    #[arg(long = "em", visible_alias = "e-mid", allow_negative_numbers = true, required_unless_present = "batch")]
    pub em: Option<f64>,
    #[arg(long = "eo", visible_alias = "e-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub eo: Option<f64>,
    /// Degrees.
    #[arg(long = "iim", visible_alias = "i-in-mid", allow_negative_numbers = true, required_unless_present = "batch")]
    pub iim: Option<f64>,
    /// Degrees.
    #[arg(long = "iio", visible_alias = "i-in-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub iio: Option<f64>,
    /// Degrees.
    #[arg(long = "imo", visible_alias = "i-mid-out", allow_negative_numbers = true, required_unless_present = "batch")]
    pub imo: Option<f64>,
}

/// Options shared by the commands that integrate systems.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// `triple`, `2p2` or `3p1`.
    #[arg(long)]
    pub topology: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Integration length in outer orbits.
    #[arg(long)]
    pub n_outer: Option<usize>,
    /// Integrator relative tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Wall-clock cap per integration in seconds; 0 disables it.
    #[arg(long)]
    pub wall_cap: Option<f64>,
    /// Step cap per integration; unlike the wall cap it is reproducible.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of systems.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep every draw instead of thinning MA01-unstable quadruples.
    #[arg(long)]
    pub no_thinning: bool,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of non-timeout systems to label.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory; rows already present there are kept.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled training file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Optional held-out file for the reported test score.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled file to score on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Network for the file's own topology.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Triple network, applied to both nested triples of a quadruple.
    #[arg(long)]
    pub triple_model: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Add the labels themselves as a classifier row.
    #[arg(long)]
    pub include_truth: bool,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Slice name, e.g. `fiducial` or `high_e_out`.
    #[arg(long)]
    pub name: Option<String>,
    /// Cells per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// `q`, `e` or `both`.
    #[arg(long, default_value = "both")]
    pub varied: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub triple_model: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundedArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Labeled file to draw systems from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of systems to check.
    #[arg(long)]
    pub n: Option<usize>,
    /// Check systems labeled unstable instead of stable.
    #[arg(long)]
    pub unstable: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const SINGLE_DASH_FLAGS: &[&str] = &[
    "qi1", "qi2", "qo", "ali1o", "ali2o", "ei1", "ei2", "eo", "ii1i2", "ii1o", "ii2o", "qi", "qm", "alim", "alio",
    "almo", "ei", "em", "iim", "iio", "imo",
];

/// Rewrites `-qi1` style flags to `--qi1`; everything else is untouched.
pub fn normalize<I: IntoIterator<Item = OsString>>(args: I) -> Vec<OsString> {
    args.into_iter()
        .map(|a| {
            if let Some(s) = a.to_str() {
                if let Some(name) = s.strip_prefix('-') {
                    let (flag, rest) = name.split_once('=').map_or((name, None), |(f, v)| (f, Some(v)));
                    if SINGLE_DASH_FLAGS.contains(&flag) {
                        return match rest {
                            Some(v) => OsString::from(format!("--{flag}={v}")),
                            None => OsString::from(format!("--{flag}")),
                        };
                    }
                }
            }
            a
        })
        .collect()
}
