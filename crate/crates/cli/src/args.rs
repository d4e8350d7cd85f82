use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use maip::net::NormKind;
use maip::recon::LossKind;
use serde::{Deserialize, Serialize};

/// Multi-frequency EIT reconstruction with an untrained attention network.
///
/// Exit codes: 0 success, 1 internal error, 2 bad input, 3 dimension
/// mismatch, 4 divergence (non-finite loss), 5 I/O error while writing.
/// Set MAIP_QUIET=1 to silence progress output.
#[derive(Debug, Parser)]
#[command(name = "maip", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Simulate boundary measurements of a phantom.
    Simulate(SimulateArgs),
    /// Reconstruct conductivity frames from measurements.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions against ground truth.
    Evaluate(EvaluateArgs),
    /// Reconstruct at a list of noise levels.
    NoiseSweep(NoiseSweepArgs),
    /// Reconstruct with each network component removed in turn.
    Ablate(AblateArgs),
    /// Repeat the command recorded in a manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Reconstruct(_) => "reconstruct",
            Command::Evaluate(_) => "evaluate",
            Command::NoiseSweep(_) => "noise-sweep",
            Command::Ablate(_) => "ablate",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn output_mut(&mut self) -> &mut OutArgs {
        match self {
            Command::Simulate(a) => &mut a.output,
            Command::Reconstruct(a) => &mut a.output,
            Command::Evaluate(a) => &mut a.output,
            Command::NoiseSweep(a) => &mut a.output,
            Command::Ablate(a) => &mut a.output,
            Command::Rerun(a) => &mut a.output,
        }
    }

    /// Rewrites every path as absolute so manifests do not depend on the
    /// working directory.
    pub fn absolutize(&mut self) -> std::io::Result<()> {
        fn abs(p: &mut PathBuf) -> std::io::Result<()> {
            *p = std::path::absolute(&*p)?;
            Ok(())
        }
        fn abs_opt(p: &mut Option<PathBuf>) -> std::io::Result<()> {
            p.as_mut().map_or(Ok(()), abs)
        }
        abs(&mut self.output_mut().out)?;
        match self {
            Command::Simulate(a) => abs(&mut a.phantom),
            Command::Reconstruct(a) => {
                a.data.absolutize()?;
                abs_opt(&mut a.recon.config)
            }
            Command::Evaluate(a) => {
                abs_opt(&mut a.pred)?;
                abs_opt(&mut a.runs)?;
                abs(&mut a.truth)?;
                abs(&mut a.mask)
            }
            Command::NoiseSweep(a) => {
                a.data.absolutize()?;
                abs_opt(&mut a.truth)?;
                abs_opt(&mut a.recon.config)
            }
            Command::Ablate(a) => {
                a.data.absolutize()?;
                abs_opt(&mut a.truth)?;
                abs_opt(&mut a.recon.config)
            }
            Command::Rerun(a) => abs(&mut a.manifest),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OutArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    /// Time difference against the empty disc.
    Td,
    /// Frequency difference against a reference frequency.
    Fd,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Phantom description (JSON).
    #[arg(long)]
    pub phantom: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Td)]
    pub mode: ModeArg,
    /// Reference frequency in Hz for frequency-difference imaging; defaults
    /// to the first scheduled frequency.
    #[arg(long)]
    pub reference_frequency: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub electrodes: usize,
    /// Fraction of the perimeter covered by each electrode.
    #[arg(long, default_value_t = 0.03)]
    pub coverage: f64,
    /// Disc radius in meters.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Injected current in amperes.
    #[arg(long, default_value_t = 1.0)]
    pub current: f64,
    #[arg(long, default_value_t = 24)]
    pub mesh_rings: usize,
    /// Add white Gaussian noise at this SNR in dB.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Write the sensitivity matrix in the binary format.
    #[arg(long)]
    #[serde(default)]
    pub binary: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Sensitivity matrix, CSV or `.bin`.
    #[arg(long)]
    pub jacobian: PathBuf,
    /// Measurement CSV; frame metadata is read from the `.json` beside it.
    #[arg(long)]
    pub measurements: PathBuf,
    /// Pixel mask, 0/1 text grid or CSV.
    #[arg(long)]
    pub mask: PathBuf,
}

impl DataArgs {
    fn absolutize(&mut self) -> std::io::Result<()> {
        for p in [&mut self.jacobian, &mut self.measurements, &mut self.mask] {
            *p = std::path::absolute(&*p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReconOpts {
    /// JSON file with optional `recon` and `net` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Initialization seed. Without one, the candidate seed whose attention
    /// mixing matrix is best conditioned is used.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of candidate seeds searched when no seed is given.
    #[arg(long, default_value_t = 16)]
    pub seed_candidates: u64,
    /// Data-fit term: l1 or frobenius.
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Normalization in residual blocks: aln or batch.
    #[arg(long)]
    pub norm: Option<NormKind>,
    /// Replace branch attention by the identity.
    #[arg(long)]
    #[serde(default)]
    pub no_attention: bool,
    /// Use one branch for all frames.
    #[arg(long)]
    #[serde(default)]
    pub single_branch: bool,
    /// Pixel size of each conductivity cell in the PNG previews.
    #[arg(long, default_value_t = 8)]
    pub png_scale: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub recon: ReconOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Reconstructed stack (N x L CSV).
    #[arg(long, conflicts_with = "runs", required_unless_present = "runs")]
    pub pred: Option<PathBuf>,
    /// Directory whose subdirectories each hold a `sigma.csv`.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Ground-truth stack (N x L CSV).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

pub const DEFAULT_SNRS: &str = "10,20,30,40,50,60,70,80,90";

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NoiseSweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Ground truth; adds metrics to every run.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Comma-separated SNR levels in dB.
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_SNRS)]
    pub snr_list: Vec<f64>,
    /// Base seed of the added noise.
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub recon: ReconOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AblateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub recon: ReconOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

impl RerunArgs {
    pub fn new(manifest: &Path, out: &Path) -> Self {
        Self {
            manifest: manifest.to_path_buf(),
            output: OutArgs {
                out: out.to_path_buf(),
                force: false,
            },
        }
    }
}
