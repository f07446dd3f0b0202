//! Command-line surface. Every argument struct is also serde-serializable so
//! the resolved invocation (defaults included) can be stored in the run
//! manifest and replayed.

use std::path::PathBuf;

use bsenergy::encoder::BsidMode;
use bsenergy::training::{MaskMode, Selection};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "bsenergy",
    version,
    about = "Base-station energy estimation with station embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic fleet with known ground truth.
    Synth(SynthArgs),
    /// Join the three challenge-layout tables into canonical telemetry.
    Import(ImportArgs),
    /// Fit an encoding plan and train a model.
    Train(TrainArgs),
    /// Score a checkpoint (or the ground-truth oracle) by cohort.
    Eval(EvalArgs),
    /// Train and score a grid of configurations.
    Ablate(AblateArgs),
    /// Finite-difference check of every gradient.
    Gradcheck(GradcheckArgs),
    /// Write the station embedding table as CSV.
    Export(ExportArgs),
    /// Replay the invocation recorded in a run manifest.
    #[serde(skip)]
    Rerun(RerunArgs),
}

fn probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, env = "BSENERGY_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "BSENERGY_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub n_bs: usize,
    #[arg(long, default_value_t = 4)]
    pub n_rutypes: usize,
    #[arg(long, default_value_t = 8)]
    pub days: u32,
    /// Share of stations that appear only in the test period.
    #[arg(long, default_value_t = 0.2)]
    pub cross_domain_fraction: f64,
    /// Noise standard deviation relative to mean energy.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Per-station offset spread around its hardware revision.
    #[arg(long, default_value_t = 0.04)]
    pub jitter: f64,
    #[arg(long, default_value_t = 2)]
    pub revisions: usize,
    #[arg(long, default_value_t = 0.12)]
    pub revision_spread: f64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ImportArgs {
    /// Static per-cell settings (station, cell, RU type, mode, antennas, ...).
    #[arg(long)]
    pub bs_info: PathBuf,
    /// Hourly per-cell load and energy-saving activity.
    #[arg(long)]
    pub cell_data: PathBuf,
    /// Hourly per-station energy.
    #[arg(long)]
    pub energy_data: PathBuf,
    /// JSON object overriding column names or the timestamp format.
    #[arg(long)]
    pub columns: Option<PathBuf>,
    #[arg(long, env = "BSENERGY_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsidArg {
    Embedding,
    Onehot,
    None,
}

impl From<BsidArg> for BsidMode {
    fn from(b: BsidArg) -> Self {
        match b {
            BsidArg::Embedding => BsidMode::Embedding,
            BsidArg::Onehot => BsidMode::OneHot,
            BsidArg::None => BsidMode::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionArg {
    /// Hold out training stations and pick the epoch that scores best on them.
    Val,
    /// Pick the epoch that scores best on the test set.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskModeArg {
    Bernoulli,
    Quota,
}

impl From<MaskModeArg> for MaskMode {
    fn from(m: MaskModeArg) -> Self {
        match m {
            MaskModeArg::Bernoulli => MaskMode::Bernoulli,
            MaskModeArg::Quota => MaskMode::Quota,
        }
    }
}

/// Dataset and split shared by every command that reads telemetry.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Canonical telemetry CSV.
    #[arg(long, env = "BSENERGY_DATA")]
    pub data: PathBuf,
    /// Split manifest CSV (bs_id, role, test_days).
    #[arg(long, env = "BSENERGY_MANIFEST")]
    pub manifest: PathBuf,
}

/// Optimisation settings shared by `train` and `ablate`.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainingArgs {
    #[arg(long, env = "BSENERGY_EPOCHS", default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, env = "BSENERGY_BATCH", default_value_t = 512)]
    pub batch: usize,
    #[arg(long, env = "BSENERGY_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "BSENERGY_MASK_PROB", default_value_t = 0.3, value_parser = probability)]
    pub mask_prob: f64,
    #[arg(long, value_enum, default_value_t = MaskModeArg::Bernoulli)]
    pub mask_mode: MaskModeArg,
    #[arg(long, env = "BSENERGY_SELECTION", value_enum, default_value_t = SelectionArg::Val)]
    pub selection: SelectionArg,
    /// Share of training stations held out when selecting with `val`.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, env = "BSENERGY_LR", default_value_t = 1e-3)]
    pub lr: f64,
    /// Record wall time per epoch in history.csv (breaks byte-identical reruns).
    #[arg(long)]
    pub timing: bool,
}

impl TrainingArgs {
    pub fn selection(&self) -> Selection {
        match self.selection {
            SelectionArg::Val => Selection::Validation {
                fraction: self.val_fraction,
            },
            SelectionArg::Paper => Selection::PaperProtocol,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `abf`, any subset of those letters, `numerical`, or a JSON plan template file.
    #[arg(long, default_value = "abf")]
    pub plan: String,
    #[arg(long, value_enum, default_value_t = BsidArg::Embedding)]
    pub bsid: BsidArg,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "128,64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    pub bottleneck: usize,
    /// Train without the re-weighting layer.
    #[arg(long)]
    pub no_arl: bool,
    #[arg(long, env = "BSENERGY_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    /// Test-period records only.
    Test,
    /// Training records only.
    Train,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Plan sidecar; defaults to the one recorded next to the checkpoint.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Score the ground-truth closed form instead of a model.
    #[arg(long, conflicts_with_all = ["checkpoint", "plan"])]
    pub oracle: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    pub subset: Subset,
    #[arg(long, env = "BSENERGY_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AblateArgs {
    /// `paper-grid` or a spec file of `name,plan,bsid,masking,arl,hidden` lines.
    #[arg(long, default_value = "paper-grid")]
    pub spec: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, env = "BSENERGY_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Number of random instances per check.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Corrupt one analytic gradient per check; every check should then fail.
    #[arg(long)]
    pub inject_fault: bool,
    /// Also print per-parameter detail for passing checks.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, env = "BSENERGY_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct RerunArgs {
    /// A manifest.txt written by an earlier run.
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
