use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Max-sliced mutual information estimators, generators and studies.
#[derive(Debug, Parser)]
#[command(name = "msmi", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for all randomness [default: the config file's seed, else 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path. Without it, JSON (or CSV for `gen`) goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for study trials. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// JSON file with the command's configuration. Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as CSV.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Estimate an information measure on a CSV dataset.
    #[command(subcommand)]
    Estimate(EstimateCommand),
    /// Closed-form Gaussian quantities of a fitted or given model.
    #[command(subcommand)]
    Gaussian(GaussianCommand),
    /// Run a study and emit plot-ready tables.
    #[command(subcommand)]
    Study(StudyCommand),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Samples from a joint Gaussian model.
    Gaussian(GenGaussianArgs),
    /// Shared-latent-subspace model X = P1 V + Z1, Y = P2 V + Z2.
    Latent(GenLatentArgs),
    /// Y = rho X + sqrt(1 - rho^2) Z, optionally padded with noise coordinates.
    Correlated(GenCorrelatedArgs),
}

#[derive(Debug, Args)]
pub struct GenGaussianArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    /// JSON file holding a Gaussian joint model.
    #[arg(long, conflicts_with = "coherence", required_unless_present = "coherence")]
    pub model: Option<PathBuf>,
    /// Diagonal of the coherence matrix of a whitened model, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub coherence: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct GenLatentArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    /// Ambient dimension of X and Y.
    #[arg(long)]
    pub d: usize,
    /// Latent dimension.
    #[arg(long)]
    pub dprime: usize,
    /// Share the latent between X and Y (omit for the null model).
    #[arg(long)]
    pub dependent: bool,
}

#[derive(Debug, Args)]
pub struct GenCorrelatedArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    /// Correlation of the signal pair, in (-1, 1).
    #[arg(long, allow_negative_numbers = true)]
    pub rho: f64,
    /// Dimension of X and Y; coordinates past the first are independent noise.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Dataset CSV with x* and y* columns.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NegativesArg {
    Cyclic,
    RandomDerangement,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriticArg {
    Separable,
    Joint,
}

/// Overrides for the neural training config.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Slice dimension.
    #[arg(long)]
    pub k: Option<usize>,
    /// Training epochs [default: 60].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 256].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 2e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate multiplier for the slice parameters.
    #[arg(long)]
    pub slice_lr_scale: Option<f64>,
    /// Fraction of samples held out for the reported value [default: 0.1].
    #[arg(long)]
    pub eval_fraction: Option<f64>,
    /// How negatives are paired within a batch [default: cyclic].
    #[arg(long, value_enum)]
    pub negatives: Option<NegativesArg>,
    /// Critic architecture [default: separable].
    #[arg(long, value_enum)]
    pub critic: Option<CriticArg>,
    /// Use the bounded shallow ReLU critic.
    #[arg(long)]
    pub theory: bool,
    /// Hidden units of the theory-mode critic.
    #[arg(long)]
    pub ell: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// Objective evaluations [default: 1000].
    #[arg(long)]
    pub max_evals: Option<usize>,
    /// Probability of a uniform exploration draw [default: 0.1].
    #[arg(long)]
    pub exploration_prob: Option<f64>,
    /// Probability of a local step around the incumbent (0 = plain AdaLIPO).
    #[arg(long)]
    pub local_search_prob: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Side {
    X,
    Y,
}

#[derive(Debug, Subcommand)]
pub enum EstimateCommand {
    /// Neural mSMI with linear Stiefel slices.
    MsmiNeural {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Also save the trained critic and slices.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Neural mSMI with MLP slicers.
    MsmiGeneralized {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Hidden units of each slicer.
        #[arg(long, default_value_t = 32)]
        slicer_hidden: usize,
        /// Also save the trained critic and slices here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// mSMI by AdaLIPO search over slices with a KSG inner estimator.
    MsmiLipo {
        #[command(flatten)]
        input: InputArgs,
        /// Slice dimension [default: 1].
        #[arg(long)]
        k: Option<usize>,
        /// Nearest-neighbour order of the kNN estimators [default: 3].
        #[arg(long)]
        k_nn: Option<usize>,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Average-sliced MI over Haar-random slices.
    Asmi {
        #[command(flatten)]
        input: InputArgs,
        /// Slice dimension [default: 1].
        #[arg(long)]
        k: Option<usize>,
        /// Monte Carlo slice pairs [default: 128].
        #[arg(long)]
        num_slices: Option<usize>,
        /// Nearest-neighbour order of the kNN estimators [default: 3].
        #[arg(long)]
        k_nn: Option<usize>,
    },
    /// KSG mutual information of the raw X and Y.
    Ksg {
        #[command(flatten)]
        input: InputArgs,
        /// Nearest-neighbour order of the kNN estimators [default: 3].
        #[arg(long)]
        k_nn: Option<usize>,
    },
    /// Kozachenko-Leonenko entropy of one side.
    KlEntropy {
        #[command(flatten)]
        input: InputArgs,
        /// Nearest-neighbour order of the kNN estimators [default: 3].
        #[arg(long)]
        k_nn: Option<usize>,
        /// Which variable to use.
        #[arg(long, value_enum, default_value = "x")]
        of: Side,
    },
    /// Max-sliced entropy of one side by AdaLIPO search.
    MshLipo {
        #[command(flatten)]
        input: InputArgs,
        /// Slice dimension [default: 1].
        #[arg(long)]
        k: Option<usize>,
        /// Nearest-neighbour order of the kNN estimators [default: 3].
        #[arg(long)]
        k_nn: Option<usize>,
        /// Which variable to use.
        #[arg(long, value_enum, default_value = "x")]
        of: Side,
        #[command(flatten)]
        budget: BudgetArgs,
    },
}

/// Where the Gaussian model comes from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    /// Fit a Gaussian to this dataset CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON file holding a Gaussian joint model.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GaussianCommand {
    /// Closed-form Gaussian mSMI with its CCA slices.
    Msmi {
        #[command(flatten)]
        source: ModelSource,
        /// Slice dimension.
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// k-dimensional CCA.
    Cca {
        #[command(flatten)]
        source: ModelSource,
        /// Slice dimension.
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Gaussian mutual information.
    Mi {
        #[command(flatten)]
        source: ModelSource,
    },
    /// Max-sliced entropy: Gaussian PCA form, or the uniform-ball bound with --ball-radius.
    Msh {
        /// Fit a Gaussian to this dataset CSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// JSON file holding a Gaussian joint model.
        #[arg(long, conflicts_with = "input")]
        model: Option<PathBuf>,
        /// Evaluate the uniform-ball closed form for this radius instead.
        #[arg(long, conflicts_with_all = ["input", "model"])]
        ball_radius: Option<f64>,
        /// Slice dimension.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Which variable to use.
        #[arg(long, value_enum, default_value = "x")]
        of: Side,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AucMethodArg {
    MsmiLipo,
    AsmiMc,
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Independence-testing AUC on the latent-subspace model.
    Auc {
        /// Test statistic [default: msmi-lipo].
        #[arg(long, value_enum)]
        method: Option<AucMethodArg>,
        /// Ambient dimension [default: 10].
        #[arg(long)]
        d: Option<usize>,
        /// Latent dimension [default: 4].
        #[arg(long)]
        dprime: Option<usize>,
        /// Slice dimension [default: 1].
        #[arg(long)]
        k: Option<usize>,
        /// Nearest-neighbour order of the kNN estimators [default: 3].
        #[arg(long)]
        k_nn: Option<usize>,
        /// Sample sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Trials per class, at least 10 [default: 50].
        #[arg(long)]
        trials: Option<usize>,
        /// 100 trials per class instead of the desk-scale default.
        #[arg(long, conflicts_with = "trials")]
        full: bool,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Monte Carlo slices for aSMI.
        #[arg(long)]
        num_slices: Option<usize>,
        /// Also compute the other statistic and log mSMI < aSMI - 0.05 cases.
        #[arg(long)]
        ordering_check: bool,
    },
    /// Neural estimation error against sample size.
    Convergence {
        /// Correlation of the scalar pair [default: 0.5].
        #[arg(long, allow_negative_numbers = true)]
        rho: Option<f64>,
        /// Sample sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Training seeds, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Optimizer steps per run (epochs scale with n).
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Wall-clock time of neural mSMI against aSMI.
    Timing {
        /// Sample sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// aSMI slices for the kNN pass.
        #[arg(long)]
        num_slices: Option<usize>,
        /// Also time aSMI with one neural training per slice, for this many slices.
        #[arg(long)]
        neural_slices: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Theory-mode error against critic width.
    Theory {
        /// Correlation of the scalar pair [default: 0.5].
        #[arg(long, allow_negative_numbers = true)]
        rho: Option<f64>,
        /// Number of samples [default: 10000].
        #[arg(long)]
        n: Option<usize>,
        /// Widths, comma separated.
        #[arg(long, value_delimiter = ',')]
        ells: Option<Vec<usize>>,
        /// Training seeds, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[command(flatten)]
        train: TrainArgs,
    },
}
