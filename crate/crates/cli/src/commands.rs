use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use msmi::asmi::{asmi_report, AsmiConfig};
use msmi::datagen::{gen_correlated_gaussian, gen_embedded_gaussian, gen_gaussian_pair, gen_latent_subspace, PairedDataset};
use msmi::gaussian::{
    cca_k, fit_gaussian, gaussian_mi, gaussian_msmi, max_sliced_entropy_gaussian, msh_uniform_ball, GaussianJointModel,
};
use msmi::harness::{
    convergence_study, independence_auc, theory_probe, timing_study, AucMethod, AucStudyConfig, ConvergenceConfig,
    StudyResult, TheoryProbeConfig, TimingConfig,
};
use msmi::knn::{kl_entropy, ksg_mi, SampleCloud, DEFAULT_K_NN, KSG_VARIANT};
use msmi::linalg::{Matrix, SpdMatrix};
use msmi::lipo::{msh_lipo_report, msmi_lipo, SearchBudget};
use msmi::neural::{
    train_generalized_msmi_with_checkpoint, train_msmi_with_checkpoint, CriticKind, NegativeSampling, TrainConfig,
    TrainOutcome,
};
use msmi::report::EstimateReport;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::args::*;

/// Version of the JSON report layout.
pub const REPORT_SCHEMA: u32 = 1;
/// Search traces in reports are cut to this many entries.
pub const MAX_TRACE_ENTRIES: usize = 1000;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit code 1.
    Usage(String),
    /// Failure while running: exit code 2.
    Runtime(msmi::Error),
}

impl From<msmi::Error> for CliError {
    fn from(e: msmi::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = Result<T, CliError>;

struct Context {
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: usize,
    config: Option<PathBuf>,
}

impl Context {
    /// The config file parsed as `T`, or `T::default()` without one.
    fn config<T: DeserializeOwned + Default>(&self) -> CliResult<T> {
        let Some(path) = &self.config else { return Ok(T::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    fn no_config(&self, command: &str) -> CliResult<()> {
        match self.config {
            Some(_) => Err(CliError::Usage(format!("`{command}` takes no --config"))),
            None => Ok(()),
        }
    }

    fn seed_or(&self, from_config: u64) -> u64 {
        self.seed.unwrap_or(from_config)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(0))
    }

    /// Writes pretty JSON to `--out` or stdout.
    fn emit_json(&self, value: &Value) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(msmi::Error::from)? + "\n";
        match &self.out {
            Some(path) => std::fs::write(path, text).map_err(msmi::Error::from)?,
            None => std::io::stdout().write_all(text.as_bytes()).map_err(msmi::Error::from)?,
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let g = cli.global;
    if g.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let ctx = Context { seed: g.seed, out: g.out, jobs: g.jobs, config: g.config };
    match cli.command {
        Command::Gen(c) => run_gen(&ctx, c),
        Command::Estimate(c) => run_estimate(&ctx, c),
        Command::Gaussian(c) => run_gaussian(&ctx, c),
        Command::Study(c) => run_study(&ctx, c),
    }
}

fn run_gen(ctx: &Context, cmd: GenCommand) -> CliResult<()> {
    ctx.no_config("gen")?;
    let mut rng = ctx.rng();
    let data = match cmd {
        GenCommand::Gaussian(a) => {
            let model = match (a.model, a.coherence) {
                (Some(path), _) => read_model(&path)?,
                (None, Some(diag)) => GaussianJointModel::whitened(Array2::from_diag(&ndarray::Array1::from(diag)))?,
                (None, None) => unreachable!("clap requires one source"),
            };
            gen_gaussian_pair(a.n, &model, &mut rng)?
        }
        GenCommand::Latent(a) => gen_latent_subspace(a.n, a.d, a.dprime, a.dependent, &mut rng)?,
        GenCommand::Correlated(a) if a.dim == 1 => gen_correlated_gaussian(a.n, a.rho, &mut rng)?,
        GenCommand::Correlated(a) => gen_embedded_gaussian(a.n, a.dim, a.rho, &mut rng)?,
    };
    let data = data.with_seed(ctx.seed.unwrap_or(0));
    match &ctx.out {
        Some(path) => data.save(path)?,
        None => data.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

/// Prefixes I/O errors with the offending path.
fn with_path(path: &Path, e: msmi::Error) -> CliError {
    match e {
        msmi::Error::Io(io) => {
            CliError::Runtime(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())).into())
        }
        e => CliError::Runtime(e),
    }
}

fn read_model(path: &Path) -> CliResult<GaussianJointModel> {
    let text = std::fs::read_to_string(path).map_err(|e| with_path(path, e.into()))?;
    Ok(serde_json::from_str(&text).map_err(msmi::Error::from)?)
}

fn load_path(path: &Path) -> CliResult<PairedDataset> {
    PairedDataset::load(path).map_err(|e| with_path(path, e))
}

fn load(input: &InputArgs) -> CliResult<PairedDataset> {
    load_path(&input.input)
}

fn train_config(ctx: &Context, a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg: TrainConfig = ctx.config()?;
    apply_train_args(&mut cfg, a);
    cfg.seed = ctx.seed_or(cfg.seed);
    Ok(cfg)
}

fn apply_train_args(cfg: &mut TrainConfig, a: &TrainArgs) {
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.slice_lr_scale {
        cfg.slice_lr_scale = v;
    }
    if let Some(v) = a.eval_fraction {
        cfg.eval_fraction = v;
    }
    if let Some(v) = a.negatives {
        cfg.negative_sampling = match v {
            NegativesArg::Cyclic => NegativeSampling::Cyclic,
            NegativesArg::RandomDerangement => NegativeSampling::RandomDerangement,
        };
    }
    if let Some(v) = a.critic {
        cfg.critic.kind = match v {
            CriticArg::Separable => CriticKind::Separable,
            CriticArg::Joint => CriticKind::Joint,
        };
    }
    if a.theory {
        cfg.theory_mode = true;
    }
    if let Some(v) = a.ell {
        cfg.ell = v;
    }
}

fn budget(ctx: &Context, a: &BudgetArgs) -> CliResult<SearchBudget> {
    let mut b: SearchBudget = ctx.config()?;
    apply_budget_args(&mut b, a);
    b.seed = ctx.seed_or(b.seed);
    Ok(b)
}

fn apply_budget_args(b: &mut SearchBudget, a: &BudgetArgs) {
    if let Some(v) = a.max_evals {
        b.max_evals = v;
    }
    if let Some(v) = a.exploration_prob {
        b.exploration_prob = v;
    }
    if let Some(v) = a.local_search_prob {
        b.local_search_prob = v;
    }
}

/// Report JSON with the schema tag and a bounded trace.
fn report_json(mut report: EstimateReport) -> CliResult<Value> {
    report.trace = report.trace.map(|t| t.truncated(MAX_TRACE_ENTRIES));
    let mut v = serde_json::to_value(report).map_err(msmi::Error::from)?;
    v["schema"] = json!(REPORT_SCHEMA);
    Ok(v)
}

fn side_cloud(data: &PairedDataset, of: Side) -> CliResult<SampleCloud> {
    Ok(SampleCloud::new(match of {
        Side::X => data.x().clone(),
        Side::Y => data.y().clone(),
    })?)
}

fn simple_report(method: &str, value: f64, seed: u64, start: Instant, metadata: Value) -> EstimateReport {
    let Value::Object(metadata) = metadata else { unreachable!("metadata is an object") };
    EstimateReport {
        method: method.into(),
        value_nats: value,
        eval_value: value,
        slices: None,
        train_history: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        seed,
        trace: None,
        metadata,
    }
}

fn finish_training(outcome: TrainOutcome, checkpoint: Option<&Path>) -> CliResult<EstimateReport> {
    if let Some(path) = checkpoint {
        outcome.checkpoint.save(path)?;
    }
    Ok(outcome.report)
}

fn run_estimate(ctx: &Context, cmd: EstimateCommand) -> CliResult<()> {
    let report = match cmd {
        EstimateCommand::MsmiNeural { input, train, checkpoint } => {
            let cfg = train_config(ctx, &train)?;
            let data = load(&input)?;
            finish_training(train_msmi_with_checkpoint(&data, &cfg)?, checkpoint.as_deref())?
        }
        EstimateCommand::MsmiGeneralized { input, train, slicer_hidden, checkpoint } => {
            let cfg = train_config(ctx, &train)?;
            let data = load(&input)?;
            finish_training(train_generalized_msmi_with_checkpoint(&data, &cfg, slicer_hidden)?, checkpoint.as_deref())?
        }
        EstimateCommand::MsmiLipo { input, k, k_nn, budget: b } => {
            let b = budget(ctx, &b)?;
            let data = load(&input)?;
            msmi_lipo(&data, k.unwrap_or(1), k_nn.unwrap_or(DEFAULT_K_NN), &b)?
        }
        EstimateCommand::Asmi { input, k, num_slices, k_nn } => {
            let mut cfg: AsmiConfig = ctx.config()?;
            if let Some(v) = k {
                cfg.k = v;
            }
            if let Some(v) = num_slices {
                cfg.num_slices = v;
            }
            if let Some(v) = k_nn {
                cfg.k_nn = v;
            }
            cfg.seed = ctx.seed_or(cfg.seed);
            asmi_report(&load(&input)?, &cfg)?
        }
        EstimateCommand::Ksg { input, k_nn } => {
            ctx.no_config("estimate ksg")?;
            let start = Instant::now();
            let k_nn = k_nn.unwrap_or(DEFAULT_K_NN);
            let data = load(&input)?;
            let mut rng = ctx.rng();
            let x = SampleCloud::new(data.x().clone())?.jittered(&mut rng);
            let y = SampleCloud::new(data.y().clone())?.jittered(&mut rng);
            let value = ksg_mi(&x, &y, k_nn)?;
            let meta = json!({ "mi_estimator": KSG_VARIANT, "k_nn": k_nn, "n": data.n() });
            simple_report("ksg", value, ctx.seed.unwrap_or(0), start, meta)
        }
        EstimateCommand::KlEntropy { input, k_nn, of } => {
            ctx.no_config("estimate kl-entropy")?;
            let start = Instant::now();
            let k_nn = k_nn.unwrap_or(DEFAULT_K_NN);
            let data = load(&input)?;
            let cloud = side_cloud(&data, of)?.jittered(&mut ctx.rng());
            let value = kl_entropy(&cloud, k_nn)?;
            let meta = json!({ "k_nn": k_nn, "n": data.n(), "of": side_name(of) });
            simple_report("kl-entropy", value, ctx.seed.unwrap_or(0), start, meta)
        }
        EstimateCommand::MshLipo { input, k, k_nn, of, budget: b } => {
            let b = budget(ctx, &b)?;
            let data = load(&input)?;
            let cloud = side_cloud(&data, of)?;
            let (mut report, slice) = msh_lipo_report(&cloud, k.unwrap_or(1), k_nn.unwrap_or(DEFAULT_K_NN), &b)?;
            report.metadata.insert("of".into(), json!(side_name(of)));
            report.metadata.insert("slice".into(), serde_json::to_value(&slice).map_err(msmi::Error::from)?);
            report
        }
    };
    ctx.emit_json(&report_json(report)?)
}

fn side_name(of: Side) -> &'static str {
    match of {
        Side::X => "x",
        Side::Y => "y",
    }
}

fn model_from(source: &ModelSource) -> CliResult<GaussianJointModel> {
    match (&source.input, &source.model) {
        (Some(path), _) => Ok(fit_gaussian(&load_path(path)?)?),
        (None, Some(path)) => read_model(path),
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn nested(m: &Matrix) -> Value {
    json!(m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn run_gaussian(ctx: &Context, cmd: GaussianCommand) -> CliResult<()> {
    ctx.no_config("gaussian")?;
    let start = Instant::now();
    let (method, mut body) = match cmd {
        GaussianCommand::Msmi { source, k } => {
            let r = gaussian_msmi(&model_from(&source)?, k)?;
            let body = json!({
                "k": k,
                "value_nats": r.value_nats,
                "cca": r.slices,
                "degenerate_correlation": r.degenerate_correlation,
            });
            ("gaussian-msmi", body)
        }
        GaussianCommand::Cca { source, k } => {
            let cca = cca_k(&model_from(&source)?, k)?;
            let objective = cca.objective();
            ("gaussian-cca", json!({ "k": k, "cca": cca, "objective": objective }))
        }
        GaussianCommand::Mi { source } => ("gaussian-mi", json!({ "value_nats": gaussian_mi(&model_from(&source)?)? })),
        GaussianCommand::Msh { input, model, ball_radius, k, of } => {
            if let Some(r) = ball_radius {
                ("msh-uniform-ball", json!({ "k": k, "radius": r, "value_nats": msh_uniform_ball(r, k)? }))
            } else {
                let model = match (input, model) {
                    (Some(path), _) => fit_gaussian(&load_path(&path)?)?,
                    (None, Some(path)) => read_model(&path)?,
                    (None, None) => {
                        return Err(CliError::Usage("`gaussian msh` needs --input, --model or --ball-radius".into()))
                    }
                };
                let cov = match of {
                    Side::X => model.cov_x(),
                    Side::Y => model.cov_y(),
                };
                let r = max_sliced_entropy_gaussian(&SpdMatrix::new(cov.clone())?, k)?;
                let body = json!({
                    "k": k,
                    "of": side_name(of),
                    "value_nats": r.value_nats,
                    "slice": nested(r.slice.as_matrix()),
                });
                ("gaussian-msh", body)
            }
        }
    };
    body["method"] = json!(method);
    body["schema"] = json!(REPORT_SCHEMA);
    body["wall_time_s"] = json!(start.elapsed().as_secs_f64());
    ctx.emit_json(&body)
}

fn run_study(ctx: &Context, cmd: StudyCommand) -> CliResult<()> {
    let result = match cmd {
        StudyCommand::Auc {
            method,
            d,
            dprime,
            k,
            k_nn,
            n,
            trials,
            full,
            budget: b,
            num_slices,
            ordering_check,
        } => {
            let mut cfg: AucStudyConfig = ctx.config()?;
            if let Some(m) = method {
                cfg.method = match m {
                    AucMethodArg::MsmiLipo => AucMethod::MsmiLipo,
                    AucMethodArg::AsmiMc => AucMethod::AsmiMc,
                };
            }
            set(&mut cfg.d, d);
            set(&mut cfg.d_prime, dprime);
            set(&mut cfg.k, k);
            set(&mut cfg.k_nn, k_nn);
            set(&mut cfg.sample_sizes, n);
            set(&mut cfg.trials_per_class, trials);
            if full {
                cfg.trials_per_class = 100;
            }
            apply_budget_args(&mut cfg.budget, &b);
            set(&mut cfg.num_slices, num_slices);
            cfg.ordering_check |= ordering_check;
            cfg.seed = ctx.seed_or(cfg.seed);
            cfg.jobs = ctx.jobs;
            independence_auc(&cfg)?
        }
        StudyCommand::Convergence { rho, n, seeds, steps, train } => {
            let mut cfg: ConvergenceConfig = ctx.config()?;
            set(&mut cfg.rho, rho);
            set(&mut cfg.sample_sizes, n);
            set(&mut cfg.seeds, seeds);
            if steps.is_some() {
                cfg.steps_per_run = steps;
            }
            apply_train_args(&mut cfg.train, &train);
            if let Some(s) = ctx.seed {
                // The master seed shifts every training seed.
                cfg.seeds.iter_mut().for_each(|x| *x ^= s);
            }
            cfg.jobs = ctx.jobs;
            convergence_study(&cfg)?
        }
        StudyCommand::Timing { n, num_slices, neural_slices, train } => {
            let mut cfg: TimingConfig = ctx.config()?;
            set(&mut cfg.n_list, n);
            set(&mut cfg.asmi.num_slices, num_slices);
            if neural_slices.is_some() {
                cfg.neural_slices = neural_slices;
            }
            apply_train_args(&mut cfg.train, &train);
            cfg.seed = ctx.seed_or(cfg.seed);
            timing_study(&cfg)?
        }
        StudyCommand::Theory { rho, n, ells, seeds, train } => {
            let mut cfg: TheoryProbeConfig = ctx.config()?;
            set(&mut cfg.rho, rho);
            set(&mut cfg.n, n);
            set(&mut cfg.ells, ells);
            set(&mut cfg.seeds, seeds);
            apply_train_args(&mut cfg.train, &train);
            if let Some(s) = ctx.seed {
                cfg.seeds.iter_mut().for_each(|x| *x ^= s);
            }
            theory_probe(&cfg)?
        }
    };
    emit_study(ctx, result)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// `--out x.csv` writes the table and `x.csv.json`; otherwise the JSON goes
/// to stdout.
fn emit_study(ctx: &Context, mut result: StudyResult) -> CliResult<()> {
    result.metadata.insert("schema".into(), json!(REPORT_SCHEMA));
    match &ctx.out {
        Some(path) => Ok(result.save(path)?),
        None => {
            let mut v = serde_json::to_value(&result).map_err(msmi::Error::from)?;
            v["schema"] = json!(REPORT_SCHEMA);
            ctx.emit_json(&v)
        }
    }
}
