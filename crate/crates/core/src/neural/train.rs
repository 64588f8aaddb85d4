use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::adam::Adam;
use super::critic::{theory_clip, CriticConfig, CriticModel};
use super::mlp::{Activation, MlpCache, MlpParams};
use super::objective::{derangement, NegativeSampling};
use super::qr_grad::{qr_backward, qr_backward_numeric};
use crate::datagen::PairedDataset;
use crate::error::{Error, Result};
use crate::linalg::{gram_residual, nested, stiefel_project_with_r, Matrix};
use crate::report::{EstimateReport, SlicePair, Slices};

/// Version tag written into checkpoints.
pub const CHECKPOINT_SCHEMA: u32 = 1;

/// How gradients are pushed through the QR projection of the raw slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QrGradient {
    #[default]
    Exact,
    /// Central differences, one QR pair per raw entry. For cross-checking.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Slice dimension.
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Fraction of samples held out for the reported value.
    pub eval_fraction: f64,
    pub negative_sampling: NegativeSampling,
    /// Use a shallow ReLU joint critic projected onto its bounded class after
    /// every step.
    pub theory_mode: bool,
    /// Hidden units of the theory-mode critic.
    pub ell: usize,
    pub seed: u64,
    pub critic: CriticConfig,
    pub qr_gradient: QrGradient,
    /// Learning-rate multiplier for the slice parameters.
    pub slice_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 1,
            batch_size: 256,
            epochs: 60,
            learning_rate: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_fraction: 0.1,
            negative_sampling: NegativeSampling::Cyclic,
            theory_mode: false,
            ell: 64,
            seed: 0,
            critic: CriticConfig::default(),
            qr_gradient: QrGradient::Exact,
            slice_lr_scale: 20.0,
        }
    }
}

impl TrainConfig {
    /// Smallest dataset the split can handle.
    pub fn min_samples(&self) -> usize {
        (4.0 / self.eval_fraction).ceil() as usize
    }

    fn validate(&self, data: &PairedDataset) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad(format!("eval_fraction must lie in (0, 1), got {}", self.eval_fraction));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.slice_lr_scale >= 0.0 && self.slice_lr_scale.is_finite()) {
            return bad(format!("slice_lr_scale must be nonnegative, got {}", self.slice_lr_scale));
        }
        if self.theory_mode && self.ell == 0 {
            return bad("theory mode needs ell >= 1".into());
        }
        if data.dx() < self.k || data.dy() < self.k {
            return Err(Error::DimensionMismatch(format!(
                "k={} exceeds d_x={} or d_y={}",
                self.k,
                data.dx(),
                data.dy()
            )));
        }
        if data.n() < self.min_samples() {
            return Err(Error::TooFewSamples { got: data.n(), need: self.min_samples() });
        }
        Ok(())
    }
}

/// Trainable projections applied before the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SliceModel {
    /// Unconstrained matrices whose QR projections are the slices.
    Linear {
        #[serde(with = "nested::matrix")]
        raw_a: Matrix,
        #[serde(with = "nested::matrix")]
        raw_b: Matrix,
    },
    /// Small networks `g: R^{d_x} → R^k`, `h: R^{d_y} → R^k`.
    Mlp { g: MlpParams, h: MlpParams },
}

impl SliceModel {
    pub fn linear_random<R: Rng + ?Sized>(dx: usize, dy: usize, k: usize, rng: &mut R) -> Self {
        SliceModel::Linear { raw_a: gaussian(dx, k, rng), raw_b: gaussian(dy, k, rng) }
    }

    pub fn mlp<R: Rng + ?Sized>(dx: usize, dy: usize, k: usize, hidden: usize, rng: &mut R) -> Self {
        SliceModel::Mlp {
            g: MlpParams::new(&[dx, hidden, k], Activation::Elu, false, rng),
            h: MlpParams::new(&[dy, hidden, k], Activation::Elu, false, rng),
        }
    }

    /// Current slices in report form.
    pub fn slices(&self) -> Result<Slices> {
        Ok(match self {
            SliceModel::Linear { raw_a, raw_b } => {
                let (a, _) = stiefel_project_with_r(raw_a)?;
                let (b, _) = stiefel_project_with_r(raw_b)?;
                Slices::Linear(SlicePair::new(a, b)?)
            }
            SliceModel::Mlp { g, h } => Slices::Mlp { g: g.clone(), h: h.clone() },
        })
    }

    fn embed(&self, x: &Matrix, y: &Matrix) -> Result<(Matrix, Matrix)> {
        Ok(match self {
            SliceModel::Linear { raw_a, raw_b } => {
                let (a, _) = stiefel_project_with_r(raw_a)?;
                let (b, _) = stiefel_project_with_r(raw_b)?;
                (x.dot(a.as_matrix()), y.dot(b.as_matrix()))
            }
            SliceModel::Mlp { g, h } => (g.forward(x), h.forward(y)),
        })
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            SliceModel::Linear { raw_a, raw_b } => vec![
                raw_a.as_slice_mut().expect("standard layout"),
                raw_b.as_slice_mut().expect("standard layout"),
            ],
            SliceModel::Mlp { g, h } => {
                let mut p = g.params_mut();
                p.extend(h.params_mut());
                p
            }
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

enum SliceCache {
    Linear { a: Matrix, ra: Matrix, b: Matrix, rb: Matrix },
    Mlp { cg: MlpCache, ch: MlpCache },
}

/// Critic plus slicer, trained jointly.
struct Model {
    critic: CriticModel,
    slicer: SliceModel,
}

impl Model {
    fn embed_cached(&self, x: &Matrix, y: &Matrix) -> Result<(Matrix, Matrix, SliceCache)> {
        Ok(match &self.slicer {
            SliceModel::Linear { raw_a, raw_b } => {
                let (a, ra) = stiefel_project_with_r(raw_a)?;
                let (b, rb) = stiefel_project_with_r(raw_b)?;
                let (a, b) = (a.into_inner(), b.into_inner());
                (x.dot(&a), y.dot(&b), SliceCache::Linear { a, ra, b, rb })
            }
            SliceModel::Mlp { g, h } => {
                let (u, cg) = g.forward_cached(x);
                let (v, ch) = h.forward_cached(y);
                (u, v, SliceCache::Mlp { cg, ch })
            }
        })
    }

    /// DV objective of a batch and the gradients of `-objective` for every
    /// parameter tensor (critic first, then slicer).
    fn objective_and_grads(
        &self,
        x: &Matrix,
        y: &Matrix,
        perm: &[usize],
        qr: QrGradient,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let (u, v, cache) = self.embed_cached(x, y)?;
        let step = self.critic.dv_with_grad(&u, &v, perm)?;
        let mut grads = step.grads;
        match (&self.slicer, cache) {
            (SliceModel::Linear { raw_a, raw_b }, SliceCache::Linear { a, ra, b, rb }) => {
                let ga = x.t().dot(&step.du);
                let gb = y.t().dot(&step.dv);
                let (da, db) = match qr {
                    QrGradient::Exact => (qr_backward(&a, &ra, &ga), qr_backward(&b, &rb, &gb)),
                    QrGradient::FiniteDifference => {
                        (qr_backward_numeric(raw_a, &ga)?, qr_backward_numeric(raw_b, &gb)?)
                    }
                };
                grads.push(da.iter().copied().collect());
                grads.push(db.iter().copied().collect());
            }
            (SliceModel::Mlp { g, h }, SliceCache::Mlp { cg, ch }) => {
                grads.extend(g.backward(&cg, &step.du, false).0.into_flat());
                grads.extend(h.backward(&ch, &step.dv, false).0.into_flat());
            }
            _ => unreachable!("cache kind follows slicer kind"),
        }
        Ok((step.objective, grads))
    }

    fn objective(&self, x: &Matrix, y: &Matrix, perm: &[usize]) -> Result<f64> {
        let (u, v) = self.slicer.embed(x, y)?;
        self.critic.dv_value(&u, &v, perm)
    }

    fn critic_tensors(&mut self) -> usize {
        self.critic.params_mut().len()
    }

    fn params_mut(&mut self, train_slices: bool) -> Vec<&mut [f64]> {
        let mut p = self.critic.params_mut();
        if train_slices {
            p.extend(self.slicer.params_mut());
        }
        p
    }

    /// Re-randomizes any raw slice matrix that lost full column rank.
    fn repair_slices<R: Rng + ?Sized>(&mut self, rng: &mut R, adam: &mut Adam, offset: usize) -> Result<()> {
        if let SliceModel::Linear { raw_a, raw_b } = &mut self.slicer {
            for (i, raw) in [raw_a, raw_b].into_iter().enumerate() {
                match stiefel_project_with_r(raw) {
                    Ok(_) => {}
                    Err(Error::RankDeficient { ratio }) => {
                        log::warn!("raw slice {i} became rank deficient (ratio {ratio:e}); re-randomizing");
                        *raw = gaussian(raw.nrows(), raw.ncols(), rng);
                        adam.reset(offset + i);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    }

    fn max_gram_residual(&self) -> Result<f64> {
        Ok(match &self.slicer {
            SliceModel::Linear { raw_a, raw_b } => {
                let (a, _) = stiefel_project_with_r(raw_a)?;
                let (b, _) = stiefel_project_with_r(raw_b)?;
                gram_residual(&a.as_matrix().view()).max(gram_residual(&b.as_matrix().view()))
            }
            SliceModel::Mlp { .. } => 0.0,
        })
    }
}

/// Everything needed to reload a trained estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: u32,
    pub config: TrainConfig,
    pub critic: CriticModel,
    pub slicer: SliceModel,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.schema != CHECKPOINT_SCHEMA {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint schema {}", c.schema)));
        }
        c.critic.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: EstimateReport,
    pub checkpoint: Checkpoint,
}

/// Neural mSMI estimate with trainable linear slices.
pub fn train_msmi(data: &PairedDataset, cfg: &TrainConfig) -> Result<EstimateReport> {
    Ok(train_msmi_with_checkpoint(data, cfg)?.report)
}

pub fn train_msmi_with_checkpoint(data: &PairedDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fit(data, cfg, SlicerInit::Linear, "msmi-neural")
}

/// Generalized mSMI estimate with MLP slicers of one hidden layer each.
pub fn train_generalized_msmi(data: &PairedDataset, cfg: &TrainConfig, slicer_hidden: usize) -> Result<EstimateReport> {
    Ok(train_generalized_msmi_with_checkpoint(data, cfg, slicer_hidden)?.report)
}

pub fn train_generalized_msmi_with_checkpoint(
    data: &PairedDataset,
    cfg: &TrainConfig,
    slicer_hidden: usize,
) -> Result<TrainOutcome> {
    if slicer_hidden == 0 {
        return Err(Error::InvalidArgument("slicer_hidden must be at least 1".into()));
    }
    fit(data, cfg, SlicerInit::Mlp(slicer_hidden), "msmi-generalized")
}

/// Trains only the critic on a fixed slice pair: a neural estimate of the
/// projected MI `I(AᵀX; BᵀY)`.
pub fn train_fixed_slices(data: &PairedDataset, cfg: &TrainConfig, slices: &SlicePair) -> Result<EstimateReport> {
    if slices.k() != cfg.k {
        return Err(Error::DimensionMismatch(format!("slices have k={} but config has k={}", slices.k(), cfg.k)));
    }
    Ok(fit(data, cfg, SlicerInit::Fixed(slices.clone()), "projected-mi-neural")?.report)
}

enum SlicerInit {
    Linear,
    Mlp(usize),
    Fixed(SlicePair),
}

fn fit(data: &PairedDataset, cfg: &TrainConfig, init: SlicerInit, method: &str) -> Result<TrainOutcome> {
    cfg.validate(data)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = data.n();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_eval = ((n as f64 * cfg.eval_fraction).round() as usize).clamp(2, n - 2);
    let eval = data.select(&order[..n_eval]);
    let train = data.select(&order[n_eval..]);
    let n_train = train.n();

    let critic = if cfg.theory_mode {
        CriticModel::shallow(cfg.k, cfg.ell, &mut rng)?
    } else {
        CriticModel::new(&cfg.critic, cfg.k, &mut rng)
    };
    let train_slices = !matches!(init, SlicerInit::Fixed(_));
    let slicer = match init {
        SlicerInit::Linear => SliceModel::linear_random(data.dx(), data.dy(), cfg.k, &mut rng),
        SlicerInit::Mlp(hidden) => SliceModel::mlp(data.dx(), data.dy(), cfg.k, hidden, &mut rng),
        SlicerInit::Fixed(pair) => SliceModel::Linear { raw_a: pair.a.into_inner(), raw_b: pair.b.into_inner() },
    };
    let mut model = Model { critic, slicer };
    let critic_tensors = model.critic_tensors();
    let lr_scale: Vec<f64> = {
        let total = model.params_mut(train_slices).len();
        (0..total).map(|i| if i < critic_tensors { 1.0 } else { cfg.slice_lr_scale }).collect()
    };
    let mut adam = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut max_gram = model.max_gram_residual()?;
    let mut steps = 0usize;
    let mut positions: Vec<usize> = (0..n_train).collect();
    let diverged = |epoch: usize| Error::NonFiniteLoss { epoch, learning_rate: cfg.learning_rate };
    for epoch in 0..cfg.epochs {
        positions.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for batch in positions.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let xb = train.x().select(Axis(0), batch);
            let yb = train.y().select(Axis(0), batch);
            let perm = derangement(batch.len(), cfg.negative_sampling, &mut rng)?;
            model.repair_slices(&mut rng, &mut adam, critic_tensors)?;
            let (objective, mut grads) = match model.objective_and_grads(&xb, &yb, &perm, cfg.qr_gradient) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => return Err(diverged(epoch)),
                Err(e) => return Err(e),
            };
            if !objective.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(diverged(epoch));
            }
            grads.truncate(lr_scale.len());
            adam.step(model.params_mut(train_slices), &grads, &lr_scale);
            if cfg.theory_mode {
                model.critic = theory_clip(&model.critic, cfg.ell)?;
            }
            if train_slices {
                model.repair_slices(&mut rng, &mut adam, critic_tensors)?;
                max_gram = max_gram.max(model.max_gram_residual()?);
            }
            total += objective;
            batches += 1;
            steps += 1;
        }
        let mean = if batches > 0 { total / batches as f64 } else { 0.0 };
        log::debug!("epoch {epoch}: mean train objective {mean:.6}");
        history.push(mean);
    }

    let perm = derangement(n_eval, cfg.negative_sampling, &mut rng)?;
    let value = match model.objective(eval.x(), eval.y(), &perm) {
        Ok(v) => v,
        Err(Error::NonFinite(_)) => return Err(diverged(cfg.epochs)),
        Err(e) => return Err(e),
    };

    let mut metadata = serde_json::Map::new();
    metadata.insert("n_train".into(), json!(n_train));
    metadata.insert("n_eval".into(), json!(n_eval));
    metadata.insert("optimizer_steps".into(), json!(steps));
    metadata.insert("max_slice_gram_residual".into(), json!(max_gram));
    metadata.insert("negative_sampling".into(), json!(cfg.negative_sampling));
    metadata.insert("negatives".into(), json!("per-batch derangement"));
    metadata.insert("theory_mode".into(), json!(cfg.theory_mode));
    metadata.insert("config".into(), serde_json::to_value(cfg)?);

    let report = EstimateReport {
        method: method.into(),
        value_nats: value,
        eval_value: value,
        slices: Some(model.slicer.slices()?),
        train_history: history,
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
        trace: None,
        metadata,
    };
    let checkpoint =
        Checkpoint { schema: CHECKPOINT_SCHEMA, config: cfg.clone(), critic: model.critic, slicer: model.slicer };
    Ok(TrainOutcome { report, checkpoint })
}
