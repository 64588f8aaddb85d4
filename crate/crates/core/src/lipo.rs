//! Gradient-free global maximization with AdaLIPO, and its use for
//! max-sliced MI and entropy through the kNN estimators.
//!
//! Each step either explores (uniform draw) or exploits: uniform candidates
//! are drawn until one has a Lipschitz upper bound
//! `min_j f(x_j) + L̂·‖x - x_j‖` above the best value seen. `L̂` is the smallest
//! power of the grid base consistent with every observed slope.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datagen::PairedDataset;
use crate::error::{Error, Result};
use crate::knn::{kl_entropy, ksg_mi, SampleCloud, KSG_VARIANT};
use crate::linalg::{stiefel_project, Matrix, StiefelMatrix};
use crate::report::{EstimateReport, SlicePair, Slices};

/// Smallest exponent `i` of the Lipschitz grid `base^i`.
pub const MIN_GRID_EXPONENT: i32 = -100;
/// Candidates drawn per exploitation step before the last one is accepted anyway.
pub const MAX_REJECTIONS: usize = 10_000;
/// Consecutive re-draws (rank-deficient candidates) tolerated before giving up.
const MAX_REDRAWS: usize = 10_000;
pub const LIPO_VARIANT: &str = "AdaLIPO";
const LOCAL_WIDTH_START: f64 = 0.1;
const LOCAL_WIDTH_MIN: f64 = 1e-4;
const LOCAL_WIDTH_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBudget {
    /// Objective evaluations to spend.
    pub max_evals: usize,
    pub exploration_prob: f64,
    pub lipschitz_grid_base: f64,
    pub seed: u64,
    /// Probability of a local step: a Gaussian perturbation of the incumbent
    /// with a self-adjusting width. Zero gives plain AdaLIPO.
    pub local_search_prob: f64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { max_evals: 1000, exploration_prob: 0.1, lipschitz_grid_base: 1.3, seed: 0, local_search_prob: 0.0 }
    }
}

impl SearchBudget {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_evals < 2 {
            return Err(Error::InvalidArgument(format!("max_evals must be at least 2, got {}", self.max_evals)));
        }
        if !(self.exploration_prob > 0.0 && self.exploration_prob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "exploration_prob must lie in (0, 1], got {}",
                self.exploration_prob
            )));
        }
        if !(self.local_search_prob >= 0.0 && self.exploration_prob + self.local_search_prob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "local_search_prob must be nonnegative with exploration_prob + local_search_prob <= 1, got {}",
                self.local_search_prob
            )));
        }
        if !(self.lipschitz_grid_base > 1.0 && self.lipschitz_grid_base.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lipschitz_grid_base must exceed 1, got {}",
                self.lipschitz_grid_base
            )));
        }
        Ok(())
    }
}

/// Every evaluated point with its value, in evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub best_index: usize,
    /// `L̂` after each evaluation.
    pub lipschitz_history: Vec<f64>,
    /// Candidates the objective asked to re-draw; these cost no budget.
    pub redraws: usize,
    /// Exploitation candidates rejected by the Lipschitz bound.
    pub rejections: usize,
}

impl SearchTrace {
    pub fn best_value(&self) -> f64 {
        self.values[self.best_index]
    }

    /// Best value after each evaluation.
    pub fn running_best(&self) -> Vec<f64> {
        self.values
            .iter()
            .scan(f64::NEG_INFINITY, |best, &v| {
                *best = best.max(v);
                Some(*best)
            })
            .collect()
    }

    /// Keeps the first `max_entries` evaluations, plus the best one if it
    /// falls beyond them.
    pub fn truncated(&self, max_entries: usize) -> SearchTrace {
        if self.values.len() <= max_entries {
            return self.clone();
        }
        let mut t = SearchTrace {
            points: self.points[..max_entries].to_vec(),
            values: self.values[..max_entries].to_vec(),
            best_index: self.best_index,
            lipschitz_history: self.lipschitz_history[..max_entries].to_vec(),
            redraws: self.redraws,
            rejections: self.rejections,
        };
        if self.best_index >= max_entries && max_entries > 0 {
            let last = max_entries - 1;
            t.points[last] = self.points[self.best_index].clone();
            t.values[last] = self.values[self.best_index];
            t.lipschitz_history[last] = self.lipschitz_history[self.best_index];
            t.best_index = last;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipoResult {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub trace: SearchTrace,
}

/// Maximizes a total objective over the box `[lower, upper]`.
pub fn lipo_maximize<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    lower: &[f64],
    upper: &[f64],
    budget: &SearchBudget,
) -> Result<LipoResult> {
    try_lipo_maximize(|x| Ok::<_, Error>(Some(objective(x))), lower, upper, budget)
}

/// As [`lipo_maximize`] for fallible objectives. `Ok(None)` asks for a fresh
/// candidate without spending budget.
pub fn try_lipo_maximize<F, E>(mut objective: F, lower: &[f64], upper: &[f64], budget: &SearchBudget) -> Result<LipoResult, E>
where
    F: FnMut(&[f64]) -> Result<Option<f64>, E>,
    E: From<Error>,
{
    budget.validate()?;
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::DimensionMismatch("box bounds must be nonempty and of equal length".into()).into());
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
        return Err(Error::InvalidArgument("box needs lower < upper in every coordinate".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let base = budget.lipschitz_grid_base;
    let mut trace = SearchTrace {
        points: Vec::with_capacity(budget.max_evals),
        values: Vec::with_capacity(budget.max_evals),
        best_index: 0,
        lipschitz_history: Vec::with_capacity(budget.max_evals),
        redraws: 0,
        rejections: 0,
    };
    let mut max_slope = 0.0_f64;
    let mut lipschitz = base.powi(MIN_GRID_EXPONENT);
    let mut consecutive_redraws = 0;
    let uniform = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        lower.iter().zip(upper).map(|(&l, &u)| l + (u - l) * rng.gen::<f64>()).collect()
    };

    // Local step width as a fraction of each box side.
    let mut local_width = LOCAL_WIDTH_START;

    while trace.values.len() < budget.max_evals {
        let draw: f64 = if trace.values.is_empty() { 0.0 } else { rng.gen() };
        let explore = draw < budget.exploration_prob;
        let local = !explore && draw < budget.exploration_prob + budget.local_search_prob;
        let mut candidate = uniform(&mut rng);
        if local {
            let best = &trace.points[trace.best_index];
            for (j, c) in candidate.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *c = (best[j] + local_width * (upper[j] - lower[j]) * z).clamp(lower[j], upper[j]);
            }
        } else if !explore {
            let best = trace.values[trace.best_index];
            let mut tries = 1;
            while !bound_exceeds(&trace, &candidate, lipschitz, best) {
                trace.rejections += 1;
                if tries == MAX_REJECTIONS {
                    log::debug!("no candidate passed the Lipschitz bound in {MAX_REJECTIONS} draws; taking the last");
                    break;
                }
                candidate = uniform(&mut rng);
                tries += 1;
            }
        }
        let value = match objective(&candidate)? {
            Some(v) => v,
            None => {
                trace.redraws += 1;
                consecutive_redraws += 1;
                if consecutive_redraws >= MAX_REDRAWS {
                    return Err(Error::InvalidArgument(format!(
                        "objective rejected {MAX_REDRAWS} consecutive candidates"
                    ))
                    .into());
                }
                continue;
            }
        };
        consecutive_redraws = 0;
        for (p, &f) in trace.points.iter().zip(&trace.values) {
            let dist = euclidean(p, &candidate);
            if dist > 0.0 {
                max_slope = max_slope.max((value - f).abs() / dist);
            }
        }
        lipschitz = grid_value(max_slope, base);
        trace.points.push(candidate);
        trace.values.push(value);
        trace.lipschitz_history.push(lipschitz);
        let last = trace.values.len() - 1;
        let improved = value > trace.values[trace.best_index];
        if improved {
            trace.best_index = last;
        }
        if local {
            local_width = if improved {
                (local_width * 2.0).min(LOCAL_WIDTH_MAX)
            } else {
                (local_width * 0.85).max(LOCAL_WIDTH_MIN)
            };
        }
    }
    Ok(LipoResult { argmax: trace.points[trace.best_index].clone(), value: trace.best_value(), trace })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Whether `min_j f_j + L·‖x - x_j‖` exceeds `best`.
fn bound_exceeds(trace: &SearchTrace, x: &[f64], lipschitz: f64, best: f64) -> bool {
    trace.points.iter().zip(&trace.values).all(|(p, &f)| f + lipschitz * euclidean(p, x) > best)
}

/// Smallest `base^i`, `i ≥ MIN_GRID_EXPONENT`, that is at least `slope`.
fn grid_value(slope: f64, base: f64) -> f64 {
    let floor = base.powi(MIN_GRID_EXPONENT);
    if !(slope > floor) {
        return floor;
    }
    if !slope.is_finite() {
        return f64::INFINITY;
    }
    let mut i = (slope.ln() / base.ln()).ceil() as i32;
    while base.powi(i) < slope {
        i += 1;
    }
    while i > MIN_GRID_EXPONENT && base.powi(i - 1) >= slope {
        i -= 1;
    }
    base.powi(i)
}

/// Splits a box point into two raw `d × k` matrices (row-major).
fn unpack(point: &[f64], dx: usize, dy: usize, k: usize) -> (Matrix, Matrix) {
    let a = Array2::from_shape_vec((dx, k), point[..dx * k].to_vec()).expect("length checked");
    let b = Array2::from_shape_vec((dy, k), point[dx * k..(dx + dy) * k].to_vec()).expect("length checked");
    (a, b)
}

fn project_or_redraw(raw: &Matrix) -> Result<Option<StiefelMatrix>> {
    match stiefel_project(raw) {
        Ok(s) => Ok(Some(s)),
        Err(Error::RankDeficient { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Offset applied to the search seed for the tie-breaking jitter stream.
const JITTER_STREAM: u64 = 0x6a09_e667_f3bc_c908;

fn search_metadata(budget: &SearchBudget, k_nn: usize, trace: &SearchTrace) -> serde_json::Map<String, serde_json::Value> {
    let mut m = serde_json::Map::new();
    let variant = if budget.local_search_prob > 0.0 {
        format!("{LIPO_VARIANT} with local steps")
    } else {
        LIPO_VARIANT.to_string()
    };
    m.insert("search".into(), json!(variant));
    m.insert("budget".into(), serde_json::to_value(budget).expect("plain struct"));
    m.insert("min_grid_exponent".into(), json!(MIN_GRID_EXPONENT));
    m.insert("max_rejections_per_step".into(), json!(MAX_REJECTIONS));
    m.insert("box".into(), json!([-1.0, 1.0]));
    m.insert("k_nn".into(), json!(k_nn));
    m.insert("evaluations".into(), json!(trace.values.len()));
    m.insert("redraws".into(), json!(trace.redraws));
    m
}

/// mSMI estimate by AdaLIPO over slice pairs, scoring each with KSG.
pub fn msmi_lipo(data: &PairedDataset, k: usize, k_nn: usize, budget: &SearchBudget) -> Result<EstimateReport> {
    let start = Instant::now();
    let (dx, dy) = (data.dx(), data.dy());
    if k == 0 || dx < k || dy < k {
        return Err(Error::DimensionMismatch(format!("need 1 <= k <= min(d_x, d_y), got k={k}, d_x={dx}, d_y={dy}")));
    }
    if data.n() <= k_nn {
        return Err(Error::TooFewSamples { got: data.n(), need: k_nn + 1 });
    }
    let p = (dx + dy) * k;
    let mut jitter = ChaCha8Rng::seed_from_u64(budget.seed ^ JITTER_STREAM);
    let result = try_lipo_maximize(
        |point| {
            let (ra, rb) = unpack(point, dx, dy, k);
            let (Some(a), Some(b)) = (project_or_redraw(&ra)?, project_or_redraw(&rb)?) else {
                return Ok(None);
            };
            let u = SampleCloud::new(data.x().dot(a.as_matrix()))?.jittered(&mut jitter);
            let v = SampleCloud::new(data.y().dot(b.as_matrix()))?.jittered(&mut jitter);
            ksg_mi(&u, &v, k_nn).map(Some)
        },
        &vec![-1.0; p],
        &vec![1.0; p],
        budget,
    )?;
    let (ra, rb) = unpack(&result.argmax, dx, dy, k);
    let pair = SlicePair::new(stiefel_project(&ra)?, stiefel_project(&rb)?)?;
    let mut metadata = search_metadata(budget, k_nn, &result.trace);
    metadata.insert("mi_estimator".into(), json!(KSG_VARIANT));
    metadata.insert("k".into(), json!(k));
    Ok(EstimateReport {
        method: "msmi-lipo".into(),
        value_nats: result.value,
        eval_value: result.value,
        slices: Some(Slices::Linear(pair)),
        train_history: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: budget.seed,
        trace: Some(result.trace),
        metadata,
    })
}

/// Max-sliced entropy search result.
#[derive(Debug, Clone, PartialEq)]
pub struct MshLipoResult {
    pub value: f64,
    pub slice: StiefelMatrix,
    pub trace: SearchTrace,
}

/// Max-sliced entropy estimate: AdaLIPO over `A ∈ St(k, d)` scoring
/// `kl_entropy(Aᵀx)`.
pub fn msh_lipo(samples: &SampleCloud, k: usize, k_nn: usize, budget: &SearchBudget) -> Result<MshLipoResult> {
    let d = samples.dim();
    if k == 0 || d < k {
        return Err(Error::DimensionMismatch(format!("need 1 <= k <= d, got k={k}, d={d}")));
    }
    if samples.n() <= k_nn {
        return Err(Error::TooFewSamples { got: samples.n(), need: k_nn + 1 });
    }
    let p = d * k;
    let mut jitter = ChaCha8Rng::seed_from_u64(budget.seed ^ JITTER_STREAM);
    let result = try_lipo_maximize(
        |point| {
            let raw = Array2::from_shape_vec((d, k), point.to_vec()).expect("length p");
            let Some(a) = project_or_redraw(&raw)? else {
                return Ok(None);
            };
            let cloud = SampleCloud::new(samples.points().dot(a.as_matrix()))?.jittered(&mut jitter);
            kl_entropy(&cloud, k_nn).map(Some)
        },
        &vec![-1.0; p],
        &vec![1.0; p],
        budget,
    )?;
    let slice = stiefel_project(&Array2::from_shape_vec((d, k), result.argmax.clone()).expect("length p"))?;
    Ok(MshLipoResult { value: result.value, slice, trace: result.trace })
}

/// Report form of [`msh_lipo`].
pub fn msh_lipo_report(samples: &SampleCloud, k: usize, k_nn: usize, budget: &SearchBudget) -> Result<(EstimateReport, StiefelMatrix)> {
    let start = Instant::now();
    let r = msh_lipo(samples, k, k_nn, budget)?;
    let mut metadata = search_metadata(budget, k_nn, &r.trace);
    metadata.insert("entropy_estimator".into(), json!("Kozachenko-Leonenko (max-norm)"));
    metadata.insert("k".into(), json!(k));
    let report = EstimateReport {
        method: "msh-lipo".into(),
        value_nats: r.value,
        eval_value: r.value,
        slices: None,
        train_history: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: budget.seed,
        trace: Some(r.trace),
        metadata,
    };
    Ok((report, r.slice))
}
