//! Average-sliced mutual information: projected MI averaged over Haar-random
//! slice pairs.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datagen::PairedDataset;
use crate::error::{Error, Result};
use crate::knn::{ksg_mi, SampleCloud, KSG_VARIANT};
use crate::linalg::haar_stiefel_sample;
use crate::neural::{train_fixed_slices, TrainConfig};
use crate::report::{EstimateReport, SlicePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsmiConfig {
    pub k: usize,
    /// Number of Monte Carlo slice pairs `m`.
    pub num_slices: usize,
    pub k_nn: usize,
    pub seed: u64,
}

impl Default for AsmiConfig {
    fn default() -> Self {
        Self { k: 1, num_slices: 128, k_nn: crate::knn::DEFAULT_K_NN, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsmiEstimate {
    pub value: f64,
    pub per_slice: Vec<f64>,
}

impl AsmiEstimate {
    fn from_values(per_slice: Vec<f64>) -> Self {
        let value = per_slice.iter().sum::<f64>() / per_slice.len() as f64;
        Self { value, per_slice }
    }

    /// Standard error of the Monte Carlo mean.
    pub fn standard_error(&self) -> f64 {
        let m = self.per_slice.len() as f64;
        if m < 2.0 {
            return f64::NAN;
        }
        let var = self.per_slice.iter().map(|v| (v - self.value).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    }
}

/// Offset applied to the seed for the tie-breaking jitter stream.
const JITTER_STREAM: u64 = 0xbb67_ae85_84ca_a73b;

fn check(data: &PairedDataset, k: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("num_slices must be at least 1".into()));
    }
    if k == 0 || data.dx() < k || data.dy() < k {
        return Err(Error::DimensionMismatch(format!(
            "need 1 <= k <= min(d_x, d_y), got k={k}, d_x={}, d_y={}",
            data.dx(),
            data.dy()
        )));
    }
    Ok(())
}

/// Draws `m` independent Haar pairs in a fixed order from the seed.
fn draw_pairs(data: &PairedDataset, k: usize, m: usize, seed: u64) -> Result<Vec<SlicePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| SlicePair::new(haar_stiefel_sample(k, data.dx(), &mut rng)?, haar_stiefel_sample(k, data.dy(), &mut rng)?))
        .collect()
}

/// Monte Carlo aSMI with the KSG estimator on each projected dataset.
pub fn asmi_estimate(data: &PairedDataset, cfg: &AsmiConfig) -> Result<AsmiEstimate> {
    check(data, cfg.k, cfg.num_slices)?;
    if data.n() <= cfg.k_nn {
        return Err(Error::TooFewSamples { got: data.n(), need: cfg.k_nn + 1 });
    }
    let mut jitter = ChaCha8Rng::seed_from_u64(cfg.seed ^ JITTER_STREAM);
    let per_slice = draw_pairs(data, cfg.k, cfg.num_slices, cfg.seed)?
        .iter()
        .map(|pair| {
            let (u, v) = pair.project(data)?;
            let u = SampleCloud::new(u)?.jittered(&mut jitter);
            let v = SampleCloud::new(v)?.jittered(&mut jitter);
            ksg_mi(&u, &v, cfg.k_nn)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AsmiEstimate::from_values(per_slice))
}

pub fn asmi_report(data: &PairedDataset, cfg: &AsmiConfig) -> Result<EstimateReport> {
    let start = Instant::now();
    let est = asmi_estimate(data, cfg)?;
    let mut metadata = serde_json::Map::new();
    metadata.insert("mi_estimator".into(), json!(KSG_VARIANT));
    metadata.insert("config".into(), serde_json::to_value(cfg)?);
    metadata.insert("standard_error".into(), json!(est.standard_error()));
    metadata.insert("per_slice".into(), json!(est.per_slice));
    Ok(EstimateReport {
        method: "asmi".into(),
        value_nats: est.value,
        eval_value: est.value,
        slices: None,
        train_history: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
        trace: None,
        metadata,
    })
}

/// aSMI with a neural inner estimator: one critic training per random slice
/// pair. Slower by construction; used to compare running time against a
/// single mSMI training.
pub fn asmi_neural(data: &PairedDataset, num_slices: usize, train: &TrainConfig) -> Result<AsmiEstimate> {
    check(data, train.k, num_slices)?;
    let per_slice = draw_pairs(data, train.k, num_slices, train.seed)?
        .iter()
        .enumerate()
        .map(|(j, pair)| {
            let cfg = TrainConfig { seed: train.seed.wrapping_add(j as u64 + 1), ..train.clone() };
            Ok(train_fixed_slices(data, &cfg, pair)?.value_nats)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AsmiEstimate::from_values(per_slice))
}
