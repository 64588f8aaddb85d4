use serde::{Deserialize, Serialize};

use crate::datagen::PairedDataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, StiefelMatrix};
use crate::lipo::SearchTrace;
use crate::neural::MlpParams;

/// A point `(A, B)` on `St(k, d_x) × St(k, d_y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePair {
    pub a: StiefelMatrix,
    pub b: StiefelMatrix,
}

impl SlicePair {
    pub fn new(a: StiefelMatrix, b: StiefelMatrix) -> Result<Self> {
        if a.slice_dim() != b.slice_dim() {
            return Err(Error::DimensionMismatch(format!(
                "slices project to {} and {} dimensions",
                a.slice_dim(),
                b.slice_dim()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn k(&self) -> usize {
        self.a.slice_dim()
    }

    /// Projected samples `(XA, YB)`.
    pub fn project(&self, data: &PairedDataset) -> Result<(Matrix, Matrix)> {
        if data.dx() != self.a.ambient_dim() || data.dy() != self.b.ambient_dim() {
            return Err(Error::DimensionMismatch(format!(
                "slices expect d_x={}, d_y={} but data has {}, {}",
                self.a.ambient_dim(),
                self.b.ambient_dim(),
                data.dx(),
                data.dy()
            )));
        }
        Ok((data.x().dot(self.a.as_matrix()), data.y().dot(self.b.as_matrix())))
    }
}

/// Learned projections: linear Stiefel slices or nonlinear MLP slicers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Slices {
    Linear(SlicePair),
    Mlp { g: MlpParams, h: MlpParams },
}

impl Slices {
    pub fn linear(&self) -> Option<&SlicePair> {
        match self {
            Slices::Linear(p) => Some(p),
            Slices::Mlp { .. } => None,
        }
    }
}

/// Output of every estimator: the value in nats plus whatever the method
/// learned or searched along the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub value_nats: f64,
    /// Held-out evaluation value. Equal to `value_nats` for the neural
    /// estimators and to the best search value for LIPO.
    pub eval_value: f64,
    pub slices: Option<Slices>,
    /// Mean training objective per epoch (neural estimators only).
    pub train_history: Vec<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<SearchTrace>,
    /// Method-specific details such as estimator variants and counters.
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl EstimateReport {
    /// The linear slice pair, if the method produced one.
    pub fn slice_pair(&self) -> Option<&SlicePair> {
        self.slices.as_ref().and_then(Slices::linear)
    }
}
