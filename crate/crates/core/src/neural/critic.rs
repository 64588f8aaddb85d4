use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpParams};
use super::objective::{dv_objective, softmax};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    /// One network on the concatenated pair `(u, v)`.
    Joint,
    /// `⟨h₁(u), h₂(v)⟩`.
    #[default]
    Separable,
}

/// Shape of a freshly initialized critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub kind: CriticKind,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Embedding width of each separable branch.
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { kind: CriticKind::Separable, hidden_width: 256, hidden_layers: 2, embed_dim: 32, activation: Activation::Elu }
    }
}

/// The DV potential acting on projected pairs `(u, v) ∈ R^k × R^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CriticModel {
    Joint { net: MlpParams },
    Separable { h1: MlpParams, h2: MlpParams },
}

/// Objective value plus gradients of the loss `-objective`.
pub(crate) struct CriticStep {
    pub objective: f64,
    pub grads: Vec<Vec<f64>>,
    pub du: Matrix,
    pub dv: Matrix,
}

impl CriticModel {
    /// Glorot-initialized critic whose output layer starts at zero, so every
    /// score (and hence the DV objective) is initially exactly 0.
    ///
    /// For the separable kind only `h₁`'s output layer is zeroed: zeroing both
    /// branches would leave the inner product stuck at a stationary point.
    pub fn new<R: Rng + ?Sized>(cfg: &CriticConfig, k: usize, rng: &mut R) -> Self {
        let hidden = vec![cfg.hidden_width; cfg.hidden_layers];
        match cfg.kind {
            CriticKind::Joint => {
                let dims: Vec<usize> = std::iter::once(2 * k).chain(hidden).chain([1]).collect();
                CriticModel::Joint { net: MlpParams::new(&dims, cfg.activation, true, rng) }
            }
            CriticKind::Separable => {
                let dims: Vec<usize> = std::iter::once(k).chain(hidden).chain([cfg.embed_dim]).collect();
                let h1 = MlpParams::new(&dims, cfg.activation, true, rng);
                let h2 = MlpParams::new(&dims, cfg.activation, false, rng);
                CriticModel::Separable { h1, h2 }
            }
        }
    }

    /// Shallow ReLU joint critic `Σ βᵢ relu(wᵢ·z + bᵢ) + w₀·z + b₀` with `ell`
    /// hidden units, projected onto the bounded parameter class.
    pub fn shallow<R: Rng + ?Sized>(k: usize, ell: usize, rng: &mut R) -> Result<Self> {
        let net = MlpParams::new(&[2 * k, ell, 1], Activation::Relu, true, rng).with_skip();
        theory_clip(&CriticModel::Joint { net }, ell)
    }

    /// Projection dimension `k` the critic expects on each side.
    pub fn slice_dim(&self) -> usize {
        match self {
            CriticModel::Joint { net } => net.input_dim() / 2,
            CriticModel::Separable { h1, .. } => h1.input_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CriticModel::Joint { net } => {
                net.validate()?;
                if net.input_dim() % 2 != 0 || net.output_dim() != 1 {
                    return Err(Error::WrongArchitecture(format!(
                        "joint critic must map R^2k to R, got {} -> {}",
                        net.input_dim(),
                        net.output_dim()
                    )));
                }
            }
            CriticModel::Separable { h1, h2 } => {
                h1.validate()?;
                h2.validate()?;
                if h1.input_dim() != h2.input_dim() || h1.output_dim() != h2.output_dim() {
                    return Err(Error::WrongArchitecture("separable branches have different shapes".into()));
                }
            }
        }
        Ok(())
    }

    /// Scores of the row pairs `(u_i, v_i)`.
    pub fn scores(&self, u: &Matrix, v: &Matrix) -> Result<Array1<f64>> {
        let k = self.slice_dim();
        if u.ncols() != k || v.ncols() != k || u.nrows() != v.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "critic expects two n×{k} inputs, got {:?} and {:?}",
                u.dim(),
                v.dim()
            )));
        }
        Ok(match self {
            CriticModel::Joint { net } => net.forward(&concatenate![Axis(1), *u, *v]).column(0).to_owned(),
            CriticModel::Separable { h1, h2 } => (h1.forward(u) * h2.forward(v)).sum_axis(Axis(1)),
        })
    }

    /// DV objective with positives `(u_i, v_i)` and negatives `(u_i, v_{perm[i]})`.
    pub(crate) fn dv_value(&self, u: &Matrix, v: &Matrix, perm: &[usize]) -> Result<f64> {
        match self {
            CriticModel::Joint { net } => {
                let z = joint_input(u, v, perm);
                let s = net.forward(&z);
                let b = u.nrows();
                let s = s.column(0).to_vec();
                dv_objective(&s[..b], &s[b..])
            }
            CriticModel::Separable { h1, h2 } => {
                let e1 = h1.forward(u);
                let e2 = h2.forward(v);
                let (pos, neg) = separable_scores(&e1, &e2, perm);
                dv_objective(&pos, &neg)
            }
        }
    }

    pub(crate) fn dv_with_grad(&self, u: &Matrix, v: &Matrix, perm: &[usize]) -> Result<CriticStep> {
        let b = u.nrows();
        let inv_b = 1.0 / b as f64;
        match self {
            CriticModel::Joint { net } => {
                let k = u.ncols();
                let z = joint_input(u, v, perm);
                let (s, cache) = net.forward_cached(&z);
                let s = s.column(0).to_vec();
                let objective = dv_objective(&s[..b], &s[b..])?;
                let w = softmax(&s[b..]);
                let mut gs = Array2::zeros((2 * b, 1));
                for i in 0..b {
                    gs[[i, 0]] = -inv_b;
                    gs[[b + i, 0]] = w[i];
                }
                let (grads, dz) = net.backward(&cache, &gs, true);
                let dz = dz.expect("input gradient requested");
                let du = &dz.slice(s![..b, ..k]) + &dz.slice(s![b.., ..k]);
                let mut dv = dz.slice(s![..b, k..]).to_owned();
                for i in 0..b {
                    let mut row = dv.row_mut(perm[i]);
                    row += &dz.slice(s![b + i, k..]);
                }
                Ok(CriticStep { objective, grads: grads.into_flat(), du, dv })
            }
            CriticModel::Separable { h1, h2 } => {
                let (e1, c1) = h1.forward_cached(u);
                let (e2, c2) = h2.forward_cached(v);
                let (pos, neg) = separable_scores(&e1, &e2, perm);
                let objective = dv_objective(&pos, &neg)?;
                let w = softmax(&neg);
                let mut g1 = e2.mapv(|x| -inv_b * x);
                let mut g2 = e1.mapv(|x| -inv_b * x);
                for i in 0..b {
                    g1.row_mut(i).scaled_add(w[i], &e2.row(perm[i]));
                    g2.row_mut(perm[i]).scaled_add(w[i], &e1.row(i));
                }
                let (gr1, du) = h1.backward(&c1, &g1, true);
                let (gr2, dv) = h2.backward(&c2, &g2, true);
                let mut grads = gr1.into_flat();
                grads.extend(gr2.into_flat());
                Ok(CriticStep { objective, grads, du: du.unwrap(), dv: dv.unwrap() })
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            CriticModel::Joint { net } => net.params_mut(),
            CriticModel::Separable { h1, h2 } => {
                let mut p = h1.params_mut();
                p.extend(h2.params_mut());
                p
            }
        }
    }
}

fn joint_input(u: &Matrix, v: &Matrix, perm: &[usize]) -> Matrix {
    let v_neg = v.select(Axis(0), perm);
    let pos = concatenate![Axis(1), *u, *v];
    let neg = concatenate![Axis(1), *u, v_neg];
    concatenate![Axis(0), pos, neg]
}

fn separable_scores(e1: &Matrix, e2: &Matrix, perm: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let pos = e1.rows().into_iter().zip(e2.rows()).map(|(a, b)| a.dot(&b)).collect();
    let neg = perm.iter().enumerate().map(|(i, &p)| e1.row(i).dot(&e2.row(p))).collect();
    (pos, neg)
}

/// Score of a single pair.
pub fn critic_eval(critic: &CriticModel, u: &[f64], v: &[f64]) -> Result<f64> {
    let to_row = |x: &[f64]| Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
    Ok(critic.scores(&to_row(u), &to_row(v))?[0])
}

/// Relative slack on the norm constraints so that a rescaled row, whose norm
/// can round to one ulp above the bound, is not rescaled again.
const CLIP_SLACK: f64 = 1e-12;

/// The bound `a_ℓ = max(ln ln ℓ, 1)` of the shallow parameter class.
pub fn theory_scale(ell: usize) -> f64 {
    let l = ell as f64;
    if l <= std::f64::consts::E {
        1.0
    } else {
        l.ln().ln().max(1.0)
    }
}

/// Projects a shallow ReLU joint critic onto its bounded class:
/// each hidden unit `(wᵢ, bᵢ)` is rescaled so `max(‖wᵢ‖₁, |bᵢ|) ≤ 1`, output
/// weights are clipped to `|βᵢ| ≤ a_ℓ/(2ℓ)`, the output bias to `|b₀| ≤ a_ℓ`,
/// and the skip weights rescaled so `‖w₀‖₁ ≤ a_ℓ`.
pub fn theory_clip(critic: &CriticModel, ell: usize) -> Result<CriticModel> {
    let net = match critic {
        CriticModel::Joint { net } => net,
        CriticModel::Separable { .. } => {
            return Err(Error::WrongArchitecture("theory mode needs a joint critic".into()))
        }
    };
    let shallow = net.layers.len() == 2
        && net.activations == [Activation::Relu]
        && net.layers[0].fan_out() == ell
        && net.output_dim() == 1
        && net.skip.is_some();
    if !shallow {
        return Err(Error::WrongArchitecture(format!(
            "theory mode needs one ReLU hidden layer of {ell} units with a linear skip term"
        )));
    }
    let a = theory_scale(ell);
    let mut net = net.clone();
    let hidden = &mut net.layers[0];
    for i in 0..ell {
        let norm = hidden.weight.column(i).iter().map(|w| w.abs()).sum::<f64>().max(hidden.bias[i].abs());
        if norm > 1.0 + CLIP_SLACK {
            hidden.weight.column_mut(i).mapv_inplace(|w| w / norm);
            hidden.bias[i] /= norm;
        }
    }
    let beta_max = a / (2.0 * ell as f64);
    let out = &mut net.layers[1];
    out.weight.mapv_inplace(|b| b.clamp(-beta_max, beta_max));
    out.bias.mapv_inplace(|b| b.clamp(-a, a));
    let skip = net.skip.as_mut().expect("checked above");
    let norm = skip.iter().map(|w| w.abs()).sum::<f64>();
    if norm > a * (1.0 + CLIP_SLACK) {
        skip.mapv_inplace(|w| w * a / norm);
    }
    Ok(CriticModel::Joint { net })
}
