//! Neural estimation of max-sliced mutual information.
//!
//! A critic scores projected pairs `(Aᵀx, Bᵀy)` and is trained together with
//! the slices by gradient ascent on the Donsker-Varadhan bound
//! `E_P[f] - log E_{P_X ⊗ P_Y}[e^f]`, with product samples formed by a
//! derangement of each minibatch. Slices are the QR projections of
//! unconstrained matrices, so the optimizer never leaves the Stiefel manifold.

mod adam;
mod critic;
mod mlp;
mod objective;
mod qr_grad;
mod train;

pub use critic::{critic_eval, theory_clip, theory_scale, CriticConfig, CriticKind, CriticModel};
pub use mlp::{Activation, Layer, MlpCache, MlpGrads, MlpParams};
pub use objective::{derangement, dv_objective, log_mean_exp, NegativeSampling};
pub use qr_grad::{qr_backward, qr_backward_numeric};
pub use train::{
    train_fixed_slices, train_generalized_msmi, train_generalized_msmi_with_checkpoint, train_msmi,
    train_msmi_with_checkpoint, Checkpoint, QrGradient, SliceModel, TrainConfig, TrainOutcome, CHECKPOINT_SCHEMA,
};
