//! Estimators of max-sliced mutual information: the mutual information of
//! the most informative `k`-dimensional linear views of two random vectors.
//!
//! - [`gaussian`]: closed forms for jointly Gaussian data (CCA and PCA).
//! - [`neural`]: a critic and Stiefel slices trained on the Donsker-Varadhan
//!   bound.
//! - [`knn`]: Kozachenko-Leonenko entropy and KSG mutual information.
//! - [`lipo`]: AdaLIPO slice search around the kNN estimators.
//! - [`asmi`]: the average over Haar-random slices.
//! - [`datagen`] and [`harness`]: seeded generators and studies.
//!
//! ```
//! use msmi::gaussian::{gaussian_msmi, GaussianJointModel};
//!
//! let model = GaussianJointModel::scalar(0.5)?;
//! assert!((gaussian_msmi(&model, 1)?.value_nats - 0.143841).abs() < 1e-6);
//! # Ok::<(), msmi::Error>(())
//! ```

pub mod asmi;
pub mod datagen;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod knn;
pub mod linalg;
pub mod lipo;
pub mod neural;
pub mod report;

pub use error::{Error, Result};

// The guide's code blocks run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gaussian.md")]
    mod gaussian {}
    #[doc = include_str!("../../../book/src/neural.md")]
    mod neural {}
    #[doc = include_str!("../../../book/src/knn.md")]
    mod knn {}
    #[doc = include_str!("../../../book/src/lipo.md")]
    mod lipo {}
    #[doc = include_str!("../../../book/src/asmi.md")]
    mod asmi {}
    #[doc = include_str!("../../../book/src/datagen.md")]
    mod datagen {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
