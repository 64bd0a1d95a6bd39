//! Uncertainty-aware classifiers, L∞ adversarial attacks against them, and
//! detection-aware evaluation of attack success.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`special`] / [`autodiff`]: dense tensors, gamma-family
//!   special functions and a reverse-mode AD tape.
//! - [`models`]: dense classifiers with softmax or Dirichlet-concentration
//!   heads, plus MC-dropout ensembling.
//! - [`uncertainty`]: entropy, mutual information and Dirichlet differential
//!   entropy.
//! - [`losses`]: cross-entropy, the Dirichlet KL multi-task objective and the
//!   SGD trainer.
//! - [`attacks`]: FGSM / BIM / MIM generation, targeted, untargeted and
//!   detection-evading variants.
//! - [`metrics`]: ROC/AUC, joint success rate and the EER operating point.
//! - [`datasets`]: synthetic cluster + ring geometry and CSV ingestion.
//! - [`harness`]: experiment orchestration behind the `advdet` CLI.

pub mod attacks;
pub mod autodiff;
pub mod datasets;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod special;
pub mod tensor;
pub mod uncertainty;

pub use autodiff::{AutodiffError, Gradients, Graph, Node};
pub use tensor::{ShapeError, Tensor};
