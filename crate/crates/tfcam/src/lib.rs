//! Interpretable deep learning for longitudinal clinical prediction.
//!
//! This crate implements a temporal-feature cross attention model for
//! binary outcome prediction over fixed-interval patient time series,
//! alongside RETAIN-style and plain LSTM baselines, all built on a
//! from-scratch reverse-mode autodiff tape. Beyond prediction it
//! produces three levels of explanation artifacts:
//!
//! - **Temporal**: per-step attention weights α, stratified by outcome.
//! - **Feature**: a signed local contribution matrix C over
//!   (time, feature) cells and importance rankings derived from it.
//! - **Cross-temporal**: an aggregated attention matrix A averaged over
//!   transformer layers and heads, the chained influence measure
//!   I(t,i;t',j) = C[t,i]·A[t,t']·C[t',j], and a bounded-depth influence
//!   hierarchy graph traced backward from the prediction.
//!
//! A synthetic cohort generator, evaluation metrics, and a file-based
//! CLI round out the pipeline. See the `book/` guide for a narrative
//! walkthrough.
//!
//! ```
//! use tfcam::tensor::Tensor;
//! use tfcam::tape::Tape;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::scalar(3.0));
//! let x = tape.leaf(Tensor::scalar(2.0));
//! let wx = tape.mul(w, x).unwrap();
//! let loss_var = tape.mul(wx, wx).unwrap(); // (w·x)²
//! let loss = tape.sum_all(loss_var);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads[0].item(), 24.0); // d(wx)²/dw = 2·6·2
//! ```

pub mod data;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
