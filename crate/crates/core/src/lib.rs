//! Marginal-information unlearning for small autoregressive language models.
//!
//! The crate computes the marginal information that an unlearn set adds on
//! top of a retain set, as the Jensen-Shannon divergence between averaged
//! next-token marginals, and trains a language model to remove it. Around
//! that core sit the baseline unlearning objectives, membership-inference
//! detectors, and exact checkers for the detection-accuracy and perplexity-gap
//! bounds that marginal information controls.
//!
//! | module | contents |
//! |--------|----------|
//! | [`infomath`] | KL, JS, TV, binary entropy and its inverse |
//! | [`langmodel`] | the network, marginals, gradients, checkpoints |
//! | [`mariloss`] | token-wise and pooled marginal-information losses |
//! | [`unlearner`] | objectives and training loops |
//! | [`bounds`] | Bayes-accuracy oracle and bound verification |
//! | [`detector`] | min-k% / perplexity scores and ROC-AUC |
//! | [`harness`] | corpora, splits, experiments, reports |

pub mod bounds;
pub mod detector;
pub mod error;
pub mod exec;
pub mod harness;
pub mod infomath;
pub mod langmodel;
pub mod mariloss;
pub mod rng;
pub mod unlearner;

pub use error::{Error, Result};
pub use exec::Exec;
pub use rng::Rng;
