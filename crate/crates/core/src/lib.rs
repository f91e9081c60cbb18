//! Collaborative filtering with an idiotypic immune network.
//!
//! The active user (the antigen) is matched against the ratings store; a pool
//! of similar users (antibodies) is grown and pruned by concentration dynamics
//! that reward agreement with the antigen and penalise redundancy among the
//! antibodies themselves. Predictions are concentration-weighted vote means.
//!
//! Modules:
//! - [`ratings`]: vote scale, profiles, store, ingestion, synthetic data
//! - [`affinity`]: Weighted Kappa, Kendall tau and their diagnostics
//! - [`network`]: the antibody pool and its dynamics
//! - [`recommender`]: predictions and top-N lists
//! - [`evaluation`]: hidden-vote accuracy and cross-measure experiments

pub mod affinity;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod ratings;
pub mod recommender;

pub use affinity::{AffinityMeasure, AgreementStrength, KappaResult, MeasureKind, TauResult};
pub use error::{DataError, EvalError, Insufficient, NetworkError};
pub use evaluation::{EvalConfig, EvaluationReport};
pub use network::{AisParams, Antibody, NetworkState, StopReason};
pub use ratings::{MovieId, PersonId, Profile, RatingsStore, VoteCategory, VoteScale};
pub use recommender::{NoSupport, Prediction};
