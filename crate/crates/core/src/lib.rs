//! Video parallel scaling: decode with `J` streams that each see a different
//! frame subset of the same video, fusing their next-token distributions at
//! every step.
//!
//! - [`frame_selection`] builds the per-stream frame plans.
//! - [`aggregation`] fuses stream distributions (mixture, logit averaging,
//!   contrastive adjustment, augmented-view fusion).
//! - [`decode`] runs the synchronous fan-out / aggregate / broadcast loop.
//! - [`backend`] holds the scorers: fixture table, exact toy world, and an
//!   HTTP client with a bundled stub server.
//! - [`scaling_law`] implements the loss-contraction closed forms, a Monte
//!   Carlo check of them, and a least-squares fitter.
//! - [`eval`] is the benchmark harness: datasets, prompts, answer extraction,
//!   self-consistency and metrics.

pub mod aggregation;
pub mod backend;
pub mod decode;
pub mod eval;
pub mod frame_selection;
pub mod io;
pub mod scaling_law;

pub use aggregation::{Distribution, Space, TcdConfig, TokenId, Weights};
pub use frame_selection::FrameSelectionPlan;
