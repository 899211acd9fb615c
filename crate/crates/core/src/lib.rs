//! Budgeted fake-news detection from crowd flags.
//!
//! The crate simulates news spreading over a social graph under the
//! independent cascade model, lets users flag what they see according to a
//! per-user reliability model, and pits selection policies against each other
//! when only `k` news per epoch can be sent to an expert fact-checker.
//!
//! The central policy, [`PolicyKind::Detective`], keeps Beta posteriors over
//! every user's flagging accuracy, learns them from expert verdicts, and picks
//! news by posterior sampling followed by a greedy top-`k` on
//! `P(fake) * remaining reach`.
//!
//! Module map:
//! - [`graph`]: edge-list loading and synthetic fixtures.
//! - [`cascade`]: pre-realized independent cascades and exposure views.
//! - [`usermodel`]: ground-truth user behavior and flag sampling.
//! - [`inference`]: news-label posterior and Beta-conjugate user learning.
//! - [`selection`]: top-`k` selection and the seven policies.
//! - [`protocol`]: the epoch loop and utility accounting.
//! - [`experiments`]: multi-seed sweeps, normalization and CSV/JSON export.

pub mod cascade;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod inference;
pub mod protocol;
pub mod rng;
pub mod selection;
pub mod usermodel;

pub use cascade::{CascadeTrajectory, ExposureView};
pub use error::{Error, Result};
pub use experiments::{AggregateResult, ExperimentKind, ExperimentSpec};
pub use graph::{LoadReport, SocialGraph, SyntheticKind, UserId};
pub use inference::{BeliefState, BetaPrior, NewsPosterior, UserHistory};
pub use protocol::{HistoryUpdate, NewsId, RunTrace, World, WorldConfig};
pub use selection::{Candidate, PolicyKind};
pub use usermodel::{FlaggingParams, Label, PopulationSpec, UserProfile};
