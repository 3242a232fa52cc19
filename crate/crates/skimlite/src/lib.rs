//! skimlite: a self-contained near-storage event-skimming toolkit.
//!
//! The pieces, bottom to top:
//!
//! - [`colfmt`] — a columnar, basketed, compressed event file format
//!   (branches split into per-branch baskets with first-event index arrays).
//! - [`query`] — the JSON skim query: wildcard branch selection with
//!   minimal-set expansion, selection expressions, and the criteria vs
//!   output-only branch split.
//! - [`transport`] — byte-range access over local files or HTTP, a
//!   byte-budgeted prefetch cache with request coalescing, and a token-bucket
//!   bandwidth throttle.
//! - [`engine`] — the two-phase, three-stage filter: preselection →
//!   object-level → event-level cuts over criteria branches only, then a
//!   second pass fetching output-only baskets just for passing events.
//! - [`service`] — the skim daemon: `POST /skim` in, reduced file out.
//! - [`bench`] — deterministic dataset generator and the four-mode
//!   client/server/near-storage benchmark harness.

pub mod bench;
pub mod colfmt;
pub mod engine;
pub mod error;
pub mod query;
pub mod service;
pub mod timing;
pub mod transport;

pub use error::{Result, SkimError};
