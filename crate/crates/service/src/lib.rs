//! Session-scoped HTTP API over the drift engine.
//!
//! A [`Session`] owns one provenance tree and its settings and changes only
//! through logged [`Mutation`]s; a [`SessionStore`] keeps sessions in memory
//! and, optionally, on disk; [`api::router`] exposes both over HTTP.

pub mod api;
pub mod error;
pub mod session;
pub mod source;
pub mod store;

pub use api::{router, serve};
pub use error::{ErrorClass, ServiceError};
pub use session::{Applied, DimensionView, ListDocument, Mutation, Session, ViewParams};
pub use source::{load_files, load_text, DatasetSource, SourceError};
pub use store::{SessionExport, SessionInfo, SessionMeta, SessionStore};
