//! Blinded expert-review backend: case assignment, blinding, rating capture
//! and study summary over an append-only store.

pub mod http;
pub mod service;
pub mod store;
pub mod study;

pub use http::{router, serve, AppState};
pub use service::{
    summarize, Ack, BlindedCase, ModelStat, Panel, RatingSubmission, ReviewService, ServiceError, StudySummary,
    STORE_FILE, STUDY_FILE,
};
pub use store::{read_store, RatingStore, StoreError, StoredRating};
pub use study::{blinding_permutation, create_study, label, CaseInput, Study, StudyError, StudyFile};
