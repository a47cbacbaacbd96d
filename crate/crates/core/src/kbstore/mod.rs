//! Candidate dictionary with link priors, and entity embedding stores.

mod dictionary;
mod store;

pub use dictionary::{
    normalize_surface, sort_candidates, CandidateDictionary, CandidateEntity,
    DEFAULT_CANDIDATE_CAP,
};
pub use store::{combine_stores, EmbeddingStore, KbSource, StoreHeader};
