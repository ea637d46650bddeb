//! Shared test fixtures.
//!
//! Everything here is plain JSON and text so the fixtures stay independent
//! of the library under test.

pub mod figures;
pub mod sgd;
pub mod stub;

pub use figures::{figure, figures_dir, normalize_output, Figure, FIGURE_NAMES};
pub use sgd::{schema, synthetic_corpus, table1_corpus, table1_slot_map, write_corpus, write_synthetic_corpus};
pub use stub::{StubRequest, StubResponse, StubServer};
