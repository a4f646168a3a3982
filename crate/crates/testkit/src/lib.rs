//! Seeded input generators and reference oracles for the test suites.
//!
//! Nothing here depends on the crates under test: every oracle is a separate,
//! deliberately simple implementation of the behavior it checks.

pub mod docs;
pub mod drift;
pub mod lcs;
pub mod retrieval;
pub mod sections;

use rand::SeedableRng;
pub use rand::Rng;
pub use rand_chacha::ChaCha8Rng;

/// Portable seeded RNG; the same seed gives the same stream on every platform.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A uniformly random element of a non-empty slice.
pub fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

/// Shared input documents.
pub mod fixtures {
    /// Six top-level sections; the method section has a subsection that it
    /// folds into, so section segmentation yields six segments.
    pub const SIX_SECTION_DOC: &str = include_str!("../fixtures/six_sections.tex");
}
