//! Benchmark orchestration: data sources, experiment configuration, the
//! design cache and the five suites.
//!
//! Every random draw derives its seed from the configured master seed and
//! the identity of the draw, so runs are reproducible byte for byte.

mod cache;
mod config;
mod data;
mod suite;

use sha2::{Digest, Sha256};

pub use cache::{config_hash, CacheEntry, CacheKey, DesignCache, CACHE_DIR_ENV};
pub use config::{DataSource, ExperimentConfig, MechanismId, Suite};
pub use data::{ingest_csv, sample_clients, synthetic, Dataset, SyntheticDist};
pub use suite::{resolve_mechanism, run_suite, Failure, Mechanism, SuiteReport, SummaryRow};

/// Stable 64-bit seed from a master seed and a list of tags.
pub fn derive_seed(master: u64, tags: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for t in tags {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}
