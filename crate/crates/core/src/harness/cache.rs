//! On-disk cache of computed designs, one JSON design file per key.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mechanism::MechanismDesign;
use crate::numerical::SolverConfig;

/// Environment variable naming the cache directory.
pub const CACHE_DIR_ENV: &str = "NOUTPUT_CACHE_DIR";
const DEFAULT_DIR: &str = ".noutput-cache";

/// First 16 hex digits of the SHA-256 of the solver settings.
pub fn config_hash(config: &SolverConfig) -> String {
    let json = serde_json::to_string(config).expect("solver config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheKey {
    pub variant: String,
    pub objective: String,
    pub epsilon: f64,
    pub n_max: usize,
    pub config_hash: String,
}

impl CacheKey {
    pub fn file_name(&self) -> String {
        // The bit pattern keeps distinct budgets apart even when their
        // decimal forms round alike.
        format!(
            "{}-{}-eps{}-{:016x}-nmax{}-{}.json",
            self.variant,
            self.objective,
            self.epsilon,
            self.epsilon.to_bits(),
            self.n_max,
            self.config_hash
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub name: String,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct DesignCache {
    dir: PathBuf,
}

impl DesignCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Directory from `NOUTPUT_CACHE_DIR`, else `.noutput-cache`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(CACHE_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_DIR), PathBuf::from))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<MechanismDesign>> {
        let path = self.dir.join(key.file_name());
        if !path.exists() {
            return Ok(None);
        }
        MechanismDesign::load(&path).map(Some)
    }

    /// Writes through a temporary file and a rename so readers never see a
    /// partial design.
    pub fn put(&self, key: &CacheKey, design: &MechanismDesign) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.dir.join(key.file_name());
        let tmp = self
            .dir
            .join(format!(".{}.{}.tmp", key.file_name(), std::process::id()));
        design.save(&tmp)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn get_or_compute(
        &self,
        key: &CacheKey,
        compute: impl FnOnce() -> Result<MechanismDesign>,
    ) -> Result<MechanismDesign> {
        if let Some(d) = self.get(key)? {
            return Ok(d);
        }
        let design = compute()?;
        self.put(key, &design)?;
        Ok(design)
    }

    pub fn list(&self) -> Result<Vec<CacheEntry>> {
        if !self.dir.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".json") && !name.starts_with('.') {
                let bytes = entry.metadata().map_err(|e| Error::io(entry.path(), e))?.len();
                out.push(CacheEntry { name, bytes });
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    /// Removes every cached design; returns how many were deleted.
    pub fn clear(&self) -> Result<usize> {
        let entries = self.list()?;
        for e in &entries {
            let path = self.dir.join(&e.name);
            fs::remove_file(&path).map_err(|err| Error::io(&path, err))?;
        }
        Ok(entries.len())
    }
}
