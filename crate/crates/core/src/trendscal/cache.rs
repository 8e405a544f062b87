use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnchorBank, CalibratedSeries, Calibration, Period};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("corrupt cache entry for {key}: {reason}")]
    Corrupt { key: String, reason: String },
    #[error("cache entry for {key} does not match its key: {reason}")]
    KeyMismatch { key: String, reason: String },
    #[error("cache io at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub entity_id: String,
    pub country: String,
    pub period: Period,
}

impl CacheKey {
    pub fn new(entity_id: impl Into<String>, country: impl Into<String>, period: Period) -> Self {
        CacheKey { entity_id: entity_id.into(), country: country.into(), period }
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.entity_id, self.country, self.period)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedResult {
    pub fetched_at: DateTime<Utc>,
    pub calibration: Calibration,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum Body {
    Series(CalibratedSeries),
    NoSignal { entity_id: String, country: String, period: Period },
}

#[derive(Serialize, Deserialize)]
struct Document {
    fetched_at: DateTime<Utc>,
    #[serde(flatten)]
    body: Body,
}

#[derive(Serialize, Deserialize)]
struct BankDocument {
    fetched_at: DateTime<Utc>,
    bank: AnchorBank,
}

/// On-disk store of calibration results, one JSON document per
/// `(entity, country, period)` under `<root>/<country>/<entity>.json`.
///
/// Writes go through a temporary file and a rename, serialized by a lock,
/// so readers never observe half-written documents.
#[derive(Debug)]
pub struct TrendsCache {
    root: PathBuf,
    repair: bool,
    write_lock: Mutex<()>,
}

/// `/m/045c7b` becomes `m_045c7b`.
fn file_stem(entity_id: &str) -> String {
    entity_id.trim_start_matches('/').replace('/', "_")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_path_buf(), source }
}

impl TrendsCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(TrendsCache { root, repair: false, write_lock: Mutex::new(()) })
    }

    /// In repair mode corrupt entries are reported as misses instead of errors.
    pub fn with_repair(mut self, repair: bool) -> Self {
        self.repair = repair;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(&key.country).join(format!("{}.json", file_stem(&key.entity_id)))
    }

    fn bank_path(&self, country: &str) -> PathBuf {
        self.root.join(country).join("_bank.json")
    }

    fn read_doc<T: for<'de> Deserialize<'de>>(&self, path: &Path, key: &str) -> Result<Option<T>, CacheError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(path)(e)),
        };
        match serde_json::from_str(&text) {
            Ok(doc) => Ok(Some(doc)),
            Err(e) if self.repair => {
                log::warn!("discarding corrupt cache entry for {key}: {e}");
                Ok(None)
            }
            Err(e) => Err(CacheError::Corrupt { key: key.to_string(), reason: e.to_string() }),
        }
    }

    fn write_doc<T: Serialize>(&self, path: &Path, doc: &T, key: &str) -> Result<(), CacheError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = path.parent().expect("cache paths have a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        if path.exists() {
            log::info!("overwriting cache entry for {key}");
        }
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        serde_json::to_writer(&mut f, doc)
            .map_err(|e| CacheError::Io { path: tmp.clone(), source: e.into() })?;
        f.write_all(b"\n").map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    /// Returns `None` on a miss, including entries stored for another period.
    pub fn get(&self, key: &CacheKey) -> Result<Option<CachedResult>, CacheError> {
        let Some(doc) = self.read_doc::<Document>(&self.path_for(key), &key.to_string())? else {
            return Ok(None);
        };
        let (entity_id, country, period, calibration) = match doc.body {
            Body::Series(s) => (s.entity_id.clone(), s.country.clone(), s.period, Calibration::Series(s)),
            Body::NoSignal { entity_id, country, period } => (entity_id, country, period, Calibration::NoSignal),
        };
        if entity_id != key.entity_id || country != key.country {
            let reason = format!("stored entry is for ({entity_id}, {country})");
            if self.repair {
                log::warn!("discarding cache entry for {key}: {reason}");
                return Ok(None);
            }
            return Err(CacheError::KeyMismatch { key: key.to_string(), reason });
        }
        if period != key.period {
            return Ok(None);
        }
        Ok(Some(CachedResult { fetched_at: doc.fetched_at, calibration }))
    }

    pub fn put(&self, key: &CacheKey, calibration: &Calibration) -> Result<(), CacheError> {
        let body = match calibration {
            Calibration::Series(s) => {
                if s.entity_id != key.entity_id || s.country != key.country || s.period != key.period {
                    return Err(CacheError::KeyMismatch {
                        key: key.to_string(),
                        reason: format!("series is for ({}, {}, {})", s.entity_id, s.country, s.period),
                    });
                }
                Body::Series(s.clone())
            }
            Calibration::NoSignal => Body::NoSignal {
                entity_id: key.entity_id.clone(),
                country: key.country.clone(),
                period: key.period,
            },
        };
        self.write_doc(&self.path_for(key), &Document { fetched_at: Utc::now(), body }, &key.to_string())
    }

    /// Removes an entry; returns whether one existed.
    pub fn evict(&self, key: &CacheKey) -> Result<bool, CacheError> {
        let path = self.path_for(key);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        match fs::remove_file(&path) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn get_bank(&self, country: &str, period: &Period) -> Result<Option<AnchorBank>, CacheError> {
        let key = format!("anchor bank {country}");
        let doc = self.read_doc::<BankDocument>(&self.bank_path(country), &key)?;
        Ok(doc.map(|d| d.bank).filter(|b| b.country == country && b.period == *period))
    }

    pub fn put_bank(&self, bank: &AnchorBank) -> Result<(), CacheError> {
        let key = format!("anchor bank {}", bank.country);
        let doc = BankDocument { fetched_at: Utc::now(), bank: bank.clone() };
        self.write_doc(&self.bank_path(&bank.country), &doc, &key)
    }
}
