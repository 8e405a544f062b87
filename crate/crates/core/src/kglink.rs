//! Binding claim clusters to knowledge-graph entities.
//!
//! Candidate entities come from a pluggable search provider; the final choice
//! per cluster is read from a human-authored mapping file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::claimcluster::{expand_cluster_by_keyword, BowVector, ClaimCluster};
use crate::net::{HttpError, JsonClient, RetryPolicy};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("invalid entity id `{0}` (expected /m/... or /g/...)")]
    InvalidId(String),
    #[error("entity `{0}` has an empty display name")]
    EmptyName(String),
    #[error("search word is empty")]
    EmptyWord,
    #[error("entity provider transport error: {0}")]
    Transport(String),
    #[error("entity provider returned malformed data: {0}")]
    Malformed(String),
    #[error("mapping references unknown cluster `{0}`")]
    UnknownCluster(String),
    #[error("mapping does not cover cluster `{0}`")]
    MissingCluster(String),
    #[error("entity {entity} is mapped to both `{first}` and `{second}`")]
    DuplicateEntity { entity: String, first: String, second: String },
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl KgError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, KgError::Transport(_))
    }
}

impl From<HttpError> for KgError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Decode(m) => KgError::Malformed(m),
            other => KgError::Transport(other.to_string()),
        }
    }
}

/// A knowledge-graph entity, e.g. `/m/012mj` "alcoholic drink".
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawEntityRef")]
pub struct EntityRef {
    pub entity_id: String,
    pub display_name: String,
}

#[derive(Deserialize)]
struct RawEntityRef {
    entity_id: String,
    display_name: String,
}

impl TryFrom<RawEntityRef> for EntityRef {
    type Error = KgError;
    fn try_from(raw: RawEntityRef) -> Result<Self, KgError> {
        EntityRef::new(raw.entity_id, raw.display_name)
    }
}

impl EntityRef {
    /// Validates and normalizes the id (`kg:/m/x`, `m/x` and `/m/x` are all accepted).
    pub fn new(entity_id: impl AsRef<str>, display_name: impl Into<String>) -> Result<Self, KgError> {
        let entity_id = normalize_entity_id(entity_id.as_ref())?;
        let display_name = display_name.into();
        if display_name.trim().is_empty() {
            return Err(KgError::EmptyName(entity_id));
        }
        Ok(EntityRef { entity_id, display_name })
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.entity_id, self.display_name)
    }
}

pub fn normalize_entity_id(raw: &str) -> Result<String, KgError> {
    let trimmed = raw.trim().trim_start_matches("kg:").trim_end_matches('/');
    let body = trimmed.strip_prefix('/').unwrap_or(trimmed);
    let valid = match body.split_once('/') {
        Some((ns, rest)) => {
            (ns == "m" || ns == "g")
                && !rest.is_empty()
                && rest.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        }
        None => false,
    };
    if valid {
        Ok(format!("/{body}"))
    } else {
        Err(KgError::InvalidId(raw.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCandidate {
    pub entity: EntityRef,
    pub score: f64,
}

/// Ranked search results for one representative word; scores never increase with rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCandidateList {
    pub query: String,
    pub candidates: Vec<EntityCandidate>,
}

pub trait EntitySearchProvider: Send + Sync {
    /// Raw, possibly unsorted candidates for `word`.
    fn search(&self, word: &str, limit: usize) -> Result<Vec<EntityCandidate>, KgError>;
}

/// Up to `limit` candidates for `word`, best score first.
pub fn search_entities(
    provider: &dyn EntitySearchProvider,
    word: &str,
    limit: usize,
) -> Result<EntityCandidateList, KgError> {
    let word = word.trim();
    if word.is_empty() {
        return Err(KgError::EmptyWord);
    }
    let mut candidates = provider.search(word, limit)?;
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    candidates.truncate(limit);
    Ok(EntityCandidateList { query: word.to_string(), candidates })
}

/// Searches many words with at most `in_flight` concurrent provider calls.
/// Results come back in input order.
pub fn search_many(
    provider: &dyn EntitySearchProvider,
    words: &[String],
    limit: usize,
    in_flight: usize,
) -> Vec<Result<EntityCandidateList, KgError>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(in_flight.max(1)).build();
    match pool {
        Ok(pool) => pool.install(|| words.par_iter().map(|w| search_entities(provider, w, limit)).collect()),
        Err(_) => words.iter().map(|w| search_entities(provider, w, limit)).collect(),
    }
}

/// Offline provider over a local catalog: `{word: [{entity_id, display_name, score}]}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureEntityProvider {
    catalog: BTreeMap<String, Vec<EntityCandidate>>,
}

#[derive(Deserialize)]
struct CatalogEntry {
    entity_id: String,
    display_name: String,
    score: f64,
}

impl FixtureEntityProvider {
    pub fn new(catalog: BTreeMap<String, Vec<EntityCandidate>>) -> Self {
        let catalog = catalog.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
        FixtureEntityProvider { catalog }
    }

    pub fn from_json(text: &str) -> Result<Self, KgError> {
        let raw: BTreeMap<String, Vec<CatalogEntry>> = serde_json::from_str(text)?;
        let mut catalog = BTreeMap::new();
        for (word, entries) in raw {
            let list = entries
                .into_iter()
                .map(|e| Ok(EntityCandidate { entity: EntityRef::new(e.entity_id, e.display_name)?, score: e.score }))
                .collect::<Result<Vec<_>, KgError>>()?;
            catalog.insert(word, list);
        }
        Ok(Self::new(catalog))
    }

    pub fn load(path: &Path) -> Result<Self, KgError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn catalog(&self) -> &BTreeMap<String, Vec<EntityCandidate>> {
        &self.catalog
    }
}

impl EntitySearchProvider for FixtureEntityProvider {
    fn search(&self, word: &str, _limit: usize) -> Result<Vec<EntityCandidate>, KgError> {
        Ok(self.catalog.get(&word.to_lowercase()).cloned().unwrap_or_default())
    }
}

pub const KG_API_KEY_VAR: &str = "KG_SEARCH_API_KEY";
pub const KG_SEARCH_URL: &str = "https://kgsearch.googleapis.com/v1/entities:search";

/// Client for the public Knowledge Graph Search API. The key is read from
/// [`KG_API_KEY_VAR`].
pub struct LiveEntityProvider {
    client: JsonClient,
    endpoint: String,
    key: String,
}

impl LiveEntityProvider {
    pub fn from_env() -> Result<Self, KgError> {
        let key = std::env::var(KG_API_KEY_VAR).map_err(|_| KgError::MissingKey(KG_API_KEY_VAR.into()))?;
        Self::new(KG_SEARCH_URL, key)
    }

    pub fn new(endpoint: impl Into<String>, key: impl Into<String>) -> Result<Self, KgError> {
        let client = JsonClient::new(Duration::from_millis(200), Duration::from_secs(20), RetryPolicy::default())?;
        Ok(LiveEntityProvider { client, endpoint: endpoint.into(), key: key.into() })
    }
}

/// Extracts candidates from a Knowledge Graph Search API response body.
pub fn parse_kg_response(body: &serde_json::Value) -> Result<Vec<EntityCandidate>, KgError> {
    let items = body
        .get("itemListElement")
        .and_then(|v| v.as_array())
        .ok_or_else(|| KgError::Malformed("missing itemListElement".into()))?;
    let mut out = Vec::new();
    for item in items {
        let result = item.get("result").ok_or_else(|| KgError::Malformed("item without result".into()))?;
        let id = result.get("@id").and_then(|v| v.as_str()).unwrap_or_default();
        let name = result.get("name").and_then(|v| v.as_str()).unwrap_or_default();
        let score = item.get("resultScore").and_then(|v| v.as_f64()).unwrap_or(0.0);
        match EntityRef::new(id, name) {
            Ok(entity) => out.push(EntityCandidate { entity, score }),
            Err(e) => log::debug!("skipping search result: {e}"),
        }
    }
    Ok(out)
}

impl EntitySearchProvider for LiveEntityProvider {
    fn search(&self, word: &str, limit: usize) -> Result<Vec<EntityCandidate>, KgError> {
        let body = self.client.get_json(
            &self.endpoint,
            &[("query", word.to_string()), ("limit", limit.to_string()), ("key", self.key.clone())],
        )?;
        parse_kg_response(&body)
    }
}

/// A mapping-file decision for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub enum MapEntry {
    /// Too noisy to associate with an entity.
    Unlinked,
    Linked {
        entity: EntityRef,
        /// Terms searched across the whole dataset to pull in missed fact-checks.
        keywords: BTreeSet<String>,
        /// Representative word the entity was chosen from; the link stage
        /// re-runs the search to confirm the entity is still offered.
        word: Option<String>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawMapEntry {
    None(String),
    Linked {
        entity_id: String,
        display_name: String,
        #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
        keywords: BTreeSet<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        word: Option<String>,
    },
}

impl Serialize for MapEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MapEntry::Unlinked => RawMapEntry::None("none".into()).serialize(s),
            MapEntry::Linked { entity, keywords, word } => RawMapEntry::Linked {
                entity_id: entity.entity_id.clone(),
                display_name: entity.display_name.clone(),
                keywords: keywords.clone(),
                word: word.clone(),
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for MapEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match RawMapEntry::deserialize(d)? {
            RawMapEntry::None(s) if s.eq_ignore_ascii_case("none") => Ok(MapEntry::Unlinked),
            RawMapEntry::None(s) => Err(D::Error::custom(format!("expected \"none\" or an entity object, got \"{s}\""))),
            RawMapEntry::Linked { entity_id, display_name, keywords, word } => Ok(MapEntry::Linked {
                entity: EntityRef::new(entity_id, display_name).map_err(D::Error::custom)?,
                keywords: keywords.into_iter().map(|k| k.to_lowercase()).collect(),
                word,
            }),
        }
    }
}

/// Mapping file: cluster id -> entity or `"none"`.
pub type EntityMap = BTreeMap<String, MapEntry>;

pub fn load_entity_map(path: &Path) -> Result<EntityMap, KgError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Binds each cluster to its mapped entity. The mapping must name every
/// cluster exactly, and no entity may be bound twice. Membership is untouched.
pub fn apply_entity_map(clusters: Vec<ClaimCluster>, mapping: &EntityMap) -> Result<Vec<ClaimCluster>, KgError> {
    let ids: BTreeSet<&str> = clusters.iter().map(|c| c.cluster_id.as_str()).collect();
    if let Some(stale) = mapping.keys().find(|k| !ids.contains(k.as_str())) {
        return Err(KgError::UnknownCluster(stale.clone()));
    }
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    let mut out = Vec::with_capacity(clusters.len());
    for mut c in clusters {
        let entry = mapping.get(&c.cluster_id).ok_or_else(|| KgError::MissingCluster(c.cluster_id.clone()))?;
        c.entity = match entry {
            MapEntry::Unlinked => None,
            MapEntry::Linked { entity, .. } => {
                if let Some(first) = seen.insert(entity.entity_id.clone(), c.cluster_id.clone()) {
                    return Err(KgError::DuplicateEntity {
                        entity: entity.entity_id.clone(),
                        first,
                        second: c.cluster_id,
                    });
                }
                if c.label.is_none() {
                    c.label = Some(entity.display_name.clone());
                }
                Some(entity.clone())
            }
        };
        out.push(c);
    }
    Ok(out)
}

/// Runs the dataset-wide keyword search for every linked cluster that lists
/// keywords, in cluster order. Returns the number of records added per cluster.
pub fn expand_linked_clusters(
    clusters: &mut [ClaimCluster],
    mapping: &EntityMap,
    bows: &[BowVector],
) -> BTreeMap<String, usize> {
    let mut added = BTreeMap::new();
    for i in 0..clusters.len() {
        if let Some(MapEntry::Linked { keywords, .. }) = mapping.get(&clusters[i].cluster_id) {
            if !keywords.is_empty() && clusters[i].entity.is_some() {
                let n = expand_cluster_by_keyword(clusters, i, bows, keywords);
                added.insert(clusters[i].cluster_id.clone(), n);
            }
        }
    }
    added
}
