//! The individual stages. Each reads its inputs from disk, writes its outputs
//! atomically and returns record counts for the manifest. The CLI subcommands
//! and [`super::run_pipeline`] share these functions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{build_report, write_plot_series, write_tables_csv, AnalysisParams, AnalysisReport};
use crate::attention::{build_profiles, cached_countries, AttentionProfile, AttentionYears};
use crate::claimcluster::{
    apply_splits, bag_of_words, clusters_from_labels, dbscan, load_split_rules, parse_eps_range, sweep_eps,
    ClaimCluster, DistanceMatrix, StopWords, SweepRow,
};
use crate::ingest::{filter_scope, parse_factchecks, read_jsonl, write_jsonl, ColumnMap, DropReason, FactCheckRecord, ScopeConfig};
use crate::kglink::{
    apply_entity_map, expand_linked_clusters, load_entity_map, search_entities, EntityCandidateList,
    EntitySearchProvider, FixtureEntityProvider, LiveEntityProvider, MapEntry,
};
use crate::synthprov::{generate_world, SimulatedTrendsProvider, SynthConfig, SynthWorld};
use crate::trendscal::{
    build_anchor_bank, calibrate, CacheKey, CalibrationConfig, LiveTrendsProvider, Period, TrendsCache, TrendsError,
    TrendsProvider,
};

pub type StageError = Box<dyn std::error::Error + Send + Sync>;
pub type StageCounts = BTreeMap<String, u64>;

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// a failed stage never leaves a half-written artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), StageError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StageError> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()).into())
}

pub fn read_records(path: &Path) -> Result<Vec<FactCheckRecord>, StageError> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    read_jsonl(file).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn count(counts: &mut StageCounts, key: &str, n: usize) {
    counts.insert(key.to_string(), n as u64);
}

pub struct IngestArgs<'a> {
    pub input: &'a Path,
    pub column_map: Option<&'a Path>,
    pub scope: &'a Path,
    pub out: &'a Path,
    pub errors: Option<&'a Path>,
}

/// Parses the fact-check export, applies the scope, and writes the kept
/// records as JSONL. Rejected rows go to `errors` when given.
pub fn ingest(args: &IngestArgs) -> Result<StageCounts, StageError> {
    let map = match args.column_map {
        Some(p) => ColumnMap::load(p)?,
        None => ColumnMap::canonical(),
    };
    let scope = ScopeConfig::load(args.scope)?;
    let file = File::open(args.input).map_err(|e| format!("{}: {e}", args.input.display()))?;
    let parsed = parse_factchecks(file, &map)?;
    let parsed_n = parsed.records.len();
    let (kept, dropped) = filter_scope(parsed.records, &scope);

    let mut buf = Vec::new();
    write_jsonl(&kept, &mut buf)?;
    write_atomic(args.out, &buf)?;
    if let Some(path) = args.errors {
        let mut buf = Vec::new();
        write_jsonl(&parsed.errors, &mut buf)?;
        write_atomic(path, &buf)?;
    }
    for e in &parsed.errors {
        warn!("row {} rejected: {}", e.row, e.reason);
    }

    let mut c = StageCounts::new();
    count(&mut c, "parsed", parsed_n);
    count(&mut c, "rejected_rows", parsed.errors.len());
    count(&mut c, "kept", kept.len());
    for (reason, key) in [
        (DropReason::OutsideWindow, "dropped_outside_window"),
        (DropReason::Region, "dropped_region"),
        (DropReason::ExcludedCountry, "dropped_excluded_country"),
    ] {
        count(&mut c, key, dropped.iter().filter(|d| d.reason == reason).count());
    }
    info!("ingest: kept {} of {} records", kept.len(), parsed_n);
    Ok(c)
}

pub struct ClusterArgs<'a> {
    pub records: &'a Path,
    pub eps: f64,
    pub min_pts: usize,
    pub stopwords: Option<&'a Path>,
    pub splits: Option<&'a Path>,
    pub include_other_ratings: bool,
    pub out: &'a Path,
    /// Optional `start:end:step` eps sweep, written to `sweep_out`.
    pub sweep: Option<&'a str>,
    pub sweep_out: Option<&'a Path>,
}

pub fn load_stopwords(path: Option<&Path>) -> Result<StopWords, StageError> {
    Ok(match path {
        Some(p) => StopWords::load(p)?,
        None => StopWords::english(),
    })
}

/// Bag-of-words, Jaccard distances, DBSCAN and manual splits.
pub fn cluster(args: &ClusterArgs) -> Result<StageCounts, StageError> {
    let records = read_records(args.records)?;
    let stopwords = load_stopwords(args.stopwords)?;
    let (bows, empty) = bag_of_words(&records, &stopwords, args.include_other_ratings);
    let d = DistanceMatrix::jaccard(&bows);

    let mut c = StageCounts::new();
    if let Some(spec) = args.sweep {
        let rows: Vec<SweepRow> = sweep_eps(&d, &parse_eps_range(spec)?, args.min_pts)?;
        for r in &rows {
            info!("eps {:.3}: {} clusters, {} noise", r.eps, r.clusters, r.noise);
        }
        if let Some(p) = args.sweep_out {
            write_json(p, &rows)?;
        }
        count(&mut c, "sweep_points", rows.len());
    }

    let labels = dbscan(&d, args.eps, args.min_pts)?;
    let raw = clusters_from_labels(&bows, &labels);
    let raw_n = raw.len();
    let clusters = match args.splits {
        Some(p) => apply_splits(raw, &load_split_rules(p)?, &bows)?,
        None => raw,
    };
    write_json(args.out, &clusters)?;

    count(&mut c, "records", records.len());
    count(&mut c, "clusterable", bows.len());
    count(&mut c, "stopword_only", empty.len());
    count(&mut c, "noise", labels.iter().filter(|l| l.is_none()).count());
    count(&mut c, "dbscan_clusters", raw_n);
    count(&mut c, "clusters", clusters.len());
    info!("cluster: {} clusters ({} before splits)", clusters.len(), raw_n);
    Ok(c)
}

/// Entity-search backend for the link stage.
pub enum EntitySource {
    /// Local JSON catalog `{word: [{entity, score}]}`.
    Catalog(PathBuf),
    /// The catalog of a synthetic world.
    World(PathBuf),
    /// The live search API, keyed from the environment.
    Live { endpoint: Option<String> },
}

impl EntitySource {
    fn provider(&self) -> Result<Box<dyn EntitySearchProvider>, StageError> {
        Ok(match self {
            EntitySource::Catalog(p) => Box::new(FixtureEntityProvider::load(p)?),
            EntitySource::World(p) => Box::new(SynthWorld::load(p)?.entity_provider()),
            EntitySource::Live { endpoint: None } => Box::new(LiveEntityProvider::from_env()?),
            EntitySource::Live { endpoint: Some(url) } => {
                let key = std::env::var(crate::kglink::KG_API_KEY_VAR)
                    .map_err(|_| format!("{} is not set", crate::kglink::KG_API_KEY_VAR))?;
                Box::new(LiveEntityProvider::new(url.clone(), key)?)
            }
        })
    }
}

pub struct LinkArgs<'a> {
    pub clusters: &'a Path,
    pub map: &'a Path,
    pub provider: Option<&'a EntitySource>,
    /// Records and stop-words for the keyword back-search; without records
    /// the mapping's keywords are ignored.
    pub records: Option<&'a Path>,
    pub stopwords: Option<&'a Path>,
    pub include_other_ratings: bool,
    pub out: &'a Path,
    /// Where to write the search results used to confirm the mapping.
    pub candidates_out: Option<&'a Path>,
}

/// Search results for one mapped cluster and whether the chosen entity was among them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkCheck {
    pub cluster_id: String,
    pub entity_id: String,
    pub found: bool,
    pub search: EntityCandidateList,
}

const LINK_SEARCH_LIMIT: usize = 10;

/// Binds clusters to entities from the mapping file, runs the keyword
/// back-search, and (with a provider) confirms each choice against a fresh
/// search for its representative word.
pub fn link(args: &LinkArgs) -> Result<StageCounts, StageError> {
    let clusters: Vec<ClaimCluster> = read_json(args.clusters)?;
    let mapping = load_entity_map(args.map)?;
    let mut linked = apply_entity_map(clusters, &mapping)?;

    let mut c = StageCounts::new();
    if let Some(records) = args.records {
        let records = read_records(records)?;
        let stopwords = load_stopwords(args.stopwords)?;
        let (bows, _) = bag_of_words(&records, &stopwords, args.include_other_ratings);
        let added = expand_linked_clusters(&mut linked, &mapping, &bows);
        for (id, n) in &added {
            if *n > 0 {
                info!("keyword search added {n} records to {id}");
            }
        }
        count(&mut c, "expanded_records", added.values().sum());
    }

    if let Some(source) = args.provider {
        let provider = source.provider()?;
        let mut checks = Vec::new();
        for cl in &linked {
            let Some(MapEntry::Linked { entity, word: Some(word), .. }) = mapping.get(&cl.cluster_id) else { continue };
            let search = search_entities(provider.as_ref(), word, LINK_SEARCH_LIMIT)?;
            let found = search.candidates.iter().any(|x| x.entity.entity_id == entity.entity_id);
            if !found {
                warn!("{}: {} is not among the search results for `{word}`", cl.cluster_id, entity.entity_id);
            }
            checks.push(LinkCheck { cluster_id: cl.cluster_id.clone(), entity_id: entity.entity_id.clone(), found, search });
        }
        count(&mut c, "searched", checks.len());
        count(&mut c, "not_in_search", checks.iter().filter(|x| !x.found).count());
        if let Some(p) = args.candidates_out {
            write_json(p, &checks)?;
        }
    }

    write_json(args.out, &linked)?;
    count(&mut c, "clusters", linked.len());
    count(&mut c, "linked", linked.iter().filter(|x| x.entity.is_some()).count());
    count(&mut c, "unlinked", linked.iter().filter(|x| x.entity.is_none()).count());
    Ok(c)
}

/// Generates a synthetic world from a config file and seed.
pub fn synth(config: &Path, seed: u64, out: &Path) -> Result<StageCounts, StageError> {
    let cfg = SynthConfig::load(config)?;
    let world = generate_world(&cfg, seed)?;
    write_atomic(out, &serde_json::to_vec(&world)?)?;
    let mut c = StageCounts::new();
    count(&mut c, "countries", world.countries.len());
    count(&mut c, "noisy_countries", world.noisy_countries.len());
    count(&mut c, "entities", world.entities.len());
    count(&mut c, "missing_pairs", world.missing_pairs.len());
    count(&mut c, "events", world.true_events.len());
    Ok(c)
}

/// Trends backend for the fetch stage.
pub enum TrendsSource {
    Sim { world: PathBuf },
    Live { endpoint: String, min_interval: Duration },
}

/// Which countries to fetch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CountrySelection {
    /// The literal `"all"`: every country the provider knows (the world's
    /// countries for the simulator, the countries in the records otherwise).
    Keyword(String),
    List(Vec<String>),
}

impl CountrySelection {
    pub fn parse(raw: &str) -> Self {
        if raw.trim().eq_ignore_ascii_case("all") {
            CountrySelection::Keyword("all".into())
        } else {
            CountrySelection::List(raw.split(',').map(|s| s.trim().to_uppercase()).filter(|s| !s.is_empty()).collect())
        }
    }
}

pub struct FetchArgs<'a> {
    pub linked: &'a Path,
    pub countries: &'a CountrySelection,
    pub source: &'a TrendsSource,
    pub cache: &'a Path,
    pub reference_entity: &'a str,
    /// Anchor candidates (JSON array), reference excluded; the simulator's
    /// ladder is used when absent.
    pub anchors: Option<&'a Path>,
    /// Records used to resolve `all` for the live provider.
    pub records: Option<&'a Path>,
    pub lo_band: u32,
    pub repair_cache: bool,
    /// Summary written on success; it is the stage's freshness marker.
    pub summary_out: Option<&'a Path>,
}

/// Builds or reuses each country's anchor bank and calibrates the reference
/// and every linked entity into the cache. Countries whose bank cannot be
/// built are logged and skipped.
pub fn fetch(args: &FetchArgs) -> Result<StageCounts, StageError> {
    let linked: Vec<ClaimCluster> = read_json(args.linked)?;
    let entities: Vec<String> = linked.iter().filter_map(|c| c.entity.as_ref().map(|e| e.entity_id.clone())).collect();

    let (provider, period, ladder, known): (Box<dyn TrendsProvider>, Period, Vec<String>, Vec<String>) =
        match args.source {
            TrendsSource::Sim { world } => {
                let w = SynthWorld::load(world)?;
                if w.reference.entity_id != args.reference_entity {
                    return Err(format!(
                        "world reference is {}, expected {}",
                        w.reference.entity_id, args.reference_entity
                    )
                    .into());
                }
                let mut known: Vec<String> = w.countries.iter().chain(&w.noisy_countries).cloned().collect();
                known.sort();
                (Box::new(SimulatedTrendsProvider::new(w.clone())), w.period, w.anchors.clone(), known)
            }
            TrendsSource::Live { endpoint, min_interval } => {
                let known = match args.records {
                    Some(p) => read_records(p)?.into_iter().map(|r| r.country_code).collect::<BTreeSet<_>>().into_iter().collect(),
                    None => Vec::new(),
                };
                (Box::new(LiveTrendsProvider::from_env(endpoint.clone(), *min_interval)?), Period::study(), Vec::new(), known)
            }
        };
    let anchors: Vec<String> = match args.anchors {
        Some(p) => read_json(p)?,
        None if !ladder.is_empty() => ladder,
        None => return Err("no anchor candidates: pass an anchors file".into()),
    };
    let candidates: Vec<String> = std::iter::once(args.reference_entity.to_string())
        .chain(anchors.into_iter().filter(|a| a != args.reference_entity))
        .collect();
    let countries: Vec<String> = match args.countries {
        CountrySelection::Keyword(k) if k.eq_ignore_ascii_case("all") => {
            if known.is_empty() {
                return Err("`all` countries needs a world or records to enumerate them".into());
            }
            known
        }
        CountrySelection::Keyword(k) => vec![k.to_uppercase()],
        CountrySelection::List(l) => l.clone(),
    };

    let cache = TrendsCache::open(args.cache)?.with_repair(args.repair_cache);
    let cfg = CalibrationConfig { lo_band: args.lo_band, ..CalibrationConfig::default() };
    let queries: Vec<String> = std::iter::once(args.reference_entity.to_string()).chain(entities).collect();
    let tallies: BTreeMap<&str, AtomicU64> = [
        "banks_built",
        "banks_cached",
        "bank_failed",
        "calibrated",
        "cache_hits",
        "no_signal",
        "above_bank",
    ]
    .into_iter()
    .map(|k| (k, AtomicU64::new(0)))
    .collect();
    let bump = |k: &str| tallies[k].fetch_add(1, Ordering::Relaxed);

    countries.par_iter().try_for_each(|country| -> Result<(), StageError> {
        let bank = match cache.get_bank(country, &period)? {
            Some(b) => {
                bump("banks_cached");
                b
            }
            None => match build_anchor_bank(provider.as_ref(), &candidates, country, &period, &cfg) {
                Ok(b) => {
                    cache.put_bank(&b)?;
                    bump("banks_built");
                    b
                }
                Err(e @ TrendsError::BankFailed { .. }) => {
                    warn!("{e}; skipping {country}");
                    bump("bank_failed");
                    return Ok(());
                }
                Err(e) => return Err(format!("{country}: {e}").into()),
            },
        };
        for q in &queries {
            let key = CacheKey::new(q, country, period);
            if cache.get(&key)?.is_some() {
                bump("cache_hits");
                continue;
            }
            match calibrate(provider.as_ref(), &bank, q, country, &period, &cfg) {
                Ok(cal) => {
                    if matches!(cal, crate::trendscal::Calibration::NoSignal) {
                        bump("no_signal");
                    }
                    cache.put(&key, &cal)?;
                    bump("calibrated");
                }
                Err(e @ TrendsError::AboveBank { .. }) => {
                    warn!("{e}");
                    bump("above_bank");
                }
                Err(e) => return Err(format!("{country} {q}: {e}").into()),
            }
        }
        Ok(())
    })?;

    let mut c: StageCounts = tallies.into_iter().map(|(k, v)| (k.to_string(), v.into_inner())).collect();
    count(&mut c, "countries", countries.len());
    count(&mut c, "queries_per_country", queries.len());
    if let Some(p) = args.summary_out {
        write_json(p, &c)?;
    }
    Ok(c)
}

pub struct AttentionArgs<'a> {
    pub cache: &'a Path,
    pub linked: &'a Path,
    pub records: &'a Path,
    pub reference_entity: &'a str,
    pub out: &'a Path,
    pub skipped_out: Option<&'a Path>,
}

/// Attention profiles for every linked entity in every cached country.
pub fn attention(args: &AttentionArgs) -> Result<StageCounts, StageError> {
    let cache = TrendsCache::open(args.cache)?;
    let linked: Vec<ClaimCluster> = read_json(args.linked)?;
    let records = read_records(args.records)?;
    let countries = cached_countries(&cache)?;
    let years = AttentionYears::default();
    let period = Period::new(years.baseline.start, years.attention.end).expect("ordered years");
    let set = build_profiles(&cache, &linked, &records, args.reference_entity, &countries, &period, &years)?;
    write_json(args.out, &set.profiles)?;
    if let Some(p) = args.skipped_out {
        write_json(p, &set.skipped)?;
    }
    let mut c = StageCounts::new();
    count(&mut c, "countries", countries.len());
    count(&mut c, "profiles", set.profiles.len());
    count(&mut c, "skipped_pairs", set.skipped.len());
    count(&mut c, "fact_checked_pairs", set.profiles.iter().filter(|p| p.is_fact_checked()).count());
    Ok(c)
}

pub struct AnalyzeArgs<'a> {
    pub profiles: &'a Path,
    pub params: &'a AnalysisParams,
    pub out: &'a Path,
    pub tables_csv: Option<&'a Path>,
    pub plot_series: Option<&'a Path>,
    pub provenance: BTreeMap<String, serde_json::Value>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(AnalysisReport, StageCounts), StageError> {
    let profiles: Vec<AttentionProfile> = read_json(args.profiles)?;
    let mut report = build_report(&profiles, args.params);
    report.provenance = args.provenance.clone();
    write_json(args.out, &report)?;
    if let Some(dir) = args.tables_csv {
        write_tables_csv(&report, dir)?;
    }
    if let Some(dir) = args.plot_series {
        write_plot_series(&report, dir)?;
    }
    let mut c = StageCounts::new();
    count(&mut c, "profiles", report.counts.profiles);
    count(&mut c, "countries", report.counts.countries);
    count(&mut c, "fact_checked_pairs", report.counts.fact_checked_pairs);
    count(&mut c, "factchecks", report.counts.factchecks);
    Ok((report, c))
}
