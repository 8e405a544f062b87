//! End-to-end orchestration from one TOML configuration.
//!
//! Stages run in order (synth, ingest, cluster, link, fetch, attention,
//! analyze); synth only applies when the simulated world is generated from a
//! synth config. A stage is skipped when all of its outputs exist and are newer
//! than all of its inputs (the config file counts as an input), unless
//! forced. Every run writes `manifest.json` with the configuration hash,
//! per-stage timings and record counts.
//!
//! Relative paths in the config resolve against the config file's directory.

pub mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{AnalysisParams, AnalysisReport};
pub use stages::{write_atomic, CountrySelection, EntitySource, StageCounts, StageError, TrendsSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Ingest,
    Cluster,
    Link,
    Fetch,
    Attention,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Synth, Stage::Ingest, Stage::Cluster, Stage::Link, Stage::Fetch, Stage::Attention, Stage::Analyze];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Link => "link",
            Stage::Synth => "synth",
            Stage::Fetch => "fetch",
            Stage::Attention => "attention",
            Stage::Analyze => "analyze",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Process exit code when this stage fails.
    pub fn exit_code(self) -> i32 {
        10 + Stage::ALL.iter().position(|s| *s == self).expect("listed") as i32
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Exit code for configuration errors.
pub const CONFIG_EXIT_CODE: i32 = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => CONFIG_EXIT_CODE,
            PipelineError::Stage { stage, .. } => stage.exit_code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Raw fact-check export (CSV or TSV).
    pub factchecks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_map: Option<PathBuf>,
    pub scope: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<PathBuf>,
    pub entity_map: PathBuf,
    /// Directory receiving every artifact.
    pub work_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub include_other_ratings: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { eps: 0.5, min_pts: 2, include_other_ratings: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Simulated trends. Either an existing world file, or a synth config
    /// plus seed from which the synth stage generates `world.json`.
    Sim {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        world: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        synth_config: Option<PathBuf>,
        #[serde(default)]
        seed: u64,
    },
    Live {
        endpoint: String,
        #[serde(default = "default_interval_ms")]
        min_interval_ms: u64,
        anchors: PathBuf,
    },
}

fn default_interval_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkProviderConfig {
    /// No search; the mapping is applied as is.
    None,
    /// The entity catalog of the simulated world.
    World,
    Fixture {
        catalog: PathBuf,
    },
    Live {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
    },
}

impl Default for LinkProviderConfig {
    fn default() -> Self {
        LinkProviderConfig::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchConfig {
    pub countries: CountrySelection,
    pub reference_entity: String,
    pub lo_band: u32,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            countries: CountrySelection::Keyword("all".into()),
            reference_entity: crate::GOOGLE_ENTITY_ID.into(),
            lo_band: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub link: LinkProviderConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub fetch: FetchConfig,
    #[serde(default)]
    pub analysis: AnalysisParams,
    /// Directory that relative paths resolve against; set by [`PipelineConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(skip)]
    pub config_path: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.config_path = Some(path.to_path_buf());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.cluster.eps > 0.0 && self.cluster.eps <= 1.0) {
            return bad(format!("cluster.eps must lie in (0, 1], got {}", self.cluster.eps));
        }
        if self.cluster.min_pts == 0 {
            return bad("cluster.min_pts must be at least 1".into());
        }
        if self.analysis.kmax == 0 {
            return bad("analysis.kmax must be at least 1".into());
        }
        if !(self.analysis.ci_level > 0.0 && self.analysis.ci_level < 1.0) {
            return bad(format!("analysis.ci_level must lie in (0, 1), got {}", self.analysis.ci_level));
        }
        match &self.provider {
            ProviderConfig::Sim { world: None, synth_config: None, .. } => {
                bad("provider.sim needs `world` or `synth_config`".into())
            }
            ProviderConfig::Sim { world: Some(_), synth_config: Some(_), .. } => {
                bad("provider.sim takes `world` or `synth_config`, not both".into())
            }
            _ => Ok(()),
        }?;
        if matches!(self.link, LinkProviderConfig::World) && !matches!(self.provider, ProviderConfig::Sim { .. }) {
            return bad("link.kind = \"world\" needs the simulated provider".into());
        }
        Ok(())
    }

    /// External files the pipeline reads (not produced by any stage), resolved.
    pub fn external_inputs(&self) -> Vec<PathBuf> {
        self.configured_inputs().iter().map(|x| self.resolve(x)).collect()
    }

    /// External inputs as written in the config.
    fn configured_inputs(&self) -> Vec<PathBuf> {
        let p = &self.paths;
        let mut v = vec![p.factchecks.clone(), p.scope.clone(), p.entity_map.clone()];
        v.extend(p.column_map.clone());
        v.extend(p.stopwords.clone());
        v.extend(p.splits.clone());
        match &self.provider {
            ProviderConfig::Sim { world, synth_config, .. } => {
                v.extend(world.clone());
                v.extend(synth_config.clone());
            }
            ProviderConfig::Live { anchors, .. } => v.push(anchors.clone()),
        }
        if let LinkProviderConfig::Fixture { catalog } = &self.link {
            v.push(catalog.clone());
        }
        v
    }

    fn work(&self, name: &str) -> PathBuf {
        self.resolve(&self.paths.work_dir).join(name)
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts {
            records: self.work("records.jsonl"),
            row_errors: self.work("row_errors.jsonl"),
            clusters: self.work("clusters.json"),
            linked: self.work("linked.json"),
            link_checks: self.work("link_checks.json"),
            world: match &self.provider {
                ProviderConfig::Sim { world: Some(w), .. } => Some(self.resolve(w)),
                ProviderConfig::Sim { synth_config: Some(_), .. } => Some(self.work("world.json")),
                _ => None,
            },
            cache: self.work("cache"),
            fetch_summary: self.work("fetch_summary.json"),
            profiles: self.work("profiles.json"),
            skipped_pairs: self.work("skipped_pairs.json"),
            report: self.work("report.json"),
            tables: self.work("tables"),
            plots: self.work("plots"),
            manifest: self.work("manifest.json"),
        }
    }

    /// SHA-256 over the canonical serialization of the config and the
    /// contents of every external input, in a fixed order. Paths enter as
    /// written, so the hash does not depend on where the tree is checked out.
    pub fn hash(&self) -> Result<String, PipelineError> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        for name in self.configured_inputs() {
            let p = self.resolve(&name);
            let bytes = std::fs::read(&p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            h.update(name.to_string_lossy().as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex(&h.finalize()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Where each stage writes, all under the work directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub records: PathBuf,
    pub row_errors: PathBuf,
    pub clusters: PathBuf,
    pub linked: PathBuf,
    pub link_checks: PathBuf,
    pub world: Option<PathBuf>,
    pub cache: PathBuf,
    pub fetch_summary: PathBuf,
    pub profiles: PathBuf,
    pub skipped_pairs: PathBuf,
    pub report: PathBuf,
    pub tables: PathBuf,
    pub plots: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    /// Outputs were newer than inputs.
    Skipped,
    /// The stage does not apply to this configuration.
    NotApplicable,
    /// Another stage was selected with `--stage`.
    NotSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub seconds: f64,
    pub counts: StageCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub started_at: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    /// Run only this stage (always executed, regardless of freshness).
    pub only: Option<Stage>,
}

pub struct PipelineRun {
    pub manifest: Manifest,
    /// The report, when the analyze stage ran.
    pub report: Option<AnalysisReport>,
}

fn mtime(p: &Path) -> Option<SystemTime> {
    let meta = std::fs::metadata(p).ok()?;
    if meta.is_dir() {
        return None;
    }
    meta.modified().ok()
}

/// Whether every output exists and is at least as new as every input.
fn is_fresh(inputs: &[PathBuf], outputs: &[PathBuf]) -> bool {
    let Some(oldest_out) = outputs.iter().map(|p| mtime(p)).collect::<Option<Vec<_>>>().and_then(|v| v.into_iter().min())
    else {
        return false;
    };
    inputs.iter().all(|p| mtime(p).is_some_and(|t| t <= oldest_out))
}

/// Runs the configured stages and writes the manifest.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<PipelineRun, PipelineError> {
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let config_hash = cfg.hash()?;
    for p in cfg.external_inputs() {
        if !p.exists() {
            return Err(PipelineError::Config(format!("input {} does not exist", p.display())));
        }
    }
    let a = cfg.artifacts();
    let previous: BTreeMap<Stage, StageCounts> = stages::read_json::<Manifest>(&a.manifest)
        .map(|m| m.stages.into_iter().map(|s| (s.stage, s.counts)).collect())
        .unwrap_or_default();
    let config_file: Vec<PathBuf> = cfg.config_path.iter().cloned().collect();
    let r = |p: &Option<PathBuf>| p.as_ref().map(|x| cfg.resolve(x));
    let paths = &cfg.paths;
    let stopwords = r(&paths.stopwords);
    let with = |mut v: Vec<PathBuf>, extra: &[&Option<PathBuf>]| {
        v.extend(extra.iter().filter_map(|x| (*x).clone()));
        v.extend(config_file.iter().cloned());
        v
    };

    let entity_source = match &cfg.link {
        LinkProviderConfig::None => None,
        LinkProviderConfig::World => a.world.clone().map(EntitySource::World),
        LinkProviderConfig::Fixture { catalog } => Some(EntitySource::Catalog(cfg.resolve(catalog))),
        LinkProviderConfig::Live { endpoint } => Some(EntitySource::Live { endpoint: endpoint.clone() }),
    };
    let trends_source = match &cfg.provider {
        ProviderConfig::Sim { .. } => TrendsSource::Sim { world: a.world.clone().expect("sim has a world path") },
        ProviderConfig::Live { endpoint, min_interval_ms, .. } => {
            TrendsSource::Live { endpoint: endpoint.clone(), min_interval: Duration::from_millis(*min_interval_ms) }
        }
    };
    let anchors = match &cfg.provider {
        ProviderConfig::Live { anchors, .. } => Some(cfg.resolve(anchors)),
        ProviderConfig::Sim { .. } => None,
    };
    let synth_input = match &cfg.provider {
        ProviderConfig::Sim { synth_config: Some(s), seed, .. } => Some((cfg.resolve(s), *seed)),
        _ => None,
    };

    let mut records = Vec::new();
    let mut report = None;
    for stage in Stage::ALL {
        let (inputs, outputs): (Vec<PathBuf>, Vec<PathBuf>) = match stage {
            Stage::Ingest => (
                with(vec![cfg.resolve(&paths.factchecks), cfg.resolve(&paths.scope)], &[&r(&paths.column_map)]),
                vec![a.records.clone(), a.row_errors.clone()],
            ),
            Stage::Cluster => (with(vec![a.records.clone()], &[&stopwords, &r(&paths.splits)]), vec![a.clusters.clone()]),
            Stage::Link => {
                let mut extra = vec![a.records.clone(), cfg.resolve(&paths.entity_map)];
                match &entity_source {
                    Some(EntitySource::World(w)) | Some(EntitySource::Catalog(w)) => extra.push(w.clone()),
                    _ => {}
                }
                (with(vec![a.clusters.clone()], &[&stopwords]).into_iter().chain(extra).collect(), vec![a.linked.clone()])
            }
            Stage::Synth => match &synth_input {
                Some((c, _)) => (with(vec![c.clone()], &[]), vec![a.world.clone().expect("sim world")]),
                None => (Vec::new(), Vec::new()),
            },
            Stage::Fetch => {
                let mut v = with(vec![a.linked.clone()], &[&anchors]);
                v.extend(a.world.clone());
                (v, vec![a.fetch_summary.clone()])
            }
            Stage::Attention => (
                with(vec![a.fetch_summary.clone(), a.linked.clone(), a.records.clone()], &[]),
                vec![a.profiles.clone()],
            ),
            Stage::Analyze => (with(vec![a.profiles.clone()], &[]), vec![a.report.clone()]),
        };

        let status = if stage == Stage::Synth && synth_input.is_none() {
            StageStatus::NotApplicable
        } else if opts.only.is_some_and(|o| o != stage) {
            StageStatus::NotSelected
        } else if opts.only.is_none() && !opts.force && is_fresh(&inputs, &outputs) {
            StageStatus::Skipped
        } else {
            StageStatus::Ran
        };
        if status != StageStatus::Ran {
            info!("{stage}: {status:?}");
            let counts = previous.get(&stage).cloned().unwrap_or_default();
            records.push(StageRecord { stage, status, seconds: 0.0, counts });
            continue;
        }

        info!("{stage}: running");
        let t0 = Instant::now();
        let fail = |source: StageError| PipelineError::Stage { stage, source };
        let counts = match stage {
            Stage::Ingest => stages::ingest(&stages::IngestArgs {
                input: &cfg.resolve(&paths.factchecks),
                column_map: r(&paths.column_map).as_deref(),
                scope: &cfg.resolve(&paths.scope),
                out: &a.records,
                errors: Some(&a.row_errors),
            }),
            Stage::Cluster => stages::cluster(&stages::ClusterArgs {
                records: &a.records,
                eps: cfg.cluster.eps,
                min_pts: cfg.cluster.min_pts,
                stopwords: stopwords.as_deref(),
                splits: r(&paths.splits).as_deref(),
                include_other_ratings: cfg.cluster.include_other_ratings,
                out: &a.clusters,
                sweep: None,
                sweep_out: None,
            }),
            Stage::Link => stages::link(&stages::LinkArgs {
                clusters: &a.clusters,
                map: &cfg.resolve(&paths.entity_map),
                provider: entity_source.as_ref(),
                records: Some(&a.records),
                stopwords: stopwords.as_deref(),
                include_other_ratings: cfg.cluster.include_other_ratings,
                out: &a.linked,
                candidates_out: Some(&a.link_checks),
            }),
            Stage::Synth => {
                let (c, seed) = synth_input.as_ref().expect("applicable");
                stages::synth(c, *seed, a.world.as_ref().expect("sim world"))
            }
            Stage::Fetch => stages::fetch(&stages::FetchArgs {
                linked: &a.linked,
                countries: &cfg.fetch.countries,
                source: &trends_source,
                cache: &a.cache,
                reference_entity: &cfg.fetch.reference_entity,
                anchors: anchors.as_deref(),
                records: Some(&a.records),
                lo_band: cfg.fetch.lo_band,
                repair_cache: false,
                summary_out: Some(&a.fetch_summary),
            }),
            Stage::Attention => stages::attention(&stages::AttentionArgs {
                cache: &a.cache,
                linked: &a.linked,
                records: &a.records,
                reference_entity: &cfg.fetch.reference_entity,
                out: &a.profiles,
                skipped_out: Some(&a.skipped_pairs),
            }),
            Stage::Analyze => {
                let mut provenance = BTreeMap::new();
                provenance.insert("config".to_string(), serde_json::to_value(cfg).expect("config serializes"));
                provenance.insert("config_hash".to_string(), serde_json::Value::String(config_hash.clone()));
                stages::analyze(&stages::AnalyzeArgs {
                    profiles: &a.profiles,
                    params: &cfg.analysis,
                    out: &a.report,
                    tables_csv: Some(&a.tables),
                    plot_series: Some(&a.plots),
                    provenance,
                })
                .map(|(rep, c)| {
                    report = Some(rep);
                    c
                })
            }
        }
        .map_err(fail)?;
        let seconds = t0.elapsed().as_secs_f64();
        info!("{stage}: done in {seconds:.2}s");
        records.push(StageRecord { stage, status, seconds, counts });
    }

    let manifest = Manifest { config_hash, started_at, stages: records };
    stages::write_json(&a.manifest, &manifest).map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(PipelineRun { manifest, report })
}
