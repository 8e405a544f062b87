use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use fcattention::analysis::AnalysisParams;
use fcattention::pipeline::stages::{self, StageCounts, StageError};
use fcattention::pipeline::{
    run_pipeline, CountrySelection, EntitySource, PipelineConfig, RunOptions, Stage, TrendsSource, CONFIG_EXIT_CODE,
};
use fcattention::synthprov::{fixture, generate_world, SynthConfig};

#[derive(Parser)]
#[command(name = "fcattention", version, about = "Fact-check prioritization against calibrated search attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkProvider {
    /// Apply the mapping without searching.
    None,
    /// Local JSON search catalog (`--catalog`).
    Fixture,
    /// Search catalog of a synthetic world (`--world`).
    World,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrendsProvider {
    Sim,
    Live,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and scope-filter a fact-check export.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        column_map: Option<PathBuf>,
        #[arg(long)]
        scope: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rejected rows, one JSON object per line.
        #[arg(long)]
        errors: Option<PathBuf>,
    },
    /// Cluster claim texts with DBSCAN over Jaccard distances.
    Cluster {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 2)]
        min_pts: usize,
        /// `start:end:step` range of eps values to report cluster counts for.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, requires = "sweep")]
        sweep_out: Option<PathBuf>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long)]
        include_other_ratings: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bind clusters to knowledge-graph entities from a mapping file.
    Link {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        provider: LinkProvider,
        #[arg(long, required_if_eq("provider", "fixture"))]
        catalog: Option<PathBuf>,
        #[arg(long, required_if_eq("provider", "world"))]
        world: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        /// Records for the keyword back-search.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        include_other_ratings: bool,
        #[arg(long)]
        out: PathBuf,
        /// Search results used to confirm each mapped entity.
        #[arg(long)]
        checks_out: Option<PathBuf>,
    },
    /// Generate a synthetic world.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate trends series for every linked entity into the cache.
    Fetch {
        #[arg(long)]
        linked: PathBuf,
        /// Comma-separated ISO codes, or `all`.
        #[arg(long, default_value = "all")]
        countries: String,
        #[arg(long, value_enum, default_value = "sim")]
        provider: TrendsProvider,
        /// World file for the simulated provider.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Without `--world`, generate the world from this seed (and
        /// `--synth-config`, default config otherwise) into `<cache>/world.json`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        synth_config: Option<PathBuf>,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value = fcattention::GOOGLE_ENTITY_ID)]
        reference_entity: String,
        /// JSON list of anchor candidate queries (required for live).
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        lo_band: u32,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 1000)]
        min_interval_ms: u64,
        /// Evict unreadable cache entries instead of failing.
        #[arg(long)]
        repair_cache: bool,
        #[arg(long)]
        summary_out: Option<PathBuf>,
    },
    /// Build attention profiles from cached series.
    Attention {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        linked: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = fcattention::GOOGLE_ENTITY_ID)]
        reference_entity: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skipped_out: Option<PathBuf>,
    },
    /// Compute the statistics report.
    Analyze {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long, default_value_t = 10)]
        min_fc_claims: usize,
        #[arg(long, default_value_t = 10)]
        min_fc_countries: usize,
        #[arg(long, default_value_t = 10)]
        kmax: usize,
        #[arg(long, default_value_t = 0.95)]
        ci_level: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tables_csv: Option<PathBuf>,
        #[arg(long)]
        plot_series: Option<PathBuf>,
    },
    /// Run every stage from one config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
        /// Run only this stage.
        #[arg(long)]
        stage: Option<String>,
    },
    /// Regenerate the golden end-to-end fixture into a directory.
    GoldenFixture {
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_counts(counts: &StageCounts) {
    println!("{}", serde_json::to_string_pretty(counts).expect("counts serialize"));
}

fn fail(stage: Stage, e: StageError) -> ExitCode {
    eprintln!("error: {stage}: {e}");
    ExitCode::from(stage.exit_code() as u8)
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(CONFIG_EXIT_CODE as u8)
}

fn finish(stage: Stage, r: Result<StageCounts, StageError>) -> ExitCode {
    match r {
        Ok(c) => {
            print_counts(&c);
            ExitCode::SUCCESS
        }
        Err(e) => fail(stage, e),
    }
}

fn sim_world(world: Option<PathBuf>, seed: Option<u64>, synth_config: Option<&Path>, cache: &Path) -> Result<PathBuf, StageError> {
    if let Some(w) = world {
        return Ok(w);
    }
    let seed = seed.ok_or("the sim provider needs --world or --seed")?;
    let cfg = match synth_config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    let out = cache.join("world.json");
    std::fs::create_dir_all(cache)?;
    stages::write_atomic(&out, &serde_json::to_vec(&generate_world(&cfg, seed)?)?)?;
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { input, column_map, scope, out, errors } => finish(
            Stage::Ingest,
            stages::ingest(&stages::IngestArgs {
                input: &input,
                column_map: column_map.as_deref(),
                scope: &scope,
                out: &out,
                errors: errors.as_deref(),
            }),
        ),
        Command::Cluster { records, eps, min_pts, sweep, sweep_out, stopwords, splits, include_other_ratings, out } => {
            finish(
                Stage::Cluster,
                stages::cluster(&stages::ClusterArgs {
                    records: &records,
                    eps,
                    min_pts,
                    stopwords: stopwords.as_deref(),
                    splits: splits.as_deref(),
                    include_other_ratings,
                    out: &out,
                    sweep: sweep.as_deref(),
                    sweep_out: sweep_out.as_deref(),
                }),
            )
        }
        Command::Link {
            clusters,
            map,
            provider,
            catalog,
            world,
            endpoint,
            records,
            stopwords,
            include_other_ratings,
            out,
            checks_out,
        } => {
            let source = match provider {
                LinkProvider::None => None,
                LinkProvider::Fixture => Some(EntitySource::Catalog(catalog.expect("required by clap"))),
                LinkProvider::World => Some(EntitySource::World(world.expect("required by clap"))),
                LinkProvider::Live => Some(EntitySource::Live { endpoint }),
            };
            finish(
                Stage::Link,
                stages::link(&stages::LinkArgs {
                    clusters: &clusters,
                    map: &map,
                    provider: source.as_ref(),
                    records: records.as_deref(),
                    stopwords: stopwords.as_deref(),
                    include_other_ratings,
                    out: &out,
                    candidates_out: checks_out.as_deref(),
                }),
            )
        }
        Command::Synth { config, seed, out } => {
            let r = match config {
                Some(c) => stages::synth(&c, seed, &out),
                None => (|| -> Result<StageCounts, StageError> {
                    let world = generate_world(&SynthConfig::default(), seed)?;
                    stages::write_atomic(&out, &serde_json::to_vec(&world)?)?;
                    Ok([("countries".to_string(), world.countries.len() as u64)].into())
                })(),
            };
            finish(Stage::Synth, r)
        }
        Command::Fetch {
            linked,
            countries,
            provider,
            world,
            seed,
            synth_config,
            cache,
            reference_entity,
            anchors,
            records,
            lo_band,
            endpoint,
            min_interval_ms,
            repair_cache,
            summary_out,
        } => {
            let source = match provider {
                TrendsProvider::Sim => match sim_world(world, seed, synth_config.as_deref(), &cache) {
                    Ok(world) => TrendsSource::Sim { world },
                    Err(e) => return config_error(e),
                },
                TrendsProvider::Live => match endpoint {
                    Some(endpoint) => TrendsSource::Live { endpoint, min_interval: Duration::from_millis(min_interval_ms) },
                    None => return config_error("the live provider needs --endpoint"),
                },
            };
            finish(
                Stage::Fetch,
                stages::fetch(&stages::FetchArgs {
                    linked: &linked,
                    countries: &CountrySelection::parse(&countries),
                    source: &source,
                    cache: &cache,
                    reference_entity: &reference_entity,
                    anchors: anchors.as_deref(),
                    records: records.as_deref(),
                    lo_band,
                    repair_cache,
                    summary_out: summary_out.as_deref(),
                }),
            )
        }
        Command::Attention { cache, linked, records, reference_entity, out, skipped_out } => finish(
            Stage::Attention,
            stages::attention(&stages::AttentionArgs {
                cache: &cache,
                linked: &linked,
                records: &records,
                reference_entity: &reference_entity,
                out: &out,
                skipped_out: skipped_out.as_deref(),
            }),
        ),
        Command::Analyze { profiles, min_fc_claims, min_fc_countries, kmax, ci_level, out, tables_csv, plot_series } => {
            if kmax == 0 || !(ci_level > 0.0 && ci_level < 1.0) {
                return config_error("--kmax must be positive and --ci-level inside (0, 1)");
            }
            let params = AnalysisParams { min_fc_claims, min_fc_countries, kmax, ci_level, ..AnalysisParams::default() };
            let r = stages::analyze(&stages::AnalyzeArgs {
                profiles: &profiles,
                params: &params,
                out: &out,
                tables_csv: tables_csv.as_deref(),
                plot_series: plot_series.as_deref(),
                provenance: Default::default(),
            });
            finish(Stage::Analyze, r.map(|(_, c)| c))
        }
        Command::Pipeline { config, force, stage } => {
            let only = match stage.as_deref().map(|s| Stage::parse(s).ok_or(s)) {
                None => None,
                Some(Ok(s)) => Some(s),
                Some(Err(s)) => {
                    let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                    return config_error(format!("unknown stage `{s}` (expected one of {})", names.join(", ")));
                }
            };
            let cfg = match PipelineConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match run_pipeline(&cfg, &RunOptions { force, only }) {
                Ok(run) => {
                    println!("{}", serde_json::to_string_pretty(&run.manifest).expect("manifest serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::GoldenFixture { out } => match fixture::write_golden_fixture(&out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
