//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists (through JSON), so they match the files the CLI writes.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use ::fcattention::analysis::{self, AnalysisParams};
use ::fcattention::attention::{self, AttentionProfile};
use ::fcattention::claimcluster::{self, DistanceMatrix, StopWords};
use ::fcattention::ingest::{self, ColumnMap, ScopeConfig};
use ::fcattention::pipeline::{self, PipelineConfig, RunOptions, Stage};
use ::fcattention::synthprov::{self, fixture, SynthConfig, SynthWorld};

create_exception!(fcattention, PipelineError, PyException, "A pipeline run failed; `args[1]` is the process exit code.");

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize + ?Sized>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn pipeline_err(e: pipeline::PipelineError) -> PyErr {
    PipelineError::new_err((e.to_string(), e.exit_code()))
}

/// A pipeline config file and the work directory it drives.
#[pyclass(name = "Pipeline", module = "fcattention")]
struct PyPipeline {
    config: PipelineConfig,
}

#[pymethods]
impl PyPipeline {
    #[new]
    fn new(config_path: PathBuf) -> PyResult<Self> {
        Ok(PyPipeline { config: PipelineConfig::load(&config_path).map_err(pipeline_err)? })
    }

    /// Runs the stale stages (all of them with `force`, or just `stage`) and
    /// returns the run manifest.
    #[pyo3(signature = (force = false, stage = None))]
    fn run(&self, py: Python<'_>, force: bool, stage: Option<&str>) -> PyResult<Py<PyAny>> {
        let only = match stage {
            None => None,
            Some(s) => Some(Stage::parse(s).ok_or_else(|| value_err(format!("unknown stage `{s}`")))?),
        };
        let run = py.detach(|| pipeline::run_pipeline(&self.config, &RunOptions { force, only })).map_err(pipeline_err)?;
        to_py(py, &run.manifest)
    }

    fn config_hash(&self) -> PyResult<String> {
        self.config.hash().map_err(pipeline_err)
    }

    /// The last written report, or None before the analyze stage has run.
    fn report(&self, py: Python<'_>) -> PyResult<Option<Py<PyAny>>> {
        let path = self.config.artifacts().report;
        if !path.exists() {
            return Ok(None);
        }
        let value: serde_json::Value = pipeline::stages::read_json(&path).map_err(value_err)?;
        to_py(py, &value).map(Some)
    }

    #[getter]
    fn work_dir(&self) -> PathBuf {
        self.config.resolve(&self.config.paths.work_dir)
    }

    #[staticmethod]
    fn stages() -> Vec<&'static str> {
        Stage::ALL.iter().map(|s| s.name()).collect()
    }
}

/// A synthetic world: true search volumes plus the simulated trends service.
#[pyclass(name = "World", module = "fcattention")]
struct PyWorld {
    world: SynthWorld,
}

#[pymethods]
impl PyWorld {
    /// Generates the world for `seed` from a synth TOML config (defaults otherwise).
    #[staticmethod]
    #[pyo3(signature = (seed, config = None))]
    fn generate(py: Python<'_>, seed: u64, config: Option<PathBuf>) -> PyResult<Self> {
        let cfg = match config {
            Some(p) => SynthConfig::load(&p).map_err(value_err)?,
            None => SynthConfig::default(),
        };
        let world = py.detach(|| synthprov::generate_world(&cfg, seed)).map_err(value_err)?;
        Ok(PyWorld { world })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyWorld { world: SynthWorld::load(&path).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.world.save(&path).map_err(value_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.world.seed
    }

    #[getter]
    fn countries(&self) -> Vec<String> {
        self.world.countries.clone()
    }

    #[getter]
    fn entity_ids(&self) -> Vec<String> {
        self.world.entities.iter().map(|e| e.entity_id.clone()).collect()
    }

    #[getter]
    fn reference_id(&self) -> String {
        self.world.reference.entity_id.clone()
    }

    /// True weekly volume of a query in a country.
    fn series(&self, country: &str, query: &str) -> Option<Vec<f64>> {
        self.world.series(country, query).map(<[f64]>::to_vec)
    }

    fn ground_truth_total(&self, entity_id: &str, country: &str) -> Option<f64> {
        self.world.ground_truth_total(entity_id, country)
    }

    /// The same world with every volume multiplied by `factor`.
    fn scaled(&self, factor: f64) -> PyWorld {
        PyWorld { world: self.world.scaled(factor) }
    }

    fn __repr__(&self) -> String {
        format!(
            "World(seed={}, countries={}, entities={})",
            self.world.seed,
            self.world.countries.len(),
            self.world.entities.len()
        )
    }
}

/// Parses a fact-check export. Returns `(records, row_errors)`.
#[pyfunction]
#[pyo3(signature = (path, column_map = None))]
fn parse_factchecks(py: Python<'_>, path: PathBuf, column_map: Option<PathBuf>) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let map = match column_map {
        Some(p) => ColumnMap::load(&p).map_err(value_err)?,
        None => ColumnMap::canonical(),
    };
    let file = std::fs::File::open(&path).map_err(value_err)?;
    let out = ingest::parse_factchecks(file, &map).map_err(value_err)?;
    Ok((to_py(py, &out.records)?, to_py(py, &out.errors)?))
}

/// Splits records into `(kept, dropped)` under a scope file.
#[pyfunction]
fn filter_scope(py: Python<'_>, records: &Bound<'_, PyAny>, scope: PathBuf) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let scope = ScopeConfig::load(&scope).map_err(value_err)?;
    let (kept, dropped) = ingest::filter_scope(from_py(records)?, &scope);
    Ok((to_py(py, &kept)?, to_py(py, &dropped)?))
}

/// Content words of a claim, lowercased, English stop words removed.
#[pyfunction]
fn tokenize(text: &str) -> BTreeSet<String> {
    claimcluster::tokenize(text, &StopWords::english())
}

#[pyfunction]
fn jaccard_distance(a: BTreeSet<String>, b: BTreeSet<String>) -> f64 {
    claimcluster::jaccard_distance(&a, &b)
}

/// DBSCAN over a precomputed distance matrix; noise points get None.
#[pyfunction]
fn dbscan(distances: Vec<Vec<f64>>, eps: f64, min_pts: usize) -> PyResult<Vec<Option<usize>>> {
    let d = DistanceMatrix::from_rows(distances).map_err(value_err)?;
    claimcluster::dbscan(&d, eps, min_pts).map_err(value_err)
}

/// DBSCAN labels for raw claim texts under the Jaccard distance of their word sets.
#[pyfunction]
#[pyo3(signature = (texts, eps = 0.5, min_pts = 2))]
fn cluster_texts(texts: Vec<String>, eps: f64, min_pts: usize) -> PyResult<Vec<Option<usize>>> {
    let stop = StopWords::english();
    let sets: Vec<BTreeSet<String>> = texts.iter().map(|t| claimcluster::tokenize(t, &stop)).collect();
    let rows = sets.iter().map(|a| sets.iter().map(|b| claimcluster::jaccard_distance(a, b)).collect()).collect();
    dbscan(rows, eps, min_pts)
}

#[pyfunction]
fn baseline(series: Vec<f64>) -> PyResult<f64> {
    attention::baseline(&series).map_err(value_err)
}

/// Cumulative above-baseline attention in units of `r`.
#[pyfunction]
fn attention_curve(series: Vec<f64>, b: f64, r: f64) -> PyResult<Vec<f64>> {
    attention::attention_curve(&series, b, r).map_err(value_err)
}

/// Spearman's rho as a dict with `n`, `rho` and `p_value`.
#[pyfunction]
fn spearman(py: Python<'_>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &analysis::spearman(&x, &y).map_err(value_err)?)
}

/// F-test of `groups` in `y ~ 1 + groups + covariates`.
#[pyfunction]
#[pyo3(signature = (response, groups, covariates = Vec::new()))]
fn ancova(py: Python<'_>, response: Vec<f64>, groups: Vec<String>, covariates: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    to_py(py, &analysis::ancova(&response, &groups, &covariates).map_err(value_err)?)
}

/// Reads a profiles file written by the attention stage.
#[pyfunction]
fn load_profiles(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let profiles: Vec<AttentionProfile> = pipeline::stages::read_json(&path).map_err(value_err)?;
    to_py(py, &profiles)
}

/// Statistics report over attention profiles (as returned by `load_profiles`).
#[pyfunction]
#[pyo3(signature = (profiles, min_fc_claims = 10, min_fc_countries = 10, kmax = 10, ci_level = 0.95))]
fn build_report(
    py: Python<'_>,
    profiles: &Bound<'_, PyAny>,
    min_fc_claims: usize,
    min_fc_countries: usize,
    kmax: usize,
    ci_level: f64,
) -> PyResult<Py<PyAny>> {
    let profiles: Vec<AttentionProfile> = from_py(profiles)?;
    let params = AnalysisParams { min_fc_claims, min_fc_countries, kmax, ci_level, ..AnalysisParams::default() };
    let report = py.detach(|| analysis::build_report(&profiles, &params));
    to_py(py, &report)
}

/// log2 of total attention of the top-k fact-checked over the top-k unchecked entities.
#[pyfunction]
fn topk_log_ratio(profiles: &Bound<'_, PyAny>, k: usize) -> PyResult<Option<f64>> {
    let profiles: Vec<AttentionProfile> = from_py(profiles)?;
    Ok(analysis::topk_log_ratio(&profiles, k).ok())
}

/// Writes the self-contained end-to-end fixture (inputs, config, expected report).
#[pyfunction]
fn write_golden_fixture(py: Python<'_>, dir: PathBuf) -> PyResult<()> {
    py.detach(|| fixture::write_golden_fixture(&dir)).map_err(value_err)
}

#[pymodule(name = "fcattention")]
fn fcattention_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PipelineError", m.py().get_type::<PipelineError>())?;
    m.add("GOOGLE_ENTITY_ID", ::fcattention::GOOGLE_ENTITY_ID)?;
    m.add("GOLDEN_SEED", fixture::GOLDEN_SEED)?;
    m.add_class::<PyPipeline>()?;
    m.add_class::<PyWorld>()?;
    m.add_function(wrap_pyfunction!(parse_factchecks, m)?)?;
    m.add_function(wrap_pyfunction!(filter_scope, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard_distance, m)?)?;
    m.add_function(wrap_pyfunction!(dbscan, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_texts, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(attention_curve, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(ancova, m)?)?;
    m.add_function(wrap_pyfunction!(load_profiles, m)?)?;
    m.add_function(wrap_pyfunction!(build_report, m)?)?;
    m.add_function(wrap_pyfunction!(topk_log_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(write_golden_fixture, m)?)?;
    Ok(())
}
