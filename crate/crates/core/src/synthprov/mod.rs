//! Deterministic synthetic worlds and the simulated providers backed by them.
//!
//! A world holds true weekly search volumes for a reference query, a ladder of
//! anchor queries and every ⟨entity, country⟩ pair. Entity volumes are
//! stationary multiplicative noise around a per-pair level, plus at most one
//! attention burst in the final year. Because the truth is known, worlds are
//! the oracle for calibration and attention tests.

mod catalog;
pub mod fixture;
mod rng;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{default_entities, EntitySpec, DEFAULT_COUNTRIES, DEFAULT_NOISY_COUNTRIES};
pub use rng::SplitMix64;

use crate::attention::AttentionYears;
use crate::kglink::{EntityCandidate, EntityRef, FixtureEntityProvider};
use crate::trendscal::{Period, QuerySeries, RawGroupResponse, TrendsError, TrendsProvider, Week};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("degenerate config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairRef {
    pub entity_id: String,
    pub country: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Baseline year; the world spans `first_year..=last_year`.
    pub first_year: i32,
    /// Attention year.
    pub last_year: i32,
    /// Explicit countries; when empty the first `n_countries` defaults are used.
    pub countries: Vec<String>,
    pub n_countries: usize,
    /// Countries whose anchors are too faint to build a bank.
    pub noisy_countries: Vec<String>,
    /// Explicit entities; when empty the first `n_entities` built-in ones are used.
    pub entities: Vec<EntitySpec>,
    pub n_entities: usize,
    pub reference_id: String,
    pub reference_display_name: String,
    /// Log-uniform range of the reference query's mean weekly volume.
    pub reference_level: (f64, f64),
    pub anchor_count: usize,
    /// Popularity ratio between consecutive anchors.
    pub anchor_gamma: f64,
    /// Log-uniform range of an entity's level relative to the reference.
    pub entity_ratio: (f64, f64),
    /// Relative amplitude of uniform multiplicative weekly noise.
    pub noise: f64,
    pub burst_probability: f64,
    /// Range of burst heights as multiples of the pair's level; log-uniform
    /// when the lower end is positive, uniform otherwise.
    pub burst_height: (f64, f64),
    pub burst_width: (u32, u32),
    pub burst_decay: (f64, f64),
    /// Share of bursts that are rectangular; the rest decay exponentially.
    pub rect_fraction: f64,
    /// Share of the ⟨entity, country⟩ grid (noisy countries excluded) whose
    /// volume is too low to ever be reported.
    pub missing_rate: f64,
    /// Noise-free pairs whose attention-year level sits below the baseline.
    pub quiet_pairs: Vec<PairRef>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            first_year: 2019,
            last_year: 2020,
            countries: Vec::new(),
            n_countries: DEFAULT_COUNTRIES.len(),
            noisy_countries: Vec::new(),
            entities: Vec::new(),
            n_entities: 39,
            reference_id: crate::GOOGLE_ENTITY_ID.to_string(),
            reference_display_name: "Google".to_string(),
            reference_level: (1.0e4, 1.0e6),
            anchor_count: 16,
            anchor_gamma: 0.75,
            entity_ratio: (0.02, 0.3),
            noise: 0.1,
            burst_probability: 0.7,
            burst_height: (0.5, 8.0),
            burst_width: (2, 12),
            burst_decay: (1.0, 8.0),
            rect_fraction: 0.5,
            missing_rate: 0.0,
            quiet_pairs: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }

    pub fn resolved_countries(&self) -> Vec<String> {
        if self.countries.is_empty() {
            DEFAULT_COUNTRIES.iter().take(self.n_countries).map(|s| s.to_string()).collect()
        } else {
            self.countries.clone()
        }
    }

    pub fn resolved_entities(&self) -> Vec<EntitySpec> {
        if self.entities.is_empty() {
            default_entities().into_iter().take(self.n_entities).collect()
        } else {
            self.entities.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.last_year <= self.first_year {
            return bad("needs a baseline year before the attention year (zero attention weeks)");
        }
        if Week::new(self.first_year, 1).is_none() || Week::new(self.last_year, 1).is_none() {
            return bad("years out of range");
        }
        let countries = self.resolved_countries();
        if countries.is_empty() {
            return bad("no countries");
        }
        if self.resolved_entities().is_empty() {
            return bad("no entities");
        }
        let all: BTreeSet<&String> = countries.iter().chain(&self.noisy_countries).collect();
        if all.len() != countries.len() + self.noisy_countries.len() {
            return bad("duplicate or overlapping country codes");
        }
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ordered(self.reference_level) || !ordered(self.entity_ratio) || !ordered(self.burst_decay) {
            return bad("level, ratio and decay ranges must be positive and ordered");
        }
        if !(self.burst_height.0 >= 0.0 && self.burst_height.0 <= self.burst_height.1) {
            return bad("burst height range must be non-negative and ordered");
        }
        if self.burst_width.0 == 0 || self.burst_width.0 > self.burst_width.1 {
            return bad("burst width range must be positive and ordered");
        }
        if self.anchor_count == 0 || !(self.anchor_gamma > 0.0 && self.anchor_gamma < 1.0) {
            return bad("need at least one anchor and 0 < anchor_gamma < 1");
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(self.burst_probability) && unit(self.rect_fraction) && unit(self.missing_rate)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1)");
        }
        let ids: BTreeSet<String> = self.resolved_entities().into_iter().map(|e| e.entity_id).collect();
        for q in &self.quiet_pairs {
            if !ids.contains(&q.entity_id) || !countries.contains(&q.country) {
                return bad(&format!("quiet pair ({}, {}) is not in the grid", q.entity_id, q.country));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BurstShape {
    /// Constant height for `width` weeks.
    Rect { width: u32 },
    /// Height `h·exp(−n/tau)` in week `n` after the start, for `length` weeks.
    Exp { tau: f64, length: u32 },
}

/// Total extra volume of a burst of peak `height`.
pub fn burst_mass(shape: BurstShape, height: f64) -> f64 {
    match shape {
        BurstShape::Rect { width } => height * width as f64,
        BurstShape::Exp { tau, length } => {
            let q = (-1.0 / tau).exp();
            height * (1.0 - q.powi(length as i32)) / (1.0 - q)
        }
    }
}

fn burst_profile(shape: BurstShape, height: f64) -> Vec<f64> {
    match shape {
        BurstShape::Rect { width } => vec![height; width as usize],
        BurstShape::Exp { tau, length } => (0..length).map(|n| height * (-(n as f64) / tau).exp()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEvent {
    pub entity_id: String,
    pub country: String,
    pub start: Week,
    pub height: f64,
    pub shape: BurstShape,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorld {
    pub seed: u64,
    pub config: SynthConfig,
    pub period: Period,
    /// Countries with usable anchors, then the noisy ones.
    pub countries: Vec<String>,
    pub noisy_countries: Vec<String>,
    pub entities: Vec<EntityRef>,
    pub reference: EntityRef,
    pub anchors: Vec<String>,
    /// country -> query -> true weekly volume.
    pub true_popularity: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    pub true_events: Vec<TrueEvent>,
    pub missing_pairs: Vec<PairRef>,
    pub entity_catalog: BTreeMap<String, Vec<EntityCandidate>>,
}

fn noisy_series(rng: &mut SplitMix64, level: f64, noise: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| level * (1.0 + noise * rng.uniform(-1.0, 1.0))).collect()
}

/// Level of pairs that are never reported, relative to the country reference.
const MISSING_LEVEL: f64 = 2.0e-5;
/// Anchor attenuation in countries that cannot build a bank.
const NOISY_ANCHOR_FACTOR: f64 = 1.0e-4;
/// Attention-year level of quiet pairs relative to their baseline.
const QUIET_DROP: f64 = 0.9;

pub fn anchor_id(j: usize) -> String {
    format!("/g/fcsim_anchor_{j:02}")
}

/// Generates the world for `(config, seed)`. The same inputs always give the
/// same world, bit for bit.
pub fn generate_world(config: &SynthConfig, seed: u64) -> Result<SynthWorld, SynthError> {
    config.validate()?;
    let period = Period::iso_years(config.first_year, config.last_year);
    let years = AttentionYears {
        baseline: Period::iso_years(config.first_year, config.first_year),
        attention: Period::iso_years(config.last_year, config.last_year),
    };
    let n = period.len();
    let att_start = period.index_of(years.attention.start).expect("attention year inside period");
    let att_len = years.attention.len();

    let countries = config.resolved_countries();
    let specs = config.resolved_entities();
    let entities: Vec<EntityRef> = specs
        .iter()
        .map(|s| EntityRef::new(&s.entity_id, &s.display_name))
        .collect::<Result<_, _>>()
        .map_err(|e| SynthError::Config(e.to_string()))?;
    let reference = EntityRef::new(&config.reference_id, &config.reference_display_name)
        .map_err(|e| SynthError::Config(e.to_string()))?;
    let anchors: Vec<String> = (1..=config.anchor_count).map(anchor_id).collect();

    let mut root = SplitMix64::new(seed);
    let quiet: BTreeSet<(String, String)> =
        config.quiet_pairs.iter().map(|q| (q.entity_id.clone(), q.country.clone())).collect();
    let grid: Vec<(usize, usize)> = (0..countries.len())
        .flat_map(|c| (0..entities.len()).map(move |e| (c, e)))
        .filter(|&(c, e)| !quiet.contains(&(entities[e].entity_id.clone(), countries[c].clone())))
        .collect();
    let n_missing = (config.missing_rate * (countries.len() * entities.len()) as f64).round() as usize;
    let mut pick = root.fork(1);
    let missing: BTreeSet<(usize, usize)> =
        pick.sample_indices(grid.len(), n_missing).into_iter().map(|i| grid[i]).collect();
    if missing.len() < n_missing {
        return Err(SynthError::Config("missing_rate leaves too few eligible pairs".into()));
    }

    let mut true_popularity = BTreeMap::new();
    let mut true_events = Vec::new();
    let all_countries: Vec<(&String, bool)> = countries
        .iter()
        .map(|c| (c, false))
        .chain(config.noisy_countries.iter().map(|c| (c, true)))
        .collect();
    for (ci, (country, noisy)) in all_countries.iter().enumerate() {
        let mut rng = root.fork(100 + ci as u64);
        let r_level = rng.log_uniform(config.reference_level.0, config.reference_level.1);
        let mut table = BTreeMap::new();
        table.insert(reference.entity_id.clone(), noisy_series(&mut rng, r_level, config.noise, n));
        let anchor_scale = if *noisy { NOISY_ANCHOR_FACTOR } else { 1.0 };
        for (j, a) in anchors.iter().enumerate() {
            let level = r_level * anchor_scale * config.anchor_gamma.powi(j as i32 + 1);
            table.insert(a.clone(), noisy_series(&mut rng, level, config.noise, n));
        }
        for (ei, entity) in entities.iter().enumerate() {
            let mut er = rng.fork(ei as u64);
            let level = r_level * er.log_uniform(config.entity_ratio.0, config.entity_ratio.1);
            let is_quiet = !noisy && quiet.contains(&(entity.entity_id.clone(), country.to_string()));
            let series = if !noisy && missing.contains(&(ci, ei)) {
                vec![r_level * MISSING_LEVEL; n]
            } else if is_quiet {
                (0..n).map(|k| if k >= att_start { level * QUIET_DROP } else { level }).collect()
            } else {
                let mut s = noisy_series(&mut er, level, config.noise, n);
                if er.chance(config.burst_probability) {
                    let offset = er.below(att_len as u64) as usize;
                    let remaining = (att_len - offset) as u32;
                    let (lo, hi) = config.burst_height;
                    let height = level * if lo > 0.0 { er.log_uniform(lo, hi) } else { er.uniform(lo, hi) };
                    let shape = if er.chance(config.rect_fraction) {
                        BurstShape::Rect {
                            width: er.range_inclusive(config.burst_width.0, config.burst_width.1).min(remaining),
                        }
                    } else {
                        BurstShape::Exp { tau: er.uniform(config.burst_decay.0, config.burst_decay.1), length: remaining }
                    };
                    for (k, extra) in burst_profile(shape, height).into_iter().enumerate() {
                        s[att_start + offset + k] += extra;
                    }
                    true_events.push(TrueEvent {
                        entity_id: entity.entity_id.clone(),
                        country: country.to_string(),
                        start: period.weeks()[att_start + offset],
                        height,
                        shape,
                        mass: burst_mass(shape, height),
                    });
                }
                s
            };
            table.insert(entity.entity_id.clone(), series);
        }
        true_popularity.insert(country.to_string(), table);
    }

    let mut missing_pairs: Vec<PairRef> = missing
        .iter()
        .map(|&(c, e)| PairRef { entity_id: entities[e].entity_id.clone(), country: countries[c].clone() })
        .collect();
    missing_pairs.sort();

    Ok(SynthWorld {
        seed,
        config: config.clone(),
        period,
        countries,
        noisy_countries: config.noisy_countries.clone(),
        entity_catalog: entity_catalog(&specs),
        entities,
        reference,
        anchors,
        true_popularity,
        true_events,
        missing_pairs,
    })
}

/// Search fixtures: each entity's representative word finds the entity
/// itself first and a weaker decoy second.
fn entity_catalog(specs: &[EntitySpec]) -> BTreeMap<String, Vec<EntityCandidate>> {
    let mut out: BTreeMap<String, Vec<EntityCandidate>> = BTreeMap::new();
    for (i, s) in specs.iter().enumerate() {
        let base = 1000.0 - i as f64;
        let own = EntityRef::new(&s.entity_id, &s.display_name).expect("catalog ids are valid");
        let decoy_id = format!("/g/fcsim_decoy_{i:02}");
        let decoy = EntityRef::new(&decoy_id, format!("{} (disambiguation)", s.display_name)).expect("valid");
        out.entry(s.word.clone()).or_default().extend([
            EntityCandidate { entity: own, score: base },
            EntityCandidate { entity: decoy, score: base / 4.0 },
        ]);
    }
    out
}

impl SynthWorld {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn years(&self) -> AttentionYears {
        AttentionYears {
            baseline: Period::iso_years(self.config.first_year, self.config.first_year),
            attention: Period::iso_years(self.config.last_year, self.config.last_year),
        }
    }

    pub fn series(&self, country: &str, query: &str) -> Option<&[f64]> {
        self.true_popularity.get(country)?.get(query).map(|v| v.as_slice())
    }

    /// Reference first, then anchors from most to least popular.
    pub fn anchor_candidates(&self) -> Vec<String> {
        std::iter::once(self.reference.entity_id.clone()).chain(self.anchors.iter().cloned()).collect()
    }

    pub fn entity_provider(&self) -> FixtureEntityProvider {
        FixtureEntityProvider::new(self.entity_catalog.clone())
    }

    /// Copy with every true volume multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> SynthWorld {
        let mut w = self.clone();
        for table in w.true_popularity.values_mut() {
            for s in table.values_mut() {
                s.iter_mut().for_each(|v| *v *= factor);
            }
        }
        for e in &mut w.true_events {
            e.height *= factor;
            e.mass *= factor;
        }
        w
    }

    fn slices(&self, series: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let y = self.years();
        let b0 = self.period.index_of(y.baseline.start).expect("inside");
        let a0 = self.period.index_of(y.attention.start).expect("inside");
        (
            series[b0..b0 + y.baseline.len()].to_vec(),
            series[a0..a0 + y.attention.len()].to_vec(),
        )
    }

    /// True cumulative attention curve, from the unrounded volumes.
    pub fn ground_truth_curve(&self, entity_id: &str, country: &str) -> Option<Vec<f64>> {
        let (base, att) = self.slices(self.series(country, entity_id)?);
        let (_, ref_att) = self.slices(self.series(country, &self.reference.entity_id)?);
        let b = base.iter().sum::<f64>() / base.len() as f64;
        let r = ref_att.iter().sum::<f64>() / ref_att.len() as f64;
        let mut acc = 0.0;
        Some(
            att.iter()
                .map(|v| {
                    acc += (v - b).max(0.0);
                    acc / r
                })
                .collect(),
        )
    }

    pub fn ground_truth_total(&self, entity_id: &str, country: &str) -> Option<f64> {
        self.ground_truth_curve(entity_id, country).and_then(|c| c.last().copied())
    }

    /// True weekly volumes in reference units (the reference's true peak is 100).
    pub fn reference_units(&self, country: &str, query: &str) -> Option<Vec<f64>> {
        let peak = self.series(country, &self.reference.entity_id)?.iter().copied().fold(0.0, f64::max);
        Some(self.series(country, query)?.iter().map(|v| 100.0 * v / peak).collect())
    }
}

/// Share of the group maximum below which a query's mean volume is withheld.
pub const EMPTY_THRESHOLD: f64 = 0.01;

/// Trends provider answering from a world's true volumes: the group is
/// scaled so its largest non-withheld weekly volume becomes 100 and values
/// are rounded half away from zero. A query whose mean volume is below 1% of
/// that maximum comes back empty; if that withholds the query holding the
/// maximum, the maximum is taken again over the rest. Unknown queries and
/// countries are empty.
#[derive(Debug, Clone)]
pub struct SimulatedTrendsProvider {
    world: Arc<SynthWorld>,
}

impl SimulatedTrendsProvider {
    pub fn new(world: impl Into<Arc<SynthWorld>>) -> Self {
        SimulatedTrendsProvider { world: world.into() }
    }

    pub fn world(&self) -> &SynthWorld {
        &self.world
    }
}

pub fn simulate_provider(world: SynthWorld) -> SimulatedTrendsProvider {
    SimulatedTrendsProvider::new(world)
}

/// Group normalization applied to explicit true series (exposed for tests).
pub fn normalize_group(series: &[Option<&[f64]>]) -> Vec<Option<Vec<u32>>> {
    let stats: Vec<Option<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.filter(|v| !v.is_empty())
                .map(|v| (v.iter().sum::<f64>() / v.len() as f64, v.iter().copied().fold(0.0, f64::max)))
        })
        .collect();
    let mut live: Vec<bool> = stats.iter().map(|s| s.is_some()).collect();
    let group_max = loop {
        let m = stats
            .iter()
            .zip(&live)
            .filter_map(|(s, &l)| if l { s.map(|(_, mx)| mx) } else { None })
            .fold(0.0, f64::max);
        if !(m > 0.0) {
            return vec![None; series.len()];
        }
        let mut changed = false;
        for (s, l) in stats.iter().zip(live.iter_mut()) {
            if let (true, Some((mean, _))) = (*l, s) {
                if *mean < EMPTY_THRESHOLD * m {
                    *l = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break m;
        }
    };
    series
        .iter()
        .zip(&live)
        .map(|(s, &l)| {
            if !l {
                return None;
            }
            s.map(|v| v.iter().map(|x| (100.0 * x / group_max).round() as u32).collect())
        })
        .collect()
}

impl TrendsProvider for SimulatedTrendsProvider {
    fn fetch_group(&self, queries: &[String], country: &str, period: &Period) -> Result<RawGroupResponse, TrendsError> {
        let w = &self.world;
        let (Some(start), Some(_)) = (w.period.index_of(period.start), w.period.index_of(period.end)) else {
            return Err(TrendsError::Contract(format!("period {period} outside the simulated span {}", w.period)));
        };
        let len = period.len();
        let slices: Vec<Option<&[f64]>> =
            queries.iter().map(|q| w.series(country, q).map(|s| &s[start..start + len])).collect();
        let values = normalize_group(&slices);
        Ok(RawGroupResponse {
            country: country.to_string(),
            period: *period,
            series: queries
                .iter()
                .zip(values)
                .map(|(q, values)| QuerySeries { query: q.clone(), values })
                .collect(),
        })
    }
}
