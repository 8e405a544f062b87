//! Golden fixture generation.
//!
//! Builds a complete pipeline input set over a synthetic world: a fact-check
//! export in a non-canonical column layout, scope, splits and entity-map
//! files, the world's synth config and the pipeline config. The export is
//! shaped so that the end-to-end analysis has a known outcome:
//!
//! * 72 countries × 39 entities with 222 never-reported pairs, so 2586
//!   profiles out of a 2808 grid;
//! * 411 fact-checked pairs carrying 879 fact-checks, one of them a quiet
//!   pair with zero total attention;
//! * fact-check count buckets of 243 / 137 / 31 pairs, with 28 pairs at ≥7
//!   checks and 11 at ≥10, the largest being 5G in the US with 23;
//! * first fact-checks placed so the mean relative attention at the first
//!   fact-check is 0.346 over the 410 pairs with positive totals.
//!
//! First fact-check weeks are chosen against calibrated curves computed with
//! the same code the pipeline runs, so the expected report is exact.
//!
//! The export also carries everything the ingest and link stages must cope
//! with: spelled-out dates, multi-country cells, region rows, excluded
//! countries, out-of-window dates, non-debunk ratings, rejected
//! rows, all-stop-word texts, and odd phrasings that only the keyword
//! back-search recovers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use super::{generate_world, PairRef, SimulatedTrendsProvider, SplitMix64, SynthConfig, SynthWorld};
use super::{DEFAULT_NOISY_COUNTRIES, EntitySpec};
use crate::attention::{profile_from_series, AttentionProfile};
use crate::claimcluster::{ClaimCluster, SplitGroup, SplitRules};
use crate::ingest::{ColumnMap, ScopeConfig};
use crate::kglink::{EntityMap, EntityRef, MapEntry};
use crate::pipeline::stages::{self, ClusterArgs, IngestArgs, StageError};
use crate::trendscal::{build_anchor_bank, calibrate, Calibration, CalibrationConfig, Week};

pub const GOLDEN_SEED: u64 = 2020;
/// Mean relative attention at the first fact-check the fixture is tuned to.
pub const TARGET_FIRST_FC_MEAN: f64 = 0.346;
const TARGET_TOLERANCE: f64 = 1e-4;
const MISSING_RATE: f64 = 0.0791;
const QUIET_PAIR: (&str, &str) = ("/g/fcsim_zinc", "PT");
const TOP_PAIR: (&str, &str) = ("/g/fcsim_5g", "US");
const TOP_PAIR_CHECKS: usize = 23;

/// Countries with at least ten fact-checked claims, and how many.
const BIG_COUNTRIES: &[(&str, usize)] = &[
    ("AR", 14),
    ("BR", 22),
    ("CO", 15),
    ("ES", 20),
    ("FR", 17),
    ("IN", 24),
    ("IT", 13),
    ("KE", 10),
    ("MX", 16),
    ("PH", 15),
    ("PT", 12),
    ("TR", 11),
    ("US", 26),
];
const FC_PAIRS: usize = 411;
const SMALL_COUNTRY_MAX: usize = 9;

const VARIANTS: &[&str] = &["video", "post", "message", "article", "audio", "image"];
const FILLER: &[&str] = &["the", "that", "is", "with", "of", "and", "it", "by", "for", "on", "this", "about", "from", "a"];
const RATINGS: &[&str] = &["False", "Misleading", "Partly false", "No evidence", "Pants on Fire", "FAKE", "Mostly False"];
const OTHER_RATINGS: &[&str] = &["True", "Correct attribution", "Satire"];
const PLATFORMS: &[&str] = &["Facebook", "WhatsApp", "Twitter", "YouTube", "Instagram", "TikTok"];
const ORGS: &[&str] = &["Verifica", "CheckMate", "TruthDesk", "FactFirst", "Claimwatch", "Desmiente"];
/// Claims no curator could tie to an entity; each forms its own cluster.
const UNLINKED_CLAIMS: &[[&str; 3]] = &[
    ["aspirin", "dissolved", "lemonade"],
    ["lieber", "harvard", "professor"],
    ["ronaldo", "hotels", "hospitals"],
    ["lockdown", "extended", "curfew"],
    ["ventilators", "hoarded", "warehouse"],
    ["stimulus", "deposit", "payments"],
    ["quarantine", "camps", "detention"],
];
/// Entities that also get one oddly phrased fact-check.
const ODD_PHRASED: &[&str] =
    &["/g/fcsim_garlic", "/g/fcsim_bleach", "/g/fcsim_hcq", "/g/fcsim_lemon", "/g/fcsim_gates", "/g/fcsim_vaccine"];
const ODD_SYLLABLES: &[&str] = &["kel", "vor", "zun", "bri", "tal", "mox", "qua", "fen", "dro", "lis"];

pub const PIPELINE_CONFIG: &str = "pipeline.toml";
pub const EXPECTED_REPORT: &str = "expected_report.json";

/// Every input file of the golden fixture, keyed by file name.
pub struct GoldenInputs {
    pub files: BTreeMap<String, Vec<u8>>,
}

/// One fact-check row before serialization.
struct Row {
    date: String,
    country: String,
    claim: String,
    rating: String,
    org: String,
    platform: String,
    url: String,
}

fn synth_config() -> SynthConfig {
    SynthConfig {
        noisy_countries: DEFAULT_NOISY_COUNTRIES.iter().map(|s| s.to_string()).collect(),
        missing_rate: MISSING_RATE,
        quiet_pairs: vec![PairRef { entity_id: QUIET_PAIR.0.into(), country: QUIET_PAIR.1.into() }],
        ..SynthConfig::default()
    }
}

/// Profiles of every reported pair, computed as the fetch and attention stages would.
fn world_profiles(world: &SynthWorld) -> Result<BTreeMap<(String, String), AttentionProfile>, StageError> {
    let provider = SimulatedTrendsProvider::new(world.clone());
    let cfg = CalibrationConfig::default();
    let candidates: Vec<String> =
        std::iter::once(world.reference.entity_id.clone()).chain(world.anchors.iter().cloned()).collect();
    let years = world.years();
    let per_country: Vec<Vec<AttentionProfile>> = world
        .countries
        .par_iter()
        .map(|country| -> Result<Vec<AttentionProfile>, StageError> {
            let bank = build_anchor_bank(&provider, &candidates, country, &world.period, &cfg)?;
            let Calibration::Series(reference) =
                calibrate(&provider, &bank, &world.reference.entity_id, country, &world.period, &cfg)?
            else {
                return Err(format!("{country}: reference has no signal").into());
            };
            let mut out = Vec::new();
            for e in &world.entities {
                if let Calibration::Series(s) = calibrate(&provider, &bank, &e.entity_id, country, &world.period, &cfg)? {
                    if let Some(p) = profile_from_series(e, "", &s, &reference, &years, Vec::new())? {
                        out.push(p);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_country
        .into_iter()
        .flatten()
        .map(|p| ((p.entity.entity_id.clone(), p.country.clone()), p))
        .collect())
}

fn pick<'a, T>(rng: &mut SplitMix64, items: &'a [T]) -> &'a T {
    &items[rng.below(items.len() as u64) as usize]
}

fn shuffle<T>(rng: &mut SplitMix64, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Per-country number of fact-checked claims.
fn country_quotas(rng: &mut SplitMix64, countries: &[String]) -> BTreeMap<String, usize> {
    let big: BTreeMap<String, usize> = BIG_COUNTRIES.iter().map(|(c, n)| (c.to_string(), *n)).collect();
    let small: Vec<&String> = countries.iter().filter(|c| !big.contains_key(*c)).collect();
    let mut quota: BTreeMap<String, usize> = small.iter().map(|c| ((*c).clone(), 1)).collect();
    let mut left = FC_PAIRS - big.values().sum::<usize>() - small.len();
    while left > 0 {
        let c = pick(rng, &small);
        let q = quota.get_mut(*c).expect("small country");
        if *q < SMALL_COUNTRY_MAX {
            *q += 1;
            left -= 1;
        }
    }
    quota.extend(big);
    quota
}

/// Fact-check counts for every pair except the top one.
fn count_pool() -> Vec<usize> {
    let mut pool = Vec::new();
    let mut add = |count: usize, pairs: usize| pool.extend(std::iter::repeat(count).take(pairs));
    add(1, 243);
    add(2, 89);
    add(3, 25);
    add(4, 15);
    add(5, 8);
    add(6, 3);
    add(7, 7);
    add(8, 6);
    add(9, 4);
    for c in [10, 10, 10, 10, 10, 11, 11, 12, 12, 13] {
        add(c, 1);
    }
    pool
}

fn relative_at(p: &AttentionProfile, week: usize) -> f64 {
    (p.curve[week] / p.total).min(1.0)
}

/// Days of ISO week `index` of 2020 that fall in calendar 2020.
fn days_of_week(index: usize) -> (NaiveDate, NaiveDate) {
    let w = Week::new(2020, 1).expect("valid").monday() + chrono::Duration::weeks(index as i64);
    let jan1 = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid");
    let dec31 = NaiveDate::from_ymd_opt(2020, 12, 31).expect("valid");
    (w.max(jan1), (w + chrono::Duration::days(6)).min(dec31))
}

fn day_between(rng: &mut SplitMix64, lo: NaiveDate, hi: NaiveDate) -> NaiveDate {
    lo + chrono::Duration::days(rng.below((hi - lo).num_days() as u64 + 1) as i64)
}

fn format_date(rng: &mut SplitMix64, d: NaiveDate) -> String {
    match rng.below(5) {
        0 => d.format("%B %-d, %Y").to_string(),
        1 => d.format("%-d %B %Y").to_string(),
        _ => d.format("%Y-%m-%d").to_string(),
    }
}

fn claim_text(rng: &mut SplitMix64, core: &[String]) -> String {
    let mut words: Vec<String> = core.to_vec();
    words.push(pick(rng, VARIANTS).to_string());
    for _ in 0..1 + rng.below(3) {
        words.push(pick(rng, FILLER).to_string());
    }
    shuffle(rng, &mut words);
    let mut text = words.join(" ");
    if let Some(first) = text.get(..1) {
        text = first.to_uppercase() + &text[1..];
    }
    text
}

fn odd_text(rng: &mut SplitMix64, keyword: &str, used: &mut BTreeSet<String>) -> String {
    let mut words = vec![keyword.to_string()];
    while words.len() < 5 {
        let w = format!("{}{}{}", pick(rng, ODD_SYLLABLES), pick(rng, ODD_SYLLABLES), pick(rng, ODD_SYLLABLES));
        if used.insert(w.clone()) {
            words.push(w);
        }
    }
    words.join(" ")
}

/// Chooses first-fact-check weeks so the mean relative attention lands on the target.
fn choose_first_weeks(
    rng: &mut SplitMix64,
    pairs: &[(String, String)],
    profiles: &BTreeMap<(String, String), AttentionProfile>,
) -> Vec<usize> {
    let weeks = profiles.values().next().map_or(0, |p| p.curve.len());
    let mut chosen: Vec<usize> = pairs
        .iter()
        .map(|key| {
            let p = &profiles[key];
            if !(p.total > 0.0) {
                return rng.below(weeks as u64) as usize;
            }
            let target = rng.next_f64().powf(1.86);
            (0..weeks).min_by(|&a, &b| {
                (relative_at(p, a) - target).abs().total_cmp(&(relative_at(p, b) - target).abs())
            }).expect("non-empty year")
        })
        .collect();
    let active: Vec<usize> = (0..pairs.len()).filter(|&i| profiles[&pairs[i]].total > 0.0).collect();
    let mean = |chosen: &[usize]| {
        active.iter().map(|&i| relative_at(&profiles[&pairs[i]], chosen[i])).sum::<f64>() / active.len() as f64
    };
    let mut order = active.clone();
    for _ in 0..50 {
        let gap = TARGET_FIRST_FC_MEAN - mean(&chosen);
        if gap.abs() < TARGET_TOLERANCE {
            return chosen;
        }
        shuffle(rng, &mut order);
        for &i in &order {
            let gap = (TARGET_FIRST_FC_MEAN - mean(&chosen)) * active.len() as f64;
            if gap.abs() < TARGET_TOLERANCE * active.len() as f64 {
                break;
            }
            let p = &profiles[&pairs[i]];
            let now = relative_at(p, chosen[i]);
            let want = now + gap.clamp(-0.05, 0.05);
            let best = (0..weeks)
                .min_by(|&a, &b| (relative_at(p, a) - want).abs().total_cmp(&(relative_at(p, b) - want).abs()))
                .expect("non-empty year");
            if (relative_at(p, best) - want).abs() < (now - want).abs() {
                chosen[i] = best;
            }
        }
    }
    chosen
}

/// Builds every input file except the splits and entity map, which depend
/// on the clustering and are derived afterwards.
fn build_rows(world: &SynthWorld, specs: &[EntitySpec]) -> Result<Vec<Row>, StageError> {
    let profiles = world_profiles(world)?;
    let mut rng = SplitMix64::new(GOLDEN_SEED);
    let quotas = country_quotas(&mut rng.fork(1), &world.countries);

    // Entity popularity: a skewed weight per entity, shuffled so the catalog
    // order does not decide it.
    let mut ranks: Vec<usize> = (0..specs.len()).collect();
    shuffle(&mut rng.fork(2), &mut ranks);
    let weight: HashMap<&str, f64> =
        specs.iter().zip(&ranks).map(|(s, r)| (s.entity_id.as_str(), 1.0 / (1.0 + *r as f64).powf(0.7))).collect();

    let mut sel = rng.fork(3);
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (country, &quota) in &quotas {
        let forced: Vec<&str> = [TOP_PAIR, QUIET_PAIR].iter().filter(|p| p.1 == country).map(|p| p.0).collect();
        let mut picked: Vec<String> = forced.iter().map(|s| s.to_string()).collect();
        let mut pool: Vec<&EntitySpec> = specs
            .iter()
            .filter(|s| !forced.contains(&s.entity_id.as_str()))
            .filter(|s| profiles.get(&(s.entity_id.clone(), country.clone())).is_some_and(|p| p.total > 0.0))
            .collect();
        while picked.len() < quota {
            let total: f64 = pool.iter().map(|s| weight[s.entity_id.as_str()]).sum();
            let mut x = sel.next_f64() * total;
            let mut idx = pool.len() - 1;
            for (i, s) in pool.iter().enumerate() {
                x -= weight[s.entity_id.as_str()];
                if x <= 0.0 {
                    idx = i;
                    break;
                }
            }
            picked.push(pool.remove(idx).entity_id.clone());
        }
        pairs.extend(picked.into_iter().map(|e| (e, country.clone())));
    }
    pairs.sort();

    let mut counts = count_pool();
    shuffle(&mut rng.fork(4), &mut counts);
    let mut counts = counts.into_iter();
    let top = (TOP_PAIR.0.to_string(), TOP_PAIR.1.to_string());
    let pair_counts: Vec<usize> = pairs
        .iter()
        .map(|p| if *p == top { TOP_PAIR_CHECKS } else { counts.next().expect("pool covers every pair") })
        .collect();
    debug_assert!(counts.next().is_none());

    let first_weeks = choose_first_weeks(&mut rng.fork(5), &pairs, &profiles);
    let spec_of: HashMap<&str, &EntitySpec> = specs.iter().map(|s| (s.entity_id.as_str(), s)).collect();

    let mut r = rng.fork(6);
    let mut rows = Vec::new();
    let mut serial = 0usize;
    let mut row = |r: &mut SplitMix64, date: String, country: &str, claim: String, rating: String| {
        serial += 1;
        Row {
            date,
            country: country.to_string(),
            claim,
            rating,
            org: pick(r, ORGS).to_string(),
            platform: pick(r, PLATFORMS).to_string(),
            url: format!("https://factcheck.example/{}/{serial:05}", country.to_lowercase()),
        }
    };

    let mut odd_words = BTreeSet::new();
    let mut odd_left: BTreeSet<&str> = ODD_PHRASED.iter().copied().collect();
    for ((pair, &count), &week) in pairs.iter().zip(&pair_counts).zip(&first_weeks) {
        let spec = spec_of[pair.0.as_str()];
        let (lo, hi) = days_of_week(week);
        let first = day_between(&mut r, lo, hi);
        let mut dates = vec![first];
        for _ in 1..count {
            let w = week + r.below((53 - week) as u64) as usize;
            let (lo, hi) = days_of_week(w);
            dates.push(day_between(&mut r, lo.max(first), hi));
        }
        for (k, d) in dates.into_iter().enumerate() {
            // A later fact-check of a multi-check pair gets the odd phrasing,
            // so the pair keeps an ordinary record either way.
            let claim = if k == 1 && odd_left.remove(pair.0.as_str()) {
                odd_text(&mut r, &spec.core[0], &mut odd_words)
            } else {
                claim_text(&mut r, &spec.core)
            };
            let date = format_date(&mut r, d);
            let rating = pick(&mut r, RATINGS).to_string();
            rows.push(row(&mut r, date, &pair.1, claim, rating));
        }
    }
    if !odd_left.is_empty() {
        return Err(format!("no multi-check pair for odd phrasing of {odd_left:?}").into());
    }

    let window_day = |r: &mut SplitMix64| {
        day_between(r, NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid"), NaiveDate::from_ymd_opt(2020, 12, 31).expect("valid"))
    };
    // Unlinked claims, some listed under several countries at once.
    let big: Vec<&str> = BIG_COUNTRIES.iter().map(|(c, _)| *c).collect();
    for core in UNLINKED_CLAIMS {
        let core: Vec<String> = core.iter().map(|s| s.to_string()).collect();
        for _ in 0..2 + r.below(3) {
            let country = if r.chance(0.4) {
                format!("{};{}", pick(&mut r, &big), pick(&mut r, &["GB", "CA", "AU", "NG"]))
            } else {
                pick(&mut r, &world.countries).clone()
            };
            let (d, text, rating) = (window_day(&mut r), claim_text(&mut r, &core), pick(&mut r, RATINGS).to_string());
            let date = format_date(&mut r, d);
            rows.push(row(&mut r, date, &country, text, rating));
        }
    }
    // Records the scope filter drops, or that never reach a profile.
    let sample_entity = |r: &mut SplitMix64| spec_of[pick(r, &pairs).0.as_str()];
    let mut extra = |r: &mut SplitMix64, country: &str, date: NaiveDate, rating: &[&str]| {
        let spec = sample_entity(r);
        let (text, rating) = (claim_text(r, &spec.core), pick(r, rating).to_string());
        let date = format_date(r, date);
        row(r, date, country, text, rating)
    };
    for region in ["Latin America", "Global", "Europe", "Sub-Saharan Africa"] {
        let d = window_day(&mut r);
        rows.push(extra(&mut r, region, d, RATINGS));
    }
    for noisy in ["MW", "MW", "KR", "KR", "TL", "KG"] {
        let d = window_day(&mut r);
        rows.push(extra(&mut r, noisy, d, RATINGS));
    }
    for d in [(2019, 12, 20), (2019, 11, 2), (2021, 1, 3), (2021, 2, 14)] {
        let d = NaiveDate::from_ymd_opt(d.0, d.1, d.2).expect("valid");
        let c = pick(&mut r, &world.countries).clone();
        rows.push(extra(&mut r, &c, d, RATINGS));
    }
    for _ in 0..8 {
        let (d, c) = (window_day(&mut r), pick(&mut r, &world.countries).clone());
        rows.push(extra(&mut r, &c, d, OTHER_RATINGS));
    }
    for text in ["This is about that", "It is what it is"] {
        let (d, c) = (window_day(&mut r), pick(&mut r, &world.countries).clone());
        let date = format_date(&mut r, d);
        rows.push(row(&mut r, date, &c, text.to_string(), "False".into()));
    }
    // Rejected rows.
    let spec = sample_entity(&mut r);
    let text = claim_text(&mut r, &spec.core);
    rows.push(row(&mut r, "sometime in spring".into(), "BR", text, "False".into()));
    rows.push(row(&mut r, "2020-05-05".into(), "", "A post about garlic remedy".into(), "False".into()));
    rows.push(row(&mut r, "2020-05-06".into(), "US", "".into(), "False".into()));

    shuffle(&mut rng.fork(7), &mut rows);
    Ok(rows)
}

fn column_map() -> ColumnMap {
    ColumnMap {
        date: "Published".into(),
        country: "Country".into(),
        claim_text: "Claim".into(),
        rating: "Verdict".into(),
        organization: Some("Fact-checker".into()),
        source_platform: Some("Platform".into()),
        article_url: Some("Link".into()),
        language: None,
        explanation: None,
        country_separator: Some(";".into()),
    }
}

fn rows_csv(rows: &[Row]) -> Result<Vec<u8>, StageError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Published", "Country", "Claim", "Verdict", "Fact-checker", "Platform", "Link"])?;
    for r in rows {
        w.write_record([&r.date, &r.country, &r.claim, &r.rating, &r.org, &r.platform, &r.url])?;
    }
    Ok(w.into_inner().map_err(|e| e.to_string())?)
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

const PIPELINE_TOML: &str = r#"[paths]
factchecks = "factchecks.csv"
column_map = "column_map.json"
scope = "scope.json"
splits = "splits.json"
entity_map = "entity_map.json"
work_dir = "work"

[cluster]
eps = 0.5
min_pts = 2

[link]
kind = "world"

[provider]
kind = "sim"
synth_config = "synth.toml"
seed = 2020

[fetch]
countries = "all"

[analysis]
min_fc_claims = 10
min_fc_countries = 10
kmax = 10
ci_level = 0.95
"#;

/// Entity a clustered record was written for, recognized by its first core word.
fn entity_of(text: &str, specs: &[EntitySpec]) -> Option<String> {
    let tokens: BTreeSet<String> = text.split(|c: char| !c.is_alphanumeric()).map(str::to_lowercase).collect();
    specs.iter().find(|s| tokens.contains(&s.core[0])).map(|s| s.entity_id.clone())
}

/// Runs the ingest and cluster stages in `scratch` and derives the splits
/// and entity map a curator would write for the resulting clusters.
fn curate(inputs: &BTreeMap<String, Vec<u8>>, specs: &[EntitySpec], scratch: &Path) -> Result<(SplitRules, EntityMap), StageError> {
    std::fs::create_dir_all(scratch)?;
    for name in ["factchecks.csv", "column_map.json", "scope.json"] {
        std::fs::write(scratch.join(name), &inputs[name])?;
    }
    let records = scratch.join("records.jsonl");
    stages::ingest(&IngestArgs {
        input: &scratch.join("factchecks.csv"),
        column_map: Some(&scratch.join("column_map.json")),
        scope: &scratch.join("scope.json"),
        out: &records,
        errors: None,
    })?;
    let by_id: HashMap<u32, String> = stages::read_records(&records)?.into_iter().map(|r| (r.id, r.claim_text)).collect();
    let run_cluster = |splits: Option<&Path>| -> Result<Vec<ClaimCluster>, StageError> {
        let out = scratch.join("clusters.json");
        stages::cluster(&ClusterArgs {
            records: &records,
            eps: 0.5,
            min_pts: 2,
            stopwords: None,
            splits,
            include_other_ratings: false,
            out: &out,
            sweep: None,
            sweep_out: None,
        })?;
        stages::read_json(&out)
    };
    let members_of = |c: &ClaimCluster| -> BTreeSet<Option<String>> {
        c.member_ids.iter().map(|id| entity_of(&by_id[id], specs)).collect()
    };

    let alcohol = specs.iter().find(|s| s.core[0] == "alcohol").ok_or("catalog lacks alcohol")?;
    let coffee = specs.iter().find(|s| s.core[0] == "coffee").ok_or("catalog lacks coffee")?;
    let merged = run_cluster(None)?
        .into_iter()
        .find(|c| members_of(c).contains(&Some(alcohol.entity_id.clone())))
        .ok_or("alcohol claims did not cluster")?;
    let group = |s: &EntitySpec| SplitGroup { label: s.core[0].clone(), keywords: [s.core[0].clone()].into() };
    let splits: SplitRules = [(merged.cluster_id.clone(), vec![group(alcohol), group(coffee)])].into();
    let splits_path = scratch.join("splits.json");
    std::fs::write(&splits_path, pretty(&splits))?;

    let mut map = EntityMap::new();
    for c in run_cluster(Some(&splits_path))? {
        let owners = members_of(&c);
        if owners.len() != 1 {
            return Err(format!("cluster {} mixes entities {owners:?}", c.cluster_id).into());
        }
        let entry = match owners.into_iter().next().flatten() {
            None => MapEntry::Unlinked,
            Some(id) => {
                let spec = specs.iter().find(|s| s.entity_id == id).expect("known entity");
                MapEntry::Linked {
                    entity: EntityRef::new(&spec.entity_id, &spec.display_name)?,
                    keywords: [spec.core[0].clone()].into(),
                    word: Some(spec.word.clone()),
                }
            }
        };
        map.insert(c.cluster_id, entry);
    }
    Ok((splits, map))
}

/// Generates every input file of the golden fixture. `scratch` receives
/// intermediate stage outputs used to derive the curated files.
pub fn golden_inputs(scratch: &Path) -> Result<GoldenInputs, StageError> {
    let cfg = synth_config();
    let world = generate_world(&cfg, GOLDEN_SEED)?;
    let specs = cfg.resolved_entities();
    let rows = build_rows(&world, &specs)?;

    let mut files = BTreeMap::new();
    files.insert("synth.toml".to_string(), toml::to_string(&cfg)?.into_bytes());
    files.insert("factchecks.csv".to_string(), rows_csv(&rows)?);
    files.insert("column_map.json".to_string(), pretty(&column_map()));
    let mut scope = ScopeConfig::new(
        NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid"),
        NaiveDate::from_ymd_opt(2020, 12, 31).expect("valid"),
    )?;
    scope.excluded_countries = DEFAULT_NOISY_COUNTRIES.iter().map(|s| s.to_string()).collect();
    files.insert("scope.json".to_string(), pretty(&scope));
    let (splits, map) = curate(&files, &specs, scratch)?;
    files.insert("splits.json".to_string(), pretty(&splits));
    files.insert("entity_map.json".to_string(), pretty(&map));
    files.insert(PIPELINE_CONFIG.to_string(), PIPELINE_TOML.as_bytes().to_vec());
    Ok(GoldenInputs { files })
}

/// Writes the fixture inputs into `dir`, runs the pipeline there and stores
/// its report as `expected_report.json`. The work directory is removed
/// afterwards.
pub fn write_golden_fixture(dir: &Path) -> Result<(), StageError> {
    std::fs::create_dir_all(dir)?;
    let scratch = dir.join(".curate");
    let inputs = golden_inputs(&scratch)?;
    std::fs::remove_dir_all(&scratch)?;
    for (name, bytes) in &inputs.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    let cfg = crate::pipeline::PipelineConfig::load(&dir.join(PIPELINE_CONFIG))?;
    let work = cfg.resolve(&cfg.paths.work_dir);
    let run = crate::pipeline::run_pipeline(&cfg, &crate::pipeline::RunOptions { force: true, only: None })?;
    let report = run.report.ok_or("pipeline produced no report")?;
    std::fs::write(dir.join(EXPECTED_REPORT), pretty(&report))?;
    std::fs::remove_dir_all(work)?;
    Ok(())
}
