//! Property checks shared by the `invariants` target (one test each) and the
//! acceptance run (all of them). Each returns a description of the first
//! counterexample on failure.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use fcattention::analysis::{
    ancova, build_report, mean_ci, most_fc_vs_most_attention_ratio, spearman, summarize, topk_group_log_ratio,
    AnalysisParams, Ranked,
};
use fcattention::attention::{
    attention_curve, profile_from_series, relative_attention_at, AttentionProfile, AttentionYears,
};
use fcattention::claimcluster::{
    apply_splits, dbscan, expand_cluster_by_keyword, jaccard_distance, BowVector, ClaimCluster, DistanceMatrix,
    SplitGroup, SplitRules,
};
use fcattention::ingest::{
    classify_country, filter_scope, iso_countries, parse_factchecks, write_factchecks_csv, ColumnMap, DropReason,
    FactCheckRecord, Rating, ScopeConfig,
};
use fcattention::kglink::{apply_entity_map, EntityMap, EntityRef, KgError, MapEntry};
use fcattention::pipeline::stages::{self, AttentionArgs, CountrySelection, FetchArgs, TrendsSource};
use fcattention::pipeline::PipelineConfig;
use fcattention::synthprov::{generate_world, SimulatedTrendsProvider, SplitMix64, SynthConfig};
use fcattention::trendscal::{CalibratedSeries, ErrorBound, Period, TrendsProvider, Week};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use super::calib::calibration_recovery;
use super::oracles::{brute_dbscan, partition};

pub type Check = fn() -> Result<(), String>;

/// Every invariant, by name.
pub const ALL: &[(&str, Check)] = &[
    ("ingest_csv_round_trip", ingest_csv_round_trip),
    ("ingest_scope_partitions_input", ingest_scope_partitions_input),
    ("dbscan_matches_oracle", dbscan_matches_oracle),
    ("dbscan_permutation_invariant", dbscan_permutation_invariant),
    ("jaccard_is_a_metric", jaccard_is_a_metric),
    ("splits_preserve_disjointness", splits_preserve_disjointness),
    ("keyword_expansion_preserves_disjointness", keyword_expansion_preserves_disjointness),
    ("entity_map_keeps_membership", entity_map_keeps_membership),
    ("entity_map_rejects_duplicates", entity_map_rejects_duplicates),
    ("calibration_bounds_and_scale_freedom", calibration_bounds_and_scale_freedom),
    ("attention_curves_monotone", attention_curves_monotone),
    ("relative_attention_ends_at_one", relative_attention_ends_at_one),
    ("attention_zero_below_baseline", attention_zero_below_baseline),
    ("attention_unit_coherent", attention_unit_coherent),
    ("log_ratio_antisymmetric", log_ratio_antisymmetric),
    ("most_fc_ratio_non_positive", most_fc_ratio_non_positive),
    ("spearman_monotone_invariant", spearman_monotone_invariant),
    ("ancova_affine_invariant", ancova_affine_invariant),
    ("summaries_permutation_invariant", summaries_permutation_invariant),
    ("report_reproducible", report_reproducible),
    ("simulated_pipeline_totals_within_bounds", simulated_pipeline_totals_within_bounds),
    ("scaled_world_responses_identical", scaled_world_responses_identical),
    ("config_hash_tracks_content", config_hash_tracks_content),
];

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- ingest ----

fn field() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.;:'\"!?\n-]{1,30}"
        .prop_map(|s| s.trim().to_string())
        .prop_filter("non-empty after trim", |s| !s.is_empty())
}

fn country() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => prop::sample::select(iso_countries()).prop_map(str::to_string),
        1 => prop::sample::select(&["Global", "Europe", "Latin America", "Worldwide"][..]).prop_map(str::to_string),
    ]
}

fn rating() -> impl Strategy<Value = Rating> {
    prop::sample::select(&[Rating::False, Rating::Misleading, Rating::PartlyFalse, Rating::NoEvidence, Rating::Other][..])
}

fn record() -> impl Strategy<Value = FactCheckRecord> {
    (
        0i64..1100,
        country(),
        prop::option::of(field()),
        field(),
        prop::option::of(field()),
        prop::option::of(field()),
        prop::option::of(field()),
        rating(),
        prop::option::of(field()),
    )
        .prop_map(|(day, country, org, claim, platform, url, lang, rating, expl)| {
            let (country_code, region) = classify_country(&country);
            FactCheckRecord {
                id: 0,
                date: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + chrono::Duration::days(day),
                country_code,
                region,
                organization: org.unwrap_or_default(),
                claim_text: claim,
                source_platform: platform,
                article_url: url,
                language: lang,
                rating,
                explanation: expl,
            }
        })
}

fn records() -> impl Strategy<Value = Vec<FactCheckRecord>> {
    prop::collection::vec(record(), 0..25).prop_map(|mut v| {
        for (i, r) in v.iter_mut().enumerate() {
            r.id = i as u32;
        }
        v
    })
}

fn reparse(records: &[FactCheckRecord]) -> Result<Vec<FactCheckRecord>, TestCaseError> {
    let mut buf = Vec::new();
    write_factchecks_csv(records, &mut buf).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let out = parse_factchecks(buf.as_slice(), &ColumnMap::canonical()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(out.errors.is_empty(), "row errors: {:?}", out.errors);
    Ok(out.records)
}

pub fn ingest_csv_round_trip() -> Result<(), String> {
    run(256, records(), |recs| {
        prop_assert_eq!(&reparse(&recs)?, &recs);
        Ok(())
    })
}

fn scope() -> impl Strategy<Value = ScopeConfig> {
    (0i64..900, 1i64..400, prop::collection::vec(prop::sample::select(iso_countries()), 0..40)).prop_map(
        |(start, len, excluded)| {
            let s = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + chrono::Duration::days(start);
            let mut scope = ScopeConfig::new(s, s + chrono::Duration::days(len)).unwrap();
            scope.excluded_countries = excluded.into_iter().map(str::to_string).collect();
            scope
        },
    )
}

pub fn ingest_scope_partitions_input() -> Result<(), String> {
    run(256, (records(), scope()), |(recs, scope)| {
        let (kept, dropped) = filter_scope(recs.clone(), &scope);
        let mut all: Vec<FactCheckRecord> = kept.iter().cloned().chain(dropped.iter().map(|d| d.record.clone())).collect();
        all.sort_by_key(|r| r.id);
        prop_assert_eq!(&all, &recs);
        let inside = |r: &FactCheckRecord| r.date >= scope.window_start && r.date <= scope.window_end;
        let excluded = |r: &FactCheckRecord| scope.excluded_countries.contains(&r.country_code);
        for r in &kept {
            prop_assert!(inside(r) && !r.region && !excluded(r), "kept out-of-scope record {r:?}");
        }
        for d in &dropped {
            let r = &d.record;
            let ok = match d.reason {
                DropReason::OutsideWindow => !inside(r),
                DropReason::Region => inside(r) && r.region,
                DropReason::ExcludedCountry => inside(r) && !r.region && excluded(r),
            };
            prop_assert!(ok, "wrong reason {:?} for {r:?}", d.reason);
        }
        // Kept records survive a second write and parse unchanged apart from ids.
        let again = reparse(&kept)?;
        prop_assert_eq!(again.len(), kept.len());
        for (a, k) in again.iter().zip(&kept) {
            prop_assert_eq!(&FactCheckRecord { id: k.id, ..a.clone() }, k);
        }
        Ok(())
    })
}

// ---- claimcluster ----

/// Symmetric matrices on a coarse grid, so many distances tie with eps.
fn matrix(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0u8..=10, n * (n - 1) / 2).prop_map(move |upper| {
            let mut d = vec![vec![0.0; n]; n];
            let mut it = upper.into_iter();
            for i in 0..n {
                for j in i + 1..n {
                    let v = it.next().unwrap() as f64 / 10.0;
                    d[i][j] = v;
                    d[j][i] = v;
                }
            }
            d
        })
    })
}

fn eps() -> impl Strategy<Value = f64> {
    prop::sample::select(&[0.1, 0.2, 0.3, 0.5, 0.7, 1.0][..])
}

pub fn dbscan_matches_oracle() -> Result<(), String> {
    run(300, (matrix(50), eps(), 1usize..6), |(d, eps, min_pts)| {
        let labels = dbscan(&DistanceMatrix::from_rows(d.clone()).unwrap(), eps, min_pts).unwrap();
        prop_assert_eq!(partition(&labels), brute_dbscan(&d, eps, min_pts));
        Ok(())
    })
}

pub fn dbscan_permutation_invariant() -> Result<(), String> {
    let case = matrix(30).prop_flat_map(|d| {
        let n = d.len();
        (Just(d), Just((0..n).collect::<Vec<usize>>()).prop_shuffle(), eps(), 1usize..6)
    });
    run(300, case, |(d, perm, eps, min_pts)| {
        let n = d.len();
        let permuted: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| d[perm[i]][perm[j]]).collect()).collect();
        let orig = dbscan(&DistanceMatrix::from_rows(d.clone()).unwrap(), eps, min_pts).unwrap();
        let got = dbscan(&DistanceMatrix::from_rows(permuted).unwrap(), eps, min_pts).unwrap();
        let mut back = vec![None; n];
        for i in 0..n {
            back[perm[i]] = got[i];
        }
        let near = |i: usize, j: usize| d[i][j] <= eps;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
        let core_only = |l: &[Option<usize>]| -> Vec<Option<usize>> {
            l.iter().enumerate().map(|(i, x)| if core[i] { *x } else { None }).collect()
        };
        let (p_orig, noise_orig) = partition(&orig);
        let (p_back, noise_back) = partition(&back);
        prop_assert_eq!(&noise_orig, &noise_back);
        prop_assert_eq!(partition(&core_only(&orig)).0, partition(&core_only(&back)).0);
        let mut ambiguous = false;
        for b in (0..n).filter(|&b| !core[b] && back[b].is_some()) {
            let clusters: BTreeSet<usize> =
                (0..n).filter(|&q| core[q] && near(b, q)).filter_map(|q| orig[q]).collect();
            ambiguous |= clusters.len() > 1;
            prop_assert!(
                (0..n).any(|q| core[q] && near(b, q) && back[q] == back[b]),
                "border point {b} not attached to a core neighbor"
            );
        }
        if !ambiguous {
            prop_assert_eq!(p_orig, p_back);
        }
        Ok(())
    })
}

fn token_set(vocab: usize) -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set((0..vocab).prop_map(|i| format!("w{i}")), 0..=vocab)
}

pub fn jaccard_is_a_metric() -> Result<(), String> {
    run(1000, (token_set(6), token_set(6), token_set(6)), |(a, b, c)| {
        let (ab, bc, ac) = (jaccard_distance(&a, &b), jaccard_distance(&b, &c), jaccard_distance(&a, &c));
        prop_assert_eq!(ab, jaccard_distance(&b, &a));
        prop_assert_eq!(jaccard_distance(&a, &a), 0.0);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(ac <= ab + bc + 1e-12, "triangle: d(a,c)={ac} > {ab} + {bc}");
        Ok(())
    })
}

/// Records `0..n` with non-empty token sets, and a disjoint assignment of
/// some of them to `k` clusters.
fn clustered(n: usize, k: usize) -> impl Strategy<Value = (Vec<BowVector>, Vec<ClaimCluster>)> {
    (
        prop::collection::vec(token_set(8).prop_filter("non-empty", |t| !t.is_empty()), n),
        prop::collection::vec(prop::option::of(0..k), n),
    )
        .prop_map(move |(tokens, owner)| {
            let bows: Vec<BowVector> =
                tokens.into_iter().enumerate().map(|(i, t)| BowVector { record_id: i as u32, tokens: t }).collect();
            let mut members = vec![BTreeSet::new(); k];
            for (i, o) in owner.iter().enumerate() {
                if let Some(c) = o {
                    members[*c].insert(i as u32);
                }
            }
            let clusters = members.into_iter().enumerate().map(|(c, m)| ClaimCluster::new(format!("c{c:03}"), m)).collect();
            (bows, clusters)
        })
}

fn pairwise_disjoint(clusters: &[ClaimCluster]) -> bool {
    let mut seen = BTreeSet::new();
    clusters.iter().flat_map(|c| c.member_ids.iter()).all(|id| seen.insert(*id))
}

fn union(clusters: &[ClaimCluster]) -> BTreeSet<u32> {
    clusters.iter().flat_map(|c| c.member_ids.iter().copied()).collect()
}

pub fn splits_preserve_disjointness() -> Result<(), String> {
    let group = (token_set(8).prop_filter("non-empty", |t| !t.is_empty()), "[a-z]{1,6}")
        .prop_map(|(keywords, label)| SplitGroup { label, keywords });
    let case = (clustered(30, 5), prop::collection::btree_map(0usize..5, prop::collection::vec(group, 1..4), 0..4));
    run(300, case, |((bows, clusters), rules)| {
        let rules: SplitRules = rules.into_iter().map(|(c, g)| (format!("c{c:03}"), g)).collect();
        let out = apply_splits(clusters.clone(), &rules, &bows).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(pairwise_disjoint(&out));
        prop_assert_eq!(union(&out), union(&clusters));
        for c in &clusters {
            let children: BTreeSet<u32> = out
                .iter()
                .filter(|o| o.cluster_id == c.cluster_id || o.cluster_id.starts_with(&format!("{}.", c.cluster_id)))
                .flat_map(|o| o.member_ids.iter().copied())
                .collect();
            prop_assert_eq!(&children, &c.member_ids);
        }
        Ok(())
    })
}

pub fn keyword_expansion_preserves_disjointness() -> Result<(), String> {
    let case = (clustered(30, 5), prop::collection::vec(any::<bool>(), 5), 0usize..5, token_set(8));
    run(300, case, |((bows, mut clusters), bound, target, keywords)| {
        for (i, c) in clusters.iter_mut().enumerate() {
            if bound[i] || i == target {
                c.entity = Some(EntityRef::new(format!("/m/e{i}"), format!("E{i}")).unwrap());
            }
        }
        let before = clusters.clone();
        let added = expand_cluster_by_keyword(&mut clusters, target, &bows, &keywords);
        prop_assert!(pairwise_disjoint(&clusters));
        prop_assert_eq!(clusters[target].member_ids.len(), before[target].member_ids.len() + added);
        prop_assert!(before[target].member_ids.is_subset(&clusters[target].member_ids));
        for (i, (b, a)) in before.iter().zip(&clusters).enumerate() {
            if i != target && b.entity.is_some() {
                prop_assert_eq!(&a.member_ids, &b.member_ids);
            }
        }
        let again = expand_cluster_by_keyword(&mut clusters, target, &bows, &keywords);
        prop_assert_eq!(again, 0);
        Ok(())
    })
}

// ---- kglink ----

fn mapping(clusters: &[ClaimCluster], linked: &[bool]) -> EntityMap {
    clusters
        .iter()
        .zip(linked)
        .enumerate()
        .map(|(i, (c, &l))| {
            let entry = if l {
                MapEntry::Linked {
                    entity: EntityRef::new(format!("/g/ent_{i}"), format!("Entity {i}")).unwrap(),
                    keywords: BTreeSet::new(),
                    word: None,
                }
            } else {
                MapEntry::Unlinked
            };
            (c.cluster_id.clone(), entry)
        })
        .collect()
}

pub fn entity_map_keeps_membership() -> Result<(), String> {
    run(300, (clustered(30, 8), prop::collection::vec(any::<bool>(), 8)), |((_, clusters), linked)| {
        let map = mapping(&clusters, &linked);
        let out = apply_entity_map(clusters.clone(), &map).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(out.len(), clusters.len());
        for ((o, c), l) in out.iter().zip(&clusters).zip(&linked) {
            prop_assert_eq!(&o.cluster_id, &c.cluster_id);
            prop_assert_eq!(&o.member_ids, &c.member_ids);
            prop_assert_eq!(o.entity.is_some(), *l);
        }
        Ok(())
    })
}

pub fn entity_map_rejects_duplicates() -> Result<(), String> {
    let case = (clustered(20, 6), 0usize..6, 0usize..6).prop_filter("distinct clusters", |(_, a, b)| a != b);
    run(300, case, |((_, clusters), a, b)| {
        let mut map = mapping(&clusters, &[true; 6]);
        let dup = map[&clusters[a].cluster_id].clone();
        map.insert(clusters[b].cluster_id.clone(), dup);
        match apply_entity_map(clusters, &map) {
            Err(KgError::DuplicateEntity { entity, .. }) => {
                prop_assert_eq!(entity, format!("/g/ent_{a}"));
                Ok(())
            }
            other => Err(TestCaseError::fail(format!("expected DuplicateEntity, got {other:?}"))),
        }
    })
}

// ---- trendscal ----

/// Over 1000 worlds: every week's truth lies within its value bounds, every
/// ground-truth total within its profile's bounds, tight pairs carry at most
/// a 5% bound, scaling a world changes nothing, and every simulated response
/// honors the group contract.
pub fn calibration_bounds_and_scale_freedom() -> Result<(), String> {
    let r = calibration_recovery(1000);
    ensure(r.worlds == 1000 && r.pairs > 0, || format!("nothing calibrated: {}", r.summary()))?;
    ensure(r.week_violations == 0 && r.total_violations == 0, || format!("truth outside bounds: {}", r.summary()))?;
    ensure(r.tight_pairs > 0 && r.worst_tight_bound <= 0.05, || format!("tight bound too wide: {}", r.summary()))?;
    ensure(r.scale_mismatches == 0, || format!("scaled worlds calibrate differently: {}", r.summary()))?;
    ensure(r.responses > 0 && r.invalid_responses == 0, || format!("invalid simulated responses: {}", r.summary()))
}

// ---- attention ----

fn profile(entity: &str, country: &str, curve: Vec<f64>, dates: Vec<NaiveDate>) -> AttentionProfile {
    let total = curve.last().copied().unwrap_or(0.0);
    AttentionProfile {
        entity: EntityRef::new(entity, entity.trim_start_matches("/m/")).unwrap(),
        country: country.to_string(),
        cluster_id: "c".into(),
        b: 0.0,
        r: 1.0,
        first_week: Week::new(2020, 1).unwrap(),
        curve,
        total,
        total_bounds: (total, total),
        factcheck_dates: dates,
    }
}

fn series_b_r() -> impl Strategy<Value = (Vec<f64>, f64, f64)> {
    (prop::collection::vec(0.0f64..100.0, 53), 0.0f64..60.0, 0.5f64..100.0)
}

pub fn attention_curves_monotone() -> Result<(), String> {
    run(500, series_b_r(), |(s, b, r)| {
        let c = attention_curve(&s, b, r).unwrap();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]), "curve decreases");
        prop_assert!(c[0] >= 0.0);
        let p = profile("/m/x", "US", c, Vec::new());
        if p.total > 0.0 {
            let mut prev = 0.0;
            let mut day = NaiveDate::from_ymd_opt(2019, 12, 20).unwrap();
            while day <= NaiveDate::from_ymd_opt(2021, 1, 15).unwrap() {
                let v = relative_attention_at(&p, day).unwrap();
                prop_assert!((0.0..=1.0).contains(&v) && v >= prev, "relative attention {v} after {prev} on {day}");
                prev = v;
                day += chrono::Duration::days(1);
            }
        }
        Ok(())
    })
}

pub fn relative_attention_ends_at_one() -> Result<(), String> {
    run(500, series_b_r(), |(s, b, r)| {
        let p = profile("/m/x", "US", attention_curve(&s, b, r).unwrap(), Vec::new());
        if p.total > 0.0 {
            let last = Week::new(2020, 53).unwrap();
            let mut day = last.monday();
            while day <= last.sunday() {
                prop_assert_eq!(relative_attention_at(&p, day).unwrap(), 1.0);
                day += chrono::Duration::days(1);
            }
        }
        Ok(())
    })
}

pub fn attention_zero_below_baseline() -> Result<(), String> {
    run(500, (prop::collection::vec(0.0f64..=1.0, 1..60), 0.0f64..100.0, 0.5f64..100.0), |(frac, b, r)| {
        let s: Vec<f64> = frac.iter().map(|f| f * b).collect();
        let c = attention_curve(&s, b, r).unwrap();
        prop_assert!(c.iter().all(|v| *v == 0.0));
        Ok(())
    })
}

fn calibrated(entity: &str, values: Vec<f64>, quantum: f64) -> CalibratedSeries {
    let period = Period::study();
    CalibratedSeries {
        entity_id: entity.into(),
        country: "US".into(),
        period,
        weeks: period.weeks(),
        values,
        error_bound: ErrorBound::EXACT,
        quantum,
        anchor: "/m/anchor".into(),
        chain_len: 1,
        min_co_value: 100,
    }
}

/// Profiles depend only on the ratio of entity to reference volume: scaling
/// both series and their quantum by the same factor leaves them unchanged,
/// exactly for powers of two.
pub fn attention_unit_coherent() -> Result<(), String> {
    let n = Period::study().len();
    let case = (
        prop::collection::vec(0.0f64..100.0, n),
        prop::collection::vec(1.0f64..100.0, n),
        0.01f64..2.0,
        prop::sample::select(&[0.25, 2.0, 1024.0, 3.0, 0.1, 7.5e4][..]),
    );
    let years = AttentionYears::default();
    let entity = EntityRef::new("/m/x", "x").unwrap();
    run(300, case, |(e, rf, q, c)| {
        let base = |ev: Vec<f64>, rv: Vec<f64>, q: f64| {
            profile_from_series(&entity, "c", &calibrated("/m/x", ev, q), &calibrated("/m/r", rv, q), &years, Vec::new())
                .unwrap()
                .unwrap()
        };
        let p = base(e.clone(), rf.clone(), q);
        let s = base(e.iter().map(|v| v * c).collect(), rf.iter().map(|v| v * c).collect(), q * c);
        if (c as f64).log2().fract() == 0.0 {
            prop_assert_eq!(&p.curve, &s.curve);
            prop_assert_eq!(p.total, s.total);
            prop_assert_eq!(p.total_bounds, s.total_bounds);
            prop_assert_eq!(p.b * c, s.b);
            prop_assert_eq!(p.r * c, s.r);
        } else {
            let scale = e.iter().sum::<f64>() / p.r;
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * scale.max(a.abs());
            prop_assert!(p.curve.iter().zip(&s.curve).all(|(a, b)| close(*a, *b)), "curves differ at scale {c}");
            prop_assert!(close(p.total_bounds.0, s.total_bounds.0) && close(p.total_bounds.1, s.total_bounds.1));
            prop_assert!((p.b * c - s.b).abs() <= 1e-12 * s.b.abs().max(1.0));
        }
        Ok(())
    })
}

// ---- analysis ----

fn ranked_group(prefix: &'static str) -> impl Strategy<Value = Vec<(String, f64)>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0f64..1e3], 0..15).prop_map(move |t| {
        t.into_iter().enumerate().map(|(i, x)| (format!("{prefix}{i}"), x)).collect()
    })
}

fn ranked(g: &[(String, f64)]) -> Vec<Ranked<'_>> {
    g.iter().map(|(id, t)| Ranked { entity_id: id, total: *t, fc_count: 0 }).collect()
}

pub fn log_ratio_antisymmetric() -> Result<(), String> {
    run(1000, (ranked_group("a"), ranked_group("b"), 1usize..6), |(a, b, k)| {
        let (ra, rb) = (ranked(&a), ranked(&b));
        if let (Ok(x), Ok(y)) = (topk_group_log_ratio(&ra, &rb, k), topk_group_log_ratio(&rb, &ra, k)) {
            prop_assert_eq!(x, -y);
        }
        Ok(())
    })
}

fn country_profiles() -> impl Strategy<Value = Vec<AttentionProfile>> {
    prop::collection::vec((0.0f64..50.0, 0usize..8), 1..25).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (t, fc))| {
                let d = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
                profile(&format!("/m/e{i}"), "US", vec![t / 2.0, t], vec![d; fc])
            })
            .collect()
    })
}

pub fn most_fc_ratio_non_positive() -> Result<(), String> {
    run(1000, (country_profiles(), 1usize..6), |(ps, k)| {
        if let Ok(v) = most_fc_vs_most_attention_ratio(&ps, k) {
            prop_assert!(v <= 0.0, "ratio {v} > 0");
        }
        Ok(())
    })
}

pub fn spearman_monotone_invariant() -> Result<(), String> {
    let grid = || prop::collection::vec((-32i32..=32).prop_map(|q| q as f64 / 4.0), 3..40);
    let case = grid().prop_flat_map(|x| {
        let n = x.len();
        (Just(x), prop::collection::vec((-32i32..=32).prop_map(|q| q as f64 / 4.0), n))
    });
    let transforms: [fn(f64) -> f64; 4] = [f64::exp, |v| v * v * v, f64::atan, |v| 3.0 * v - 7.0];
    run(500, case, |(x, y)| {
        let Ok(base) = spearman(&x, &y) else { return Ok(()) };
        for f in transforms {
            let fx: Vec<f64> = x.iter().map(|v| f(*v)).collect();
            let fy: Vec<f64> = y.iter().map(|v| f(*v)).collect();
            prop_assert_eq!(spearman(&fx, &y).unwrap().rho.to_bits(), base.rho.to_bits());
            prop_assert_eq!(spearman(&x, &fy).unwrap().rho.to_bits(), base.rho.to_bits());
        }
        Ok(())
    })
}

fn ancova_design() -> impl Strategy<Value = (Vec<f64>, Vec<String>, Vec<Vec<f64>>)> {
    (2usize..5, 1usize..3).prop_flat_map(|(g, p)| {
        let per_group = 3usize..8;
        prop::collection::vec(per_group, g).prop_flat_map(move |sizes| {
            let n: usize = sizes.iter().sum();
            let labels: Vec<String> =
                sizes.iter().enumerate().flat_map(|(i, s)| std::iter::repeat(format!("g{i}")).take(*s)).collect();
            (
                prop::collection::vec(-10.0f64..10.0, n),
                Just(labels),
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, n), p),
            )
        })
    })
}

pub fn ancova_affine_invariant() -> Result<(), String> {
    let case = (ancova_design(), 0.1f64..10.0, -50.0f64..50.0, any::<bool>(), -100.0f64..100.0);
    run(300, case, |((y, groups, x), a, b, flip, shift)| {
        let Ok(base) = ancova(&y, &groups, &x) else { return Ok(()) };
        if base.saturated || !base.f.is_finite() {
            return Ok(());
        }
        let a = if flip { -a } else { a };
        let x2: Vec<Vec<f64>> = x.iter().map(|c| c.iter().map(|v| a * v + b).collect()).collect();
        let y2: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let t = ancova(&y2, &groups, &x2).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!((t.f - base.f).abs() <= 1e-9 * base.f.abs().max(1.0), "F {} vs {}", t.f, base.f);
        prop_assert!((t.p_value - base.p_value).abs() <= 1e-9, "p {} vs {}", t.p_value, base.p_value);
        Ok(())
    })
}

pub fn summaries_permutation_invariant() -> Result<(), String> {
    let case = prop::collection::vec(-1e3f64..1e3, 2..60).prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()));
    run(500, case, |(v, w)| {
        prop_assert_eq!(summarize(&v).unwrap(), summarize(&w).unwrap());
        prop_assert_eq!(mean_ci(&v, 0.95).unwrap(), mean_ci(&w, 0.95).unwrap());
        Ok(())
    })
}

/// Random multi-country profile sets with fact-check dates through 2020.
fn profile_set() -> impl Strategy<Value = Vec<AttentionProfile>> {
    let one = (0usize..4, 0usize..12, prop::collection::vec(0.0f64..5.0, 53), prop::collection::vec(0i64..366, 0..5));
    prop::collection::vec(one, 1..80).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (c, e, inc, days))| {
                let mut acc = 0.0;
                let curve = inc.iter().map(|v| {
                    acc += v;
                    acc
                });
                let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
                let mut dates: Vec<NaiveDate> = days.iter().map(|d| start + chrono::Duration::days(*d)).collect();
                dates.sort();
                let mut p = profile(&format!("/m/e{e}"), ["US", "BR", "IN", "FR"][c], curve.collect(), dates);
                p.cluster_id = format!("c{i:03}");
                p
            })
            .collect::<Vec<_>>()
    })
    .prop_map(|mut v| {
        // One profile per (entity, country).
        let mut seen = BTreeSet::new();
        v.retain(|p| seen.insert((p.entity.entity_id.clone(), p.country.clone())));
        v
    })
}

pub fn report_reproducible() -> Result<(), String> {
    let params = AnalysisParams { min_fc_claims: 2, min_fc_countries: 2, kmax: 3, ..AnalysisParams::default() };
    run(60, profile_set(), |ps| {
        let a = super::without_timestamp(serde_json::to_value(build_report(&ps, &params)).unwrap());
        let b = super::without_timestamp(serde_json::to_value(build_report(&ps, &params)).unwrap());
        prop_assert_eq!(a, b);
        Ok(())
    })
}

// ---- synthprov ----

/// Fetch and attention stages over small simulated worlds: every profile's
/// bounds contain the world's ground-truth total.
pub fn simulated_pipeline_totals_within_bounds() -> Result<(), String> {
    for seed in 0..12u64 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let p = |n: &str| dir.path().join(n);
        let cfg = SynthConfig { n_countries: 3, n_entities: 6, ..SynthConfig::default() };
        let world = generate_world(&cfg, 1000 + seed).map_err(|e| e.to_string())?;
        world.save(&p("world.json")).map_err(|e| e.to_string())?;
        let linked: Vec<ClaimCluster> = world
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| ClaimCluster { entity: Some(e.clone()), ..ClaimCluster::new(format!("c{i:03}"), BTreeSet::from([i as u32])) })
            .collect();
        stages::write_json(&p("linked.json"), &linked).map_err(|e| e.to_string())?;
        std::fs::write(p("records.jsonl"), "").map_err(|e| e.to_string())?;
        let reference = world.reference.entity_id.clone();
        stages::fetch(&FetchArgs {
            linked: &p("linked.json"),
            countries: &CountrySelection::Keyword("all".into()),
            source: &TrendsSource::Sim { world: p("world.json") },
            cache: &p("cache"),
            reference_entity: &reference,
            anchors: None,
            records: None,
            lo_band: 10,
            repair_cache: false,
            summary_out: None,
        })
        .map_err(|e| e.to_string())?;
        stages::attention(&AttentionArgs {
            cache: &p("cache"),
            linked: &p("linked.json"),
            records: &p("records.jsonl"),
            reference_entity: &reference,
            out: &p("profiles.json"),
            skipped_out: None,
        })
        .map_err(|e| e.to_string())?;
        let profiles: Vec<AttentionProfile> = stages::read_json(&p("profiles.json")).map_err(|e| e.to_string())?;
        ensure(!profiles.is_empty(), || format!("seed {seed}: no profiles"))?;
        for pr in &profiles {
            let gt = world.ground_truth_total(&pr.entity.entity_id, &pr.country).expect("pair in world");
            let (lo, hi) = pr.total_bounds;
            ensure(gt >= lo * (1.0 - 1e-12) && gt <= hi * (1.0 + 1e-12), || {
                format!("seed {seed} {} {}: truth {gt} outside [{lo}, {hi}]", pr.entity.entity_id, pr.country)
            })?;
        }
    }
    Ok(())
}

/// The simulator reports only group-normalized integers, so multiplying every
/// true volume by a constant yields identical responses.
pub fn scaled_world_responses_identical() -> Result<(), String> {
    let cfg = SynthConfig { n_countries: 4, n_entities: 10, ..SynthConfig::default() };
    for seed in 0..20u64 {
        let world = generate_world(&cfg, seed).map_err(|e| e.to_string())?;
        let mut rng = SplitMix64::new(seed);
        let factor = 10f64.powf(rng.uniform(-4.0, 4.0));
        let (a, b) = (SimulatedTrendsProvider::new(world.clone()), SimulatedTrendsProvider::new(world.scaled(factor)));
        let pool: Vec<String> = world
            .anchor_candidates()
            .into_iter()
            .chain(world.entities.iter().map(|e| e.entity_id.clone()))
            .collect();
        for _ in 0..30 {
            let size = 1 + rng.below(5) as usize;
            let queries: Vec<String> = rng.sample_indices(pool.len(), size).into_iter().map(|i| pool[i].clone()).collect();
            let country = &world.countries[rng.below(world.countries.len() as u64) as usize];
            let (ra, rb) = (a.fetch_group(&queries, country, &world.period), b.fetch_group(&queries, country, &world.period));
            ensure(format!("{ra:?}") == format!("{rb:?}"), || {
                format!("seed {seed} factor {factor}: responses differ for {queries:?} in {country}")
            })?;
        }
    }
    Ok(())
}

// ---- pipeline ----

/// The run hash changes when a config field or an input's content changes,
/// and not when a file is merely touched or the tree is moved.
pub fn config_hash_tracks_content() -> Result<(), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    super::copy_golden(&a);
    super::copy_golden(&b);
    let load = |dir: &Path| PipelineConfig::load(&dir.join("pipeline.toml")).map_err(|e| e.to_string());
    let h0 = load(&a)?.hash().map_err(|e| e.to_string())?;
    ensure(load(&b)?.hash().map_err(|e| e.to_string())? == h0, || "hash depends on location".into())?;

    let scope = a.join("scope.json");
    let later = std::time::SystemTime::now() + std::time::Duration::from_secs(3600);
    std::fs::File::options().write(true).open(&scope).and_then(|f| f.set_modified(later)).map_err(|e| e.to_string())?;
    ensure(load(&a)?.hash().map_err(|e| e.to_string())? == h0, || "touch changed the hash".into())?;

    let original = std::fs::read(&scope).map_err(|e| e.to_string())?;
    let mut edited = original.clone();
    edited.push(b' ');
    std::fs::write(&scope, &edited).map_err(|e| e.to_string())?;
    ensure(load(&a)?.hash().map_err(|e| e.to_string())? != h0, || "content edit kept the hash".into())?;
    std::fs::write(&scope, &original).map_err(|e| e.to_string())?;
    ensure(load(&a)?.hash().map_err(|e| e.to_string())? == h0, || "restoring content did not restore the hash".into())?;

    let mut cfg = load(&a)?;
    let edits: Vec<(&str, Box<dyn Fn(&mut PipelineConfig)>)> = vec![
        ("cluster.eps", Box::new(|c| c.cluster.eps = 0.45)),
        ("cluster.min_pts", Box::new(|c| c.cluster.min_pts = 3)),
        ("fetch.lo_band", Box::new(|c| c.fetch.lo_band = 12)),
        ("analysis.kmax", Box::new(|c| c.analysis.kmax = 9)),
        ("analysis.ci_level", Box::new(|c| c.analysis.ci_level = 0.9)),
    ];
    for (name, edit) in edits {
        let saved = cfg.clone();
        edit(&mut cfg);
        ensure(cfg.hash().map_err(|e| e.to_string())? != h0, || format!("editing {name} kept the hash"))?;
        cfg = saved;
    }
    Ok(())
}
