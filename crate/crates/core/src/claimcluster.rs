//! Claim clustering over fact-check descriptions.
//!
//! Descriptions become boolean bag-of-words token sets; pairwise Jaccard
//! distances feed a DBSCAN pass on the precomputed matrix. Manual refinements
//! (splitting mixed clusters by keyword, pulling in keyword matches from the
//! whole dataset) operate on the resulting [`ClaimCluster`]s.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FactCheckRecord;
use crate::kglink::EntityRef;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("eps must lie in (0, 1], got {0}")]
    InvalidEps(f64),
    #[error("min_pts must be at least 1")]
    InvalidMinPts,
    #[error("eps list is empty")]
    EmptySweep,
    #[error("bad eps range `{0}` (expected start:end:step)")]
    BadRange(String),
    #[error("distance matrix: {0}")]
    BadMatrix(String),
    #[error("split rule for cluster `{0}` has no keyword groups")]
    EmptyRule(String),
    #[error("unknown cluster `{0}`")]
    UnknownCluster(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

const DEFAULT_STOPWORDS: &str = include_str!("stopwords_en.txt");

/// Case-folded stop-word list.
#[derive(Debug, Clone, Default)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    /// One word per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        StopWords(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        StopWords(words.into_iter().map(|w| w.as_ref().to_lowercase()).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

/// Lowercase alphanumeric terms of `text`, minus stop-words.
pub fn tokenize(text: &str, stopwords: &StopWords) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !stopwords.contains(t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowVector {
    pub record_id: u32,
    pub tokens: BTreeSet<String>,
}

/// Token sets for the records that can be clustered. Records with a rating
/// outside the debunk set are skipped unless `include_other` is set; records
/// whose text is all stop-words are returned separately.
pub fn bag_of_words(
    records: &[FactCheckRecord],
    stopwords: &StopWords,
    include_other: bool,
) -> (Vec<BowVector>, Vec<u32>) {
    let mut bows = Vec::new();
    let mut empty = Vec::new();
    for r in records {
        if !include_other && !r.rating.is_debunk() {
            continue;
        }
        let tokens = tokenize(&r.claim_text, stopwords);
        if tokens.is_empty() {
            empty.push(r.id);
        } else {
            bows.push(BowVector { record_id: r.id, tokens });
        }
    }
    bows.sort_by_key(|b| b.record_id);
    (bows, empty)
}

/// `1 - |a ∩ b| / |a ∪ b|`; two empty sets are at distance 0.
pub fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    1.0 - inter as f64 / union as f64
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds and validates a matrix from full rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ClusterError> {
        let n = rows.len();
        let mut d = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ClusterError::BadMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            d.extend_from_slice(row);
        }
        let m = DistanceMatrix { n, d };
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(ClusterError::BadMatrix(format!("d[{i}][{i}] is not zero")));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(ClusterError::BadMatrix(format!("d[{i}][{j}] = {v} outside [0,1]")));
                }
                if v != m.get(j, i) {
                    return Err(ClusterError::BadMatrix(format!("d[{i}][{j}] != d[{j}][{i}]")));
                }
            }
        }
        Ok(m)
    }

    /// Pairwise Jaccard distances; rows are computed in parallel.
    pub fn jaccard(bows: &[BowVector]) -> Self {
        let n = bows.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| jaccard_distance(&bows[i].tokens, &bows[j].tokens)).collect())
            .collect();
        let mut d = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + 1 + off;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// DBSCAN on a precomputed distance matrix.
///
/// A point's neighborhood is every point (itself included) at distance
/// `<= eps`; core points have at least `min_pts` neighbors. Clusters are the
/// connected components of core points, numbered by their lowest core index.
/// A border point joins the cluster of its lowest-index core neighbor.
/// Returns `None` for noise.
pub fn dbscan(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Result<Vec<Option<usize>>, ClusterError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(ClusterError::InvalidEps(eps));
    }
    if min_pts < 1 {
        return Err(ClusterError::InvalidMinPts);
    }
    let n = d.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| d.get(i, j) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(next);
        let mut queue = VecDeque::from([seed]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if core[q] && labels[q].is_none() {
                    labels[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for p in 0..n {
        if core[p] {
            continue;
        }
        labels[p] = neighbors[p].iter().find(|&&q| core[q]).and_then(|&q| labels[q]);
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub clusters: usize,
    pub noise: usize,
    pub noise_fraction: f64,
    /// cluster size -> number of clusters of that size
    pub size_histogram: BTreeMap<usize, usize>,
}

pub fn sweep_eps(d: &DistanceMatrix, eps_values: &[f64], min_pts: usize) -> Result<Vec<SweepRow>, ClusterError> {
    if eps_values.is_empty() {
        return Err(ClusterError::EmptySweep);
    }
    eps_values
        .iter()
        .map(|&eps| {
            let labels = dbscan(d, eps, min_pts)?;
            let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
            let mut noise = 0;
            for l in &labels {
                match l {
                    Some(c) => *sizes.entry(*c).or_default() += 1,
                    None => noise += 1,
                }
            }
            let mut size_histogram = BTreeMap::new();
            for size in sizes.values() {
                *size_histogram.entry(*size).or_default() += 1;
            }
            Ok(SweepRow {
                eps,
                clusters: sizes.len(),
                noise,
                noise_fraction: if labels.is_empty() { 0.0 } else { noise as f64 / labels.len() as f64 },
                size_histogram,
            })
        })
        .collect()
}

/// Parses `start:end:step` into an inclusive list, e.g. `0.3:0.7:0.05` gives 9 values.
pub fn parse_eps_range(spec: &str) -> Result<Vec<f64>, ClusterError> {
    let bad = || ClusterError::BadRange(spec.to_string());
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, end, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || end < start {
        return Err(bad());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCluster {
    pub cluster_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub member_ids: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<EntityRef>,
}

impl ClaimCluster {
    pub fn new(cluster_id: impl Into<String>, member_ids: BTreeSet<u32>) -> Self {
        ClaimCluster { cluster_id: cluster_id.into(), label: None, member_ids, entity: None }
    }
}

/// Groups DBSCAN labels into clusters with ids `c000`, `c001`, ...
pub fn clusters_from_labels(bows: &[BowVector], labels: &[Option<usize>]) -> Vec<ClaimCluster> {
    let mut members: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
    for (bow, label) in bows.iter().zip(labels) {
        if let Some(c) = label {
            members.entry(*c).or_default().insert(bow.record_id);
        }
    }
    members
        .into_iter()
        .map(|(c, ids)| ClaimCluster::new(format!("c{c:03}"), ids))
        .collect()
}

/// One keyword group of a split rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitGroup {
    pub label: String,
    pub keywords: BTreeSet<String>,
}

/// Splits file: cluster id -> ordered keyword groups.
pub type SplitRules = BTreeMap<String, Vec<SplitGroup>>;

pub fn load_split_rules(path: &Path) -> Result<SplitRules, ClusterError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Routes each member to the first group (in rule order) whose keywords it
/// contains; the rest land in a `<id>.residual` sub-cluster. Empty
/// sub-clusters are omitted.
pub fn split_cluster(
    cluster: &ClaimCluster,
    rule: &[SplitGroup],
    tokens: &HashMap<u32, BTreeSet<String>>,
) -> Result<Vec<ClaimCluster>, ClusterError> {
    if rule.is_empty() {
        return Err(ClusterError::EmptyRule(cluster.cluster_id.clone()));
    }
    let mut parts: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); rule.len()];
    let mut residual = BTreeSet::new();
    for &id in &cluster.member_ids {
        let toks = tokens.get(&id);
        let slot = toks.and_then(|t| rule.iter().position(|g| g.keywords.iter().any(|k| t.contains(k))));
        match slot {
            Some(i) => {
                parts[i].insert(id);
            }
            None => {
                residual.insert(id);
            }
        }
    }
    let mut out: Vec<ClaimCluster> = rule
        .iter()
        .zip(parts)
        .filter(|(_, m)| !m.is_empty())
        .map(|(g, m)| ClaimCluster {
            cluster_id: format!("{}.{}", cluster.cluster_id, g.label),
            label: Some(g.label.clone()),
            member_ids: m,
            entity: None,
        })
        .collect();
    if !residual.is_empty() {
        out.push(ClaimCluster {
            cluster_id: format!("{}.residual", cluster.cluster_id),
            label: cluster.label.clone(),
            member_ids: residual,
            entity: None,
        });
    }
    Ok(out)
}

/// Applies every rule in `rules` to the matching clusters, preserving order.
pub fn apply_splits(
    clusters: Vec<ClaimCluster>,
    rules: &SplitRules,
    bows: &[BowVector],
) -> Result<Vec<ClaimCluster>, ClusterError> {
    for id in rules.keys() {
        if !clusters.iter().any(|c| &c.cluster_id == id) {
            return Err(ClusterError::UnknownCluster(id.clone()));
        }
    }
    let tokens: HashMap<u32, BTreeSet<String>> =
        bows.iter().map(|b| (b.record_id, b.tokens.clone())).collect();
    let mut out = Vec::new();
    for c in clusters {
        match rules.get(&c.cluster_id) {
            Some(rule) => out.extend(split_cluster(&c, rule, &tokens)?),
            None => out.push(c),
        }
    }
    Ok(out)
}

/// Adds to `clusters[target]` every record whose tokens intersect `keywords`,
/// unless the record already belongs to another entity-bound cluster. Records
/// pulled out of unbound clusters are removed there, so membership stays
/// disjoint. Returns how many records were added; a second call with the
/// same inputs adds nothing.
pub fn expand_cluster_by_keyword(
    clusters: &mut [ClaimCluster],
    target: usize,
    bows: &[BowVector],
    keywords: &BTreeSet<String>,
) -> usize {
    let bound_elsewhere: HashSet<u32> = clusters
        .iter()
        .enumerate()
        .filter(|(i, c)| *i != target && c.entity.is_some())
        .flat_map(|(_, c)| c.member_ids.iter().copied())
        .collect();
    let matches: Vec<u32> = bows
        .iter()
        .filter(|b| b.tokens.iter().any(|t| keywords.contains(t)))
        .map(|b| b.record_id)
        .filter(|id| !bound_elsewhere.contains(id) && !clusters[target].member_ids.contains(id))
        .collect();
    for (i, c) in clusters.iter_mut().enumerate() {
        if i != target {
            for id in &matches {
                c.member_ids.remove(id);
            }
        }
    }
    clusters[target].member_ids.extend(matches.iter().copied());
    matches.len()
}
