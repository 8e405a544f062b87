//! Fact-check metadata ingestion: tabular parsing, validation and scope filtering.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("column map: {0}")]
    Config(String),
    #[error("column `{0}` named in the column map is missing from the header")]
    MissingColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json (line {line}): {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Final verdict attached to a fact-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    False,
    Misleading,
    PartlyFalse,
    NoEvidence,
    Other,
}

impl Rating {
    /// Lenient mapping of free-form rating labels. Unknown labels become `Other`.
    pub fn parse(label: &str) -> Rating {
        let norm: String = label
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        match norm.as_str() {
            "false" | "fake" | "pants on fire" => Rating::False,
            "misleading" => Rating::Misleading,
            "partly false" | "partially false" | "mostly false" | "half true" => {
                Rating::PartlyFalse
            }
            "no evidence" | "unproven" | "unverified" => Rating::NoEvidence,
            _ => Rating::Other,
        }
    }

    /// Ratings eligible for claim clustering.
    pub fn is_debunk(self) -> bool {
        !matches!(self, Rating::Other)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rating::False => "false",
            Rating::Misleading => "misleading",
            Rating::PartlyFalse => "partly_false",
            Rating::NoEvidence => "no_evidence",
            Rating::Other => "other",
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One fact-checking effort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheckRecord {
    pub id: u32,
    pub date: NaiveDate,
    pub country_code: String,
    /// True when `country_code` is not an ISO 3166 alpha-2 country.
    pub region: bool,
    pub organization: String,
    pub claim_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_platform: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub article_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    pub rating: Rating,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

/// Maps source column names onto record fields.
///
/// `country_separator` handles exports that list several countries in one
/// cell: each listed country yields its own record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub date: String,
    pub country: String,
    pub claim_text: String,
    pub rating: String,
    #[serde(default)]
    pub organization: Option<String>,
    #[serde(default)]
    pub source_platform: Option<String>,
    #[serde(default)]
    pub article_url: Option<String>,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub explanation: Option<String>,
    #[serde(default)]
    pub country_separator: Option<String>,
}

impl ColumnMap {
    /// The layout written by [`write_factchecks_csv`].
    pub fn canonical() -> Self {
        ColumnMap {
            date: "date".into(),
            country: "country_code".into(),
            claim_text: "claim_text".into(),
            rating: "rating".into(),
            organization: Some("organization".into()),
            source_platform: Some("source_platform".into()),
            article_url: Some("article_url".into()),
            language: Some("language".into()),
            explanation: Some("explanation".into()),
            country_separator: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))
    }
}

/// A source row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based data row index (the header is row 0).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<FactCheckRecord>,
    pub errors: Vec<RowError>,
}

struct Columns {
    date: usize,
    country: usize,
    claim_text: usize,
    rating: usize,
    organization: Option<usize>,
    source_platform: Option<usize>,
    article_url: Option<usize>,
    language: Option<usize>,
    explanation: Option<usize>,
}

fn detect_delimiter(header: &str) -> u8 {
    let tabs = header.matches('\t').count();
    let commas = header.matches(',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

/// Parses a delimited fact-check export (comma or tab, detected from the header).
pub fn parse_factchecks<R: Read>(source: R, map: &ColumnMap) -> Result<ParseOutcome, IngestError> {
    let mut reader = std::io::BufReader::new(source);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if header.trim().is_empty() {
        return Err(IngestError::Config("input has no header row".into()));
    }
    let delimiter = detect_delimiter(&header);
    let chained = header.as_bytes().chain(reader);
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(chained);

    let headers = csv.headers()?.clone();
    let find = |name: &str| -> Option<usize> { headers.iter().position(|h| h.trim() == name) };
    let require =
        |name: &str| find(name).ok_or_else(|| IngestError::MissingColumn(name.to_string()));
    let optional = |name: &Option<String>| -> Result<Option<usize>, IngestError> {
        match name {
            Some(n) => require(n).map(Some),
            None => Ok(None),
        }
    };
    let cols = Columns {
        date: require(&map.date)?,
        country: require(&map.country)?,
        claim_text: require(&map.claim_text)?,
        rating: require(&map.rating)?,
        organization: optional(&map.organization)?,
        source_platform: optional(&map.source_platform)?,
        article_url: optional(&map.article_url)?,
        language: optional(&map.language)?,
        explanation: optional(&map.explanation)?,
    };

    let mut out = ParseOutcome::default();
    let mut next_id = 0u32;
    for (idx, row) in csv.records().enumerate() {
        let row_no = idx + 1;
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let get_opt = |i: Option<usize>| {
            i.map(|i| get(i).to_string()).filter(|s| !s.is_empty())
        };

        let claim = get(cols.claim_text);
        if claim.is_empty() {
            out.errors.push(RowError { row: row_no, reason: "empty claim".into() });
            continue;
        }
        let date = match parse_date(get(cols.date)) {
            Some(d) => d,
            None => {
                out.errors.push(RowError {
                    row: row_no,
                    reason: format!("unparseable date `{}`", get(cols.date)),
                });
                continue;
            }
        };
        let raw_country = get(cols.country);
        let countries: Vec<&str> = match &map.country_separator {
            Some(sep) => raw_country
                .split(sep.as_str())
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect(),
            None if raw_country.is_empty() => Vec::new(),
            None => vec![raw_country],
        };
        if countries.is_empty() {
            out.errors.push(RowError { row: row_no, reason: "missing country".into() });
            continue;
        }
        for country in countries {
            let (code, region) = classify_country(country);
            out.records.push(FactCheckRecord {
                id: next_id,
                date,
                country_code: code,
                region,
                organization: get_opt(cols.organization).unwrap_or_default(),
                claim_text: claim.to_string(),
                source_platform: get_opt(cols.source_platform),
                article_url: get_opt(cols.article_url),
                language: get_opt(cols.language),
                rating: Rating::parse(get(cols.rating)),
                explanation: get_opt(cols.explanation),
            });
            next_id += 1;
        }
    }
    Ok(out)
}

/// Writes records in the [`ColumnMap::canonical`] layout (comma separated).
pub fn write_factchecks_csv<W: Write>(records: &[FactCheckRecord], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "date",
        "country_code",
        "organization",
        "claim_text",
        "source_platform",
        "article_url",
        "language",
        "rating",
        "explanation",
    ])?;
    for r in records {
        let date = r.date.format("%Y-%m-%d").to_string();
        w.write_record([
            date.as_str(),
            r.country_code.as_str(),
            r.organization.as_str(),
            r.claim_text.as_str(),
            r.source_platform.as_deref().unwrap_or(""),
            r.article_url.as_deref().unwrap_or(""),
            r.language.as_deref().unwrap_or(""),
            r.rating.as_str(),
            r.explanation.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<(), IngestError> {
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| IngestError::Json { line: 0, source: e })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>, IngestError> {
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|e| IngestError::Json { line: i + 1, source: e })?,
        );
    }
    Ok(items)
}

const SPELLED_FORMATS: &[&str] = &["%d %B %Y", "%B %d %Y", "%d %b %Y", "%b %d %Y"];

/// Accepts ISO dates (optionally with a time part), `YYYY/MM/DD`, and
/// spelled-out forms such as `March 15, 2020` or `15th of March of 2020`.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    let head = raw.get(..10).unwrap_or(raw);
    if let Ok(d) = NaiveDate::parse_from_str(head, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(d) = NaiveDate::parse_from_str(head, "%Y/%m/%d") {
        return Some(d);
    }
    let lowered = raw.to_lowercase().replace(',', " ");
    let cleaned: Vec<String> = lowered
        .split_whitespace()
        .filter(|t| *t != "of" && *t != "the")
        .map(strip_ordinal)
        .collect();
    let cleaned = cleaned.join(" ");
    SPELLED_FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(&cleaned, f).ok())
}

fn strip_ordinal(token: &str) -> String {
    for suffix in ["st", "nd", "rd", "th"] {
        if let Some(num) = token.strip_suffix(suffix) {
            if !num.is_empty() && num.chars().all(|c| c.is_ascii_digit()) {
                return num.to_string();
            }
        }
    }
    token.to_string()
}

/// Upper-cases ISO alpha-2 codes; anything else is kept verbatim as a region tag.
pub fn classify_country(raw: &str) -> (String, bool) {
    let upper = raw.trim().to_uppercase();
    if is_iso_country(&upper) {
        (upper, false)
    } else {
        (raw.trim().to_string(), true)
    }
}

pub fn is_iso_country(code: &str) -> bool {
    ISO_ALPHA2.binary_search(&code).is_ok()
}

// Officially assigned ISO 3166-1 alpha-2 codes, sorted.
const ISO_ALPHA2: &[&str] = &[
    "AD", "AE", "AF", "AG", "AI", "AL", "AM", "AO", "AQ", "AR", "AS", "AT", "AU", "AW", "AX", "AZ",
    "BA", "BB", "BD", "BE", "BF", "BG", "BH", "BI", "BJ", "BL", "BM", "BN", "BO", "BQ", "BR", "BS",
    "BT", "BV", "BW", "BY", "BZ", "CA", "CC", "CD", "CF", "CG", "CH", "CI", "CK", "CL", "CM", "CN",
    "CO", "CR", "CU", "CV", "CW", "CX", "CY", "CZ", "DE", "DJ", "DK", "DM", "DO", "DZ", "EC", "EE",
    "EG", "EH", "ER", "ES", "ET", "FI", "FJ", "FK", "FM", "FO", "FR", "GA", "GB", "GD", "GE", "GF",
    "GG", "GH", "GI", "GL", "GM", "GN", "GP", "GQ", "GR", "GS", "GT", "GU", "GW", "GY", "HK", "HM",
    "HN", "HR", "HT", "HU", "ID", "IE", "IL", "IM", "IN", "IO", "IQ", "IR", "IS", "IT", "JE", "JM",
    "JO", "JP", "KE", "KG", "KH", "KI", "KM", "KN", "KP", "KR", "KW", "KY", "KZ", "LA", "LB", "LC",
    "LI", "LK", "LR", "LS", "LT", "LU", "LV", "LY", "MA", "MC", "MD", "ME", "MF", "MG", "MH", "MK",
    "ML", "MM", "MN", "MO", "MP", "MQ", "MR", "MS", "MT", "MU", "MV", "MW", "MX", "MY", "MZ", "NA",
    "NC", "NE", "NF", "NG", "NI", "NL", "NO", "NP", "NR", "NU", "NZ", "OM", "PA", "PE", "PF", "PG",
    "PH", "PK", "PL", "PM", "PN", "PR", "PS", "PT", "PW", "PY", "QA", "RE", "RO", "RS", "RU", "RW",
    "SA", "SB", "SC", "SD", "SE", "SG", "SH", "SI", "SJ", "SK", "SL", "SM", "SN", "SO", "SR", "SS",
    "ST", "SV", "SX", "SY", "SZ", "TC", "TD", "TF", "TG", "TH", "TJ", "TK", "TL", "TM", "TN", "TO",
    "TR", "TT", "TV", "TW", "TZ", "UA", "UG", "UM", "US", "UY", "UZ", "VA", "VC", "VE", "VG", "VI",
    "VN", "VU", "WF", "WS", "YE", "YT", "ZA", "ZM", "ZW",
];

/// Every officially assigned ISO alpha-2 code, sorted.
pub fn iso_countries() -> &'static [&'static str] {
    ISO_ALPHA2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeConfig {
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    /// Extra tags treated as regions even when they look like country codes.
    #[serde(default)]
    pub excluded_regions: Vec<String>,
    #[serde(default)]
    pub excluded_countries: Vec<String>,
}

impl ScopeConfig {
    pub fn new(window_start: NaiveDate, window_end: NaiveDate) -> Result<Self, IngestError> {
        let scope = ScopeConfig {
            window_start,
            window_end,
            excluded_regions: Vec::new(),
            excluded_countries: Vec::new(),
        };
        scope.validate()?;
        Ok(scope)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.window_start >= self.window_end {
            return Err(IngestError::Config(format!(
                "scope window start {} is not before end {}",
                self.window_start, self.window_end
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)?;
        let scope: ScopeConfig = serde_json::from_str(&text)
            .map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))?;
        scope.validate()?;
        Ok(scope)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    OutsideWindow,
    Region,
    ExcludedCountry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub record: FactCheckRecord,
    pub reason: DropReason,
}

/// Splits records into those inside the study scope and those dropped, with reasons.
pub fn filter_scope(
    records: Vec<FactCheckRecord>,
    scope: &ScopeConfig,
) -> (Vec<FactCheckRecord>, Vec<Dropped>) {
    let regions: BTreeSet<String> = scope.excluded_regions.iter().map(|s| s.to_lowercase()).collect();
    let excluded: BTreeSet<String> =
        scope.excluded_countries.iter().map(|s| s.to_uppercase()).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for record in records {
        let reason = if record.date < scope.window_start || record.date > scope.window_end {
            Some(DropReason::OutsideWindow)
        } else if record.region || regions.contains(&record.country_code.to_lowercase()) {
            Some(DropReason::Region)
        } else if excluded.contains(&record.country_code) {
            Some(DropReason::ExcludedCountry)
        } else {
            None
        };
        match reason {
            Some(reason) => dropped.push(Dropped { record, reason }),
            None => kept.push(record),
        }
    }
    (kept, dropped)
}
