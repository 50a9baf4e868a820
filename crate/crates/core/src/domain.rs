//! Core vocabulary shared by every pipeline stage: taxa, keyword families,
//! range-state tables and time windows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("malformed configuration: {0}")]
    MalformedConfig(String),
    #[error("taxon `{0}` has no additional keywords")]
    EmptyFamily(String),
    #[error("taxon `{0}` is defined more than once")]
    DuplicateTaxon(String),
    #[error("invalid country code `{code}` for taxon `{taxon}`")]
    InvalidCountryCode { taxon: String, code: String },
    #[error("invalid time window: {0}")]
    InvalidWindow(String),
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_keyword(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A taxon's main keyword plus the qualifying keywords it is paired with
/// when searching the news index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchFamily {
    pub taxon: String,
    pub main_keyword: String,
    pub additional_keywords: Vec<String>,
}

impl SearchFamily {
    /// Builds a family, normalizing every keyword and collapsing duplicates
    /// (first occurrence wins). Keywords equal to the main keyword are dropped.
    pub fn new<I, S>(taxon: &str, main: &str, additional: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let taxon = normalize_keyword(taxon);
        let main_keyword = normalize_keyword(main);
        if taxon.is_empty() {
            return Err(DomainError::MalformedConfig("empty taxon name".into()));
        }
        if main_keyword.is_empty() {
            return Err(DomainError::MalformedConfig(format!(
                "taxon `{taxon}` has an empty main keyword"
            )));
        }
        let mut seen = BTreeSet::new();
        let mut additional_keywords = Vec::new();
        for kw in additional {
            let kw = normalize_keyword(kw.as_ref());
            if kw.is_empty() || kw == main_keyword || !seen.insert(kw.clone()) {
                continue;
            }
            additional_keywords.push(kw);
        }
        if additional_keywords.is_empty() {
            return Err(DomainError::EmptyFamily(taxon));
        }
        Ok(SearchFamily {
            taxon,
            main_keyword,
            additional_keywords,
        })
    }
}

#[derive(Deserialize)]
struct FamilyEntry {
    main: String,
    additional: Vec<String>,
}

/// Parses a `families.json` document: an object keyed by taxon whose values
/// are `{"main": ..., "additional": [...]}`. Taxon order is preserved.
pub fn parse_family_config(text: &str) -> Result<Vec<SearchFamily>, DomainError> {
    let entries: Vec<(String, FamilyEntry)> = parse_ordered_object(text)?;
    let mut seen = BTreeSet::new();
    let mut families = Vec::with_capacity(entries.len());
    for (taxon, entry) in entries {
        let family = SearchFamily::new(&taxon, &entry.main, &entry.additional)?;
        if !seen.insert(family.taxon.clone()) {
            return Err(DomainError::DuplicateTaxon(family.taxon));
        }
        families.push(family);
    }
    Ok(families)
}

/// Serializes families back into the `families.json` layout.
pub fn serialize_family_config(families: &[SearchFamily]) -> String {
    let mut out = String::from("{\n");
    for (i, f) in families.iter().enumerate() {
        let entry = serde_json::json!({
            "main": f.main_keyword,
            "additional": f.additional_keywords,
        });
        out.push_str(&format!(
            "  {}: {}",
            serde_json::to_string(&f.taxon).expect("string serializes"),
            entry
        ));
        out.push_str(if i + 1 < families.len() { ",\n" } else { "\n" });
    }
    out.push('}');
    out
}

/// Native range states per taxon, as ISO 3166-1 alpha-2 codes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeTable {
    pub entries: BTreeMap<String, BTreeSet<String>>,
}

impl RangeTable {
    pub fn range_of(&self, taxon: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(taxon)
    }

    /// Whether `country` is a range state for `taxon`. An empty set means the
    /// taxon is globally distributed, so every country counts as range.
    /// `None` when the taxon has no entry at all.
    pub fn is_range(&self, taxon: &str, country: &str) -> Option<bool> {
        self.entries
            .get(taxon)
            .map(|set| set.is_empty() || set.contains(country))
    }
}

pub fn is_country_code(code: &str) -> bool {
    code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase())
}

/// Parses a `ranges.json` document mapping taxon to an array of alpha-2 codes.
pub fn parse_range_table(text: &str) -> Result<RangeTable, DomainError> {
    let entries: Vec<(String, Vec<String>)> = parse_ordered_object(text)?;
    let mut table = RangeTable::default();
    for (taxon, codes) in entries {
        let taxon = normalize_keyword(&taxon);
        let mut set = BTreeSet::new();
        for code in codes {
            let norm = code.trim().to_ascii_uppercase();
            if !is_country_code(&norm) {
                return Err(DomainError::InvalidCountryCode { taxon, code });
            }
            set.insert(norm);
        }
        if table.entries.insert(taxon.clone(), set).is_some() {
            return Err(DomainError::DuplicateTaxon(taxon));
        }
    }
    Ok(table)
}

/// Deserializes a JSON object into key/value pairs in document order,
/// keeping duplicate keys so callers can reject them.
fn parse_ordered_object<V: serde::de::DeserializeOwned>(
    text: &str,
) -> Result<Vec<(String, V)>, DomainError> {
    use serde::de::{MapAccess, Visitor};
    use std::marker::PhantomData;

    struct Ordered<V>(PhantomData<V>);

    impl<'de, V: Deserialize<'de>> Visitor<'de> for Ordered<V> {
        type Value = Vec<(String, V)>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("an object keyed by taxon")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some((k, v)) = map.next_entry::<String, V>()? {
                out.push((k, v));
            }
            Ok(out)
        }
    }

    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde::Deserializer::deserialize_map(&mut de, Ordered::<V>(PhantomData))
        .map_err(|e| DomainError::MalformedConfig(e.to_string()))?;
    de.end()
        .map_err(|e| DomainError::MalformedConfig(e.to_string()))?;
    Ok(value)
}

/// Half-open UTC interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct TimeWindow {
    start: DateTime<Utc>,
    end: DateTime<Utc>,
}

#[derive(Deserialize)]
struct RawWindow {
    start: String,
    end: String,
}

impl TryFrom<RawWindow> for TimeWindow {
    type Error = DomainError;

    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        TimeWindow::new(parse_timestamp(&raw.start)?, parse_timestamp(&raw.end)?)
    }
}

impl TimeWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, DomainError> {
        if start >= end {
            return Err(DomainError::InvalidWindow(format!(
                "start {start} is not before end {end}"
            )));
        }
        Ok(TimeWindow { start, end })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.end
    }

    pub fn duration(&self) -> chrono::Duration {
        self.end - self.start
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }

    /// Inclusive on both bounds; used to validate index hits.
    pub fn contains_inclusive(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t <= self.end
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}",
            format_compact(self.start),
            format_compact(self.end)
        )
    }
}

/// `YYYYMMDDHHMMSS`, the timestamp layout the news index expects.
pub fn format_compact(t: DateTime<Utc>) -> String {
    t.format("%Y%m%d%H%M%S").to_string()
}

/// Accepts RFC 3339, `YYYYMMDDHHMMSS`, `YYYYMMDDThhmmssZ`, or a bare
/// `YYYY-MM-DD` date (midnight UTC).
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, DomainError> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y%m%d%H%M%S", "%Y%m%dT%H%M%SZ"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    if let Ok(d) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(DomainError::InvalidWindow(format!(
        "unrecognized timestamp `{s}`"
    )))
}
