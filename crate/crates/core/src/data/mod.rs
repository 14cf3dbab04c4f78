//! Immunization-coverage dataset model: one record per
//! (country, vaccine, year, source) observation plus the auxiliary
//! denominator and vaccine-introduction tables.

mod csv_io;

use std::collections::BTreeSet;
use std::fmt;

pub use csv_io::{
    parse_coverage_csv, parse_coverage_csv_with, parse_survey_csv, parse_survey_csv_with,
    read_analysis_csv, write_analysis_csv, ColumnMap, DropReason, ParseReport, Parsed,
};

use crate::error::{Error, Result};

/// Vaccine code used for the DTP3/DTP1 ratio pseudo-vaccine created during
/// preprocessing.
pub const DTP_RATIO_CODE: &str = "DTP3_RATIO";

/// Data source of a coverage observation. The ordering
/// `Admin < Official < Survey` is fixed and used for deterministic output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceKind {
    Admin,
    Official,
    Survey,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [SourceKind::Admin, SourceKind::Official, SourceKind::Survey];

    /// Source index `k` in 0..3, following the fixed ordering.
    pub fn index(self) -> usize {
        match self {
            SourceKind::Admin => 0,
            SourceKind::Official => 1,
            SourceKind::Survey => 2,
        }
    }

    pub fn from_index(k: usize) -> SourceKind {
        Self::ALL[k]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Admin => "admin",
            SourceKind::Official => "official",
            SourceKind::Survey => "survey",
        }
    }

    pub fn parse(s: &str) -> Option<SourceKind> {
        match s.to_ascii_lowercase().as_str() {
            "admin" => Some(SourceKind::Admin),
            "official" => Some(SourceKind::Official),
            "survey" => Some(SourceKind::Survey),
            _ => None,
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// WHO region code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Afr,
    Amr,
    Emr,
    Eur,
    Sear,
    Wpr,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::Afr,
        Region::Amr,
        Region::Emr,
        Region::Eur,
        Region::Sear,
        Region::Wpr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Afr => "AFR",
            Region::Amr => "AMR",
            Region::Emr => "EMR",
            Region::Eur => "EUR",
            Region::Sear => "SEAR",
            Region::Wpr => "WPR",
        }
    }

    pub fn parse(s: &str) -> Option<Region> {
        // The WHO portal uses both plain codes and *O-suffixed office codes
        // (AFRO, EMRO, ...); accept either.
        match s.trim().to_ascii_uppercase().as_str() {
            "AFR" | "AFRO" => Some(Region::Afr),
            "AMR" | "AMRO" | "PAHO" => Some(Region::Amr),
            "EMR" | "EMRO" => Some(Region::Emr),
            "EUR" | "EURO" => Some(Region::Eur),
            "SEAR" | "SEARO" => Some(Region::Sear),
            "WPR" | "WPRO" => Some(Region::Wpr),
            _ => None,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Evidence of vaccination backing a survey estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Evidence {
    Card,
    CardOrHistory,
}

impl Evidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Evidence::Card => "Card",
            Evidence::CardOrHistory => "Card or History",
        }
    }

    pub fn parse(s: &str) -> Option<Evidence> {
        match s.trim().to_ascii_lowercase().as_str() {
            "card" => Some(Evidence::Card),
            "card or history" | "cardorhistory" | "card+history" => Some(Evidence::CardOrHistory),
            _ => None,
        }
    }
}

/// Validity classification of a survey estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Validity {
    Crude,
    Valid,
}

impl Validity {
    pub fn as_str(self) -> &'static str {
        match self {
            Validity::Crude => "crude",
            Validity::Valid => "valid",
        }
    }

    pub fn parse(s: &str) -> Option<Validity> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crude" => Some(Validity::Crude),
            "valid" => Some(Validity::Valid),
            _ => None,
        }
    }
}

/// One (country, vaccine, year, source) coverage observation.
///
/// Coverage is stored in percent; conversion to a proportion happens only
/// inside the preprocessing logit step. `sample_size`, `evidence` and
/// `validity` are survey-only fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRecord {
    pub country: String,
    pub region: Region,
    pub vaccine: String,
    pub year: i32,
    pub source: SourceKind,
    pub coverage_pct: f64,
    pub sample_size: Option<u64>,
    pub evidence: Option<Evidence>,
    pub validity: Option<Validity>,
}

impl CoverageRecord {
    /// Sort/grouping key; `(country, vaccine, year, source)` is a unique
    /// total order after survey selection.
    pub fn key(&self) -> (&str, &str, i32, SourceKind) {
        (&self.country, &self.vaccine, self.year, self.source)
    }
}

/// Processing steps already applied to a dataset. Flags only ever grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ProvenanceFlag {
    RatioApplied,
    RecallAdjusted,
    Clamped,
    LogitReady,
}

impl ProvenanceFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ProvenanceFlag::RatioApplied => "ratio_applied",
            ProvenanceFlag::RecallAdjusted => "recall_adjusted",
            ProvenanceFlag::Clamped => "clamped",
            ProvenanceFlag::LogitReady => "logit_ready",
        }
    }
}

/// A tagged collection of coverage records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ICDataset {
    pub records: Vec<CoverageRecord>,
    pub provenance: BTreeSet<ProvenanceFlag>,
}

impl ICDataset {
    pub fn new(records: Vec<CoverageRecord>) -> Self {
        ICDataset {
            records,
            provenance: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_flag(&self, flag: ProvenanceFlag) -> bool {
        self.provenance.contains(&flag)
    }

    /// Countries present, sorted and deduplicated.
    pub fn countries(&self) -> Vec<String> {
        let mut out: Vec<String> = self.records.iter().map(|r| r.country.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Regions present, in enum order.
    pub fn regions(&self) -> Vec<Region> {
        let set: BTreeSet<Region> = self.records.iter().map(|r| r.region).collect();
        set.into_iter().collect()
    }

    /// Subset of records belonging to one region. Provenance carries over.
    pub fn filter_region(&self, region: Region) -> ICDataset {
        ICDataset {
            records: self
                .records
                .iter()
                .filter(|r| r.region == region)
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Concatenates datasets, restricts to the requested vaccines and years,
/// optionally drops exact-zero coverage values, and sorts by
/// `(country, vaccine, year, source)`.
///
/// Duplicate `(country, vaccine, year, source)` keys among admin/official
/// records are a hard error listing the offending keys; survey duplicates
/// are allowed at this stage (selection happens in preprocessing).
pub fn merge_and_filter(
    sets: &[ICDataset],
    vaccines: &[String],
    years: std::ops::RangeInclusive<i32>,
    drop_zero: bool,
) -> Result<ICDataset> {
    let mut records: Vec<CoverageRecord> = Vec::new();
    let mut provenance = BTreeSet::new();
    for set in sets {
        provenance.extend(set.provenance.iter().copied());
        for r in &set.records {
            if !vaccines.iter().any(|v| v == &r.vaccine) {
                continue;
            }
            if !years.contains(&r.year) {
                continue;
            }
            if drop_zero && r.coverage_pct == 0.0 {
                continue;
            }
            records.push(r.clone());
        }
    }
    records.sort_by(|a, b| a.key().cmp(&b.key()));

    let mut dups: Vec<String> = Vec::new();
    for pair in records.windows(2) {
        if pair[0].source != SourceKind::Survey && pair[0].key() == pair[1].key() {
            dups.push(format!(
                "({}, {}, {}, {})",
                pair[0].country, pair[0].vaccine, pair[0].year, pair[0].source
            ));
        }
    }
    if !dups.is_empty() {
        dups.dedup();
        return Err(Error::DuplicateKeys(
            "admin/official".into(),
            dups.join(", "),
        ));
    }

    Ok(ICDataset {
        records,
        provenance,
    })
}

/// Target-population denominators, one row per (country, vaccine, year).
#[derive(Debug, Clone, Default)]
pub struct DenominatorTable {
    rows: std::collections::BTreeMap<(String, String, i32), f64>,
}

impl DenominatorTable {
    pub fn insert(
        &mut self,
        country: &str,
        vaccine: &str,
        year: i32,
        population: f64,
    ) -> Result<()> {
        if !(population > 0.0) {
            return Err(Error::Invalid(format!(
                "non-positive target population for ({country}, {vaccine}, {year})"
            )));
        }
        let prev = self
            .rows
            .insert((country.to_string(), vaccine.to_string(), year), population);
        if prev.is_some() {
            return Err(Error::DuplicateKeys(
                "denominator".into(),
                format!("({country}, {vaccine}, {year})"),
            ));
        }
        Ok(())
    }

    pub fn get(&self, country: &str, vaccine: &str, year: i32) -> Option<f64> {
        self.rows
            .get(&(country.to_string(), vaccine.to_string(), year))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads a `country,vaccine,year,target_population` CSV.
    pub fn from_csv(path: &std::path::Path) -> Result<Self> {
        csv_io::read_denominator_csv(path)
    }
}

/// Year of vaccine introduction, one row per (country, vaccine).
#[derive(Debug, Clone, Default)]
pub struct YoviTable {
    rows: std::collections::BTreeMap<(String, String), i32>,
}

impl YoviTable {
    pub fn insert(&mut self, country: &str, vaccine: &str, intro_year: i32) -> Result<()> {
        let prev = self
            .rows
            .insert((country.to_string(), vaccine.to_string()), intro_year);
        if prev.is_some() {
            return Err(Error::DuplicateKeys(
                "yovi".into(),
                format!("({country}, {vaccine})"),
            ));
        }
        Ok(())
    }

    pub fn get(&self, country: &str, vaccine: &str) -> Option<i32> {
        self.rows
            .get(&(country.to_string(), vaccine.to_string()))
            .copied()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads a `country,vaccine,intro_year` CSV.
    pub fn from_csv(path: &std::path::Path) -> Result<Self> {
        csv_io::read_yovi_csv(path)
    }
}
