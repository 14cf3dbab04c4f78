//! CSV ingestion of the three coverage sources and the auxiliary tables.
//!
//! Expected layout is UTF-8 with a header row, comma delimiter and `.` as
//! the decimal mark. The default column roles are
//! `code, region, year, antigen, coverage_category, coverage, sample_size,
//! evidence, validity`; portal exports with different header names can be
//! accommodated with a [`ColumnMap`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::data::{CoverageRecord, Evidence, ICDataset, Region, SourceKind, Validity};
use crate::error::{Error, Result};

/// Maps the schema roles onto the header names present in a file.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub country: String,
    pub region: String,
    pub year: String,
    pub antigen: String,
    pub coverage_category: String,
    pub coverage: String,
    pub sample_size: String,
    pub evidence: String,
    pub validity: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            country: "code".into(),
            region: "region".into(),
            year: "year".into(),
            antigen: "antigen".into(),
            coverage_category: "coverage_category".into(),
            coverage: "coverage".into(),
            sample_size: "sample_size".into(),
            evidence: "evidence".into(),
            validity: "validity".into(),
        }
    }
}

/// Why an input row did not become a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    MissingCoverage,
    MissingRegion,
    CategoryMismatch,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DropReason::MissingCoverage => "missing_coverage",
            DropReason::MissingRegion => "missing_region",
            DropReason::CategoryMismatch => "category_mismatch",
        };
        f.write_str(s)
    }
}

/// Ingestion outcome: the dataset plus an accounting of every dropped row,
/// so that `rows = parsed + dropped` always holds.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub dataset: ICDataset,
    pub report: ParseReport,
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub rows: usize,
    pub parsed: usize,
    pub dropped: Vec<(u64, DropReason)>,
}

impl ParseReport {
    pub fn is_lossless(&self) -> bool {
        self.rows == self.parsed + self.dropped.len()
    }
}

/// Antigen aliases between the coverage and survey portal exports.
fn canonical_antigen(raw: &str) -> String {
    match raw.trim() {
        "DTPCV1" => "DTP1".into(),
        "DTPCV2" => "DTP2".into(),
        "DTPCV3" => "DTP3".into(),
        other => other.to_string(),
    }
}

struct Header {
    idx: HashMap<String, usize>,
}

impl Header {
    fn new(headers: &csv::StringRecord) -> Self {
        let idx = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        Header { idx }
    }

    fn get<'r>(&self, row: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.idx
            .get(name)
            .and_then(|&i| row.get(i))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }

    fn has(&self, name: &str) -> bool {
        self.idx.contains_key(name)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

/// (country, region, year, canonical vaccine, coverage percent).
type CommonFields = (String, Region, i32, String, f64);

fn parse_common(
    path: &Path,
    line: u64,
    header: &Header,
    row: &csv::StringRecord,
    columns: &ColumnMap,
) -> Result<Option<CommonFields>> {
    let coverage = match header.get(row, &columns.coverage) {
        Some(s) => s,
        None => return Ok(None), // caller records the drop
    };
    let coverage: f64 = coverage.parse().map_err(|_| {
        Error::parse(
            path,
            line,
            format!("non-numeric coverage value '{coverage}'"),
        )
    })?;

    let region_raw = match header.get(row, &columns.region) {
        Some(s) => s,
        None => return Ok(None),
    };
    let region = Region::parse(region_raw)
        .ok_or_else(|| Error::parse(path, line, format!("unknown region code '{region_raw}'")))?;

    let country = header
        .get(row, &columns.country)
        .ok_or_else(|| Error::parse(path, line, "missing country code"))?
        .to_string();

    let year_raw = header
        .get(row, &columns.year)
        .ok_or_else(|| Error::parse(path, line, "missing year"))?;
    let year: i32 = year_raw
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad year '{year_raw}'")))?;
    if !(1900..=2200).contains(&year) {
        return Err(Error::parse(path, line, format!("bad year '{year_raw}'")));
    }

    let antigen = header
        .get(row, &columns.antigen)
        .ok_or_else(|| Error::parse(path, line, "missing antigen"))?;

    Ok(Some((
        country,
        region,
        year,
        canonical_antigen(antigen),
        coverage,
    )))
}

/// Parses an administrative or official coverage export.
///
/// Rows whose `coverage_category` (normalized to lowercase) does not match
/// `kind` are dropped with reason `category_mismatch`, so a combined export
/// can be ingested once per source. Rows with missing coverage or region
/// are dropped; malformed values are hard errors naming the line.
pub fn parse_coverage_csv(path: &Path, kind: SourceKind) -> Result<Parsed> {
    parse_coverage_csv_with(path, kind, &ColumnMap::default())
}

pub fn parse_coverage_csv_with(
    path: &Path,
    kind: SourceKind,
    columns: &ColumnMap,
) -> Result<Parsed> {
    let mut rdr = open_reader(path)?;
    let header = Header::new(
        rdr.headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?,
    );
    let mut report = ParseReport::default();
    let mut records = Vec::new();

    let mut iter = rdr.records();
    loop {
        let row = match iter.next() {
            None => break,
            Some(row) => row.map_err(|e| Error::parse(path, 0, e.to_string()))?,
        };
        let line = iter.reader().position().line().saturating_sub(1).max(1);
        report.rows += 1;

        if header.has(&columns.coverage_category) {
            match header.get(&row, &columns.coverage_category) {
                Some(cat) if cat.to_ascii_lowercase() == kind.as_str() => {}
                _ => {
                    report.dropped.push((line, DropReason::CategoryMismatch));
                    continue;
                }
            }
        }

        match parse_common(path, line, &header, &row, columns)? {
            None => {
                let reason = if header.get(&row, &columns.coverage).is_none() {
                    DropReason::MissingCoverage
                } else {
                    DropReason::MissingRegion
                };
                report.dropped.push((line, reason));
            }
            Some((country, region, year, vaccine, coverage_pct)) => {
                records.push(CoverageRecord {
                    country,
                    region,
                    vaccine,
                    year,
                    source: kind,
                    coverage_pct,
                    sample_size: None,
                    evidence: None,
                    validity: None,
                });
                report.parsed += 1;
            }
        }
    }

    Ok(Parsed {
        dataset: ICDataset::new(records),
        report,
    })
}

/// Parses a survey export carrying `sample_size`, `evidence` and `validity`
/// columns. The year column is the precomputed birth-cohort year. No
/// deduplication happens here; survey selection is a preprocessing step.
pub fn parse_survey_csv(path: &Path) -> Result<Parsed> {
    parse_survey_csv_with(path, &ColumnMap::default())
}

pub fn parse_survey_csv_with(path: &Path, columns: &ColumnMap) -> Result<Parsed> {
    let mut rdr = open_reader(path)?;
    let header = Header::new(
        rdr.headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?,
    );
    let mut report = ParseReport::default();
    let mut records = Vec::new();

    let mut iter = rdr.records();
    loop {
        let row = match iter.next() {
            None => break,
            Some(row) => row.map_err(|e| Error::parse(path, 0, e.to_string()))?,
        };
        let line = iter.reader().position().line().saturating_sub(1).max(1);
        report.rows += 1;

        match parse_common(path, line, &header, &row, columns)? {
            None => {
                let reason = if header.get(&row, &columns.coverage).is_none() {
                    DropReason::MissingCoverage
                } else {
                    DropReason::MissingRegion
                };
                report.dropped.push((line, reason));
            }
            Some((country, region, year, vaccine, coverage_pct)) => {
                let sample_size = match header.get(&row, &columns.sample_size) {
                    None => None,
                    Some(raw) => Some(raw.parse::<u64>().map_err(|_| {
                        Error::parse(path, line, format!("bad sample size '{raw}'"))
                    })?),
                };
                let evidence = match header.get(&row, &columns.evidence) {
                    None => None,
                    Some(raw) => Some(Evidence::parse(raw).ok_or_else(|| {
                        Error::parse(path, line, format!("unknown evidence label '{raw}'"))
                    })?),
                };
                let validity = match header.get(&row, &columns.validity) {
                    None => None,
                    Some(raw) => Some(Validity::parse(raw).ok_or_else(|| {
                        Error::parse(path, line, format!("unknown validity label '{raw}'"))
                    })?),
                };
                records.push(CoverageRecord {
                    country,
                    region,
                    vaccine,
                    year,
                    source: SourceKind::Survey,
                    coverage_pct,
                    sample_size,
                    evidence,
                    validity,
                });
                report.parsed += 1;
            }
        }
    }

    Ok(Parsed {
        dataset: ICDataset::new(records),
        report,
    })
}

/// Writes a dataset in the analysis schema. The `coverage_category` column
/// carries the source, so the file round-trips through
/// [`read_analysis_csv`].
pub fn write_analysis_csv(dataset: &ICDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!("{other:?}")),
    })?;
    let io_err = |e: csv::Error| Error::Invalid(format!("writing {}: {e}", path.display()));
    w.write_record([
        "code",
        "region",
        "year",
        "antigen",
        "coverage_category",
        "coverage",
        "sample_size",
        "evidence",
        "validity",
    ])
    .map_err(io_err)?;
    for r in &dataset.records {
        w.write_record([
            r.country.as_str(),
            r.region.as_str(),
            &r.year.to_string(),
            r.vaccine.as_str(),
            r.source.as_str(),
            &format!("{}", r.coverage_pct),
            &r.sample_size.map(|n| n.to_string()).unwrap_or_default(),
            r.evidence.map(Evidence::as_str).unwrap_or(""),
            r.validity.map(Validity::as_str).unwrap_or(""),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an analysis-schema CSV (as written by [`write_analysis_csv`]),
/// mapping each row's `coverage_category` to its source.
pub fn read_analysis_csv(path: &Path) -> Result<ICDataset> {
    let columns = ColumnMap::default();
    let mut rdr = open_reader(path)?;
    let header = Header::new(
        rdr.headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?,
    );
    let mut records = Vec::new();
    let mut iter = rdr.records();
    loop {
        let row = match iter.next() {
            None => break,
            Some(row) => row.map_err(|e| Error::parse(path, 0, e.to_string()))?,
        };
        let line = iter.reader().position().line().saturating_sub(1).max(1);
        let cat = header
            .get(&row, &columns.coverage_category)
            .ok_or_else(|| Error::parse(path, line, "missing coverage_category"))?;
        let source = SourceKind::parse(cat).ok_or_else(|| {
            Error::parse(path, line, format!("unknown coverage_category '{cat}'"))
        })?;
        let Some((country, region, year, vaccine, coverage_pct)) =
            parse_common(path, line, &header, &row, &columns)?
        else {
            continue;
        };
        let sample_size = match header.get(&row, &columns.sample_size) {
            None => None,
            Some(raw) => Some(
                raw.parse::<u64>()
                    .map_err(|_| Error::parse(path, line, format!("bad sample size '{raw}'")))?,
            ),
        };
        let evidence = match header.get(&row, &columns.evidence) {
            None => None,
            Some(raw) => Some(Evidence::parse(raw).ok_or_else(|| {
                Error::parse(path, line, format!("unknown evidence label '{raw}'"))
            })?),
        };
        let validity = match header.get(&row, &columns.validity) {
            None => None,
            Some(raw) => Some(Validity::parse(raw).ok_or_else(|| {
                Error::parse(path, line, format!("unknown validity label '{raw}'"))
            })?),
        };
        records.push(CoverageRecord {
            country,
            region,
            vaccine,
            year,
            source,
            coverage_pct,
            sample_size,
            evidence,
            validity,
        });
    }
    records.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(ICDataset::new(records))
}

pub(crate) fn read_denominator_csv(path: &Path) -> Result<super::DenominatorTable> {
    let mut rdr = open_reader(path)?;
    let header = Header::new(
        rdr.headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?,
    );
    let mut table = super::DenominatorTable::default();
    let mut iter = rdr.records();
    loop {
        let row = match iter.next() {
            None => break,
            Some(row) => row.map_err(|e| Error::parse(path, 0, e.to_string()))?,
        };
        let line = iter.reader().position().line().saturating_sub(1).max(1);
        let country = header
            .get(&row, "country")
            .or_else(|| header.get(&row, "code"))
            .ok_or_else(|| Error::parse(path, line, "missing country"))?;
        let vaccine = header
            .get(&row, "vaccine")
            .or_else(|| header.get(&row, "antigen"))
            .ok_or_else(|| Error::parse(path, line, "missing vaccine"))?;
        let year: i32 = header
            .get(&row, "year")
            .ok_or_else(|| Error::parse(path, line, "missing year"))?
            .parse()
            .map_err(|_| Error::parse(path, line, "bad year"))?;
        let pop: f64 = header
            .get(&row, "target_population")
            .or_else(|| header.get(&row, "population"))
            .ok_or_else(|| Error::parse(path, line, "missing target_population"))?
            .parse()
            .map_err(|_| Error::parse(path, line, "bad target_population"))?;
        table.insert(country, &canonical_antigen(vaccine), year, pop)?;
    }
    Ok(table)
}

pub(crate) fn read_yovi_csv(path: &Path) -> Result<super::YoviTable> {
    let mut rdr = open_reader(path)?;
    let header = Header::new(
        rdr.headers()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?,
    );
    let mut table = super::YoviTable::default();
    let mut iter = rdr.records();
    loop {
        let row = match iter.next() {
            None => break,
            Some(row) => row.map_err(|e| Error::parse(path, 0, e.to_string()))?,
        };
        let line = iter.reader().position().line().saturating_sub(1).max(1);
        let country = header
            .get(&row, "country")
            .or_else(|| header.get(&row, "code"))
            .ok_or_else(|| Error::parse(path, line, "missing country"))?;
        let vaccine = header
            .get(&row, "vaccine")
            .or_else(|| header.get(&row, "antigen"))
            .ok_or_else(|| Error::parse(path, line, "missing vaccine"))?;
        let year: i32 = header
            .get(&row, "intro_year")
            .or_else(|| header.get(&row, "yovi"))
            .ok_or_else(|| Error::parse(path, line, "missing intro_year"))?
            .parse()
            .map_err(|_| Error::parse(path, line, "bad intro_year"))?;
        table.insert(country, &canonical_antigen(vaccine), year)?;
    }
    Ok(table)
}
