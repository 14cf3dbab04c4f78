//! Bias corrections and transforms applied between ingestion and model
//! fitting: recall-bias adjustment of third-dose survey estimates,
//! survey-estimate selection, the DTP3/DTP1 ratio construction, clamping
//! and the logit transformation, plus the post-fit introduction-year
//! filter.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{
    CoverageRecord, Evidence, ICDataset, ProvenanceFlag, SourceKind, Validity, YoviTable,
    DTP_RATIO_CODE,
};
use crate::model::ModelDims;
use crate::num::{logit, Real};
use crate::posterior::EstimateTable;
use crate::Scalar;

/// Lower clamp bound on the proportion scale.
pub const CLAMP_LO: f64 = 0.001;
/// Upper clamp bound on the proportion scale.
pub const CLAMP_HI: f64 = 0.999;
/// Default minimum survey sample size for acceptance.
pub const MIN_SAMPLE_SIZE: u64 = 300;

/// One logit-scale observation, indexed into the model's
/// (country, vaccine, time) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitObservation {
    pub country: usize,
    pub vaccine: usize,
    pub time: usize,
    pub source: SourceKind,
    pub y: Scalar,
}

/// Mapping between model indices and the external labels.
#[derive(Debug, Clone, Default)]
pub struct IndexMaps {
    pub countries: Vec<String>,
    pub vaccines: Vec<String>,
    pub year_start: i32,
    pub n_times: usize,
    /// Country -> region label, for regional aggregation.
    pub region_of: BTreeMap<String, String>,
}

impl IndexMaps {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            countries: self.countries.len(),
            vaccines: self.vaccines.len(),
            times: self.n_times,
        }
    }

    pub fn year_of(&self, t: usize) -> i32 {
        self.year_start + t as i32
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == code)
    }

    pub fn vaccine_index(&self, code: &str) -> Option<usize> {
        self.vaccines.iter().position(|v| v == code)
    }
}

/// Accumulates one line per dropped or adjusted record, with a reason code.
#[derive(Debug, Clone, Default)]
pub struct ProcessingReport {
    pub lines: Vec<String>,
}

impl ProcessingReport {
    fn log(&mut self, code: &str, detail: String) {
        self.lines.push(format!("{code}: {detail}"));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

fn find_survey(
    records: &[CoverageRecord],
    country: &str,
    year: i32,
    vaccine: &str,
    evidence: Evidence,
) -> Option<usize> {
    records.iter().position(|r| {
        r.source == SourceKind::Survey
            && r.country == country
            && r.year == year
            && r.vaccine == vaccine
            && r.evidence == Some(evidence)
    })
}

/// Replaces each third-dose "Card or History" survey estimate with
/// `VD3_card * VD1_cardhistory / VD1_card`, per (country, year), where all
/// three inputs exist. `vaccine_pairs` lists `(dose3, dose1)` codes.
///
/// A zero card-only first-dose value is skipped and logged, never an error.
/// Re-running the adjustment recomputes from the card-only inputs (which
/// are never overwritten), so the operation is idempotent.
pub fn recall_bias_adjust(
    dataset: &ICDataset,
    vaccine_pairs: &[(String, String)],
    report: &mut ProcessingReport,
) -> ICDataset {
    let mut out = dataset.clone();
    let keys: Vec<(String, i32)> = {
        let mut keys: Vec<(String, i32)> = out
            .records
            .iter()
            .filter(|r| r.source == SourceKind::Survey)
            .map(|r| (r.country.clone(), r.year))
            .collect();
        keys.sort();
        keys.dedup();
        keys
    };

    for (country, year) in keys {
        for (dose3, dose1) in vaccine_pairs {
            let target = find_survey(&out.records, &country, year, dose3, Evidence::CardOrHistory);
            let d3_card = find_survey(&out.records, &country, year, dose3, Evidence::Card);
            let d1_card = find_survey(&out.records, &country, year, dose1, Evidence::Card);
            let d1_ch = find_survey(&out.records, &country, year, dose1, Evidence::CardOrHistory);
            let (Some(target), Some(d3_card), Some(d1_card), Some(d1_ch)) =
                (target, d3_card, d1_card, d1_ch)
            else {
                continue;
            };
            let vd3_card = out.records[d3_card].coverage_pct;
            let vd1_card = out.records[d1_card].coverage_pct;
            let vd1_ch = out.records[d1_ch].coverage_pct;
            if vd1_card == 0.0 {
                report.log(
                    "recall_skipped_zero_denominator",
                    format!("({country}, {dose3}, {year})"),
                );
                continue;
            }
            let adjusted = vd3_card * vd1_ch / vd1_card;
            out.records[target].coverage_pct = adjusted;
            report.log(
                "recall_adjusted",
                format!("({country}, {dose3}, {year}) -> {adjusted}"),
            );
        }
    }

    out.provenance.insert(ProvenanceFlag::RecallAdjusted);
    out
}

/// Reduces survey records to at most one per (country, vaccine, year).
///
/// Selection cascade:
/// 1. a singleton is accepted if its sample size exceeds `min_n` or it is
///    labelled valid, otherwise dropped;
/// 2. among multiples, "Card or History" evidence wins over "Card";
/// 3. among the remaining candidates, largest sample size wins;
/// 4. with no sample sizes, the first valid estimate wins, else the first
///    in file order.
pub fn select_survey_estimates(
    dataset: &ICDataset,
    min_n: u64,
    report: &mut ProcessingReport,
) -> ICDataset {
    let mut out = ICDataset {
        records: Vec::with_capacity(dataset.records.len()),
        provenance: dataset.provenance.clone(),
    };
    // Group survey record positions by key, preserving file order.
    let mut groups: BTreeMap<(String, String, i32), Vec<usize>> = BTreeMap::new();
    for (pos, r) in dataset.records.iter().enumerate() {
        if r.source == SourceKind::Survey {
            groups
                .entry((r.country.clone(), r.vaccine.clone(), r.year))
                .or_default()
                .push(pos);
        } else {
            out.records.push(r.clone());
        }
    }

    for ((country, vaccine, year), positions) in groups {
        let chosen = if positions.len() == 1 {
            let r = &dataset.records[positions[0]];
            let accepted =
                r.sample_size.is_some_and(|n| n > min_n) || r.validity == Some(Validity::Valid);
            if accepted {
                Some(positions[0])
            } else {
                report.log(
                    "survey_rejected",
                    format!("({country}, {vaccine}, {year}) n={:?}", r.sample_size),
                );
                None
            }
        } else {
            let card_or_history: Vec<usize> = positions
                .iter()
                .copied()
                .filter(|&p| dataset.records[p].evidence == Some(Evidence::CardOrHistory))
                .collect();
            let pool = if card_or_history.is_empty() {
                positions.clone()
            } else {
                card_or_history
            };
            let with_sizes: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&p| dataset.records[p].sample_size.is_some())
                .collect();
            let pick = if !with_sizes.is_empty() {
                with_sizes
                    .into_iter()
                    .max_by_key(|&p| dataset.records[p].sample_size.unwrap())
            } else {
                pool.iter()
                    .copied()
                    .find(|&p| dataset.records[p].validity == Some(Validity::Valid))
                    .or_else(|| pool.first().copied())
            };
            if let Some(pick) = pick {
                for p in positions.iter().filter(|&&p| p != pick) {
                    report.log(
                        "survey_not_selected",
                        format!(
                            "({country}, {vaccine}, {year}) n={:?}",
                            dataset.records[*p].sample_size
                        ),
                    );
                }
            }
            pick
        };
        if let Some(p) = chosen {
            out.records.push(dataset.records[p].clone());
        }
    }

    out.records.sort_by(|a, b| a.key().cmp(&b.key()));
    out
}

/// Replaces DTP3 with the ratio pseudo-vaccine.
///
/// Per (country, year, source) where both DTP1 and DTP3 exist, the ratio
/// DTP3/DTP1 is computed on the original (pre-clamp) values; a ratio above
/// one is clamped to 0.999 and logged. DTP1 values above 100 are then
/// rounded down to 99.9 and the DTP3 record becomes `DTP3_RATIO` with value
/// `100 * ratio`. DTP3 rows without a matching DTP1 cannot enter the ratio
/// model and are dropped with a log line.
pub fn apply_dtp_ratio(dataset: &ICDataset, report: &mut ProcessingReport) -> ICDataset {
    let mut out = ICDataset {
        records: Vec::with_capacity(dataset.records.len()),
        provenance: dataset.provenance.clone(),
    };
    let dtp1: BTreeMap<(String, i32, SourceKind), f64> = dataset
        .records
        .iter()
        .filter(|r| r.vaccine == "DTP1")
        .map(|r| ((r.country.clone(), r.year, r.source), r.coverage_pct))
        .collect();

    for r in &dataset.records {
        match r.vaccine.as_str() {
            "DTP1" => {
                let mut r = r.clone();
                if r.coverage_pct > 100.0 {
                    report.log(
                        "dtp1_rounded_down",
                        format!(
                            "({}, {}, {}) {} -> 99.9",
                            r.country, r.year, r.source, r.coverage_pct
                        ),
                    );
                    r.coverage_pct = 99.9;
                }
                out.records.push(r);
            }
            "DTP3" => {
                let key = (r.country.clone(), r.year, r.source);
                match dtp1.get(&key) {
                    None => {
                        report.log(
                            "dtp3_unpaired_dropped",
                            format!("({}, {}, {})", r.country, r.year, r.source),
                        );
                    }
                    Some(&d1) => {
                        let mut ratio = r.coverage_pct / d1;
                        if ratio > 1.0 {
                            report.log(
                                "dtp_ratio_clamped",
                                format!("({}, {}, {}) ratio={ratio}", r.country, r.year, r.source),
                            );
                            ratio = 0.999;
                        }
                        let mut adjusted = r.clone();
                        adjusted.vaccine = DTP_RATIO_CODE.to_string();
                        adjusted.coverage_pct = 100.0 * ratio;
                        out.records.push(adjusted);
                    }
                }
            }
            _ => out.records.push(r.clone()),
        }
    }

    out.records.sort_by(|a, b| a.key().cmp(&b.key()));
    out.provenance.insert(ProvenanceFlag::RatioApplied);
    out
}

/// Clamps a proportion into `[CLAMP_LO, CLAMP_HI]`.
pub fn clamp_proportion(p: f64) -> f64 {
    p.clamp(CLAMP_LO, CLAMP_HI)
}

/// Converts percent records to clamped, logit-transformed observations and
/// builds the index maps. Countries and vaccines are sorted; time indices
/// cover the contiguous year window `min..=max` found in the data.
pub fn clamp_and_logit(dataset: &ICDataset) -> (Vec<LogitObservation>, IndexMaps, ICDataset) {
    let mut flagged = dataset.clone();
    flagged.provenance.insert(ProvenanceFlag::Clamped);
    flagged.provenance.insert(ProvenanceFlag::LogitReady);

    if dataset.records.is_empty() {
        return (Vec::new(), IndexMaps::default(), flagged);
    }

    let countries = dataset.countries();
    let mut vaccines: Vec<String> = dataset.records.iter().map(|r| r.vaccine.clone()).collect();
    vaccines.sort();
    vaccines.dedup();
    let year_start = dataset.records.iter().map(|r| r.year).min().unwrap();
    let year_end = dataset.records.iter().map(|r| r.year).max().unwrap();
    let n_times = (year_end - year_start + 1) as usize;
    let region_of = dataset
        .records
        .iter()
        .map(|r| (r.country.clone(), r.region.as_str().to_string()))
        .collect();

    let maps = IndexMaps {
        countries,
        vaccines,
        year_start,
        n_times,
        region_of,
    };

    let mut observations = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        let p = clamp_proportion(r.coverage_pct / 100.0);
        observations.push(LogitObservation {
            country: maps.country_index(&r.country).unwrap(),
            vaccine: maps.vaccine_index(&r.vaccine).unwrap(),
            time: (r.year - year_start) as usize,
            source: r.source,
            y: logit(p),
        });
    }

    (observations, maps, flagged)
}

/// Removes estimate rows that precede the vaccine's introduction year.
/// Combinations absent from the table are kept in full and logged.
pub fn yovi_filter<F: Real>(
    estimates: &EstimateTable<F>,
    yovi: &YoviTable,
    report: &mut ProcessingReport,
) -> EstimateTable<F> {
    let mut seen_missing: Vec<(String, String)> = Vec::new();
    let rows = estimates
        .rows
        .iter()
        .filter(|row| match yovi.get(&row.country, &row.vaccine) {
            Some(intro) => row.year >= intro,
            None => {
                let key = (row.country.clone(), row.vaccine.clone());
                if !seen_missing.contains(&key) {
                    seen_missing.push(key);
                }
                true
            }
        })
        .cloned()
        .collect();
    for (country, vaccine) in seen_missing {
        report.log("yovi_missing_kept", format!("({country}, {vaccine})"));
    }
    EstimateTable { rows }
}
