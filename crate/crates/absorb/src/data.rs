//! Study-level data structures and CSV ingestion.
//!
//! A bivariate meta-analysis dataset is a list of studies, each reporting an
//! effect size and standard error for up to two endpoints. Studies are kept
//! in the canonical partition order: the `m1` studies reporting both
//! endpoints first, then the `m2` studies reporting only the first endpoint,
//! then the `m3` studies reporting only the second. Likelihood code indexes
//! into that layout directly.

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// One study row: sample size plus per-endpoint effect size and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub study_id: String,
    /// Number of participants, n >= 2.
    pub sample_size: u32,
    pub y1: Option<f64>,
    pub s1: Option<f64>,
    pub y2: Option<f64>,
    pub s2: Option<f64>,
}

impl StudyRecord {
    pub fn reports_y1(&self) -> bool {
        self.y1.is_some()
    }

    pub fn reports_y2(&self) -> bool {
        self.y2.is_some()
    }

    pub fn reports_any(&self) -> bool {
        self.reports_y1() || self.reports_y2()
    }

    /// (effect, se) for endpoint 1 when reported.
    pub fn outcome1(&self) -> Option<(f64, f64)> {
        self.y1.zip(self.s1)
    }

    /// (effect, se) for endpoint 2 when reported.
    pub fn outcome2(&self) -> Option<(f64, f64)> {
        self.y2.zip(self.s2)
    }
}

/// A parsed dataset in canonical partition order.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateDataset {
    /// Modeled studies: positions 0..m1 report both endpoints, the next m2
    /// report only endpoint 1, the remaining m3 report only endpoint 2.
    pub studies: Vec<StudyRecord>,
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    /// Count of completely unreported studies (used only by the ISM model).
    pub k_missing: usize,
}

impl BivariateDataset {
    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    /// Studies reporting both endpoints.
    pub fn both(&self) -> &[StudyRecord] {
        &self.studies[..self.m1]
    }

    /// Studies reporting only endpoint 1.
    pub fn y1_only(&self) -> &[StudyRecord] {
        &self.studies[self.m1..self.m1 + self.m2]
    }

    /// Studies reporting only endpoint 2.
    pub fn y2_only(&self) -> &[StudyRecord] {
        &self.studies[self.m1 + self.m2..]
    }

    /// Largest observed standard error for an endpoint (1 or 2), if any study
    /// reports it. Used as the upper bound of the selection-slope prior.
    pub fn max_se(&self, endpoint: usize) -> Option<f64> {
        let ses = self.observed_ses(endpoint);
        ses.into_iter().fold(None, |acc, s| match acc {
            None => Some(s),
            Some(a) => Some(a.max(s)),
        })
    }

    /// Smallest observed standard error for an endpoint.
    pub fn min_se(&self, endpoint: usize) -> Option<f64> {
        let ses = self.observed_ses(endpoint);
        ses.into_iter().fold(None, |acc, s| match acc {
            None => Some(s),
            Some(a) => Some(a.min(s)),
        })
    }

    fn observed_ses(&self, endpoint: usize) -> Vec<f64> {
        self.studies
            .iter()
            .filter_map(|st| match endpoint {
                1 => st.s1,
                2 => st.s2,
                _ => panic!("endpoint must be 1 or 2"),
            })
            .collect()
    }

    /// Canonical CSV serialization. Numbers use the shortest representation
    /// that round-trips the exact f64 value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("study_id,n,y1,s1,y2,s2\n");
        for st in &self.studies {
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                st.study_id,
                st.sample_size,
                cell(st.y1),
                cell(st.s1),
                cell(st.y2),
                cell(st.s2)
            ));
        }
        out
    }

    /// Content hash identifying the dataset; fits of the same data share it.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_csv().as_bytes());
        hasher.update(format!("k_missing={}", self.k_missing).as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Row-level findings from validation. A dataset is fit-eligible iff
/// `errors` is empty; warnings never block a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<(String, String)>,
    pub warnings: Vec<(String, String)>,
    /// Rows reporting neither outcome that were dropped (non-ISM parse only).
    pub n_excluded: usize,
}

impl ValidationReport {
    pub fn is_fit_eligible(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("malformed header: expected columns study_id,n,y1,s1,y2,s2, got `{0}`")]
    MalformedHeader(String),
    #[error("study `{study_id}`: non-numeric value `{value}` in column {column}")]
    NonNumericCell {
        study_id: String,
        column: String,
        value: String,
    },
    #[error("study `{study_id}`: standard error must be strictly positive, got {value}")]
    NonPositiveSe { study_id: String, value: f64 },
    #[error("study `{study_id}`: y present without s for endpoint {endpoint}")]
    YWithoutS { study_id: String, endpoint: usize },
    #[error("study `{study_id}`: s present without y for endpoint {endpoint}")]
    SWithoutY { study_id: String, endpoint: usize },
    #[error("study `{study_id}`: sample size must be at least 2, got {value}")]
    SampleSizeTooSmall { study_id: String, value: String },
    #[error("study `{study_id}`: log transform requires positive effect, got {value}")]
    LogOfNonPositive { study_id: String, value: f64 },
    #[error("no study reports both outcomes (m1 = 0); correlations are not estimable")]
    NoSharedStudies,
    #[error("dataset contains no studies")]
    Empty,
    #[error("csv error: {0}")]
    Csv(String),
}

/// Parsing switches. Log transforms replace y with ln(y) for that endpoint
/// and assume s is already on the log scale; `ism_mode` keeps rows with
/// neither outcome as a count of completely missing studies instead of
/// dropping them.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub log_transform_y1: bool,
    pub log_transform_y2: bool,
    pub ism_mode: bool,
}

const HEADER: [&str; 6] = ["study_id", "n", "y1", "s1", "y2", "s2"];

/// Parse a CSV dataset into the canonical partition.
///
/// Missing outcomes are empty cells or `NA` (case-insensitive). Rows with
/// neither outcome are excluded with a warning, or counted into `k_missing`
/// in ISM mode. Structural problems and invariant violations are hard errors.
pub fn parse_dataset(
    csv_text: &str,
    options: ParseOptions,
) -> Result<(BivariateDataset, ValidationReport), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(csv_text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .clone();
    let got: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
    if got != HEADER {
        return Err(DataError::MalformedHeader(got.join(",")));
    }

    let mut report = ValidationReport::default();
    let mut modeled = Vec::new();
    let mut k_missing = 0usize;

    for row in reader.records() {
        let row = row.map_err(|e| DataError::Csv(e.to_string()))?;
        let study_id = row.get(0).unwrap_or("").to_string();
        if study_id.is_empty() {
            return Err(DataError::Csv("row with empty study_id".into()));
        }

        let n_raw = row.get(1).unwrap_or("");
        let sample_size: u32 = n_raw.parse().map_err(|_| DataError::NonNumericCell {
            study_id: study_id.clone(),
            column: "n".into(),
            value: n_raw.to_string(),
        })?;
        if sample_size < 2 {
            return Err(DataError::SampleSizeTooSmall {
                study_id,
                value: n_raw.to_string(),
            });
        }

        let num = |col: usize, name: &str| -> Result<Option<f64>, DataError> {
            let raw = row.get(col).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Ok(None);
            }
            raw.parse::<f64>()
                .map(Some)
                .map_err(|_| DataError::NonNumericCell {
                    study_id: study_id.clone(),
                    column: name.into(),
                    value: raw.to_string(),
                })
        };

        let mut record = StudyRecord {
            study_id: study_id.clone(),
            sample_size,
            y1: num(2, "y1")?,
            s1: num(3, "s1")?,
            y2: num(4, "y2")?,
            s2: num(5, "s2")?,
        };
        check_record(&record)?;
        apply_log_transforms(&mut record, options)?;

        if record.reports_any() {
            modeled.push(record);
        } else if options.ism_mode {
            k_missing += 1;
            report.warnings.push((
                study_id,
                "reports neither outcome; counted toward k_missing".into(),
            ));
        } else {
            report.n_excluded += 1;
            report
                .warnings
                .push((study_id, "reports neither outcome; excluded".into()));
        }
    }

    if modeled.is_empty() {
        return Err(DataError::Empty);
    }
    let mut dataset = partition(modeled)?;
    dataset.k_missing = k_missing;
    Ok((dataset, report))
}

fn check_record(record: &StudyRecord) -> Result<(), DataError> {
    for (endpoint, y, s) in [(1, record.y1, record.s1), (2, record.y2, record.s2)] {
        match (y, s) {
            (Some(_), None) => {
                return Err(DataError::YWithoutS {
                    study_id: record.study_id.clone(),
                    endpoint,
                })
            }
            (None, Some(_)) => {
                return Err(DataError::SWithoutY {
                    study_id: record.study_id.clone(),
                    endpoint,
                })
            }
            (Some(_), Some(s)) if s <= 0.0 || !s.is_finite() => {
                return Err(DataError::NonPositiveSe {
                    study_id: record.study_id.clone(),
                    value: s,
                })
            }
            _ => {}
        }
    }
    Ok(())
}

fn apply_log_transforms(record: &mut StudyRecord, options: ParseOptions) -> Result<(), DataError> {
    if options.log_transform_y1 {
        if let Some(y) = record.y1 {
            if y <= 0.0 {
                return Err(DataError::LogOfNonPositive {
                    study_id: record.study_id.clone(),
                    value: y,
                });
            }
            record.y1 = Some(y.ln());
        }
    }
    if options.log_transform_y2 {
        if let Some(y) = record.y2 {
            if y <= 0.0 {
                return Err(DataError::LogOfNonPositive {
                    study_id: record.study_id.clone(),
                    value: y,
                });
            }
            record.y2 = Some(y.ln());
        }
    }
    Ok(())
}

/// Reorder studies into the canonical (both, y1-only, y2-only) layout.
///
/// The reorder is stable: relative order within each group is preserved.
/// Rows reporting neither outcome are counted into `k_missing` rather than
/// kept in the study list.
pub fn partition(studies: Vec<StudyRecord>) -> Result<BivariateDataset, DataError> {
    if studies.is_empty() {
        return Err(DataError::Empty);
    }
    let mut both = Vec::new();
    let mut first_only = Vec::new();
    let mut second_only = Vec::new();
    let mut k_missing = 0usize;
    for st in studies {
        match (st.reports_y1(), st.reports_y2()) {
            (true, true) => both.push(st),
            (true, false) => first_only.push(st),
            (false, true) => second_only.push(st),
            (false, false) => k_missing += 1,
        }
    }
    if both.is_empty() {
        return Err(DataError::NoSharedStudies);
    }
    let (m1, m2, m3) = (both.len(), first_only.len(), second_only.len());
    let mut ordered = both;
    ordered.extend(first_only);
    ordered.extend(second_only);
    Ok(BivariateDataset {
        studies: ordered,
        m1,
        m2,
        m3,
        k_missing,
    })
}

/// Check every dataset invariant, reporting violations as data.
pub fn validate(dataset: &BivariateDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut err = |id: &str, msg: String| report.errors.push((id.to_string(), msg));

    if dataset.m1 + dataset.m2 + dataset.m3 != dataset.studies.len() {
        err(
            "<dataset>",
            format!(
                "partition counts {}+{}+{} do not sum to {} studies",
                dataset.m1,
                dataset.m2,
                dataset.m3,
                dataset.studies.len()
            ),
        );
    }
    if dataset.m1 == 0 {
        err("<dataset>", "no study reports both outcomes".into());
    }

    for (idx, st) in dataset.studies.iter().enumerate() {
        let expected = if idx < dataset.m1 {
            (true, true)
        } else if idx < dataset.m1 + dataset.m2 {
            (true, false)
        } else {
            (false, true)
        };
        if (st.reports_y1(), st.reports_y2()) != expected {
            err(
                &st.study_id,
                format!("reporting pattern does not match partition position {idx}"),
            );
        }
        if st.sample_size < 2 {
            err(
                &st.study_id,
                format!("sample size {} below 2", st.sample_size),
            );
        }
        for (endpoint, y, s) in [(1, st.y1, st.s1), (2, st.y2, st.s2)] {
            match (y, s) {
                (Some(_), None) => err(&st.study_id, format!("y{endpoint} present without s")),
                (None, Some(_)) => err(&st.study_id, format!("s{endpoint} present without y")),
                (Some(_), Some(s)) if s <= 0.0 || !s.is_finite() => err(
                    &st.study_id,
                    format!("s{endpoint} = {s} is not strictly positive and finite"),
                ),
                _ => {}
            }
        }
    }
    report
}
