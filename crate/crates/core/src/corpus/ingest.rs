//! Parse line-delimited review and metadata records (Amazon 5-core layout).

use std::io::BufRead;

use serde::Deserialize;

use super::normalize::normalize_text;
use super::{ItemMeta, ReviewRecord};
use crate::error::CorpusError;

/// A recoverable per-line parse problem.
#[derive(Clone, Debug, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Result of an ingest pass: parsed records plus per-line issues.
#[derive(Debug)]
pub struct IngestReport<T> {
    pub records: Vec<T>,
    /// Records whose text normalized to nothing.
    pub dropped_empty: usize,
    pub errors: Vec<LineError>,
}

impl<T> Default for IngestReport<T> {
    fn default() -> Self {
        IngestReport {
            records: Vec::new(),
            dropped_empty: 0,
            errors: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
struct RawReview {
    #[serde(rename = "reviewerID")]
    reviewer_id: Option<String>,
    asin: Option<String>,
    #[serde(rename = "reviewText")]
    review_text: Option<String>,
    #[serde(rename = "unixReviewTime")]
    unix_review_time: Option<i64>,
    overall: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDescription {
    Text(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct RawMeta {
    asin: Option<String>,
    #[serde(default)]
    categories: Vec<Vec<String>>,
    description: Option<RawDescription>,
}

/// Ingest reviews from a line-delimited stream.
///
/// Records are returned in input order. Lines that fail to parse or miss a
/// required field become [`LineError`]s; records whose text normalizes to
/// nothing are dropped and counted.
pub fn ingest_reviews<R: BufRead>(reader: R) -> Result<IngestReport<ReviewRecord>, CorpusError> {
    let mut report = IngestReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawReview = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(LineError {
                    line: lineno,
                    message: format!("invalid JSON: {e}"),
                });
                continue;
            }
        };
        let mut missing = |field: &str| {
            report.errors.push(LineError {
                line: lineno,
                message: format!("missing required field {field}"),
            });
        };
        let (Some(user), Some(item), Some(text), Some(time)) = (
            raw.reviewer_id.as_deref(),
            raw.asin.as_deref(),
            raw.review_text.as_deref(),
            raw.unix_review_time,
        ) else {
            if raw.reviewer_id.is_none() {
                missing("reviewerID");
            } else if raw.asin.is_none() {
                missing("asin");
            } else if raw.review_text.is_none() {
                missing("reviewText");
            } else {
                missing("unixReviewTime");
            }
            continue;
        };
        if time < 0 {
            report.errors.push(LineError {
                line: lineno,
                message: format!("negative timestamp {time}"),
            });
            continue;
        }
        let tokens = normalize_text(text);
        if tokens.is_empty() {
            report.dropped_empty += 1;
            continue;
        }
        report.records.push(ReviewRecord {
            user_id: user.to_string(),
            item_id: item.to_string(),
            tokens,
            timestamp: time,
            rating: raw.overall.filter(|r| (1.0..=5.0).contains(r)),
        });
    }
    Ok(report)
}

/// Ingest item metadata. Category path levels are normalized per level;
/// paths that normalize to nothing are dropped.
pub fn ingest_meta<R: BufRead>(reader: R) -> Result<IngestReport<ItemMeta>, CorpusError> {
    let mut report = IngestReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawMeta = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(LineError {
                    line: lineno,
                    message: format!("invalid JSON: {e}"),
                });
                continue;
            }
        };
        let Some(item) = raw.asin.as_deref() else {
            report.errors.push(LineError {
                line: lineno,
                message: "missing required field asin".to_string(),
            });
            continue;
        };
        let category_paths: Vec<Vec<String>> = raw
            .categories
            .iter()
            .map(|path| path.to_vec())
            .filter(|path| !path.is_empty())
            .collect();
        let description_tokens = match &raw.description {
            Some(RawDescription::Text(t)) => normalize_text(t),
            Some(RawDescription::Many(ts)) => {
                ts.iter().flat_map(|t| normalize_text(t)).collect()
            }
            None => Vec::new(),
        };
        report.records.push(ItemMeta {
            item_id: item.to_string(),
            category_paths,
            description_tokens,
        });
    }
    Ok(report)
}
