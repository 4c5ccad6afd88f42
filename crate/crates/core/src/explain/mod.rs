//! Attention-based ranking explanations: rank the sequence units by the
//! attention they draw from a reference unit and render case reports.

use std::fmt::Write as _;

use crate::error::ExplainError;
use crate::model::{AttentionTrace, UnitLabel};

/// One ranked unit in a report: its mean weight over heads plus the
/// per-head weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub unit: UnitLabel,
    pub mean: f64,
    pub per_head: Vec<f64>,
}

/// A rendered-ready explanation for one (pair, item) scoring.
#[derive(Clone, Debug)]
pub struct ExplanationReport {
    pub pair_id: String,
    pub item_id: String,
    /// 1-based layer the weights were read from.
    pub layer: usize,
    pub reference: UnitLabel,
    /// Ranked by mean weight descending, ties by sequence position.
    pub rows: Vec<ReportRow>,
}

/// Rank every real unit by the attention it receives from `reference` at
/// the given 1-based layer, averaged over heads. The weights are the
/// trace's softmax outputs, unrenormalized.
pub fn attention_report(
    trace: &AttentionTrace,
    reference: UnitLabel,
    layer: usize,
) -> Result<Vec<ReportRow>, ExplainError> {
    if layer == 0 || layer > trace.layer_count() {
        return Err(ExplainError::LayerOutOfRange {
            layer,
            layers: trace.layer_count(),
        });
    }
    let Some(ref_idx) = trace.labels.iter().position(|&l| l == reference) else {
        return Err(ExplainError::BadReference);
    };
    let heads = &trace.layers[layer - 1];
    let mean = trace.mean_row(layer - 1, ref_idx);
    let mut rows: Vec<(usize, ReportRow)> = trace
        .labels
        .iter()
        .enumerate()
        .map(|(pos, &unit)| {
            (
                pos,
                ReportRow {
                    unit,
                    mean: mean[pos],
                    per_head: heads.iter().map(|h| h.at(ref_idx, pos)).collect(),
                },
            )
        })
        .collect();
    rows.sort_by(|(pa, a), (pb, b)| {
        b.mean
            .partial_cmp(&a.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| pa.cmp(pb))
    });
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Snippet length cap, in tokens.
const SNIPPET_TOKENS: usize = 40;

/// Join and truncate review tokens for display.
pub fn snippet(tokens: &[String]) -> String {
    if tokens.len() <= SNIPPET_TOKENS {
        tokens.join(" ")
    } else {
        format!("{} …", tokens[..SNIPPET_TOKENS].join(" "))
    }
}

/// Accumulated attention per segment (query, user reviews, item reviews);
/// partitions the reference row's unit weights.
pub fn segment_weights(rows: &[ReportRow]) -> (f64, f64, f64) {
    let mut q = 0.0;
    let mut u = 0.0;
    let mut i = 0.0;
    for row in rows {
        match row.unit {
            UnitLabel::Query => q += row.mean,
            UnitLabel::UserReview(_) => u += row.mean,
            UnitLabel::ItemReview(_) => i += row.mean,
            UnitLabel::Pad => {}
        }
    }
    (q, u, i)
}

/// Render a plain-text case report: the query, accumulated segment weights,
/// and the strongest/weakest reviews on each side with their snippets.
pub fn render_case(
    report: &ExplanationReport,
    query_text: &str,
    review_text: impl Fn(UnitLabel) -> Option<String>,
    top_k: usize,
    bottom_k: usize,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "pair: {}", report.pair_id);
    let _ = writeln!(out, "item: {}", report.item_id);
    let _ = writeln!(out, "query: \"{query_text}\"");
    let _ = writeln!(
        out,
        "reference: {} at layer {}",
        report.reference, report.layer
    );
    let (q, u, i) = segment_weights(&report.rows);
    let _ = writeln!(
        out,
        "segment weights: query {q:.4} | user reviews {u:.4} | item reviews {i:.4}"
    );

    let section = |out: &mut String, title: &str, rows: Vec<&ReportRow>| {
        if rows.is_empty() {
            return;
        }
        let _ = writeln!(out, "{title}:");
        for row in rows {
            let text = review_text(row.unit).unwrap_or_default();
            let _ = writeln!(out, "  {:.4}  {:<5} {}", row.mean, row.unit.to_string(), text);
        }
    };

    let users: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| matches!(r.unit, UnitLabel::UserReview(_)))
        .collect();
    if users.is_empty() {
        let _ = writeln!(out, "user reviews: non-personalized (no user reviews)");
    } else {
        section(&mut out, "top user reviews", users.iter().take(top_k).copied().collect());
        let bottom: Vec<&ReportRow> = users
            .iter()
            .rev()
            .take(bottom_k.min(users.len().saturating_sub(top_k)))
            .copied()
            .collect();
        section(&mut out, "bottom user reviews", bottom);
    }

    let items: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| matches!(r.unit, UnitLabel::ItemReview(_)))
        .collect();
    if items.is_empty() {
        let _ = writeln!(out, "item reviews: none (description fallback)");
    } else {
        section(&mut out, "top item reviews", items.iter().take(top_k).copied().collect());
        let bottom: Vec<&ReportRow> = items
            .iter()
            .rev()
            .take(bottom_k.min(items.len().saturating_sub(top_k)))
            .copied()
            .collect();
        section(&mut out, "bottom item reviews", bottom);
    }
    out
}

/// Line-delimited machine-readable form: `reference<TAB>unit<TAB>weight`.
pub fn machine_lines(report: &ExplanationReport) -> String {
    let mut out = String::new();
    for row in &report.rows {
        let _ = writeln!(out, "{}\t{}\t{:.9e}", report.reference, row.unit, row.mean);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn trace_2x2() -> AttentionTrace {
        // one layer, two heads over units (q, ir1)
        AttentionTrace {
            labels: vec![UnitLabel::Query, UnitLabel::ItemReview(1)],
            layers: vec![vec![
                Tensor::matrix(2, 2, vec![0.75, 0.25, 0.5, 0.5]),
                Tensor::matrix(2, 2, vec![0.25, 0.75, 0.5, 0.5]),
            ]],
        }
    }

    #[test]
    fn two_unit_weights_sum_to_one() {
        let trace = trace_2x2();
        let rows = attention_report(&trace, UnitLabel::Query, 1).unwrap();
        let total: f64 = rows.iter().map(|r| r.mean).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // means average the heads: both units get 0.5 here; tie resolves by
        // sequence position, so the query ranks first
        assert_eq!(rows[0].unit, UnitLabel::Query);
        assert_eq!(rows[0].per_head, vec![0.75, 0.25]);
    }

    #[test]
    fn single_head_mean_is_the_row() {
        let trace = AttentionTrace {
            labels: vec![UnitLabel::Query, UnitLabel::ItemReview(1)],
            layers: vec![vec![Tensor::matrix(2, 2, vec![0.9, 0.1, 0.2, 0.8])]],
        };
        let rows = attention_report(&trace, UnitLabel::Query, 1).unwrap();
        assert_eq!(rows[0].mean, 0.9);
        assert_eq!(rows[1].mean, 0.1);
    }

    #[test]
    fn bad_reference_and_layer_rejected() {
        let trace = trace_2x2();
        assert!(attention_report(&trace, UnitLabel::UserReview(1), 1).is_err());
        assert!(attention_report(&trace, UnitLabel::Query, 2).is_err());
        assert!(attention_report(&trace, UnitLabel::Query, 0).is_err());
    }

    #[test]
    fn render_mentions_degraded_mode_and_partitions_weights() {
        let trace = trace_2x2();
        let rows = attention_report(&trace, UnitLabel::Query, 1).unwrap();
        let report = ExplanationReport {
            pair_id: "q1:u1".into(),
            item_id: "i1".into(),
            layer: 1,
            reference: UnitLabel::Query,
            rows,
        };
        let text = render_case(&report, "red sock", |_| Some("great sock".into()), 1, 1);
        assert!(text.contains("non-personalized (no user reviews)"));
        assert!(text.contains("top item reviews"));
        let (q, u, i) = segment_weights(&report.rows);
        assert!((q + u + i - 1.0).abs() < 1e-9);
    }

    #[test]
    fn snippet_truncates_at_forty_tokens() {
        let tokens: Vec<String> = (0..45).map(|i| format!("w{i}")).collect();
        let s = snippet(&tokens);
        assert!(s.ends_with('…'));
        assert_eq!(s.split_whitespace().count(), 41);
        let short: Vec<String> = (0..5).map(|i| format!("w{i}")).collect();
        assert_eq!(snippet(&short), "w0 w1 w2 w3 w4");
    }
}
