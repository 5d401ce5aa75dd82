use super::{FeedbackError, LlmResponse};
use crate::types::{Highlight, Magnitude, MetricTensor, SegmentId, Sentiment};

/// Start index of the window of `window` rows whose mean in `column` is the
/// largest (`High`) or smallest (`Low`); ties go to the earliest start.
pub fn extremal_window(column: &[f64], window: usize, value: Magnitude) -> Option<usize> {
    if window == 0 || column.len() < window {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for start in 0..=column.len() - window {
        let score = column[start..start + window].iter().sum::<f64>() / window as f64;
        let better = match (best, value) {
            (None, _) => true,
            (Some((_, b)), Magnitude::High) => score > b,
            (Some((_, b)), Magnitude::Low) => score < b,
        };
        if better {
            best = Some((start, score));
        }
    }
    best.map(|(i, _)| i)
}

/// For each triplet, the extremal window of `highlight_len + 1` rows in the
/// triplet's feature column, split into positive and negative highlights.
pub fn search_highlights(
    metrics: &MetricTensor,
    response: &LlmResponse,
    highlight_len: usize,
    segment_id: &SegmentId,
) -> Result<(Vec<Highlight>, Vec<Highlight>), FeedbackError> {
    let rows = metrics.row_count();
    if rows < highlight_len + 1 {
        return Err(FeedbackError::SegmentTooShort { rows, len: highlight_len });
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for t in &response.triplets {
        let column = metrics.column(&t.feature).ok_or_else(|| FeedbackError::MissingColumn(t.feature.clone()))?;
        let start = extremal_window(&column, highlight_len + 1, t.value).expect("window fits");
        let h = Highlight {
            segment_id: segment_id.clone(),
            start_index: start,
            end_index: start + highlight_len,
            feature: t.feature.clone(),
            sentiment: t.sentiment,
        };
        match t.sentiment {
            Sentiment::Positive => positives.push(h),
            Sentiment::Negative => negatives.push(h),
        }
    }
    Ok((positives, negatives))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SentimentTriplet;

    fn tensor(col: &[f64]) -> MetricTensor {
        MetricTensor { rows: col.iter().map(|&v| vec![v]).collect(), feature_order: vec!["f".into()] }
    }

    fn run(col: &[f64], l: usize, sentiment: Sentiment, value: Magnitude) -> (Vec<Highlight>, Vec<Highlight>) {
        let r = LlmResponse::from_triplets(vec![SentimentTriplet::new("f", sentiment, value)]);
        search_highlights(&tensor(col), &r, l, &SegmentId("s".into())).unwrap()
    }

    #[test]
    fn peak_window() {
        let (pos, neg) = run(&[0.0, 1.0, 5.0, 1.0, 0.0], 2, Sentiment::Positive, Magnitude::High);
        assert!(neg.is_empty());
        assert_eq!((pos[0].start_index, pos[0].end_index), (1, 3));
    }

    #[test]
    fn flat_column_takes_first_window() {
        let (_, neg) = run(&[2.0; 6], 3, Sentiment::Negative, Magnitude::High);
        assert_eq!((neg[0].start_index, neg[0].end_index), (0, 3));
    }

    #[test]
    fn valley_with_tie_takes_earliest() {
        let (pos, _) = run(&[5.0, 4.0, 0.0, 4.0, 5.0], 1, Sentiment::Positive, Magnitude::Low);
        assert_eq!((pos[0].start_index, pos[0].end_index), (1, 2));
    }

    #[test]
    fn errors() {
        let r = LlmResponse::from_triplets(vec![SentimentTriplet::new("g", Sentiment::Positive, Magnitude::Low)]);
        let id = SegmentId("s".into());
        assert!(matches!(search_highlights(&tensor(&[1.0; 5]), &r, 2, &id), Err(FeedbackError::MissingColumn(_))));
        assert!(matches!(search_highlights(&tensor(&[1.0; 2]), &r, 2, &id), Err(FeedbackError::SegmentTooShort { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn window_is_extremal_and_earliest(col in proptest::collection::vec(-5i32..5, 1..30), w in 1usize..6, high: bool) {
                let col: Vec<f64> = col.into_iter().map(f64::from).collect();
                let value = if high { Magnitude::High } else { Magnitude::Low };
                let Some(start) = extremal_window(&col, w, value) else {
                    prop_assert!(col.len() < w);
                    return Ok(());
                };
                let sums: Vec<f64> = col.windows(w).map(|s| s.iter().sum()).collect();
                let best = if high { sums.iter().cloned().fold(f64::MIN, f64::max) } else { sums.iter().cloned().fold(f64::MAX, f64::min) };
                prop_assert_eq!(sums[start], best);
                prop_assert!(sums[..start].iter().all(|&s| s != best));
            }
        }
    }
}
