//! Token-level reconstruction accuracy and AUROC.

use alloc::vec::Vec;

use thiserror::Error;

use crate::serializer::{TokenStream, PAD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("streams differ in layout or length")]
    ShapeMismatch,
    #[error("AUROC needs both positive and negative labels")]
    SingleClass,
    #[error("score at position {0} is not finite")]
    NonFinite(usize),
}

/// Fraction of positions where the hypothesis token equals the reference.
/// Positions holding padding in the reference are skipped unless
/// `include_pads` is set. `None` when no position is considered.
pub fn token_accuracy(
    reference: &TokenStream,
    hypothesis: &TokenStream,
    include_pads: bool,
) -> Result<Option<f64>, MetricsError> {
    if reference.layout != hypothesis.layout || reference.tokens.len() != hypothesis.tokens.len() {
        return Err(MetricsError::ShapeMismatch);
    }
    let mut considered = 0u64;
    let mut matched = 0u64;
    for (r, h) in reference.tokens.iter().zip(&hypothesis.tokens) {
        if *r == PAD && !include_pads {
            continue;
        }
        considered += 1;
        matched += u64::from(r == h);
    }
    Ok((considered > 0).then(|| matched as f64 / considered as f64))
}

/// Area under the ROC curve from `(score, is_positive)` pairs, computed as
/// the Mann-Whitney statistic with midranks for ties.
pub fn auroc(data: &[(f64, bool)]) -> Result<f64, MetricsError> {
    if let Some(i) = data.iter().position(|(s, _)| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let positives = data.iter().filter(|(_, y)| *y).count();
    let negatives = data.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut sorted: Vec<(f64, bool)> = data.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // ranks are 1-based; a tie group spanning ranks a..=b gets (a + b) / 2
    let mut rank_sum_doubled: u64 = 0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end].0 == sorted[start].0 {
            end += 1;
        }
        let pos_in_group = sorted[start..end].iter().filter(|(_, y)| *y).count() as u64;
        let doubled_midrank = (start + 1 + end) as u64;
        rank_sum_doubled += pos_in_group * doubled_midrank;
        start = end;
    }
    let p = positives as u64;
    let doubled_u = rank_sum_doubled - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * negatives as u64) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serializer::Layout;
    use alloc::vec;

    fn flat(tokens: Vec<u32>) -> TokenStream {
        TokenStream::unlabeled(Layout::Flattened { tokens: tokens.len() }, tokens).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let r = flat(vec![5, 6, 7, 8, 0, 0, 0, 0]);
        assert_eq!(token_accuracy(&r, &r, false), Ok(Some(1.0)));
        let h = flat(vec![5, 6, 9, 8, 0, 0, 0, 0]);
        assert_eq!(token_accuracy(&r, &h, false), Ok(Some(0.75)));
        assert_eq!(token_accuracy(&r, &h, true), Ok(Some(7.0 / 8.0)));
        let pads = flat(vec![0; 4]);
        assert_eq!(token_accuracy(&pads, &pads, false), Ok(None));
        assert_eq!(token_accuracy(&r, &pads, false), Err(MetricsError::ShapeMismatch));
    }

    #[test]
    fn auroc_examples() {
        let d = [(0.1, false), (0.4, false), (0.35, true), (0.8, true)];
        assert_eq!(auroc(&d), Ok(0.75));
        let sep = [(0.1, false), (0.2, false), (0.9, true)];
        assert_eq!(auroc(&sep), Ok(1.0));
        let flat = [(0.3, false), (0.3, true), (0.3, true), (0.3, false)];
        assert_eq!(auroc(&flat), Ok(0.5));
    }

    #[test]
    fn auroc_errors() {
        assert_eq!(auroc(&[(0.1, true), (0.2, true)]), Err(MetricsError::SingleClass));
        assert_eq!(auroc(&[]), Err(MetricsError::SingleClass));
        assert_eq!(auroc(&[(f64::NAN, true), (0.2, false)]), Err(MetricsError::NonFinite(0)));
    }
}
