use super::normalize::normalize_transcript;
use super::RadioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn rate(&self) -> f64 {
        self.edits() as f64 / self.reference_len as f64
    }
}

/// Minimum edit alignment between two token sequences. Ties in the
/// backtrace prefer substitution, then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        cost[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            cost[i][j] = sub.min(cost[i - 1][j] + 1).min(cost[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts { reference_len: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if cost[i][j] == cost[i - 1][j - 1] + usize::from(!same) {
                counts.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Word error rate over normalized tokens. Can exceed 1.
pub fn word_error_rate(reference: &str, hypothesis: &str) -> Result<f64, RadioError> {
    Ok(wer_counts(reference, hypothesis)?.rate())
}

pub fn wer_counts(reference: &str, hypothesis: &str) -> Result<EditCounts, RadioError> {
    let r = normalize_transcript(reference);
    let h = normalize_transcript(hypothesis);
    if r.is_empty() {
        return Err(RadioError::UndefinedWer);
    }
    Ok(align(&r.texts(), &h.texts()))
}

/// WER on whitespace-split words with no normalization at all.
pub fn raw_word_error_rate(reference: &str, hypothesis: &str) -> Result<f64, RadioError> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    if r.is_empty() {
        return Err(RadioError::UndefinedWer);
    }
    Ok(align(&r, &h).rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        assert_eq!(word_error_rate("left downwind runway eight", "left downwind runway eight").unwrap(), 0.0);
    }

    #[test]
    fn one_substitution_in_four() {
        let c = wer_counts("left downwind runway eight", "left downwind runway three").unwrap();
        assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
        assert_eq!(c.rate(), 0.25);
    }

    #[test]
    fn deletion_plus_two_substitutions() {
        // ref: a b c d e ; hyp drops c and swaps b, e
        // table by hand: best path keeps a, d; S(b->x), D(c), S(e->y) = 3 edits
        let c = wer_counts("traffic cherokee entering downwind base", "traffic skyhawk downwind final").unwrap();
        assert_eq!((c.substitutions, c.deletions, c.insertions), (2, 1, 0));
        assert!((c.rate() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn can_exceed_one() {
        assert_eq!(word_error_rate("base", "turning left base runway eight").unwrap(), 4.0);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert!(matches!(word_error_rate("", "x"), Err(RadioError::UndefinedWer)));
        assert!(matches!(word_error_rate("uh, um", "x"), Err(RadioError::UndefinedWer)));
    }

    #[test]
    fn normalization_invariance() {
        assert_eq!(word_error_rate("Cherokee 135PL, Runway 8", "cherokee one three five papa lima runway eight").unwrap(), 0.0);
        assert!(raw_word_error_rate("Cherokee 135PL, Runway 8", "cherokee one three five papa lima runway eight").unwrap() > 0.9);
    }
}
