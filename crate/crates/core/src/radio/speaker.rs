//! Speaker identification by scoring each candidate in the dynamic context.

use super::context::{ContextEntry, DynamicContext};
use super::normalize::TokenStream;

const TAIL_WEIGHT: u32 = 3;
const MULTI_ALIAS_WEIGHT: u32 = 2;
const SINGLE_ALIAS_WEIGHT: u32 = 1;
const MIN_SUFFIX: usize = 2;

/// Longest token that is a suffix of the tail number, in characters.
fn tail_suffix_len(tail: &str, words: &[&str]) -> usize {
    let tail = tail.to_ascii_lowercase();
    words
        .iter()
        .filter(|w| w.len() >= MIN_SUFFIX && tail.ends_with(*w))
        .map(|w| w.len())
        .max()
        .unwrap_or(0)
}

fn contains_seq(words: &[&str], seq: &[String]) -> bool {
    !seq.is_empty() && words.windows(seq.len()).any(|w| w.iter().zip(seq).all(|(a, b)| *a == b))
}

pub fn speaker_score(entry: &ContextEntry, words: &[&str]) -> u32 {
    let mut score = TAIL_WEIGHT * tail_suffix_len(&entry.tail_number, words) as u32;
    for alias in entry.normalized_aliases() {
        if contains_seq(words, &alias) {
            score += if alias.len() > 1 { MULTI_ALIAS_WEIGHT } else { SINGLE_ALIAS_WEIGHT };
        }
    }
    score
}

/// The unique highest-scoring tail, or `None` (Unknown) on a tie or when
/// nothing matches.
pub fn identify_speaker(tokens: &TokenStream, context: &DynamicContext) -> Option<String> {
    let words = tokens.texts();
    let mut best: Option<(&str, u32)> = None;
    let mut tied = false;
    for e in &context.entries {
        let s = speaker_score(e, &words);
        match best {
            _ if s == 0 => {}
            Some((_, b)) if s < b => {}
            Some((_, b)) if s == b => tied = true,
            _ => {
                best = Some((&e.tail_number, s));
                tied = false;
            }
        }
    }
    match best {
        Some((tail, _)) if !tied => Some(tail.to_string()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::LocalPosition;
    use crate::radio::context::{build_dynamic_context, AircraftDirectory, AircraftDirectoryEntry};
    use crate::radio::normalize_transcript;

    fn appendix_context() -> DynamicContext {
        let dir = AircraftDirectory::fixture();
        let states = vec![
            ("N17NA".to_string(), LocalPosition::new(0.0, 9.26, 0.3)),
            ("N2423U".to_string(), LocalPosition::new(5.556, 0.0, 0.3)),
            ("N121NG".to_string(), LocalPosition::new(0.0, -7.4, 0.3)),
        ];
        build_dynamic_context(&dir, &states).0
    }

    #[test]
    fn skyhawk_picks_cessna() {
        let t = normalize_transcript("Butler traffic Skyhawk on the forty five for left downwind runway two six");
        assert_eq!(identify_speaker(&t, &appendix_context()).as_deref(), Some("N2423U"));
    }

    #[test]
    fn tail_suffix_dominates() {
        let dir = AircraftDirectory::new([
            AircraftDirectoryEntry::new("N135PL", &["Piper", "Cherokee"]),
            AircraftDirectoryEntry::new("N2423U", &["Cessna", "Skyhawk"]),
        ])
        .unwrap();
        let states = vec![
            ("N135PL".to_string(), LocalPosition::new(1.0, 0.0, 0.3)),
            ("N2423U".to_string(), LocalPosition::new(-1.0, 0.0, 0.3)),
        ];
        let (ctx, _) = build_dynamic_context(&dir, &states);
        let t = normalize_transcript("Cherokee 135PL three miles south entering left downwind runway 8");
        // N135PL: 3*5 + 1 (cherokee) = 16; N2423U: 0
        assert_eq!(speaker_score(&ctx.entries[0], &t.texts()), 16);
        assert_eq!(speaker_score(&ctx.entries[1], &t.texts()), 0);
        assert_eq!(identify_speaker(&t, &ctx).as_deref(), Some("N135PL"));
        let spoken = normalize_transcript("Skyhawk two three uniform departing runway 26");
        // 3*3 + 1
        assert_eq!(speaker_score(&ctx.entries[1], &spoken.texts()), 10);
    }

    #[test]
    fn multi_token_alias_scores_two() {
        let ctx = appendix_context();
        let t = normalize_transcript("Diamond Aircraft Ind Inc on final");
        let e = ctx.entries.iter().find(|e| e.tail_number == "N121NG").unwrap();
        // multi-token alias (2) plus the single-token "diamond" (1)
        assert_eq!(speaker_score(e, &t.texts()), 3);
    }

    #[test]
    fn zero_or_tie_is_unknown() {
        let ctx = appendix_context();
        assert_eq!(identify_speaker(&normalize_transcript("traffic please advise"), &ctx), None);
        let dir = AircraftDirectory::new([
            AircraftDirectoryEntry::new("N1AB", &["Piper"]),
            AircraftDirectoryEntry::new("N2CD", &["Piper"]),
        ])
        .unwrap();
        let (ctx, _) = build_dynamic_context(
            &dir,
            &[("N1AB".into(), LocalPosition::new(1.0, 0.0, 0.0)), ("N2CD".into(), LocalPosition::new(2.0, 0.0, 0.0))],
        );
        assert_eq!(identify_speaker(&normalize_transcript("Piper on downwind"), &ctx), None);
    }

    #[test]
    fn never_returns_tail_outside_context() {
        let ctx = appendix_context();
        let t = normalize_transcript("Cherokee 135PL entering downwind");
        // N135PL is in the directory but not in this context; "cherokee" points at N17NA
        assert_eq!(identify_speaker(&t, &ctx).as_deref(), Some("N17NA"));
    }
}
