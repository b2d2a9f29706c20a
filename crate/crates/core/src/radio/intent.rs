//! Rule cascade from normalized call tokens to an intent label.

use crate::airspace::{AirportConfig, Direction, IntentLabel, Leg};

use super::normalize::TokenStream;

/// Rule rank; lower is more specific and wins over higher ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Rank {
    LegEntry = 1,
    Landing = 2,
    Takeoff = 3,
    PatternExit = 4,
    Ground = 5,
}

#[derive(Debug, Clone, PartialEq)]
struct Match {
    rank: Rank,
    pos: usize,
    label: IntentLabel,
}

/// Words after which a bare number is read as a runway.
const RUNWAY_CUES: &[&str] = &["runway", "rwy", "downwind", "base", "crosswind", "final", "for", "departing", "landing"];
const DEPARTURE_CUES: &[&str] = &["departing", "departure", "depart", "leaving", "exiting", "outbound", "out"];
const GROUND: &[&str] = &["taxiing", "taxi", "taxying", "backtaxi", "backtaxiing", "clearing", "parking", "ramp"];

fn runway_mentions(words: &[&str], airport: &AirportConfig) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if i == 0 || !RUNWAY_CUES.contains(&words[i - 1]) {
            continue;
        }
        if let Ok(n) = w.parse::<u32>() {
            if let Some(end) = airport.runway_by_number(n) {
                out.push((i, end.designator.clone()));
            }
        }
    }
    out
}

/// First runway mentioned at or after `pos`, else the closest one before it.
/// Single-runway-end airports need no mention.
fn runway_for(pos: usize, mentions: &[(usize, String)], airport: &AirportConfig) -> Option<String> {
    mentions
        .iter()
        .find(|(i, _)| *i >= pos)
        .or_else(|| mentions.iter().rev().find(|(i, _)| *i < pos))
        .map(|(_, r)| r.clone())
        .or_else(|| (airport.runway_ends.len() == 1).then(|| airport.runway_ends[0].designator.clone()))
}

fn direction_word(w: &str) -> Option<(Direction, bool)> {
    Some(match w {
        "north" => (Direction::North, false),
        "east" => (Direction::East, false),
        "south" => (Direction::South, false),
        "west" => (Direction::West, false),
        "northbound" => (Direction::North, true),
        "eastbound" => (Direction::East, true),
        "southbound" => (Direction::South, true),
        "westbound" => (Direction::West, true),
        _ => return None,
    })
}

fn leg_word(w: &str) -> Option<Leg> {
    match w {
        "downwind" => Some(Leg::Downwind),
        "base" => Some(Leg::Base),
        "crosswind" => Some(Leg::Crosswind),
        _ => None,
    }
}

fn collect_matches(words: &[&str], airport: &AirportConfig) -> Vec<Match> {
    let mentions = runway_mentions(words, airport);
    let mut out = Vec::new();
    let at = |i: usize| words.get(i).copied().unwrap_or("");
    let mut push = |rank: Rank, pos: usize, label: Option<IntentLabel>| {
        if let Some(label) = label {
            out.push(Match { rank, pos, label });
        }
    };
    for (i, &w) in words.iter().enumerate() {
        if let Some(leg) = leg_word(w) {
            push(Rank::LegEntry, i, runway_for(i, &mentions, airport).map(|r| IntentLabel::EnterLeg(r, leg)));
        }
        let landing = match w {
            "final" | "landing" | "land" => true,
            "touch" => at(i + 1) == "and" && at(i + 2) == "go",
            "stop" => at(i + 1) == "and" && at(i + 2) == "go",
            "full" => at(i + 1) == "stop",
            _ => false,
        };
        if landing {
            push(Rank::Landing, i, runway_for(i, &mentions, airport).map(IntentLabel::Landing));
        }
        let takeoff = match w {
            "departing" | "departure" | "rolling" => mentions.iter().any(|(j, _)| *j == i + 1 || (*j == i + 2 && at(i + 1) == "runway")),
            "taking" => at(i + 1) == "off",
            "takeoff" => true,
            "take" => at(i + 1) == "off",
            _ => false,
        };
        if takeoff {
            push(Rank::Takeoff, i, runway_for(i, &mentions, airport).map(IntentLabel::Takeoff));
        }
        if let Some((dir, bound)) = direction_word(w) {
            let cued = bound
                || words[i.saturating_sub(5)..i].iter().any(|p| DEPARTURE_CUES.contains(p))
                || matches!(at(i + 1), "departure" | "bound" | "departing");
            let position_report = i > 0 && matches!(words[i - 1], "miles" | "mile");
            if cued && !position_report {
                push(Rank::PatternExit, i, Some(IntentLabel::Depart(dir)));
            }
        }
        let ground = GROUND.contains(&w)
            || (w == "clear" && at(i + 1) == "of")
            || (w == "holding" && at(i + 1) == "short");
        if ground {
            push(Rank::Ground, i, Some(IntentLabel::OtherIntent));
        }
    }
    out
}

/// Deterministic intent extraction. The most specific rule that fires wins,
/// the latest occurrence wins within a rule, and a tie between different
/// labels at the same position yields `InsufficientInformation`.
pub fn extract_intent(tokens: &TokenStream, airport: &AirportConfig) -> IntentLabel {
    let words = tokens.texts();
    let matches = collect_matches(&words, airport);
    let Some(best_rank) = matches.iter().map(|m| m.rank).min() else {
        return IntentLabel::InsufficientInformation;
    };
    let top: Vec<&Match> = matches.iter().filter(|m| m.rank == best_rank).collect();
    let last = top.iter().map(|m| m.pos).max().unwrap();
    let mut at_last = top.iter().filter(|m| m.pos == last).map(|m| &m.label);
    let first = at_last.next().unwrap();
    if at_last.any(|l| l != first) {
        return IntentLabel::InsufficientInformation;
    }
    first.clone()
}
