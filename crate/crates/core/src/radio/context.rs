//! Aircraft directory plus the static and dynamic prompt contexts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::airspace::{cardinal_direction, distance_miles, AirportConfig, Direction, LocalPosition};

use super::normalize::normalize_transcript;
use super::RadioError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AircraftDirectoryEntry {
    pub tail_number: String,
    /// Display names as registered, e.g. "P28A", "Piper", "Cherokee".
    pub aliases: Vec<String>,
}

impl AircraftDirectoryEntry {
    pub fn new(tail: &str, aliases: &[&str]) -> Self {
        Self { tail_number: tail.to_uppercase(), aliases: aliases.iter().map(|s| s.to_string()).collect() }
    }

    /// Aliases as lowercase normalized token sequences.
    pub fn normalized_aliases(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = self
            .aliases
            .iter()
            .map(|a| normalize_transcript(a).tokens.into_iter().map(|t| t.text).collect::<Vec<_>>())
            .filter(|v| !v.is_empty())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Tail number to registered names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AircraftDirectory {
    entries: BTreeMap<String, AircraftDirectoryEntry>,
}

impl AircraftDirectory {
    pub fn new(entries: impl IntoIterator<Item = AircraftDirectoryEntry>) -> Result<Self, RadioError> {
        let mut map = BTreeMap::new();
        for e in entries {
            if map.insert(e.tail_number.clone(), e.clone()).is_some() {
                return Err(RadioError::Directory(format!("duplicate tail number {}", e.tail_number)));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn get(&self, tail: &str) -> Option<&AircraftDirectoryEntry> {
        self.entries.get(&tail.to_uppercase())
    }

    pub fn iter(&self) -> impl Iterator<Item = &AircraftDirectoryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `tail_number,alias1|alias2|...` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, RadioError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (tail, aliases) = line.split_once(',').unwrap_or((line, ""));
            let tail = tail.trim();
            if tail.is_empty() || !tail.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(RadioError::Directory(format!("line {}: bad tail number {:?}", i + 1, tail)));
            }
            let aliases: Vec<&str> = aliases.split('|').map(str::trim).filter(|a| !a.is_empty()).collect();
            entries.push(AircraftDirectoryEntry::new(tail, &aliases));
        }
        Self::new(entries)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            let _ = writeln!(out, "{},{}", e.tail_number, e.aliases.join("|"));
        }
        out
    }

    /// Fixture directory used by tests and the demo.
    pub fn fixture() -> Self {
        Self::new([
            AircraftDirectoryEntry::new(
                "N17NA",
                &["P28A", "Piper", "Carioquinha", "Cherokee", "Liner", "140-4", "Chief", "Archer", "Cruiser",
                  "Challenger", "Cadet", "Warrior", "Flite", "Tupi"],
            ),
            AircraftDirectoryEntry::new(
                "N2423U",
                &["C172", "Cutlass", "Hawk", "Rocket", "Skyhawk", "Mescalero", "Reims", "Powermatic"],
            ),
            AircraftDirectoryEntry::new(
                "N121NG",
                &["DA40", "Diamond Aircraft Ind Inc", "Katana", "Club", "Star", "Tundra", "Diamond"],
            ),
            AircraftDirectoryEntry::new("N135PL", &["P28A", "Piper", "Cherokee", "Archer"]),
        ])
        .expect("fixture tails are unique")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntry {
    pub tail_number: String,
    pub aliases: Vec<String>,
    pub distance_miles: u32,
    /// `None` when the aircraft is directly over the reference point.
    pub direction: Option<Direction>,
}

impl ContextEntry {
    pub fn normalized_aliases(&self) -> Vec<Vec<String>> {
        AircraftDirectoryEntry { tail_number: self.tail_number.clone(), aliases: self.aliases.clone() }
            .normalized_aliases()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynamicContext {
    pub entries: Vec<ContextEntry>,
}

impl DynamicContext {
    pub fn contains(&self, tail: &str) -> bool {
        self.entries.iter().any(|e| e.tail_number.eq_ignore_ascii_case(tail))
    }
}

pub const CONTEXT_PREAMBLE: &str = "Your task is to identify which aircraft made the call from a set of options. \
Only reply with the aircraft tail number with no additional text, if you cannot make a determination return Unknown.\n\
Options:";

/// Builds the per-call aircraft list and its prompt rendering, one block per
/// aircraft in tail-number order.
pub fn build_dynamic_context(
    directory: &AircraftDirectory,
    states: &[(String, LocalPosition)],
) -> (DynamicContext, String) {
    let mut entries: Vec<ContextEntry> = states
        .iter()
        .map(|(tail, pos)| {
            let aliases = match directory.get(tail) {
                Some(e) => e.aliases.clone(),
                None => {
                    log::warn!("tail {tail} not in aircraft directory; listing without names");
                    Vec::new()
                }
            };
            ContextEntry {
                tail_number: tail.to_uppercase(),
                aliases,
                distance_miles: distance_miles(pos),
                direction: cardinal_direction(pos, 8).ok(),
            }
        })
        .collect();
    entries.sort_by(|a, b| a.tail_number.cmp(&b.tail_number));
    let mut text = String::from(CONTEXT_PREAMBLE);
    for e in &entries {
        let dir = e.direction.map(|d| d.name()).unwrap_or("Overhead");
        let _ = write!(
            text,
            "\n{}\nNames - {}\nLocation - {} miles, {}",
            e.tail_number,
            e.aliases.join(", "),
            e.distance_miles,
            dir
        );
    }
    (DynamicContext { entries }, text)
}

/// Fixed domain text handed to external models.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StaticContext {
    pub airport_names: Vec<String>,
    pub runways: Vec<String>,
    pub lexicon: Vec<String>,
    /// (transcript, label) pairs. The bundled ones are written for this
    /// project and are not taken from any labeled corpus.
    pub examples: Vec<(String, String)>,
}

impl StaticContext {
    pub fn for_airport(airport: &AirportConfig) -> Self {
        let mut runways: Vec<String> = airport.runway_ends.iter().map(|r| r.designator.clone()).collect();
        runways.sort();
        let mut names = vec![airport.name.clone()];
        names.extend(airport.aliases.iter().cloned());
        let lexicon = [
            "traffic", "upwind", "crosswind", "downwind", "base", "final", "short final", "touch and go",
            "full stop", "departing", "midfield", "left traffic", "right traffic", "taxiing", "back-taxi",
            "clear of the runway", "straight-out", "45 entry",
        ];
        let r0 = runways.first().cloned().unwrap_or_default();
        let examples = vec![
            (format!("{} traffic Skyhawk 23U entering left downwind runway {}", airport.name, r0), format!("downwind:{r0}")),
            (format!("{} traffic Cherokee 135PL short final runway {} full stop", airport.name, r0), format!("landing:{r0}")),
            (format!("{} traffic Diamond 21NG departing runway {}", airport.name, r0), format!("takeoff:{r0}")),
            (format!("{} traffic Piper 7NA departing the pattern to the north", airport.name), "depart:N".into()),
            (format!("{} traffic Skyhawk 23U taxiing to runway {}", airport.name, r0), "other".into()),
            (format!("{} traffic radio check", airport.name), "insufficient".into()),
        ];
        Self { airport_names: names, runways, lexicon: lexicon.iter().map(|s| s.to_string()).collect(), examples }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Airport: {}", self.airport_names.join(", "));
        let _ = writeln!(out, "Runways: {}", self.runways.join(", "));
        let _ = writeln!(out, "Terminology: {}", self.lexicon.join(", "));
        let _ = writeln!(
            out,
            "Intent labels: takeoff:<rwy>, landing:<rwy>, crosswind:<rwy>, downwind:<rwy>, base:<rwy>, depart:N|E|S|W, other, insufficient"
        );
        out.push_str("Examples:\n");
        for (t, l) in &self.examples {
            let _ = writeln!(out, "{t} => {l}");
        }
        out
    }
}
