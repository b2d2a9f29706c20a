//! Transcript normalization: lowercasing, phonetic alphabet and spoken
//! number collapsing, and fusing of spelled-out identifiers.

use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte range in the raw transcript this token was built from.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
}

impl TokenStream {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn joined(&self) -> String {
        self.texts().join(" ")
    }
}

const FILLERS: &[&str] = &["uh", "uhh", "um", "umm", "er", "erm", "ah", "ahh", "hmm"];

fn phonetic(word: &str) -> Option<char> {
    Some(match word {
        "alpha" | "alfa" => 'a',
        "bravo" => 'b',
        "charlie" => 'c',
        "delta" => 'd',
        "echo" => 'e',
        "foxtrot" => 'f',
        "golf" => 'g',
        "hotel" => 'h',
        "india" => 'i',
        "juliet" | "juliett" => 'j',
        "kilo" => 'k',
        "lima" => 'l',
        "mike" => 'm',
        "november" => 'n',
        "oscar" => 'o',
        "papa" => 'p',
        "quebec" => 'q',
        "romeo" => 'r',
        "sierra" => 's',
        "tango" => 't',
        "uniform" => 'u',
        "victor" => 'v',
        "whiskey" | "whisky" => 'w',
        "xray" => 'x',
        "yankee" => 'y',
        "zulu" => 'z',
        _ => return None,
    })
}

fn spoken_digit(word: &str) -> Option<char> {
    Some(match word {
        "zero" | "oh" => '0',
        "one" | "wun" => '1',
        "two" => '2',
        "three" | "tree" => '3',
        "four" | "fower" => '4',
        "five" | "fife" => '5',
        "six" => '6',
        "seven" => '7',
        "eight" | "ait" => '8',
        "nine" | "niner" => '9',
        _ => return None,
    })
}

fn teen(word: &str) -> Option<&'static str> {
    Some(match word {
        "ten" => "10",
        "eleven" => "11",
        "twelve" => "12",
        "thirteen" => "13",
        "fourteen" => "14",
        "fifteen" => "15",
        "sixteen" => "16",
        "seventeen" => "17",
        "eighteen" => "18",
        "nineteen" => "19",
        _ => return None,
    })
}

fn tens(word: &str) -> Option<char> {
    Some(match word {
        "twenty" => '2',
        "thirty" => '3',
        "forty" => '4',
        "fifty" => '5',
        "sixty" => '6',
        "seventy" => '7',
        "eighty" => '8',
        "ninety" => '9',
        _ => return None,
    })
}

#[derive(Debug)]
enum Unit {
    Word(String),
    Digits(String),
    Letter(char),
}

fn raw_words(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push((text[s..i].to_lowercase(), s..i));
        }
    }
    if let Some(s) = start {
        out.push((text[s..].to_lowercase(), s..text.len()));
    }
    out
}

fn merge(a: &Range<usize>, b: &Range<usize>) -> Range<usize> {
    a.start.min(b.start)..a.end.max(b.end)
}

fn classify(words: Vec<(String, Range<usize>)>) -> Vec<(Unit, Range<usize>)> {
    let mut units: Vec<(Unit, Range<usize>)> = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        let (w, span) = &words[i];
        let next = words.get(i + 1).map(|(n, _)| n.as_str());
        let pair = |joined: &'static str, second: &str| (next == Some(second)).then_some(joined);
        if FILLERS.contains(&w.as_str()) {
            i += 1;
            continue;
        }
        // two-word spellings that collapse to one token
        let fused = match w.as_str() {
            "down" => pair("downwind", "wind"),
            "cross" => pair("crosswind", "wind"),
            "x" => pair("xray", "ray"),
            "back" => pair("backtaxi", "taxi"),
            _ => None,
        };
        if let Some(f) = fused {
            let span = merge(span, &words[i + 1].1);
            let unit = match phonetic(f) {
                Some(c) => Unit::Letter(c),
                None => Unit::Word(f.to_string()),
            };
            units.push((unit, span));
            i += 2;
            continue;
        }
        if let Some(t) = tens(w) {
            if let Some(d) = next.and_then(spoken_digit).filter(|d| *d != '0') {
                units.push((Unit::Digits(format!("{t}{d}")), merge(span, &words[i + 1].1)));
                i += 2;
            } else {
                units.push((Unit::Digits(format!("{t}0")), span.clone()));
                i += 1;
            }
            continue;
        }
        let unit = if let Some(c) = phonetic(w) {
            Unit::Letter(c)
        } else if let Some(d) = spoken_digit(w) {
            Unit::Digits(d.to_string())
        } else if let Some(t) = teen(w) {
            Unit::Digits(t.to_string())
        } else if w.chars().all(|c| c.is_ascii_digit()) {
            Unit::Digits(w.clone())
        } else {
            Unit::Word(w.clone())
        };
        units.push((unit, span.clone()));
        i += 1;
    }
    units
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    /// a lone leading "n" (November prefix)
    Prefix,
    Digits,
    /// letters after digits; at most two, as in registration suffixes
    Suffix(u8),
    Letters,
}

struct Group {
    text: String,
    span: Range<usize>,
    phase: Phase,
}

impl Group {
    fn start(unit: &Unit, span: Range<usize>) -> Option<Group> {
        let (text, phase) = match unit {
            Unit::Word(_) => return None,
            Unit::Digits(d) => (d.clone(), Phase::Digits),
            Unit::Letter('n') => ("n".to_string(), Phase::Prefix),
            Unit::Letter(c) => (c.to_string(), Phase::Letters),
        };
        Some(Group { text, span, phase })
    }

    fn extend(&mut self, unit: &Unit, span: &Range<usize>) -> bool {
        let next = match (self.phase, unit) {
            (_, Unit::Word(_)) => return false,
            (Phase::Prefix | Phase::Digits, Unit::Digits(_)) => Phase::Digits,
            (Phase::Prefix | Phase::Letters, Unit::Letter(_)) => Phase::Letters,
            (Phase::Digits, Unit::Letter(_)) => Phase::Suffix(1),
            (Phase::Suffix(n), Unit::Letter(_)) if n < 2 => Phase::Suffix(n + 1),
            _ => return false,
        };
        match unit {
            Unit::Digits(d) => self.text.push_str(d),
            Unit::Letter(c) => self.text.push(*c),
            Unit::Word(_) => unreachable!(),
        }
        self.span = merge(&self.span, span);
        self.phase = next;
        true
    }
}

/// Lowercases, strips punctuation and fillers, collapses the ICAO phonetic
/// alphabet and spoken numbers, and fuses runs such as "one three five papa
/// lima" into a single "135pl" token. Idempotent on its own joined output.
pub fn normalize_transcript(text: &str) -> TokenStream {
    let units = classify(raw_words(text));
    let mut tokens = Vec::with_capacity(units.len());
    let mut group: Option<Group> = None;
    for (unit, span) in units {
        if let Some(g) = group.as_mut() {
            if g.extend(&unit, &span) {
                continue;
            }
            let g = group.take().unwrap();
            tokens.push(Token { text: g.text, span: g.span });
        }
        match Group::start(&unit, span.clone()) {
            Some(g) => group = Some(g),
            None => {
                if let Unit::Word(w) = unit {
                    tokens.push(Token { text: w, span });
                }
            }
        }
    }
    if let Some(g) = group {
        tokens.push(Token { text: g.text, span: g.span });
    }
    TokenStream { tokens }
}
