//! Browser bindings. Each exported function takes and returns plain strings
//! (JSON for structured values) so the page needs no generated types.

use std::sync::OnceLock;

use goalcast::airspace::{AirportConfig, Direction, IntentLabel, LocalPosition};
use goalcast::data::Track;
use goalcast::goalnet::ModelParams;
use goalcast::radio::{build_dynamic_context, parse_call, AircraftDirectory};
use goalcast::sim::{simulate_flight, FlightScript, Maneuver, SimConfig};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

static MODEL_BYTES: &[u8] = include_bytes!("../assets/model.ckpt");

fn model() -> Result<&'static ModelParams, String> {
    static MODEL: OnceLock<Result<ModelParams, String>> = OnceLock::new();
    MODEL.get_or_init(|| ModelParams::read_checkpoint(MODEL_BYTES).map_err(|e| e.to_string())).as_ref().map_err(Clone::clone)
}

/// Fixture aircraft placed around the field so every one is a candidate.
fn demo_context() -> (AircraftDirectory, Vec<(String, LocalPosition)>) {
    let directory = AircraftDirectory::fixture();
    let spots = [(2.0, 1.5), (-3.0, 0.5), (0.5, -4.0), (5.0, -1.0)];
    let states = directory
        .iter()
        .zip(spots)
        .map(|(e, (x, y))| (e.tail_number.clone(), LocalPosition::new(x, y, 0.3)))
        .collect();
    (directory, states)
}

/// Speaker and intent for one transcript against the fixture directory.
pub fn parse_transcript(transcript: &str) -> String {
    let (directory, states) = demo_context();
    let (ctx, prompt) = build_dynamic_context(&directory, &states);
    let label = parse_call(transcript, &ctx, &AirportConfig::example());
    json!({
        "speaker": label.speaker.unwrap_or_else(|| "Unknown".into()),
        "intent": label.intent.to_string(),
        "context": prompt,
    })
    .to_string()
}

fn maneuver(name: &str) -> Result<Maneuver, String> {
    Ok(match name {
        "full_pattern" => Maneuver::FullPattern,
        "touch_and_go" => Maneuver::TouchAndGo,
        "entry45" => Maneuver::Entry45,
        "depart_n" => Maneuver::Departure(Direction::North),
        "depart_e" => Maneuver::Departure(Direction::East),
        "depart_s" => Maneuver::Departure(Direction::South),
        "depart_w" => Maneuver::Departure(Direction::West),
        "taxi" => Maneuver::Taxi,
        other => return Err(format!("unknown maneuver {other:?}")),
    })
}

#[derive(Serialize, Deserialize)]
pub struct FlightJson {
    /// `[t, x, y, z]` rows, seconds and km.
    pub track: Vec<[f64; 4]>,
    pub calls: Vec<CallJson>,
    /// Runway ends as `[designator, x, y]`.
    pub runways: Vec<(String, f64, f64)>,
}

#[derive(Serialize, Deserialize)]
pub struct CallJson {
    pub time: f64,
    pub transcript: String,
    pub intent: String,
}

/// One scripted flight with noisy track and templated calls.
pub fn simulate(maneuver_name: &str, runway: &str, seed: u64) -> Result<String, String> {
    let cfg = SimConfig { seed, ..Default::default() };
    let script = FlightScript {
        aircraft_id: "N135PL".into(),
        callsign_type: "Cherokee".into(),
        runway: runway.to_string(),
        maneuver: maneuver(maneuver_name)?,
        spawn_time: 0.0,
        emit: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (track, calls) = simulate_flight(&script, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let out = FlightJson {
        track: track.points.iter().map(|p| [p.time, p.position.x, p.position.y, p.position.z]).collect(),
        calls: calls
            .into_iter()
            .map(|c| CallJson {
                time: c.time,
                transcript: c.transcript,
                intent: c.intent_truth.map(|i| i.to_string()).unwrap_or_default(),
            })
            .collect(),
        runways: cfg
            .airport
            .runway_ends
            .iter()
            .map(|r| (r.designator.clone(), r.threshold.x, r.threshold.y))
            .collect(),
    };
    Ok(serde_json::to_string(&out).expect("flight serializes"))
}

/// Goal mixture for the window of `track_json` (the `track` rows of a
/// simulated flight) ending at `t_obs`.
pub fn predict(track_json: &str, t_obs: f64, intent: &str) -> Result<String, String> {
    let model = model()?;
    let rows: Vec<[f64; 4]> = serde_json::from_str(track_json).map_err(|e| format!("track: {e}"))?;
    let points = rows
        .iter()
        .map(|r| goalcast::data::TrackSample { time: r[0], position: LocalPosition::new(r[1], r[2], r[3]) })
        .collect();
    let track = Track::new("demo", points);
    let label: IntentLabel = intent.parse().map_err(|_| format!("unknown intent {intent:?}"))?;
    // the bundled model was trained on 1 Hz windows of 11 s
    let obs: Vec<LocalPosition> = (0..=11)
        .map(|k| track.position_at(t_obs - (11 - k) as f64))
        .collect::<Option<_>>()
        .ok_or("the track does not cover the 11 s before t_obs")?;
    let mix = model.predict(&obs, &label).map_err(|e| e.to_string())?;
    let truth = track.position_at(t_obs + 120.0).map(|p| [p.x, p.y, p.z]);
    Ok(json!({
        "weights": mix.weights,
        "means": mix.means.iter().map(|m| [m.x, m.y, m.z]).collect::<Vec<_>>(),
        "std": mix.variances.iter().map(|v| v.map(f64::sqrt)).collect::<Vec<_>>(),
        "truth": truth,
        "labels": model.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
    })
    .to_string())
}

#[wasm_bindgen(js_name = parseCall)]
pub fn parse_call_js(transcript: &str) -> String {
    parse_transcript(transcript)
}

#[wasm_bindgen(js_name = simulateFlight)]
pub fn simulate_flight_js(maneuver: &str, runway: &str, seed: u32) -> Result<String, JsError> {
    simulate(maneuver, runway, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = predictGoal)]
pub fn predict_goal_js(track_json: &str, t_obs: f64, intent: &str) -> Result<String, JsError> {
    predict(track_json, t_obs, intent).map_err(|e| JsError::new(&e))
}
