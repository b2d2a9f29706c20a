use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use goalcast::airspace::{intent_label_set, AirportConfig, IntentLabel};
use goalcast::data::{
    read_scene_cache, read_tracks, scene_at, split_scenes, window_scenes, write_calls, write_scene_cache, write_tracks,
    DatasetSplit, LabeledCall, RadioCall, Scene, Track, WindowConfig,
};
use goalcast::evaluator::{
    curves_to_svg, fde_best_of_n, lofo_from_models, permutation_importance, sweep_call_age, sweep_horizon,
    CandidateMode, Curve, EvalConfig, EvalError, SweepVariable,
};
use goalcast::goalnet::{ModelConfig, ModelParams};
use goalcast::radio::{
    build_dynamic_context, label_calls, raw_word_error_rate, read_labeled_calls, word_error_rate,
    write_labeled_calls, AircraftDirectory, CallLabel, StaticContext,
};
use goalcast::sim::{ambiguity_benchmark, generate_flights};
use goalcast::trainer::{self, TrainConfig};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{sha256_hex, Run};
use crate::{
    AblateArgs, ContextArgs, EvalArgs, EvalOpts, Format, Method, Mode, ParseArgs, SimulateArgs,
    SplitPart, SweepArgs, TrainArgs, WerArgs,
};

pub const AIRPORT_FILE: &str = "airport.toml";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const CALLS_FILE: &str = "calls.jsonl";
pub const DIRECTORY_FILE: &str = "directory.txt";
pub const LABELED_FILE: &str = "labeled_calls.csv";
pub const ANCHORS_FILE: &str = "anchors.csv";
pub const SCENES_FILE: &str = "scenes.txt";
pub const CACHE_ENV: &str = "CTAF_GOALCAST_CACHE";

const PARSER_NOTE: &str = "rule parser";

fn apply_eval(cfg: &mut EvalConfig, o: &EvalOpts) {
    if let Some(n) = o.n {
        cfg.n = n;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(m) = o.mode {
        cfg.mode = match m {
            Mode::Sample => CandidateMode::Sample,
            Mode::TopMeans => CandidateMode::TopMeans,
        };
    }
    if o.horizontal {
        cfg.horizontal_only = true;
    }
    if let Some(j) = o.jobs {
        cfg.jobs = j.max(1);
    }
}

fn parse_csv_text(text: &str, path: &Path) -> Result<BTreeMap<String, Track>> {
    Ok(read_tracks(text.as_bytes(), &path.display().to_string(), None)?)
}

fn parse_calls(text: &str, path: &Path) -> Result<Vec<RadioCall>> {
    let mut calls = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: RadioCall = serde_json::from_str(line)
            .map_err(|e| CliError::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        calls.push(c);
    }
    calls.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(calls)
}

fn load_airport(run: &mut Run, path: Option<&Path>, fallback: &AirportConfig) -> Result<AirportConfig> {
    match path {
        Some(p) => Ok(AirportConfig::from_toml(&run.read_string(p)?)?),
        None => Ok(fallback.clone()),
    }
}

/// A data argument is either a `simulate` output directory or a scene file.
fn scene_file(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(SCENES_FILE)
    } else {
        data.to_path_buf()
    }
}

/// The airport stored next to the data, else the explicit or configured one.
fn data_airport(run: &mut Run, data: &Path, explicit: Option<&Path>, cfg: &RunConfig) -> Result<AirportConfig> {
    if explicit.is_some() {
        return load_airport(run, explicit, &cfg.sim.airport);
    }
    let beside = if data.is_dir() { data.join(AIRPORT_FILE) } else { data.with_file_name(AIRPORT_FILE) };
    if beside.is_file() {
        load_airport(run, Some(&beside), &cfg.sim.airport)
    } else {
        Ok(cfg.sim.airport.clone())
    }
}

fn load_split(run: &mut Run, data: &Path) -> Result<DatasetSplit> {
    let path = scene_file(data);
    let text = run.read_string(&path)?;
    read_scene_cache(&text).map_err(|e| {
        let mut err: CliError = e.into();
        err.msg = format!("{}: {}", path.display(), err.msg);
        err
    })
}

fn pick(split: &DatasetSplit, part: SplitPart) -> Vec<Scene> {
    match part {
        SplitPart::Train => split.train.clone(),
        SplitPart::Val => split.val.clone(),
        SplitPart::Test => split.test.clone(),
        SplitPart::All => split.all().cloned().collect(),
    }
}

fn to_rows(labeled: &[LabeledCall]) -> Vec<(f64, CallLabel, String)> {
    labeled
        .iter()
        .map(|l| (l.time, CallLabel { speaker: l.speaker.clone(), intent: l.intent.clone() }, PARSER_NOTE.to_string()))
        .collect()
}

fn train_twin(
    scenes: &[Scene],
    labels: &[IntentLabel],
    model: &ModelConfig,
    tcfg: &TrainConfig,
    use_intent: bool,
) -> std::result::Result<ModelParams, EvalError> {
    let mcfg = ModelConfig { use_intent, ..model.clone() };
    Ok(trainer::train(scenes, labels, &mcfg, tcfg, None)?.0)
}

pub fn simulate(config: Option<&Path>, a: &SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = a.seed {
        cfg.sim.seed = s;
        cfg.split.seed = s;
    }
    if a.benchmark {
        cfg.scenario.benchmark = true;
    }
    if let Some(n) = a.flights {
        cfg.scenario.flights = n;
        cfg.scenario.ambiguity.n_flights = n;
    }
    if let Some(f) = a.silent_fraction {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::invalid("--silent-fraction must lie in [0, 1]"));
        }
        cfg.scenario.ambiguity.silent_fraction = f;
    }
    let fractions = cfg.split.fractions()?;
    cfg.sim.validate()?;

    let mut run = Run::new("simulate", Some(&a.out));
    if let Some(p) = config {
        run.read(p)?;
    }
    run.set_config(cfg.to_json());
    run.seed("sim", cfg.sim.seed);
    run.seed("split", cfg.split.seed);

    let (data, split, anchors) = if cfg.scenario.benchmark {
        let bench = ambiguity_benchmark(&cfg.sim, &cfg.scenario.ambiguity)?;
        let split = bench.split(&cfg.window, fractions, cfg.split.seed);
        let rw = cfg.sim.airport.runway_ends[0].designator.clone();
        let mut anchors = String::from("aircraft_id,t_obs,branch\n");
        for (id, branch, t) in &bench.flights {
            let _ = writeln!(anchors, "{id},{t},{}", branch.label(&rw));
        }
        (bench.data, split, Some(anchors))
    } else {
        let data = generate_flights(cfg.scenario.flights, &cfg.scenario.mix, &cfg.sim)?;
        let provenance = format!("pattern-sim seed={} flights={}", cfg.sim.seed, cfg.scenario.flights);
        let split = split_scenes(data.scenes(&cfg.window), fractions, cfg.split.seed, &provenance);
        (data, split, None)
    };

    let mut tracks = Vec::new();
    write_tracks(&mut tracks, &data.tracks).expect("writing to memory cannot fail");
    let mut calls = Vec::new();
    write_calls(&mut calls, &data.calls).expect("writing to memory cannot fail");
    run.write(AIRPORT_FILE, cfg.sim.airport.to_toml().as_bytes())?;
    run.write(TRACKS_FILE, &tracks)?;
    run.write(CALLS_FILE, &calls)?;
    run.write(DIRECTORY_FILE, data.directory.render().as_bytes())?;
    run.write(LABELED_FILE, write_labeled_calls(&to_rows(&data.labeled)).as_bytes())?;
    if let Some(anchors) = anchors {
        run.write(ANCHORS_FILE, anchors.as_bytes())?;
    }
    run.write(SCENES_FILE, write_scene_cache(&split).as_bytes())?;
    run.write("config.resolved.toml", cfg.to_toml().as_bytes())?;
    println!(
        "{} flights, {} calls, {} scenes (train {}, val {}, test {}) -> {}",
        data.scripts.len(),
        data.calls.len(),
        split.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        a.out.display()
    );
    run.finish()?;
    Ok(())
}

pub fn parse(config: Option<&Path>, a: &ParseArgs) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut run = Run::new("parse", Some(&a.out));
    run.set_config(cfg.to_json());
    let airport = load_airport(&mut run, a.airport.as_deref(), &cfg.sim.airport)?;
    let calls = parse_calls(&run.read_string(&a.calls)?, &a.calls)?;
    let directory = AircraftDirectory::parse(&run.read_string(&a.directory)?)?;
    let tracks = parse_csv_text(&run.read_string(&a.tracks)?, &a.tracks)?;
    let labeled = label_calls(&calls, &directory, &tracks, &airport);
    let unknown_speaker = labeled.iter().filter(|l| l.speaker.is_none()).count();
    run.write(LABELED_FILE, write_labeled_calls(&to_rows(&labeled)).as_bytes())?;
    println!("{} calls labeled, {} without a speaker", labeled.len(), unknown_speaker);
    run.finish()?;
    Ok(())
}

pub fn wer(a: &WerArgs) -> Result<()> {
    let mut run = Run::new("wer", a.out.as_deref());
    let reference = run.read_string(&a.reference)?;
    let hypothesis = run.read_string(&a.hypothesis)?;
    let rate = if a.raw { raw_word_error_rate(&reference, &hypothesis)? } else { word_error_rate(&reference, &hypothesis)? };
    println!("{rate:?}");
    if run.has_out() {
        run.set_config(serde_json::json!({ "raw": a.raw }));
        run.write("wer.txt", format!("{rate:?}\n").as_bytes())?;
    }
    run.finish()?;
    Ok(())
}

pub fn train(config: Option<&Path>, a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr0 = lr;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if a.no_intent {
        cfg.model.use_intent = false;
    }
    cfg.train.validate()?;
    cfg.model.validate()?;
    let mut run = Run::new("train", Some(&a.out));
    if let Some(p) = config {
        run.read(p)?;
    }
    run.set_config(cfg.to_json());
    run.seed("train", cfg.train.seed);
    let airport = data_airport(&mut run, &a.data, a.airport.as_deref(), &cfg)?;
    let split = load_split(&mut run, &a.data)?;
    if split.train.is_empty() {
        return Err(CliError::invalid("the data has no training scenes"));
    }
    let labels = intent_label_set(&airport);
    let out = run.open_out()?;
    let (_, history) = trainer::train(&split.train, &labels, &cfg.model, &cfg.train, Some(&out))?;
    for ckpt in &history.checkpoints {
        run.record_written(ckpt)?;
    }
    let mut csv = Vec::new();
    history.write_csv(&mut csv).expect("writing to memory cannot fail");
    run.write("history.csv", &csv)?;
    println!(
        "{} epochs on {} scenes, final loss {:.6}, lr reductions at {:?} -> {}",
        history.len(),
        split.train.len(),
        history.final_loss().unwrap_or(f64::NAN),
        history.reductions,
        out.join("final.ckpt").display()
    );
    run.finish()?;
    Ok(())
}

pub fn eval(config: Option<&Path>, a: &EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    apply_eval(&mut cfg.eval, &a.opts);
    if a.keep_samples {
        cfg.eval.keep_samples = true;
    }
    let mut run = Run::new("eval", Some(&a.out));
    run.set_config(cfg.to_json());
    run.seed("eval", cfg.eval.seed);
    let model_bytes = run.read(&a.model)?;
    let model = ModelParams::read_checkpoint(model_bytes.as_slice())?;
    let split = load_split(&mut run, &a.data)?;
    let scenes = pick(&split, a.split);
    let report = fde_best_of_n(&model, &scenes, &cfg.eval)?;
    run.write("summary.json", (report.summary_json() + "\n").as_bytes())?;
    run.write("per_scene.csv", report.per_scene_csv().as_bytes())?;
    if cfg.eval.keep_samples {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        run.write("report.json", json.as_bytes())?;
    }
    println!(
        "best-of-{} FDE {:.4} km (std {:.4}, IQR {:.4}) over {} scenes",
        report.n,
        report.mean(),
        report.summary.std,
        report.summary.iqr(),
        report.summary.n
    );
    run.finish()?;
    Ok(())
}

pub fn ablate(config: Option<&Path>, a: &AblateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    apply_eval(&mut cfg.eval, &a.opts);
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.train_seed {
        cfg.train.seed = s;
    }
    let mut run = Run::new(&format!("ablate {:?}", a.method).to_lowercase(), Some(&a.out));
    run.set_config(cfg.to_json());
    run.seed("eval", cfg.eval.seed);
    let report = match a.method {
        Method::Pfi => {
            let path = a.model.as_deref().ok_or_else(|| CliError::invalid("pfi needs --model"))?;
            let model = ModelParams::read_checkpoint(run.read(path)?.as_slice())?;
            let split = load_split(&mut run, &a.data)?;
            permutation_importance(&model, &pick(&split, a.split), &cfg.eval, a.reps)?
        }
        Method::Lofo => {
            cfg.train.validate()?;
            run.seed("train", cfg.train.seed);
            let airport = data_airport(&mut run, &a.data, a.airport.as_deref(), &cfg)?;
            let split = load_split(&mut run, &a.data)?;
            let labels = intent_label_set(&airport);
            let on = train_twin(&split.train, &labels, &cfg.model, &cfg.train, true)?;
            let off = train_twin(&split.train, &labels, &cfg.model, &cfg.train, false)?;
            let (report, _, _) = lofo_from_models(&on, &off, &pick(&split, a.split), &cfg.eval)?;
            let out = run.open_out()?;
            for (name, m) in [("with_intent.ckpt", &on), ("without_intent.ckpt", &off)] {
                let path = out.join(name);
                m.save(&path)?;
                run.record_written(&path)?;
            }
            report
        }
    };
    run.write("ablation.json", (report.to_json() + "\n").as_bytes())?;
    let ci = report.ci95.map(|(lo, hi)| format!(", 95% CI [{lo:.4}, {hi:.4}]")).unwrap_or_default();
    println!(
        "{:?}: baseline {:.4} km, perturbed {:.4} km, delta {:.4} km{ci}",
        report.method, report.baseline_fde, report.perturbed_fde, report.delta_fde
    );
    run.finish()?;
    Ok(())
}

/// Raw inputs for re-windowing: tracks, labeled calls and, for the
/// benchmark, the per-flight observation anchors.
struct Rewindow {
    tracks: BTreeMap<String, Track>,
    labeled: Vec<LabeledCall>,
    anchors: Option<Vec<(String, f64)>>,
    digest: String,
}

impl Rewindow {
    fn load(run: &mut Run, dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(CliError::new(
                crate::error::Kind::InputMissing,
                format!("{}: not a data directory", dir.display()),
            ));
        }
        let tracks_path = dir.join(TRACKS_FILE);
        let tracks_text = run.read_string(&tracks_path)?;
        let labeled_path = dir.join(LABELED_FILE);
        let labeled_text = run.read_string(&labeled_path)?;
        let labeled = read_labeled_calls(&labeled_text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", labeled_path.display())))?;
        let anchors_path = dir.join(ANCHORS_FILE);
        let (anchors, anchors_text) = if anchors_path.is_file() {
            let text = run.read_string(&anchors_path)?;
            (Some(parse_anchors(&text, &anchors_path)?), text)
        } else {
            (None, String::new())
        };
        let digest = sha256_hex(format!("{tracks_text}\u{0}{labeled_text}\u{0}{anchors_text}").as_bytes());
        Ok(Self { tracks: parse_csv_text(&tracks_text, &tracks_path)?, labeled, anchors, digest })
    }

    fn scenes(&self, window: &WindowConfig) -> Vec<Scene> {
        match &self.anchors {
            Some(anchors) => anchors
                .iter()
                .filter_map(|(id, t)| self.tracks.get(id).and_then(|tr| scene_at(tr, &self.labeled, *t, window)))
                .collect(),
            None => window_scenes(&self.tracks, &self.labeled, window),
        }
    }

    /// Windowed and split scenes, read from and stored in the scene cache
    /// directory when one is configured.
    fn split(&self, window: &WindowConfig, fractions: (f64, f64), seed: u64) -> DatasetSplit {
        let key = serde_json::json!({ "data": self.digest, "window": window, "fractions": fractions, "seed": seed });
        let name = format!("scenes-{}.txt", &sha256_hex(key.to_string().as_bytes())[..16]);
        let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
        if let Some(dir) = &cache {
            if let Ok(text) = std::fs::read_to_string(dir.join(&name)) {
                match read_scene_cache(&text) {
                    Ok(split) => {
                        log::info!("scene cache hit {name}");
                        return split;
                    }
                    Err(e) => log::warn!("ignoring unreadable scene cache {name}: {e}"),
                }
            }
        }
        let split = split_scenes(self.scenes(window), fractions, seed, "rewindowed");
        if let Some(dir) = &cache {
            let stored = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join(&name), write_scene_cache(&split)));
            if let Err(e) = stored {
                log::warn!("could not write scene cache {name}: {e}");
            }
        }
        split
    }
}

fn parse_anchors(text: &str, path: &Path) -> Result<Vec<(String, f64)>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some("aircraft_id,t_obs,branch") {
        return Err(CliError::invalid(format!("{}: unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let mut cols = line.split(',');
        let (Some(id), Some(t)) = (cols.next(), cols.next()) else {
            return Err(CliError::invalid(format!("{}:{}: expected aircraft_id,t_obs", path.display(), i + 1)));
        };
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| CliError::invalid(format!("{}:{}: bad time {t:?}", path.display(), i + 1)))?;
        out.push((id.trim().to_string(), t));
    }
    Ok(out)
}

pub fn sweep(config: Option<&Path>, a: &SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    apply_eval(&mut cfg.eval, &a.opts);
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.train_seed {
        cfg.train.seed = s;
    }
    let variable: SweepVariable = a.variable.parse()?;
    let mut run = Run::new("sweep", Some(&a.out));
    run.set_config(serde_json::json!({ "run": cfg.to_json(), "variable": variable.name(), "values": a.values }));
    run.seed("eval", cfg.eval.seed);
    let mut curves: Vec<(String, Curve)> = Vec::new();
    match variable {
        SweepVariable::CallAgeBucket => {
            let path = a.model.as_deref().ok_or_else(|| CliError::invalid("call_age_bucket needs --model"))?;
            let model = ModelParams::read_checkpoint(run.read(path)?.as_slice())?;
            let split = load_split(&mut run, &a.data)?;
            curves.push(("model".into(), sweep_call_age(&model, &split.test, &a.values, &cfg.eval)?));
        }
        _ => {
            cfg.train.validate()?;
            run.seed("train", cfg.train.seed);
            let fractions = cfg.split.fractions()?;
            let airport = data_airport(&mut run, &a.data, None, &cfg)?;
            let labels = intent_label_set(&airport);
            let data = Rewindow::load(&mut run, &a.data)?;
            let build = |w: &WindowConfig| data.split(w, fractions, cfg.split.seed);
            let mut variants = vec![("multimodal", cfg.model.use_intent)];
            if a.twin {
                variants = vec![("multimodal", true), ("trajectory_only", false)];
            }
            for (name, use_intent) in variants {
                let fit = |scenes: &[Scene]| train_twin(scenes, &labels, &cfg.model, &cfg.train, use_intent);
                let curve = sweep_horizon(variable, &a.values, &cfg.window, build, fit, &cfg.eval)?;
                let name = if use_intent { name } else { "trajectory_only" };
                curves.push((name.to_string(), curve));
            }
        }
    }
    match a.format {
        Format::Csv => {
            for (name, curve) in &curves {
                run.write(&format!("sweep_{}_{name}.csv", variable.name()), curve.to_csv().as_bytes())?;
            }
        }
        Format::Svg => {
            let refs: Vec<(&str, &Curve)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
            let title = format!("FDE vs {}", variable.name());
            run.write(&format!("sweep_{}.svg", variable.name()), curves_to_svg(&title, &refs).as_bytes())?;
        }
    }
    for (name, curve) in &curves {
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| match p.stats {
                Some(s) => format!("{}: {:.4}", p.value, s.mean),
                None => format!("{}: -", p.value),
            })
            .collect();
        println!("{name} {}", pts.join(", "));
    }
    run.finish()?;
    Ok(())
}

pub fn context(config: Option<&Path>, a: &ContextArgs) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut run = Run::new("context", a.out.as_deref());
    let airport = load_airport(&mut run, a.airport.as_deref(), &cfg.sim.airport)?;
    let directory = AircraftDirectory::parse(&run.read_string(&a.directory)?)?;
    let tracks = parse_csv_text(&run.read_string(&a.tracks)?, &a.tracks)?;
    if !a.time.is_finite() {
        return Err(CliError::invalid("--time must be finite"));
    }
    let states: Vec<_> =
        tracks.values().filter_map(|t| t.position_at(a.time).map(|p| (t.aircraft_id.clone(), p))).collect();
    let (_, dynamic) = build_dynamic_context(&directory, &states);
    let mut text = String::new();
    if a.with_static {
        text.push_str(&StaticContext::for_airport(&airport).render());
        text.push('\n');
    }
    text.push_str(&dynamic);
    text.push('\n');
    print!("{text}");
    if run.has_out() {
        run.set_config(serde_json::json!({ "time": a.time, "static": a.with_static, "airport": airport.name }));
        run.write("context.txt", text.as_bytes())?;
    }
    run.finish()?;
    Ok(())
}
