//! Best-of-N final displacement error, feature ablations and sensitivity
//! sweeps.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::airspace::{IntentLabel, LocalPosition};
use crate::data::{DatasetSplit, Scene, WindowConfig};
use crate::goalnet::{sample_goals_with, GoalMixture, ModelError, ModelParams};
use crate::trainer::TrainError;

const PFI_STREAM: u64 = 0x0bf1_5ca7;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error("permutation importance needs at least two scenes")]
    DegeneratePermutation,
    #[error("invalid evaluation config: {0}")]
    Config(String),
}

/// Anything that maps a scene to a goal mixture in scene coordinates.
pub trait GoalPredictor: Sync {
    fn predict_scene(&self, scene: &Scene) -> Result<GoalMixture, ModelError>;
    /// Content hash identifying the predictor's parameters.
    fn digest(&self) -> String;
}

impl GoalPredictor for ModelParams {
    fn predict_scene(&self, scene: &Scene) -> Result<GoalMixture, ModelError> {
        ModelParams::predict_scene(self, scene)
    }

    fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to memory cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

/// How the candidate set for each scene is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// `N` draws from the mixture.
    Sample,
    /// The `min(N, K)` component means with the largest weights.
    TopMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n: usize,
    pub seed: u64,
    pub mode: CandidateMode,
    /// Ignore altitude when measuring displacement.
    pub horizontal_only: bool,
    /// Keep every candidate in the report.
    pub keep_samples: bool,
    /// Worker threads; results do not depend on it.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n: 10, seed: 0, mode: CandidateMode::Sample, horizontal_only: false, keep_samples: false, jobs: 1 }
    }
}

impl EvalConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFde {
    pub scene_id: String,
    pub fde_km: f64,
    /// Index of the closest candidate.
    pub best: usize,
    pub intent: IntentLabel,
    pub call_age_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<LocalPosition>,
}

/// Mean, population standard deviation and linear-interpolation quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            n: values.len(),
            mean,
            std: var.sqrt(),
            q25: percentile(&sorted, 0.25),
            q75: percentile(&sorted, 0.75),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

/// Linear-interpolation percentile of ascending `sorted`, `p` in [0, 1].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty list");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: Summary,
    pub n: usize,
    pub seed: u64,
    pub mode: CandidateMode,
    pub horizontal_only: bool,
    pub model_hash: String,
    pub config_hash: String,
    pub data_hash: String,
    pub per_scene: Vec<SceneFde>,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        self.summary.mean
    }

    pub fn fdes(&self) -> Vec<f64> {
        self.per_scene.iter().map(|s| s.fde_km).collect()
    }

    /// Summary record as one JSON object (without per-scene rows).
    pub fn summary_json(&self) -> String {
        let v = serde_json::json!({
            "mean_fde_km": self.summary.mean,
            "std_km": self.summary.std,
            "q25_km": self.summary.q25,
            "q75_km": self.summary.q75,
            "scenes": self.summary.n,
            "n": self.n,
            "seed": self.seed,
            "mode": self.mode,
            "horizontal_only": self.horizontal_only,
            "model_hash": self.model_hash,
            "config_hash": self.config_hash,
            "data_hash": self.data_hash,
        });
        serde_json::to_string_pretty(&v).expect("summary serializes")
    }

    /// `scene_id,fde_km,intent,call_age_s`, empty age when there is no call.
    pub fn per_scene_csv(&self) -> String {
        let mut out = String::from("scene_id,fde_km,intent,call_age_s\n");
        for s in &self.per_scene {
            let age = s.call_age_s.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{age}", s.scene_id, s.fde_km, s.intent);
        }
        out
    }
}

pub fn scenes_digest(scenes: &[Scene]) -> String {
    let mut h = Sha256::new();
    for s in scenes {
        h.update(serde_json::to_vec(s).expect("scene serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn displacement(a: &LocalPosition, b: &LocalPosition, horizontal: bool) -> f64 {
    if horizontal {
        a.horizontal_distance(b)
    } else {
        a.distance(b)
    }
}

/// Candidate goals for one scene. Scene `index` has its own sample stream,
/// so a larger `n` extends the same sequence.
pub fn candidates(mix: &GoalMixture, cfg: &EvalConfig, index: usize) -> Vec<LocalPosition> {
    match cfg.mode {
        CandidateMode::Sample => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index as u64);
            sample_goals_with(mix, cfg.n, &mut rng)
        }
        CandidateMode::TopMeans => mix.ranked().into_iter().take(cfg.n).map(|k| mix.means[k]).collect(),
    }
}

fn score_scene<P: GoalPredictor + ?Sized>(
    model: &P,
    scene: &Scene,
    index: usize,
    cfg: &EvalConfig,
) -> Result<SceneFde, EvalError> {
    let mix = model.predict_scene(scene)?;
    debug_assert!(mix.is_valid(), "invalid mixture for {}", scene.id);
    let cands = candidates(&mix, cfg, index);
    let (best, fde_km) = cands
        .iter()
        .map(|c| displacement(c, &scene.goal, cfg.horizontal_only))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(EvalError::Config("no candidates".into()))?;
    Ok(SceneFde {
        scene_id: scene.id.clone(),
        fde_km,
        best,
        intent: scene.intent.clone(),
        call_age_s: scene.call_age,
        candidates: if cfg.keep_samples { cands } else { Vec::new() },
    })
}

/// Best-of-N FDE over `scenes`: per scene the smallest distance between the
/// true goal and any candidate, then summary statistics over scenes.
pub fn fde_best_of_n<P: GoalPredictor + ?Sized>(
    model: &P,
    scenes: &[Scene],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::Empty("scene list"));
    }
    if cfg.n == 0 {
        return Err(EvalError::Config("n must be at least 1".into()));
    }
    let jobs = cfg.jobs.clamp(1, scenes.len());
    let per_scene: Vec<SceneFde> = if jobs == 1 {
        scenes.iter().enumerate().map(|(i, s)| score_scene(model, s, i, cfg)).collect::<Result<_, _>>()?
    } else {
        let chunk = scenes.len().div_ceil(jobs);
        let parts: Vec<Result<Vec<SceneFde>, EvalError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = scenes
                .chunks(chunk)
                .enumerate()
                .map(|(c, part)| {
                    scope.spawn(move || {
                        part.iter().enumerate().map(|(i, s)| score_scene(model, s, c * chunk + i, cfg)).collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(scenes.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let fdes: Vec<f64> = per_scene.iter().map(|s| s.fde_km).collect();
    Ok(EvalReport {
        summary: Summary::of(&fdes).expect("non-empty"),
        n: cfg.n,
        seed: cfg.seed,
        mode: cfg.mode,
        horizontal_only: cfg.horizontal_only,
        model_hash: model.digest(),
        config_hash: cfg.hash(),
        data_hash: scenes_digest(scenes),
        per_scene,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMethod {
    Pfi,
    Lofo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub method: AblationMethod,
    pub baseline_fde: f64,
    /// Mean over repetitions for PFI.
    pub perturbed_fde: f64,
    pub delta_fde: f64,
    pub repetitions: usize,
    /// 2.5 and 97.5 percentiles of the per-repetition deltas.
    pub ci95: Option<(f64, f64)>,
    pub deltas: Vec<f64>,
    pub baseline_hash: String,
    pub perturbed_hash: String,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Seeded uniform permutations of `0..n`, one per repetition.
pub fn intent_permutations(n: usize, reps: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..reps)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PFI_STREAM);
            rng.set_stream(r as u64);
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect()
}

/// Permutation feature importance of the intent input: labels (with their
/// call ages) are shuffled across scenes and FDE is recomputed with the
/// same candidate streams.
pub fn permutation_importance<P: GoalPredictor + ?Sized>(
    model: &P,
    scenes: &[Scene],
    cfg: &EvalConfig,
    reps: usize,
) -> Result<AblationReport, EvalError> {
    if scenes.len() < 2 {
        return Err(EvalError::DegeneratePermutation);
    }
    permutation_importance_with(model, scenes, cfg, &intent_permutations(scenes.len(), reps, cfg.seed))
}

pub fn permutation_importance_with<P: GoalPredictor + ?Sized>(
    model: &P,
    scenes: &[Scene],
    cfg: &EvalConfig,
    permutations: &[Vec<usize>],
) -> Result<AblationReport, EvalError> {
    if scenes.len() < 2 {
        return Err(EvalError::DegeneratePermutation);
    }
    if permutations.is_empty() {
        return Err(EvalError::Config("at least one repetition is required".into()));
    }
    let baseline = fde_best_of_n(model, scenes, cfg)?;
    let mut deltas = Vec::with_capacity(permutations.len());
    let mut perturbed_total = 0.0;
    let mut hasher = Sha256::new();
    for perm in permutations {
        if perm.len() != scenes.len() {
            return Err(EvalError::Config("permutation length differs from scene count".into()));
        }
        let shuffled: Vec<Scene> = scenes
            .iter()
            .zip(perm)
            .map(|(s, &j)| Scene { intent: scenes[j].intent.clone(), call_age: scenes[j].call_age, ..s.clone() })
            .collect();
        let r = fde_best_of_n(model, &shuffled, cfg)?;
        hasher.update(r.data_hash.as_bytes());
        perturbed_total += r.mean();
        deltas.push(r.mean() - baseline.mean());
    }
    let perturbed_fde = perturbed_total / permutations.len() as f64;
    let delta_fde = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let mut sorted = deltas.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(AblationReport {
        method: AblationMethod::Pfi,
        baseline_fde: baseline.mean(),
        perturbed_fde,
        delta_fde,
        repetitions: permutations.len(),
        ci95: Some((percentile(&sorted, 0.025), percentile(&sorted, 0.975))),
        deltas,
        baseline_hash: baseline.data_hash,
        perturbed_hash: hex::encode(hasher.finalize()),
    })
}

/// Leave-one-feature-out comparison of two already-trained twins.
pub fn lofo_from_models<P: GoalPredictor + ?Sized, Q: GoalPredictor + ?Sized>(
    with_intent: &P,
    without_intent: &Q,
    scenes: &[Scene],
    cfg: &EvalConfig,
) -> Result<(AblationReport, EvalReport, EvalReport), EvalError> {
    let on = fde_best_of_n(with_intent, scenes, cfg)?;
    let off = fde_best_of_n(without_intent, scenes, cfg)?;
    let report = AblationReport {
        method: AblationMethod::Lofo,
        baseline_fde: on.mean(),
        perturbed_fde: off.mean(),
        delta_fde: off.mean() - on.mean(),
        repetitions: 1,
        ci95: None,
        deltas: vec![off.mean() - on.mean()],
        baseline_hash: on.model_hash.clone(),
        perturbed_hash: off.model_hash.clone(),
    };
    Ok((report, on, off))
}

/// Both twins of a leave-one-feature-out study with their evaluations.
#[derive(Debug, Clone)]
pub struct LofoOutcome {
    pub report: AblationReport,
    pub with_intent: (ModelParams, EvalReport),
    pub without_intent: (ModelParams, EvalReport),
}

/// Trains the intent-conditioned model and its trajectory-only twin with
/// identical seeds and configs, then evaluates both on the test split.
pub fn lofo_study(
    split: &DatasetSplit,
    labels: &[IntentLabel],
    mconfig: &crate::goalnet::ModelConfig,
    tconfig: &crate::trainer::TrainConfig,
    cfg: &EvalConfig,
) -> Result<LofoOutcome, EvalError> {
    if split.train.is_empty() || split.test.is_empty() {
        return Err(EvalError::Empty("train or test split"));
    }
    let on_cfg = crate::goalnet::ModelConfig { use_intent: true, ..mconfig.clone() };
    let off_cfg = crate::goalnet::ModelConfig { use_intent: false, ..mconfig.clone() };
    let (on, _) = crate::trainer::train(&split.train, labels, &on_cfg, tconfig, None)?;
    let (off, _) = crate::trainer::train(&split.train, labels, &off_cfg, tconfig, None)?;
    let (report, on_eval, off_eval) = lofo_from_models(&on, &off, &split.test, cfg)?;
    Ok(LofoOutcome { report, with_intent: (on, on_eval), without_intent: (off, off_eval) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    ObsHorizon,
    PredHorizon,
    CallAgeBucket,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::ObsHorizon => "obs_horizon",
            SweepVariable::PredHorizon => "pred_horizon",
            SweepVariable::CallAgeBucket => "call_age_bucket",
        }
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "obs_horizon" => Ok(SweepVariable::ObsHorizon),
            "pred_horizon" => Ok(SweepVariable::PredHorizon),
            "call_age_bucket" => Ok(SweepVariable::CallAgeBucket),
            other => Err(EvalError::Config(format!("unknown sweep variable {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub value: f64,
    /// `None` when no scenes existed for this value.
    pub stats: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub variable: SweepVariable,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    /// `value,mean_fde,q25,q75`; absent points keep their value with empty
    /// statistics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,mean_fde,q25,q75\n");
        for p in &self.points {
            match p.stats {
                Some(s) => {
                    let _ = writeln!(out, "{},{},{},{}", p.value, s.mean, s.q25, s.q75);
                }
                None => {
                    let _ = writeln!(out, "{},,,", p.value);
                }
            }
        }
        out
    }

    pub fn means(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.stats.map(|s| s.mean)).collect()
    }
}

fn check_values(values: &[f64]) -> Result<(), EvalError> {
    if values.len() < 2 {
        return Err(EvalError::Config("a sweep needs at least two values".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(EvalError::Config("sweep values must be positive".into()));
    }
    Ok(())
}

/// Re-windows the data and retrains for every horizon value. `build` turns
/// a window config into a split; `fit` trains on the train scenes. Values
/// whose train or test split comes out empty are marked absent.
pub fn sweep_horizon<B, F, M>(
    variable: SweepVariable,
    values: &[f64],
    base: &WindowConfig,
    build: B,
    fit: F,
    cfg: &EvalConfig,
) -> Result<Curve, EvalError>
where
    B: Fn(&WindowConfig) -> DatasetSplit,
    F: Fn(&[Scene]) -> Result<M, EvalError>,
    M: GoalPredictor,
{
    check_values(values)?;
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        let window = match variable {
            SweepVariable::ObsHorizon => WindowConfig { obs_horizon_s: v, ..*base },
            SweepVariable::PredHorizon => WindowConfig { pred_horizon_s: v, ..*base },
            SweepVariable::CallAgeBucket => {
                return Err(EvalError::Config("call-age buckets are evaluated with sweep_call_age".into()))
            }
        };
        let split = build(&window);
        let stats = if split.train.is_empty() || split.test.is_empty() {
            log::warn!("{}={v}: empty split, point marked absent", variable.name());
            None
        } else {
            let model = fit(&split.train)?;
            Some(fde_best_of_n(&model, &split.test, cfg)?.summary)
        };
        points.push(CurvePoint { value: v, stats });
    }
    Ok(Curve { variable, points })
}

/// One model evaluated on scenes bucketed by call age. `edges` are
/// ascending bucket bounds in seconds; bucket `i` holds ages in
/// `(edges[i], edges[i + 1]]` (the first bucket also includes its lower
/// edge) and is reported at its upper edge. Scenes without a call are left
/// out.
pub fn sweep_call_age<P: GoalPredictor + ?Sized>(
    model: &P,
    scenes: &[Scene],
    edges: &[f64],
    cfg: &EvalConfig,
) -> Result<Curve, EvalError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) || edges[0] < 0.0 {
        return Err(EvalError::Config("call-age edges must be at least two ascending non-negative values".into()));
    }
    let report = fde_best_of_n(model, scenes, cfg)?;
    let points = edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let fdes: Vec<f64> = report
                .per_scene
                .iter()
                .filter(|s| s.call_age_s.is_some_and(|a| (a > w[0] || (i == 0 && a == w[0])) && a <= w[1]))
                .map(|s| s.fde_km)
                .collect();
            CurvePoint { value: w[1], stats: Summary::of(&fdes) }
        })
        .collect();
    Ok(Curve { variable: SweepVariable::CallAgeBucket, points })
}

/// Statistics on Unknown-labeled scenes versus all others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentSplitStats {
    pub unknown: Option<Summary>,
    pub rest: Option<Summary>,
}

pub fn split_report_by_intent(report: &EvalReport) -> IntentSplitStats {
    let (unknown, rest): (Vec<&SceneFde>, Vec<&SceneFde>) =
        report.per_scene.iter().partition(|s| s.intent.is_unknown());
    let fdes = |v: Vec<&SceneFde>| v.iter().map(|s| s.fde_km).collect::<Vec<_>>();
    IntentSplitStats { unknown: Summary::of(&fdes(unknown)), rest: Summary::of(&fdes(rest)) }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Dependency-free SVG line chart: one polyline per curve with IQR
/// whiskers. Absent points break the line.
pub fn curves_to_svg(title: &str, curves: &[(&str, &Curve)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 56.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let present = curves.iter().flat_map(|(_, c)| c.points.iter().filter_map(|p| p.stats.map(|s| (p.value, s))));
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64);
    for (x, s) in present {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(s.q75).max(s.mean);
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let y1 = y1 * 1.1;
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - y / y1 * (H - 2.0 * M);
    let xlabel = curves.first().map(|(_, c)| c.variable.name()).unwrap_or("value");
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape_xml(title));
    let _ = writeln!(out, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(out, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let y = y1 * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(x), H - M + 18.0, fmt_tick(x));
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, M - 6.0, sy(y) + 4.0, fmt_tick(y));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape_xml(xlabel));
    let _ = writeln!(out, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">mean FDE (km)</text>"#, H / 2.0, H / 2.0);
    for (ci, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[ci % COLORS.len()];
        let mut run: Vec<String> = Vec::new();
        let flush = |run: &mut Vec<String>, out: &mut String| {
            if !run.is_empty() {
                let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, run.join(" "));
                run.clear();
            }
        };
        for p in &curve.points {
            match p.stats {
                Some(s) => {
                    let (x, y) = (sx(p.value), sy(s.mean));
                    run.push(format!("{x:.1},{y:.1}"));
                    let _ = writeln!(out, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}" stroke-opacity="0.5"/>"#, sy(s.q25), sy(s.q75));
                    let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
                }
                None => flush(&mut run, &mut out),
            }
        }
        flush(&mut run, &mut out);
        let ly = M + 16.0 * ci as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/>"#, W - M - 120.0, ly - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, W - M - 102.0, escape_xml(name));
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
