//! Language-conditioned goal predictor: a causal TCN over the observed
//! window, an intent embedding, a shared MLP and three linear heads that
//! parameterize a diagonal Gaussian mixture over the goal position.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::airspace::{IntentLabel, LocalPosition};
use crate::autodiff::{self, AdError, Tape, Tensor, Var};
use crate::data::Scene;

pub const CHECKPOINT_SCHEMA: u32 = 1;
pub const LOGVAR_MIN: f64 = -27.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const VARIANCE_FLOOR: f64 = 1e-12;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("observation window is empty")]
    EmptyObservation,
    #[error("intent label {0} is not in the model's label set")]
    UnknownLabel(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("incompatible checkpoint: expected {expected}, found {found}")]
    Mismatch { expected: String, found: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    /// Penalize pairwise proximity of component means.
    #[default]
    Repulsion,
    /// Penalize negative entropy of the mixture weights.
    WeightEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcnConfig {
    pub levels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub channels: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self { levels: 3, kernel: 3, dilations: vec![1, 2, 4], channels: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { layers: 2, hidden: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_traj: usize,
    pub n_int: usize,
    pub k: usize,
    pub tcn: TcnConfig,
    pub mlp: MlpConfig,
    pub use_intent: bool,
    /// Window-relative positions are divided by this before encoding.
    pub input_scale_km: f64,
    pub lambda_rep: f64,
    pub tau: f64,
    pub entropy: EntropyKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_traj: 128,
            n_int: 32,
            k: 5,
            tcn: TcnConfig::default(),
            mlp: MlpConfig::default(),
            use_intent: true,
            input_scale_km: 0.1,
            lambda_rep: 0.01,
            tau: 1.0,
            entropy: EntropyKind::Repulsion,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.n_traj == 0 || self.tcn.channels == 0 || self.mlp.hidden == 0 || self.mlp.layers == 0 {
            return fail("widths and depths must be positive");
        }
        if self.use_intent && self.n_int == 0 {
            return fail("n_int must be positive when intent is used");
        }
        if self.tcn.kernel == 0 || self.tcn.levels == 0 || self.tcn.dilations.len() != self.tcn.levels {
            return fail("tcn needs kernel >= 1 and one dilation per level");
        }
        if self.tcn.dilations[0] == 0 || self.tcn.dilations.windows(2).any(|w| w[1] <= w[0]) {
            return fail("dilations must be positive and strictly increasing");
        }
        if !(self.input_scale_km > 0.0) {
            return fail("input_scale_km must be positive");
        }
        if !(self.tau > 0.0) || !(self.lambda_rep >= 0.0) {
            return fail("tau must be positive and lambda_rep non-negative");
        }
        Ok(())
    }

    /// Samples the encoder can see: `(k-1) * sum(dilations) + 1`.
    pub fn receptive_field(&self) -> usize {
        (self.tcn.kernel - 1) * self.tcn.dilations.iter().sum::<usize>() + 1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLevel {
    w: usize,
    b: usize,
    res: Option<(usize, usize)>,
    dilation: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv: Vec<ConvLevel>,
    embed: Option<usize>,
    mlp: Vec<(usize, usize)>,
    mean: (usize, usize),
    logvar: (usize, usize),
    logit: (usize, usize),
}

/// Parameter shapes and names, in storage order.
fn build_layout(cfg: &ModelConfig, n_labels: usize) -> (Layout, Vec<(String, Vec<usize>)>) {
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| {
        specs.push((name, shape));
        specs.len() - 1
    };
    let mut conv = Vec::new();
    let mut c_in = 3;
    for (i, &d) in cfg.tcn.dilations.iter().enumerate() {
        let c_out = if i + 1 == cfg.tcn.levels { cfg.n_traj } else { cfg.tcn.channels };
        let w = add(format!("tcn{i}.weight"), vec![c_out, c_in, cfg.tcn.kernel]);
        let b = add(format!("tcn{i}.bias"), vec![c_out]);
        let res = (c_in != c_out).then(|| {
            (add(format!("tcn{i}.proj.weight"), vec![c_out, c_in, 1]), add(format!("tcn{i}.proj.bias"), vec![c_out]))
        });
        conv.push(ConvLevel { w, b, res, dilation: d });
        c_in = c_out;
    }
    let embed = cfg.use_intent.then(|| add("intent.embedding".into(), vec![n_labels, cfg.n_int]));
    let mut width = cfg.n_traj + if cfg.use_intent { cfg.n_int } else { 0 };
    let mut mlp = Vec::new();
    for i in 0..cfg.mlp.layers {
        let w = add(format!("mlp{i}.weight"), vec![cfg.mlp.hidden, width]);
        let b = add(format!("mlp{i}.bias"), vec![cfg.mlp.hidden]);
        mlp.push((w, b));
        width = cfg.mlp.hidden;
    }
    let mut head = |name: &str, out: usize| {
        (add(format!("{name}.weight"), vec![out, width]), add(format!("{name}.bias"), vec![out]))
    };
    let mean = head("head.mean", cfg.k * 3);
    let logvar = head("head.logvar", cfg.k * 3);
    let logit = head("head.logit", cfg.k);
    (Layout { conv, embed, mlp, mean, logvar, logit }, specs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub labels: Vec<IntentLabel>,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    layout: Layout,
}

/// Tape handles for the three heads of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    /// `[K, 3]`, window-relative km.
    pub mean: Var,
    /// `[K, 3]`, clamped.
    pub logvar: Var,
    /// `[K]`.
    pub logits: Var,
}

impl ModelParams {
    /// Fan-in uniform weights, `N(0, 0.1)` embedding rows, zero biases.
    pub fn init(config: ModelConfig, labels: Vec<IntentLabel>, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if labels.is_empty() {
            return Err(ModelError::Config("label set is empty".into()));
        }
        let (layout, specs) = build_layout(&config, labels.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed_normal = rand_distr::Normal::new(0.0, 0.1).expect("valid normal");
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (i, (name, shape)) in specs.into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".bias") {
                vec![0.0; n]
            } else if Some(i) == layout.embed {
                (0..n).map(|_| embed_normal.sample(&mut rng)).collect()
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            tensors.push(Tensor { shape, data });
            names.push(name);
        }
        Ok(Self { config, labels, names, tensors, layout })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn label_index(&self, label: &IntentLabel) -> Result<usize, ModelError> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    /// Errors unless this model was built for `config` and `labels`.
    pub fn check_compatible(&self, config: &ModelConfig, labels: &[IntentLabel]) -> Result<(), ModelError> {
        if self.labels.len() != labels.len() || self.labels.as_slice() != labels {
            return Err(ModelError::Mismatch {
                expected: format!("{} labels [{}]", labels.len(), join_labels(labels)),
                found: format!("{} labels [{}]", self.labels.len(), join_labels(&self.labels)),
            });
        }
        if &self.config != config {
            return Err(ModelError::Mismatch {
                expected: format!("config {}", config.hash()),
                found: format!("config {}", self.config.hash()),
            });
        }
        Ok(())
    }

    /// Records the forward pass for one window on `tape`, whose parameter
    /// store must be `self.tensors` (or a same-shaped copy).
    pub fn forward(&self, tape: &mut Tape<'_>, obs: &Tensor, label: Option<usize>) -> Result<Heads, ModelError> {
        let h = self.encode_on(tape, obs)?;
        let mut z = h;
        if let Some(e) = self.layout.embed {
            let row = label.ok_or_else(|| ModelError::UnknownLabel("<none>".into()))?;
            let table = tape.param(e);
            let emb = tape.embedding_gather(table, row)?;
            z = tape.concat(h, emb)?;
        }
        for &(w, b) in &self.layout.mlp {
            let (w, b) = (tape.param(w), tape.param(b));
            let lin = tape.linear(z, w, b)?;
            z = tape.relu(lin)?;
        }
        let k = self.config.k;
        let mut head = |(w, b): (usize, usize)| -> Result<Var, AdError> {
            let (w, b) = (tape.param(w), tape.param(b));
            tape.linear(z, w, b)
        };
        let mean = head(self.layout.mean)?;
        let logvar = head(self.layout.logvar)?;
        let logits = head(self.layout.logit)?;
        let mean = tape.reshape(mean, &[k, 3])?;
        let logvar = tape.reshape(logvar, &[k, 3])?;
        let logvar = tape.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok(Heads { mean, logvar, logits })
    }

    fn encode_on(&self, tape: &mut Tape<'_>, obs: &Tensor) -> Result<Var, ModelError> {
        if obs.shape.len() != 2 || obs.shape[0] != 3 || obs.shape[1] == 0 {
            return Err(ModelError::EmptyObservation);
        }
        let mut x = tape.constant(obs.clone());
        for level in &self.layout.conv {
            let (w, b) = (tape.param(level.w), tape.param(level.b));
            let conv = tape.conv1d_causal(x, w, b, level.dilation)?;
            let skip = match level.res {
                Some((pw, pb)) => {
                    let (pw, pb) = (tape.param(pw), tape.param(pb));
                    tape.conv1d_causal(x, pw, pb, 1)?
                }
                None => x,
            };
            let sum = tape.add(conv, skip)?;
            x = tape.relu(sum)?;
        }
        Ok(tape.global_average_pool(x)?)
    }

    /// Trajectory summary `h_traj` for a window.
    pub fn encode_trajectory(&self, obs: &[LocalPosition]) -> Result<Vec<f64>, ModelError> {
        let input = window_tensor(obs, self.config.input_scale_km)?;
        let mut tape = Tape::new(&self.tensors);
        let h = self.encode_on(&mut tape, &input)?;
        Ok(tape.value(h).data.clone())
    }

    pub fn embed_intent(&self, label: &IntentLabel) -> Result<Vec<f64>, ModelError> {
        let e = self.layout.embed.ok_or_else(|| ModelError::Config("model has no intent input".into()))?;
        let row = self.label_index(label)?;
        let n = self.config.n_int;
        Ok(self.tensors[e].data[row * n..(row + 1) * n].to_vec())
    }

    /// Goal mixture in the same frame as `obs`.
    pub fn predict(&self, obs: &[LocalPosition], label: &IntentLabel) -> Result<GoalMixture, ModelError> {
        let input = window_tensor(obs, self.config.input_scale_km)?;
        let row = if self.config.use_intent { Some(self.label_index(label)?) } else { None };
        let mut tape = Tape::new(&self.tensors);
        let heads = self.forward(&mut tape, &input, row)?;
        let mut mix = GoalMixture::from_heads(&tape, &heads);
        for m in &mut mix.means {
            *m = m.add(&obs[0]);
        }
        debug_assert!(mix.is_valid(), "predicted mixture violates its invariants: {mix:?}");
        Ok(mix)
    }

    pub fn predict_scene(&self, scene: &Scene) -> Result<GoalMixture, ModelError> {
        self.predict(&scene.obs, &scene.intent)
    }

    /// Total training loss for one scene on `tape`: NLL plus the entropy
    /// term. Returns `(loss, nll)` handles.
    pub fn scene_loss(&self, tape: &mut Tape<'_>, scene: &Scene) -> Result<(Var, Var), ModelError> {
        let input = window_tensor(&scene.obs, self.config.input_scale_km)?;
        let row = if self.config.use_intent { Some(self.label_index(&scene.intent)?) } else { None };
        let heads = self.forward(tape, &input, row)?;
        let goal = scene.goal.sub(&scene.obs[0]);
        let nll = nll_on_tape(tape, &heads, &goal, self.config.k)?;
        let loss = match entropy_on_tape(tape, &heads, &self.config)? {
            Some(ent) => tape.add(nll, ent)?,
            None => nll,
        };
        Ok((loss, nll))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io = |e| ModelError::Io { path: path.display().to_string(), source: e };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        self.write_checkpoint(&mut f).map_err(io)?;
        f.flush().map_err(io)
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "goalcast-checkpoint schema={CHECKPOINT_SCHEMA}")?;
        writeln!(out, "config {}", self.config.to_json())?;
        writeln!(out, "config_hash {}", self.config.hash())?;
        writeln!(out, "labels {}", join_labels(&self.labels))?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            writeln!(out, "tensor {name} {}", dims.join("x"))?;
        }
        let bytes = self.parameter_count() * 8;
        writeln!(out, "blob {bytes}")?;
        for t in &self.tensors {
            for v in &t.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path).map_err(|e| ModelError::Io { path: path.display().to_string(), source: e })?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }

    pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String, ModelError> {
            line.clear();
            let n = input.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
            if n == 0 {
                return Err(bad("unexpected end of header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let magic = next_line(&mut input)?;
        let expected = format!("goalcast-checkpoint schema={CHECKPOINT_SCHEMA}");
        if magic != expected {
            return Err(ModelError::Mismatch { expected, found: magic });
        }
        let field = |l: &str, key: &str| -> Result<String, ModelError> {
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key}` line, got `{l}`")))
        };
        let config_json = field(&next_line(&mut input)?, "config")?;
        let config: ModelConfig = serde_json::from_str(&config_json).map_err(|e| bad(format!("config: {e}")))?;
        let stored_hash = field(&next_line(&mut input)?, "config_hash")?;
        if stored_hash != config.hash() {
            return Err(ModelError::Mismatch { expected: config.hash(), found: stored_hash });
        }
        let labels_line = field(&next_line(&mut input)?, "labels")?;
        let labels = labels_line
            .split('|')
            .map(|s| s.parse::<IntentLabel>().map_err(|e| bad(format!("label {s}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut model = Self::init(config, labels, 0)?;
        for (name, t) in model.names.iter().zip(&model.tensors) {
            let l = field(&next_line(&mut input)?, "tensor")?;
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let want = format!("{name} {}", dims.join("x"));
            if l != want {
                return Err(ModelError::Mismatch { expected: want, found: l });
            }
        }
        let blob = field(&next_line(&mut input)?, "blob")?;
        let bytes: usize = blob.parse().map_err(|_| bad(format!("blob size `{blob}`")))?;
        if bytes != model.parameter_count() * 8 {
            return Err(ModelError::Mismatch {
                expected: format!("{} blob bytes", model.parameter_count() * 8),
                found: format!("{bytes} blob bytes"),
            });
        }
        let mut raw = Vec::with_capacity(bytes);
        input.read_to_end(&mut raw).map_err(|e| bad(e.to_string()))?;
        if raw.len() != bytes {
            return Err(bad(format!("blob has {} bytes, header says {bytes}", raw.len())));
        }
        let mut chunks = raw.chunks_exact(8);
        for t in &mut model.tensors {
            for v in &mut t.data {
                let c = chunks.next().expect("length checked");
                *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                if !v.is_finite() {
                    return Err(bad("non-finite parameter".into()));
                }
            }
        }
        Ok(model)
    }
}

fn join_labels(labels: &[IntentLabel]) -> String {
    labels.iter().map(ToString::to_string).collect::<Vec<_>>().join("|")
}

/// `[3, T]` tensor of positions relative to the window's first sample, in
/// units of `scale_km`.
pub fn window_tensor(obs: &[LocalPosition], scale_km: f64) -> Result<Tensor, ModelError> {
    let first = obs.first().ok_or(ModelError::EmptyObservation)?;
    let t = obs.len();
    let mut data = vec![0.0; 3 * t];
    for (i, p) in obs.iter().enumerate() {
        let r = p.sub(first);
        data[i] = r.x / scale_km;
        data[t + i] = r.y / scale_km;
        data[2 * t + i] = r.z / scale_km;
    }
    Ok(Tensor { shape: vec![3, t], data })
}

/// Mixture NLL of `goal` (window-relative) on the tape.
pub fn nll_on_tape(tape: &mut Tape<'_>, heads: &Heads, goal: &LocalPosition, k: usize) -> Result<Var, AdError> {
    let g = tape.constant(Tensor { shape: vec![k, 3], data: (0..k).flat_map(|_| goal.to_array()).collect() });
    let diff = tape.sub(heads.mean, g)?;
    let sq = tape.mul(diff, diff)?;
    let neg = tape.scale(heads.logvar, -1.0)?;
    let inv_var = tape.exp(neg)?;
    let maha = tape.mul(sq, inv_var)?;
    let per_axis = tape.add(maha, heads.logvar)?;
    let rows = tape.row_sum(per_axis)?;
    let half = tape.scale(rows, -0.5)?;
    let log_dens = tape.add_scalar(half, -3.0 * HALF_LN_2PI)?;
    let log_pi = tape.log_softmax(heads.logits)?;
    let joint = tape.add(log_pi, log_dens)?;
    let lse = tape.logsumexp(joint)?;
    tape.scale(lse, -1.0)
}

/// Entropy regularizer on the tape; `None` when it is identically zero.
pub fn entropy_on_tape(tape: &mut Tape<'_>, heads: &Heads, cfg: &ModelConfig) -> Result<Option<Var>, AdError> {
    if cfg.lambda_rep == 0.0 {
        return Ok(None);
    }
    match cfg.entropy {
        EntropyKind::Repulsion => {
            if cfg.k < 2 {
                return Ok(None);
            }
            let r = tape.pair_repulsion(heads.mean, cfg.tau)?;
            Ok(Some(tape.scale(r, cfg.lambda_rep)?))
        }
        EntropyKind::WeightEntropy => {
            let p = tape.softmax(heads.logits)?;
            let lp = tape.log_softmax(heads.logits)?;
            let plp = tape.mul(p, lp)?;
            let s = tape.sum(plp)?;
            Ok(Some(tape.scale(s, cfg.lambda_rep)?))
        }
    }
}

/// Diagonal Gaussian mixture over goal positions (km).
#[derive(Debug, Clone, PartialEq)]
pub struct GoalMixture {
    pub means: Vec<LocalPosition>,
    pub variances: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl GoalMixture {
    fn from_heads(tape: &Tape<'_>, heads: &Heads) -> Self {
        let mu = &tape.value(heads.mean).data;
        let lv = &tape.value(heads.logvar).data;
        let weights = autodiff::softmax(&tape.value(heads.logits).data);
        let k = weights.len();
        Self {
            means: (0..k).map(|i| LocalPosition::new(mu[3 * i], mu[3 * i + 1], mu[3 * i + 2])).collect(),
            variances: (0..k)
                .map(|i| [0, 1, 2].map(|a| lv[3 * i + a].exp().max(VARIANCE_FLOOR)))
                .collect(),
            weights,
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn is_valid(&self) -> bool {
        let total: f64 = self.weights.iter().sum();
        (total - 1.0).abs() <= 1e-12
            && self.weights.iter().all(|w| (0.0..=1.0).contains(w))
            && self.variances.iter().flatten().all(|v| *v > 0.0 && v.is_finite())
            && self.means.iter().all(LocalPosition::is_finite)
    }

    /// Weighted mean of the component means.
    pub fn mean(&self) -> LocalPosition {
        self.means.iter().zip(&self.weights).fold(LocalPosition::ORIGIN, |acc, (m, w)| {
            LocalPosition::new(acc.x + w * m.x, acc.y + w * m.y, acc.z + w * m.z)
        })
    }

    /// Component indices by descending weight (ties keep index order).
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.sort_by(|a, b| self.weights[*b].total_cmp(&self.weights[*a]));
        idx
    }
}

pub fn component_log_density(mean: &LocalPosition, var: &[f64; 3], g: &LocalPosition) -> f64 {
    let (m, x) = (mean.to_array(), g.to_array());
    -(0..3).map(|i| 0.5 * (2.0 * std::f64::consts::PI * var[i]).ln() + 0.5 * (x[i] - m[i]).powi(2) / var[i]).sum::<f64>()
}

pub fn nll(mix: &GoalMixture, goal: &LocalPosition) -> f64 {
    let terms: Vec<f64> = (0..mix.k())
        .map(|k| mix.weights[k].ln() + component_log_density(&mix.means[k], &mix.variances[k], goal))
        .collect();
    -autodiff::logsumexp(&terms)
}

/// Regularizer value for a mixture, matching the training term.
pub fn entropy_reg(mix: &GoalMixture, cfg: &ModelConfig) -> f64 {
    match cfg.entropy {
        EntropyKind::Repulsion => {
            let flat: Vec<f64> = mix.means.iter().flat_map(LocalPosition::to_array).collect();
            cfg.lambda_rep * autodiff::pair_repulsion(&flat, mix.k(), 3, cfg.tau)
        }
        EntropyKind::WeightEntropy => {
            cfg.lambda_rep * mix.weights.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
        }
    }
}

/// Draws from the mixture, continuing `rng`'s stream.
pub fn sample_goals_with<R: Rng>(mix: &GoalMixture, n: usize, rng: &mut R) -> Vec<LocalPosition> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = mix.k() - 1;
            for (i, w) in mix.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let m = mix.means[k].to_array();
            let v = mix.variances[k];
            let mut draw = [0.0; 3];
            for a in 0..3 {
                let z: f64 = StandardNormal.sample(rng);
                draw[a] = m[a] + v[a].max(VARIANCE_FLOOR).sqrt() * z;
            }
            LocalPosition::new(draw[0], draw[1], draw[2])
        })
        .collect()
}

pub fn sample_goals(mix: &GoalMixture, n: usize, seed: u64) -> Vec<LocalPosition> {
    sample_goals_with(mix, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::{intent_label_set, AirportConfig, Direction};

    fn small_config() -> ModelConfig {
        ModelConfig {
            n_traj: 8,
            n_int: 4,
            k: 3,
            tcn: TcnConfig { channels: 6, ..Default::default() },
            mlp: MlpConfig { layers: 2, hidden: 10 },
            ..Default::default()
        }
    }

    fn labels() -> Vec<IntentLabel> {
        intent_label_set(&AirportConfig::example())
    }

    fn scene(seed: u64, label: IntentLabel) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<LocalPosition> = (0..12)
            .map(|t| LocalPosition::new(1.0 + 0.036 * t as f64, -0.5 + rng.random_range(-0.02..0.02), 0.3))
            .collect();
        Scene {
            id: format!("s{seed}"),
            aircraft_id: "N1".into(),
            t_obs: 11.0,
            obs,
            intent: label,
            call_age: Some(5.0),
            goal: LocalPosition::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.2),
        }
    }

    fn rand_mixture(rng: &mut ChaCha8Rng, k: usize) -> GoalMixture {
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        GoalMixture {
            means: (0..k)
                .map(|_| LocalPosition::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..1.0)))
                .collect(),
            variances: (0..k).map(|_| [0, 1, 2].map(|_| rng.random_range(0.05..2.0))).collect(),
            weights: autodiff::softmax(&logits),
        }
    }

    #[test]
    fn default_config_shapes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.receptive_field(), 15);
        let m = ModelParams::init(cfg, labels(), 1).unwrap();
        let s = scene(1, IntentLabel::Landing("08".into()));
        assert_eq!(m.encode_trajectory(&s.obs).unwrap().len(), 128);
        assert_eq!(m.embed_intent(&s.intent).unwrap().len(), 32);
        let e = m.layout.embed.unwrap();
        assert_eq!(m.tensors[e].shape, vec![17, 32]);
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.tcn.dilations = vec![1, 4, 2];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.k = 0;
        assert!(c.validate().is_err());
        assert!(small_config().validate().is_ok());
    }

    #[test]
    fn translation_invariant_encoding() {
        let m = ModelParams::init(small_config(), labels(), 3).unwrap();
        let still: Vec<LocalPosition> = vec![LocalPosition::new(0.4, 0.2, 0.3); 12];
        let shifted: Vec<LocalPosition> = still.iter().map(|p| p.add(&LocalPosition::new(5.0, 0.0, 0.0))).collect();
        assert_eq!(m.encode_trajectory(&still).unwrap(), m.encode_trajectory(&shifted).unwrap());
        assert!(matches!(m.encode_trajectory(&[]), Err(ModelError::EmptyObservation)));
    }

    #[test]
    fn predictions_are_valid_mixtures() {
        let m = ModelParams::init(small_config(), labels(), 4).unwrap();
        for (i, l) in labels().into_iter().enumerate() {
            let mix = m.predict_scene(&scene(i as u64, l)).unwrap();
            assert!(mix.is_valid());
        }
        let mut c = small_config();
        c.k = 1;
        let m1 = ModelParams::init(c, labels(), 4).unwrap();
        let mix = m1.predict_scene(&scene(0, IntentLabel::Unknown)).unwrap();
        assert_eq!(mix.weights, vec![1.0]);
        let other = vec![IntentLabel::Takeoff("17".into())];
        assert!(matches!(m.predict(&scene(0, other[0].clone()).obs, &other[0]), Err(ModelError::UnknownLabel(_))));
    }

    #[test]
    fn nll_examples() {
        let single = GoalMixture { means: vec![LocalPosition::new(1.0, 2.0, 3.0)], variances: vec![[1.0; 3]], weights: vec![1.0] };
        let g = LocalPosition::new(1.0, 2.0, 3.0);
        assert!((nll(&single, &g) - 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((nll(&single, &g) - 2.75682).abs() < 1e-5);
        let doubled = GoalMixture {
            means: vec![single.means[0]; 2],
            variances: vec![[1.0; 3]; 2],
            weights: vec![0.5, 0.5],
        };
        let p = LocalPosition::new(0.3, 1.1, 2.0);
        assert!((nll(&doubled, &p) - nll(&single, &p)).abs() < 1e-12);
    }

    /// Plain-space density sum, no log tricks.
    fn naive_nll(mix: &GoalMixture, g: &LocalPosition) -> f64 {
        let mut total = 0.0;
        for k in 0..mix.k() {
            let (m, x) = (mix.means[k].to_array(), g.to_array());
            let mut dens = 1.0;
            for a in 0..3 {
                let v = mix.variances[k][a];
                dens *= (-(x[a] - m[a]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
            }
            total += mix.weights[k] * dens;
        }
        -total.ln()
    }

    #[test]
    fn nll_matches_naive_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mix = rand_mixture(&mut rng, 5);
            let g = LocalPosition::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0));
            assert!((nll(&mix, &g) - naive_nll(&mix, &g)).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_loss_matches_standalone() {
        let m = ModelParams::init(small_config(), labels(), 5).unwrap();
        let s = scene(5, IntentLabel::Depart(Direction::North));
        let mut tape = Tape::new(&m.tensors);
        let (loss, nll_var) = m.scene_loss(&mut tape, &s).unwrap();
        let mix = m.predict_scene(&s).unwrap();
        assert!((tape.value(nll_var).item() - nll(&mix, &s.goal)).abs() < 1e-10);
        let ent = entropy_reg(&mix, &m.config);
        assert!((tape.value(loss).item() - nll(&mix, &s.goal) - ent).abs() < 1e-10);
    }

    #[test]
    fn entropy_examples() {
        let cfg = ModelConfig::default();
        let one = GoalMixture { means: vec![LocalPosition::ORIGIN], variances: vec![[1.0; 3]], weights: vec![1.0] };
        assert_eq!(entropy_reg(&one, &cfg), 0.0);
        let same = GoalMixture { means: vec![LocalPosition::ORIGIN; 2], variances: vec![[1.0; 3]; 2], weights: vec![0.5; 2] };
        assert!((entropy_reg(&same, &cfg) - 0.01).abs() < 1e-15);
        let far = GoalMixture {
            means: vec![LocalPosition::ORIGIN, LocalPosition::new(10.0, 0.0, 0.0)],
            ..same.clone()
        };
        assert!(entropy_reg(&far, &cfg) < 1e-40);
        let we = ModelConfig { entropy: EntropyKind::WeightEntropy, ..cfg };
        assert!((entropy_reg(&same, &we) - 0.01 * 0.5f64.ln()).abs() < 1e-15);
    }

    /// Zero biases put first-sample activations exactly on the ReLU hinge
    /// (window-relative input is zero there), where one-sided and central
    /// differences disagree; checks run at a generic point instead.
    pub(crate) fn jitter_biases(m: &mut ModelParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in m.names.iter().zip(&mut m.tensors) {
            if name.ends_with(".bias") {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [EntropyKind::Repulsion, EntropyKind::WeightEntropy] {
            let cfg = ModelConfig { entropy: kind, lambda_rep: 0.5, ..small_config() };
            let mut m = ModelParams::init(cfg, labels(), 6).unwrap();
            jitter_biases(&mut m, 6);
            let s = scene(6, IntentLabel::Landing("26".into()));
            let loss_of = |p: &[Tensor]| {
                let mut tape = Tape::new(p);
                let (l, _) = m.scene_loss(&mut tape, &s).unwrap();
                tape.value(l).item()
            };
            let mut tape = Tape::new(&m.tensors);
            let (l, _) = m.scene_loss(&mut tape, &s).unwrap();
            let g = tape.backward(l).unwrap();
            let err = autodiff::grad_check(loss_of, &m.tensors, &g.params, 1e-5, 200, 6);
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }

    #[test]
    fn sampling() {
        let tight = GoalMixture { means: vec![LocalPosition::new(1.0, -2.0, 0.5)], variances: vec![[1e-12; 3]], weights: vec![1.0] };
        for s in sample_goals(&tight, 20, 1) {
            assert!(s.distance(&tight.means[0]) < 1e-5);
        }
        let pinned = GoalMixture {
            means: vec![LocalPosition::new(0.0, 0.0, 0.0), LocalPosition::new(50.0, 0.0, 0.0)],
            variances: vec![[0.01; 3]; 2],
            weights: vec![1.0, 0.0],
        };
        assert!(sample_goals(&pinned, 500, 2).iter().all(|s| s.x < 5.0));
        assert_eq!(sample_goals(&pinned, 5, 3), sample_goals(&pinned, 5, 3));
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mix = rand_mixture(&mut rng, 4);
        let n = 100_000;
        let draws = sample_goals(&mix, n, 77);
        let mean = mix.mean().to_array();
        for a in 0..3 {
            // mixture variance = sum pi (var + mu^2) - mean^2
            let second: f64 = (0..4).map(|k| mix.weights[k] * (mix.variances[k][a] + mix.means[k].to_array()[a].powi(2))).sum();
            let sd = (second - mean[a].powi(2)).sqrt();
            let got = draws.iter().map(|d| d.to_array()[a]).sum::<f64>() / n as f64;
            assert!((got - mean[a]).abs() < 3.0 * sd / (n as f64).sqrt(), "axis {a}");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let m = ModelParams::init(small_config(), labels(), 8).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let back = ModelParams::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.tensors.iter().zip(&m.tensors) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let truncated = &buf[..buf.len() - 5];
        assert!(ModelParams::read_checkpoint(truncated).is_err());
        let mut single = AirportConfig::example();
        single.runway_ends.truncate(1);
        let fewer = intent_label_set(&single);
        assert!(matches!(back.check_compatible(&small_config(), &fewer), Err(ModelError::Mismatch { .. })));
        let text = String::from_utf8_lossy(&buf).replace("schema=1", "schema=9");
        assert!(matches!(ModelParams::read_checkpoint(text.as_bytes()), Err(ModelError::Mismatch { .. })));
    }
}
