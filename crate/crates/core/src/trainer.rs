//! Mini-batch training: mean NLL plus entropy term, AdamW with decoupled
//! decay, global-norm clipping and a reduce-on-plateau schedule driven by
//! the training loss.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::IntentLabel;
use crate::autodiff::{Tape, Tensor};
use crate::data::Scene;
use crate::goalnet::{ModelConfig, ModelError, ModelParams};

pub const DIVERGENCE_LIMIT: f64 = 1e6;
/// Keeps the shuffle stream distinct from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x5eed_0f5a;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss on scene {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch} (loss {loss}); last good checkpoint: {checkpoint}")]
    Diverged { epoch: usize, loss: f64, checkpoint: String },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub grad_clip: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr0: 1e-4,
            plateau_factor: 0.2,
            plateau_patience: 5,
            plateau_threshold: 1e-8,
            min_lr: 1e-8,
            batch_size: 64,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            grad_clip: 1.0,
            checkpoint_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return fail("plateau_factor must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive");
        }
        if !(self.lr0 > 0.0) || !(self.grad_clip > 0.0) || self.weight_decay < 0.0 {
            return fail("lr0 and grad_clip must be positive, weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Mean loss and mean gradients over a batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub nll: f64,
    pub grads: Vec<Tensor>,
}

/// Per-scene tapes; gradients summed in scene order, then averaged.
pub fn batch_loss(params: &ModelParams, scenes: &[&Scene]) -> Result<BatchResult, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::Empty("batch"));
    }
    let mut grads: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect();
    let (mut loss, mut nll) = (0.0, 0.0);
    for scene in scenes {
        let mut tape = Tape::new(&params.tensors);
        let (l, n) = match params.scene_loss(&mut tape, scene) {
            Ok(v) => v,
            Err(ModelError::Autodiff(_)) => return Err(TrainError::NonFinite(scene.id.clone())),
            Err(e) => return Err(e.into()),
        };
        let lv = tape.value(l).item();
        if !lv.is_finite() {
            return Err(TrainError::NonFinite(scene.id.clone()));
        }
        loss += lv;
        nll += tape.value(n).item();
        let g = tape.backward(l).map_err(ModelError::from)?;
        for (acc, gi) in grads.iter_mut().zip(&g.params) {
            acc.data.iter_mut().zip(&gi.data).for_each(|(a, b)| *a += b);
        }
    }
    let b = scenes.len() as f64;
    for g in &mut grads {
        g.data.iter_mut().for_each(|v| *v /= b);
    }
    Ok(BatchResult { loss: loss / b, nll: nll / b, grads })
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
    }
    norm
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[Tensor], cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps_adam,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Decay `θ ← θ(1 - lr·wd)`, then the bias-corrected adaptive step.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                let theta = p.data[j] * (1.0 - lr * self.weight_decay);
                p.data[j] = theta - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            factor: cfg.plateau_factor,
            patience: cfg.plateau_patience,
            threshold: cfg.plateau_threshold,
            min_lr: cfg.min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's training loss and returns the learning rate for the
    /// next epoch.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate in effect after this epoch's schedule step.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epochs at whose end the learning rate was reduced.
    pub reductions: Vec<usize>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss,lr,seconds")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{:.3}", e.epoch, e.loss, e.lr, e.seconds)?;
        }
        Ok(())
    }
}

/// Anything trainable by the loop below.
pub trait Objective {
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    /// Mean loss and gradients over the given example indices.
    fn batch(&self, indices: &[usize]) -> Result<(f64, Vec<Tensor>), TrainError>;
    fn len(&self) -> usize;
    fn checkpoint(&self, _path: &Path) -> Result<(), TrainError> {
        Ok(())
    }
}

struct SceneObjective<'a> {
    model: ModelParams,
    scenes: &'a [Scene],
}

impl Objective for SceneObjective<'_> {
    fn params(&self) -> &[Tensor] {
        &self.model.tensors
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.model.tensors
    }

    fn batch(&self, indices: &[usize]) -> Result<(f64, Vec<Tensor>), TrainError> {
        let batch: Vec<&Scene> = indices.iter().map(|&i| &self.scenes[i]).collect();
        let r = batch_loss(&self.model, &batch)?;
        Ok((r.loss, r.grads))
    }

    fn len(&self) -> usize {
        self.scenes.len()
    }

    fn checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        Ok(self.model.save(path)?)
    }
}

/// The epoch loop shared by every objective: seeded shuffle, clipped AdamW
/// steps, plateau schedule, periodic checkpoints and divergence abort.
pub fn fit<O: Objective>(obj: &mut O, cfg: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    if obj.len() == 0 {
        return Err(TrainError::Empty("training set"));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Io { path: dir.display().to_string(), source: e })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut opt = AdamW::new(obj.params(), cfg);
    let mut sched = PlateauScheduler::new(cfg);
    let mut lr = cfg.lr0;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..obj.len()).collect();
    let mut last_good = String::from("none");
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, mut grads) = obj.batch(chunk)?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(TrainError::Diverged { epoch, loss, checkpoint: last_good });
            }
            total += loss * chunk.len() as f64;
            clip_global_norm(&mut grads, cfg.grad_clip);
            opt.step(obj.params_mut(), &grads, lr);
        }
        let loss = total / obj.len() as f64;
        let next = sched.step(loss, lr);
        if next < lr {
            history.reductions.push(epoch);
        }
        lr = next;
        history.epochs.push(EpochRecord { epoch, loss, lr, seconds: started.elapsed().as_secs_f64() });
        log::debug!("epoch {epoch} loss {loss:.6} lr {lr:e}");
        if let Some(dir) = checkpoint_dir {
            let periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
            if periodic || epoch == cfg.epochs {
                let name = if epoch == cfg.epochs { "final.ckpt".to_string() } else { format!("epoch_{epoch:04}.ckpt") };
                let path = dir.join(name);
                obj.checkpoint(&path)?;
                last_good = path.display().to_string();
                history.checkpoints.push(path);
            }
        }
    }
    Ok(history)
}

/// Trains a fresh model on `train` scenes. Initialization and shuffling are
/// both derived from `tconfig.seed`.
pub fn train(
    train_scenes: &[Scene],
    labels: &[IntentLabel],
    mconfig: &ModelConfig,
    tconfig: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    let model = ModelParams::init(mconfig.clone(), labels.to_vec(), tconfig.seed)?;
    train_from(model, train_scenes, tconfig, checkpoint_dir)
}

pub fn train_from(
    model: ModelParams,
    train_scenes: &[Scene],
    tconfig: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    let mut obj = SceneObjective { model, scenes: train_scenes };
    let history = fit(&mut obj, tconfig, checkpoint_dir)?;
    Ok((obj.model, history))
}

/// Mean loss over `scenes` without gradients; `entropy = false` drops the
/// regularizer to give pure mean NLL.
pub fn mean_loss(model: &ModelParams, scenes: &[Scene], entropy: bool) -> Result<f64, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::Empty("scene list"));
    }
    let mut total = 0.0;
    for s in scenes {
        let mut tape = Tape::new(&model.tensors);
        let (l, n) = model.scene_loss(&mut tape, s)?;
        total += tape.value(if entropy { l } else { n }).item();
    }
    Ok(total / scenes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::{intent_label_set, AirportConfig, Direction, LocalPosition};
    use crate::goalnet::{self, MlpConfig, TcnConfig};
    use rand::Rng;

    fn labels() -> Vec<IntentLabel> {
        intent_label_set(&AirportConfig::example())
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_traj: 6,
            n_int: 4,
            k: 2,
            tcn: TcnConfig { channels: 6, ..Default::default() },
            mlp: MlpConfig { layers: 1, hidden: 12 },
            ..Default::default()
        }
    }

    /// Straight-line windows whose goal depends on heading and on the label.
    fn scenes(n: usize, seed: u64) -> Vec<Scene> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ls = [IntentLabel::Landing("08".into()), IntentLabel::Depart(Direction::North)];
        (0..n)
            .map(|i| {
                let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let (dx, dy) = (0.036 * heading.cos(), 0.036 * heading.sin());
                let label = ls[i % 2].clone();
                let obs: Vec<LocalPosition> =
                    (0..12).map(|t| LocalPosition::new(dx * t as f64, dy * t as f64, 0.3)).collect();
                let turn = if i % 2 == 0 { 1.0 } else { -1.0 };
                let goal = LocalPosition::new(dx * 60.0 + turn * dy * 30.0, dy * 60.0 - turn * dx * 30.0, 0.3);
                Scene {
                    id: format!("s{i}"),
                    aircraft_id: format!("N{i}"),
                    t_obs: 11.0,
                    obs,
                    intent: label,
                    call_age: Some(3.0),
                    goal,
                }
            })
            .collect()
    }

    #[test]
    fn standard_normal_at_mean() {
        let cfg = ModelConfig { k: 1, ..tiny() };
        let mut m = ModelParams::init(cfg, labels(), 1).unwrap();
        let s = &scenes(1, 1)[0];
        let rel = s.goal.sub(&s.obs[0]).to_array();
        for (name, t) in m.names.iter().zip(&mut m.tensors) {
            t.data.iter_mut().for_each(|v| *v = 0.0);
            if name == "head.mean.bias" {
                t.data.copy_from_slice(&rel);
            }
        }
        let r = batch_loss(&m, &[s]).unwrap();
        assert!((r.loss - 2.75682).abs() < 1e-5);
    }

    #[test]
    fn batch_mean_properties() {
        let m = ModelParams::init(tiny(), labels(), 2).unwrap();
        let data = scenes(6, 2);
        let refs: Vec<&Scene> = data.iter().collect();
        let doubled: Vec<&Scene> = data.iter().chain(&data).collect();
        let a = batch_loss(&m, &refs).unwrap();
        let b = batch_loss(&m, &doubled).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        let hand: f64 = data
            .iter()
            .map(|s| {
                let mix = m.predict_scene(s).unwrap();
                goalnet::nll(&mix, &s.goal) + goalnet::entropy_reg(&mix, &m.config)
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!((a.loss - hand).abs() < 1e-10);
        assert!(matches!(batch_loss(&m, &[]), Err(TrainError::Empty(_))));
    }

    #[test]
    fn adamw_examples() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = AdamW::new(&p, &cfg);
        opt.step(&mut p, &[Tensor::scalar(0.5)], 1e-3);
        assert!((p[0].item() - (1.0 - 1e-3 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);

        let mut p = vec![Tensor::vector(vec![0.7, -2.0])];
        let mut opt = AdamW::new(&p, &cfg);
        opt.step(&mut p, &[Tensor::zeros(&[2])], 1e-3);
        assert_eq!(p[0].data, vec![0.7, -2.0]);

        let cfg = TrainConfig { weight_decay: 0.1, ..Default::default() };
        let mut p = vec![Tensor::scalar(2.0)];
        let mut opt = AdamW::new(&p, &cfg);
        opt.step(&mut p, &[Tensor::scalar(0.0)], 0.01);
        assert_eq!(p[0].item(), 2.0 * (1.0 - 0.01 * 0.1));
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data[0] - 0.6).abs() < 1e-15 && (g[0].data[1] - 0.8).abs() < 1e-15);
        let mut small = vec![Tensor::vector(vec![0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data, vec![0.1]);
    }

    #[test]
    fn plateau_examples() {
        let cfg = TrainConfig::default();
        let mut s = PlateauScheduler::new(&cfg);
        let mut lr = 1e-4;
        for i in 0..20 {
            lr = s.step(10.0 - i as f64, lr);
        }
        assert_eq!(lr, 1e-4);
        let mut s = PlateauScheduler::new(&cfg);
        let mut lr = 1e-4;
        let mut lrs = Vec::new();
        for _ in 0..11 {
            lr = s.step(1.0, lr);
            lrs.push(lr);
        }
        assert_eq!(lrs[5], 1e-4 * 0.2);
        assert!((lrs[10] - 4e-6).abs() < 1e-21);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        let mut s = PlateauScheduler::new(&TrainConfig { min_lr: 1e-5, ..cfg });
        let mut lr = 1e-4;
        for _ in 0..30 {
            lr = s.step(1.0, lr);
        }
        assert_eq!(lr, 1e-5);
    }

    struct Exploding(Vec<Tensor>);

    impl Objective for Exploding {
        fn params(&self) -> &[Tensor] {
            &self.0
        }
        fn params_mut(&mut self) -> &mut [Tensor] {
            &mut self.0
        }
        fn batch(&self, _: &[usize]) -> Result<(f64, Vec<Tensor>), TrainError> {
            Ok((1e7, vec![Tensor::scalar(1.0)]))
        }
        fn len(&self) -> usize {
            3
        }
    }

    #[test]
    fn divergence_aborts() {
        let mut obj = Exploding(vec![Tensor::scalar(0.0)]);
        let err = fit(&mut obj, &TrainConfig::default(), None).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { epoch: 1, .. }));
    }

    fn quick() -> TrainConfig {
        TrainConfig { epochs: 50, lr0: 3e-3, batch_size: 16, seed: 9, checkpoint_every: 25, ..Default::default() }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = scenes(100, 3);
        let dir = tempfile::tempdir().unwrap();
        let (m1, h1) = train(&data, &labels(), &tiny(), &quick(), Some(dir.path())).unwrap();
        assert_eq!(h1.len(), 50);
        assert!(h1.final_loss().unwrap() < h1.epochs[0].loss);
        assert_eq!(h1.checkpoints.len(), 2);
        assert_eq!(ModelParams::load(&dir.path().join("final.ckpt")).unwrap(), m1);
        let (m2, h2) = train(&data, &labels(), &tiny(), &quick(), None).unwrap();
        assert_eq!(m1.tensors, m2.tensors);
        assert_eq!(h1.epochs.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>(), h2.epochs.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>());
        let mut csv = Vec::new();
        h1.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("epoch,loss,lr,seconds\n1,"));
    }

    #[test]
    fn trajectory_only_variant_and_pure_nll() {
        let data = scenes(20, 4);
        let cfg = ModelConfig { use_intent: false, ..tiny() };
        let (m, _) = train(&data, &labels(), &cfg, &TrainConfig { epochs: 3, ..quick() }, None).unwrap();
        assert!(m.embed_intent(&data[0].intent).is_err());
        let zero = ModelConfig { lambda_rep: 0.0, ..tiny() };
        let m = ModelParams::init(zero, labels(), 4).unwrap();
        assert_eq!(mean_loss(&m, &data, true).unwrap(), mean_loss(&m, &data, false).unwrap());
    }
}
