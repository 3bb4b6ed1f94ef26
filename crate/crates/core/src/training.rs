//! Supervised and semi-supervised training loops, plateau scheduling,
//! resumable checkpoints and evaluation.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::embedder::{Embedder, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::losses::{semi_supervised_loss_var, si_sdr_loss, si_sdr_loss_var, LossWeights};
use crate::model::{wave_tensor, Exformer, ExformerConfig};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::{lit, Scalar};
use crate::signal::{
    dynamic_mix, si_sdr, speed_perturb, Corpus, MixSpec, TrainItem, SPEED_PERTURB_MAX,
};
use crate::tensor::Tensor;

pub const EXFORMER_KIND: &str = "exformer";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Supervised,
    Semi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub init_lr: f64,
    pub lr_floor: f64,
    pub plateau_patience: usize,
    pub scheduler_start_epoch: usize,
    pub max_epochs: usize,
    /// Dynamic-mix draws per epoch.
    pub draws_per_epoch: usize,
    /// Probability that a drawn item is unlabeled (second stage only).
    pub unlabeled_prob: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            batch_size: 1,
            init_lr: 1.5e-4,
            lr_floor: 1e-6,
            plateau_patience: 2,
            scheduler_start_epoch: 85,
            max_epochs: 200,
            draws_per_epoch: 200,
            unlabeled_prob: 0.0,
            seed: 0,
            loss_weights: LossWeights::default(),
            adam: AdamConfig::default(),
        }
    }

    pub fn stage2() -> Self {
        Self {
            init_lr: 7.5e-5,
            scheduler_start_epoch: 65,
            unlabeled_prob: 0.1,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "batch_size must be 1, got {}",
                self.batch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.unlabeled_prob) {
            return Err(Error::Config(format!(
                "unlabeled_prob {} outside [0, 1]",
                self.unlabeled_prob
            )));
        }
        if !(self.init_lr.is_finite() && self.lr_floor.is_finite())
            || self.init_lr <= self.lr_floor
            || self.lr_floor <= 0.0
        {
            return Err(Error::Config(format!(
                "need init_lr > lr_floor > 0, got {} and {}",
                self.init_lr, self.lr_floor
            )));
        }
        if self.draws_per_epoch == 0 || self.plateau_patience == 0 {
            return Err(Error::Config(
                "draws_per_epoch and plateau_patience must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub current_lr: f64,
    pub best_val: f64,
    pub epochs_since_improve: usize,
}

impl SchedulerState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            current_lr: cfg.init_lr,
            best_val: f64::INFINITY,
            epochs_since_improve: 0,
        }
    }
}

/// Reduce-on-plateau update after `epoch` (1-based) finished with `val_loss`.
///
/// Non-improving epochs are only counted once `epoch` exceeds the start epoch;
/// `plateau_patience` of them in a row halve the rate, never below the floor.
pub fn scheduler_step(
    state: SchedulerState,
    val_loss: f64,
    epoch: usize,
    cfg: &TrainConfig,
) -> SchedulerState {
    let mut s = state;
    if val_loss < s.best_val {
        s.best_val = val_loss;
        s.epochs_since_improve = 0;
        return s;
    }
    if epoch <= cfg.scheduler_start_epoch {
        return s;
    }
    s.epochs_since_improve += 1;
    if s.epochs_since_improve >= cfg.plateau_patience {
        s.current_lr = (s.current_lr * 0.5).max(cfg.lr_floor);
        s.epochs_since_improve = 0;
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_si_sdr: f64,
    pub mean_si_sdri: f64,
    pub n_items: usize,
}

/// One line of the JSON-lines training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mean_si_sdri: f64,
}

/// Mixture simulation for training and test streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub segment_seconds: f64,
    pub speed_perturb: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            snr_db_min: 0.0,
            snr_db_max: 5.0,
            segment_seconds: 3.0,
            speed_perturb: true,
        }
    }
}

/// Deterministic per-draw seed derived from a run seed, a draw index and a stream tag.
pub fn item_seed(seed: u64, index: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0xA076_1D64_78BD_642F);
    z = z.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SALT_LABELED: u64 = 1;
const SALT_UNLABELED: u64 = 2;
const SALT_BERNOULLI: u64 = 3;

/// Whether draw `index` of a run with `seed` comes from the unlabeled stream.
pub fn draws_unlabeled(seed: u64, index: u64, p: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, index, SALT_BERNOULLI));
    rng.random_bool(p)
}

/// Anything that yields training items by index.
pub trait ItemSource {
    fn item(&self, index: u64) -> Result<TrainItem>;
}

/// Cycles through a fixed list.
pub struct FixedItems(pub Vec<TrainItem>);

impl ItemSource for FixedItems {
    fn item(&self, index: u64) -> Result<TrainItem> {
        if self.0.is_empty() {
            return Err(Error::InsufficientData("fixed item list is empty".into()));
        }
        Ok(self.0[(index % self.0.len() as u64) as usize].clone())
    }
}

/// On-the-fly mixtures from a corpus; item `i` depends only on `(seed, i)`.
pub struct MixtureStream<'a> {
    pub corpus: &'a Corpus,
    pub mix: MixConfig,
    pub seed: u64,
    pub labeled: bool,
}

impl<'a> MixtureStream<'a> {
    pub fn new(corpus: &'a Corpus, mix: MixConfig, seed: u64, labeled: bool) -> Result<Self> {
        let speakers = corpus.speakers();
        if speakers.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "mixing needs at least 2 speakers, corpus has {}",
                speakers.len()
            )));
        }
        if speakers.iter().any(|&s| corpus.utterances_of(s).len() < 2) {
            return Err(Error::InsufficientData(
                "every speaker needs at least 2 utterances (source and enrollment)".into(),
            ));
        }
        if mix.snr_db_max < mix.snr_db_min {
            return Err(Error::Config("snr_db_max < snr_db_min".into()));
        }
        Ok(Self {
            corpus,
            mix,
            seed,
            labeled,
        })
    }
}

impl ItemSource for MixtureStream<'_> {
    fn item(&self, index: u64) -> Result<TrainItem> {
        let salt = if self.labeled {
            SALT_LABELED
        } else {
            SALT_UNLABELED
        };
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(self.seed, index, salt));
        let speakers = self.corpus.speakers();
        let si = rng.random_range(0..speakers.len());
        let mut ii = rng.random_range(0..speakers.len() - 1);
        if ii >= si {
            ii += 1;
        }
        let t_utts = self.corpus.utterances_of(speakers[si]);
        let i_utts = self.corpus.utterances_of(speakers[ii]);
        let tu = rng.random_range(0..t_utts.len());
        let mut eu = rng.random_range(0..t_utts.len() - 1);
        if eu >= tu {
            eu += 1;
        }
        let iu = i_utts[rng.random_range(0..i_utts.len())];
        let mut target = self.corpus.get(t_utts[tu]).wave.clone();
        let mut interf = self.corpus.get(iu).wave.clone();
        if self.mix.speed_perturb {
            let lo = 1.0 - SPEED_PERTURB_MAX;
            let hi = 1.0 + SPEED_PERTURB_MAX;
            target = speed_perturb(&target, rng.random_range(lo..=hi))?;
            interf = speed_perturb(&interf, rng.random_range(lo..=hi))?;
        }
        let snr_db = if self.mix.snr_db_max > self.mix.snr_db_min {
            rng.random_range(self.mix.snr_db_min..self.mix.snr_db_max)
        } else {
            self.mix.snr_db_min
        };
        let spec = MixSpec {
            snr_db,
            segment_seconds: self.mix.segment_seconds,
            seed: rng.random(),
        };
        let enrollment = self.corpus.get(t_utts[eu]).wave.clone();
        let item = dynamic_mix(&target, &interf, enrollment, &spec)?;
        Ok(if self.labeled {
            item
        } else {
            item.into_unlabeled()
        })
    }
}

/// Deterministic labeled test set: `n` mixtures without speed perturbation.
pub fn build_test_items(
    corpus: &Corpus,
    n: usize,
    mix: &MixConfig,
    seed: u64,
) -> Result<Vec<TrainItem>> {
    let mix = MixConfig {
        speed_perturb: false,
        ..mix.clone()
    };
    let stream = MixtureStream::new(corpus, mix, seed, true)?;
    (0..n as u64).map(|i| stream.item(i)).collect()
}

fn embed_const<T: Scalar>(g: &mut Graph<T>, z: &SpeakerEmbedding) -> crate::autodiff::Var {
    g.constant(Tensor::new(
        &[z.dim()],
        z.values().iter().map(|&v| lit(v as f64)).collect(),
    ))
}

/// Mean SI-SDR of the target estimate and its improvement over the mixture.
pub fn evaluate<T: Scalar>(
    model: &Exformer<T>,
    embedder: &Embedder<T>,
    items: &[TrainItem],
) -> Result<EvalReport> {
    evaluate_with(items, |item| {
        let (t, _) = model.extract(embedder, item.mixture(), item.enrollment())?;
        Ok(t.into_samples())
    })
}

/// Evaluation with an arbitrary target estimator.
pub fn evaluate_with(
    items: &[TrainItem],
    mut estimate: impl FnMut(&TrainItem) -> Result<Vec<f32>>,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InsufficientData("evaluation set is empty".into()));
    }
    let (mut sdr, mut sdri) = (0.0, 0.0);
    for item in items {
        let target = item.target().ok_or(Error::MissingReferences)?;
        let est = estimate(item)?;
        let s = si_sdr(target.samples(), &est)?;
        let base = si_sdr(target.samples(), item.mixture().samples())?;
        sdr += s;
        sdri += s - base;
    }
    let n = items.len() as f64;
    Ok(EvalReport {
        mean_si_sdr: sdr / n,
        mean_si_sdri: sdri / n,
        n_items: items.len(),
    })
}

/// Validation loss (mean labeled reconstruction loss) and mean SI-SDRi.
pub fn validate<T: Scalar>(
    model: &Exformer<T>,
    embedder: &Embedder<T>,
    items: &[TrainItem],
) -> Result<(f64, f64)> {
    if items.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    let (mut loss, mut sdri) = (0.0, 0.0);
    for item in items {
        let (t_ref, r_ref) = match (item.target(), item.residual()) {
            (Some(t), Some(r)) => (t, r),
            _ => return Err(Error::MissingReferences),
        };
        let (t, r) = model.extract(embedder, item.mixture(), item.enrollment())?;
        loss += si_sdr_loss(t_ref, r_ref, &t, &r)?;
        sdri += si_sdr(t_ref.samples(), t.samples())?
            - si_sdr(t_ref.samples(), item.mixture().samples())?;
    }
    let n = items.len() as f64;
    Ok((loss / n, sdri / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainState {
    stage: Stage,
    epoch: usize,
    draws: u64,
    scheduler: SchedulerState,
    adam_step: u64,
    history: Vec<EpochLog>,
    train: TrainConfig,
}

/// Owns the separator, the frozen embedder and all optimizer state.
pub struct Trainer<T: Scalar> {
    pub model: Exformer<T>,
    pub embedder: Embedder<T>,
    pub cfg: TrainConfig,
    pub stage: Stage,
    pub opt: Adam<T>,
    pub scheduler: SchedulerState,
    /// Completed epochs.
    pub epoch: usize,
    /// Items drawn so far; the next draw uses this index.
    pub draws: u64,
    pub history: Vec<EpochLog>,
    /// Loss of every optimizer step in this process.
    pub step_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub history: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    pub best_val: f64,
    pub unlabeled_draws: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        model: Exformer<T>,
        embedder: Embedder<T>,
        cfg: TrainConfig,
        stage: Stage,
    ) -> Result<Self> {
        cfg.validate()?;
        if embedder.config().embed_dim != model.config().embed_dim {
            return Err(Error::DimensionMismatch(format!(
                "embedder dim {} vs separator dim {}",
                embedder.config().embed_dim,
                model.config().embed_dim
            )));
        }
        Ok(Self {
            opt: Adam::new(&model.store, cfg.adam.clone()),
            scheduler: SchedulerState::new(&cfg),
            model,
            embedder,
            cfg,
            stage,
            epoch: 0,
            draws: 0,
            history: Vec::new(),
            step_losses: Vec::new(),
        })
    }

    /// Starts the second stage from a first-stage checkpoint: weights are copied
    /// exactly, optimizer and scheduler start fresh.
    pub fn stage2_from(
        ckpt: &Checkpoint<T>,
        cfg: TrainConfig,
        expected: Option<&ExformerConfig>,
    ) -> Result<Self> {
        let (model, embedder) = load_models(ckpt)?;
        if let Some(exp) = expected {
            if exp != model.config() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint model config ({} fusion, F={}) does not match the requested one ({} fusion, F={})",
                    model.config().fusion_mode,
                    model.config().feature_dim,
                    exp.fusion_mode,
                    exp.feature_dim
                )));
            }
        }
        Self::new(model, embedder, cfg, Stage::Semi)
    }

    /// Restores a run exactly as it was saved, including optimizer moments.
    pub fn resume(ckpt: &Checkpoint<T>) -> Result<Self> {
        let (model, embedder) = load_models(ckpt)?;
        let state: TrainState = serde_json::from_value(ckpt.meta["state"].clone())
            .map_err(|e| Error::Checkpoint(format!("training state: {e}")))?;
        let mut t = Self::new(model, embedder, state.train, state.stage)?;
        let moments = |prefix: &str| -> Result<Vec<Tensor<T>>> {
            t.model
                .store
                .iter()
                .map(|(name, p)| {
                    let x = ckpt
                        .get(&format!("{prefix}{name}"))
                        .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}{name}")))?;
                    if x.shape() != p.shape() {
                        return Err(Error::Checkpoint(format!(
                            "shape mismatch for {prefix}{name}"
                        )));
                    }
                    Ok(x.clone())
                })
                .collect()
        };
        let (m, v) = (moments("adam.m.")?, moments("adam.v.")?);
        t.opt.m = m;
        t.opt.v = v;
        t.opt.step = state.adam_step;
        t.scheduler = state.scheduler;
        t.epoch = state.epoch;
        t.draws = state.draws;
        t.history = state.history;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint<T>> {
        let state = TrainState {
            stage: self.stage,
            epoch: self.epoch,
            draws: self.draws,
            scheduler: self.scheduler,
            adam_step: self.opt.step,
            history: self.history.clone(),
            train: self.cfg.clone(),
        };
        let meta = serde_json::json!({
            "fusion_mode": self.model.fusion_mode(),
            "model": self.model.config(),
            "embedder": self.embedder.config(),
            "state": state,
        });
        let mut c = Checkpoint::new(EXFORMER_KIND, meta);
        c.push_store("model.", &self.model.store);
        c.push_store("embedder.", &self.embedder.store);
        for ((name, _), (m, v)) in self
            .model
            .store
            .iter()
            .zip(self.opt.m.iter().zip(&self.opt.v))
        {
            c.push(format!("adam.m.{name}"), m.clone());
            c.push(format!("adam.v.{name}"), v.clone());
        }
        Ok(c)
    }

    /// One optimizer step on `item`; returns the loss before the update.
    pub fn step(&mut self, item: &TrainItem) -> Result<f64> {
        let z = self.embedder.embed(item.enrollment())?;
        let mut g = Graph::new();
        let x = g.constant(wave_tensor(item.mixture()));
        let zv = embed_const(&mut g, &z);
        let out = self.model.forward(&mut g, self.model.weights(), x, zv)?;
        let loss = match self.stage {
            Stage::Supervised => {
                let (t, r) = match (item.target(), item.residual()) {
                    (Some(t), Some(r)) => (t, r),
                    _ => return Err(Error::MissingReferences),
                };
                let s_t = g.constant(wave_tensor(t));
                let s_r = g.constant(wave_tensor(r));
                si_sdr_loss_var(&mut g, s_t, s_r, out.target, out.residual)?
            }
            Stage::Semi => {
                semi_supervised_loss_var(
                    &mut g,
                    item,
                    out.target,
                    out.residual,
                    &self.embedder,
                    &self.cfg.loss_weights,
                )?
                .total
            }
        };
        let lv = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at draw {} (epoch {})",
                self.draws,
                self.epoch + 1
            )));
        }
        g.backward(loss);
        let grads = g.param_grads(&self.model.store);
        self.opt
            .update(&mut self.model.store, grads, self.scheduler.current_lr);
        self.step_losses.push(lv);
        Ok(lv)
    }

    /// Runs epochs until `max_epochs`, validating after each one.
    ///
    /// With `out_dir`, appends to `train_log.jsonl` and writes `last.ckpt` every
    /// epoch and `best.ckpt` whenever validation improves.
    pub fn run(
        &mut self,
        labeled: &dyn ItemSource,
        unlabeled: Option<&dyn ItemSource>,
        val: &[TrainItem],
        out_dir: Option<&Path>,
    ) -> Result<RunReport> {
        if self.stage == Stage::Semi && self.cfg.unlabeled_prob > 0.0 && unlabeled.is_none() {
            return Err(Error::InsufficientData(
                "unlabeled_prob > 0 but no unlabeled stream was given".into(),
            ));
        }
        if let Some(d) = out_dir {
            fs::create_dir_all(d)?;
        }
        let mut unlabeled_draws = 0;
        while self.epoch < self.cfg.max_epochs {
            let mut total = 0.0;
            for _ in 0..self.cfg.draws_per_epoch {
                let idx = self.draws;
                let item = match (self.stage, unlabeled) {
                    (Stage::Semi, Some(u))
                        if draws_unlabeled(self.cfg.seed, idx, self.cfg.unlabeled_prob) =>
                    {
                        unlabeled_draws += 1;
                        u.item(idx)?
                    }
                    _ => labeled.item(idx)?,
                };
                total += self.step(&item)?;
                self.draws += 1;
            }
            self.epoch += 1;
            let (val_loss, sdri) = validate(&self.model, &self.embedder, val)?;
            let improved = val_loss < self.scheduler.best_val;
            let lr = self.scheduler.current_lr;
            self.scheduler = scheduler_step(self.scheduler, val_loss, self.epoch, &self.cfg);
            let log = EpochLog {
                epoch: self.epoch,
                lr,
                train_loss: total / self.cfg.draws_per_epoch as f64,
                val_loss,
                mean_si_sdri: sdri,
            };
            self.history.push(log);
            if let Some(d) = out_dir {
                append_log(&d.join("train_log.jsonl"), &log)?;
                let c = self.checkpoint()?;
                if improved {
                    c.save(d.join("best.ckpt"))?;
                }
                c.save(d.join("last.ckpt"))?;
            }
        }
        Ok(RunReport {
            history: self.history.clone(),
            step_losses: self.step_losses.clone(),
            best_val: self.scheduler.best_val,
            unlabeled_draws,
        })
    }
}

fn append_log(path: &Path, log: &EpochLog) -> Result<()> {
    let f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, log)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads the separator and embedder stored in an exformer checkpoint.
pub fn load_models<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<(Exformer<T>, Embedder<T>)> {
    ckpt.expect_kind(EXFORMER_KIND)?;
    let model = Exformer::from_parts(ckpt, "model.", &ckpt.meta["model"])?;
    let embedder = Embedder::from_parts(ckpt, "embedder.", &ckpt.meta["embedder"])?;
    Ok((model, embedder))
}

/// Reads the training log written by [`Trainer::run`].
pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Writes `value` as pretty JSON.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheduler_waits_for_start_epoch() {
        let cfg = TrainConfig::stage1();
        let mut s = SchedulerState::new(&cfg);
        s = scheduler_step(s, 1.0, 48, &cfg);
        s = scheduler_step(s, 2.0, 49, &cfg);
        s = scheduler_step(s, 2.0, 50, &cfg);
        assert_eq!(s.current_lr, 1.5e-4);
        assert_eq!(s.epochs_since_improve, 0);
    }

    #[test]
    fn scheduler_halves_and_clamps() {
        let cfg = TrainConfig::stage1();
        let mut s = SchedulerState {
            current_lr: 1.5e-4,
            best_val: 1.0,
            epochs_since_improve: 1,
        };
        s = scheduler_step(s, 2.0, 90, &cfg);
        assert_eq!(s.current_lr, 7.5e-5);
        assert_eq!(s.epochs_since_improve, 0);
        let s = scheduler_step(
            SchedulerState {
                current_lr: 1.2e-6,
                best_val: 1.0,
                epochs_since_improve: 1,
            },
            2.0,
            90,
            &cfg,
        );
        assert_eq!(s.current_lr, 1e-6);
    }

    #[test]
    fn improvement_resets_counter() {
        let cfg = TrainConfig::stage1();
        let s = SchedulerState {
            current_lr: 1e-4,
            best_val: 1.0,
            epochs_since_improve: 1,
        };
        let s = scheduler_step(s, 0.5, 100, &cfg);
        assert_eq!(
            (s.best_val, s.epochs_since_improve, s.current_lr),
            (0.5, 0, 1e-4)
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::stage1().validate().is_ok());
        assert!(TrainConfig {
            unlabeled_prob: 1.5,
            ..TrainConfig::stage2()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            init_lr: 1e-7,
            ..TrainConfig::stage1()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 4,
            ..TrainConfig::stage1()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn bernoulli_draws_are_seeded() {
        let a: Vec<bool> = (0..100).map(|i| draws_unlabeled(7, i, 0.3)).collect();
        let b: Vec<bool> = (0..100).map(|i| draws_unlabeled(7, i, 0.3)).collect();
        assert_eq!(a, b);
        assert!((0..100).all(|i| !draws_unlabeled(7, i, 0.0)));
        assert!((0..100).all(|i| draws_unlabeled(7, i, 1.0)));
    }

    #[test]
    fn evaluation_definitions() {
        let corpus = Corpus::synthetic(&crate::signal::CorpusSpec {
            n_speakers: 3,
            utts_per_speaker: 3,
            min_duration_s: 0.5,
            max_duration_s: 0.8,
            ..Default::default()
        })
        .unwrap();
        let mix = MixConfig {
            segment_seconds: 0.5,
            ..MixConfig::default()
        };
        let items = build_test_items(&corpus, 3, &mix, 4).unwrap();
        assert_eq!(items, build_test_items(&corpus, 3, &mix, 4).unwrap());
        let ident = evaluate_with(&items, |it| Ok(it.mixture().samples().to_vec())).unwrap();
        assert_eq!(ident.mean_si_sdri, 0.0);
        let oracle =
            evaluate_with(&items, |it| Ok(it.target().unwrap().samples().to_vec())).unwrap();
        assert!(oracle.mean_si_sdr >= 60.0);
        assert!(evaluate_with(&[], |_| Ok(vec![])).is_err());
        let unl: Vec<TrainItem> = items.into_iter().map(TrainItem::into_unlabeled).collect();
        assert!(matches!(
            evaluate_with(&unl, |it| Ok(it.mixture().samples().to_vec())),
            Err(Error::MissingReferences)
        ));
    }

    #[test]
    fn stream_items_are_reproducible_and_distinct() {
        let corpus = Corpus::synthetic(&crate::signal::CorpusSpec {
            n_speakers: 3,
            utts_per_speaker: 3,
            min_duration_s: 0.5,
            max_duration_s: 0.8,
            ..Default::default()
        })
        .unwrap();
        let mix = MixConfig {
            segment_seconds: 0.5,
            ..MixConfig::default()
        };
        let s = MixtureStream::new(&corpus, mix.clone(), 1, true).unwrap();
        assert_eq!(s.item(5).unwrap(), s.item(5).unwrap());
        assert_ne!(s.item(5).unwrap(), s.item(6).unwrap());
        let u = MixtureStream::new(&corpus, mix, 1, false).unwrap();
        assert!(!u.item(0).unwrap().is_labeled());
    }
}
