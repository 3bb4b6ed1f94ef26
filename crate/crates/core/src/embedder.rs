//! BLSTM speaker embedder over log-mel frames, with a GE2E pretraining loop.

use std::rc::Rc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Linear, LstmDirection, Weights};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::signal::{Corpus, MelConfig, MelFrontend, Waveform, DEFAULT_SAMPLE_RATE};
use crate::tensor::Tensor;

pub const EMBEDDER_KIND: &str = "embedder";

/// How the recurrent stack is summarized into one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean of the top layer's output at the first and the last frame (`2H` features).
    #[default]
    FirstLastOutput,
    /// Mean of the forward state after the last frame and the backward state after the first (`H` features).
    FinalStates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub n_blstm_layers: usize,
    /// Hidden units per direction.
    pub hidden_units: usize,
    pub n_mels: usize,
    pub embed_dim: usize,
    pub pooling: Pooling,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            n_blstm_layers: 3,
            hidden_units: 768,
            n_mels: 40,
            embed_dim: 256,
            pooling: Pooling::FirstLastOutput,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_blstm_layers", self.n_blstm_layers),
            ("hidden_units", self.hidden_units),
            ("n_mels", self.n_mels),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("embedder.{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn mel(&self) -> MelConfig {
        MelConfig {
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_mels: self.n_mels,
            ..MelConfig::default()
        }
    }
}

/// Unit-norm speaker embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding(Vec<f32>);

impl SpeakerEmbedding {
    pub const NORM_TOL: f64 = 1e-4;

    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("speaker embedding".into()));
        }
        let n = norm(&values);
        if (n - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "speaker embedding must be unit norm, got {n}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        dot / (self.norm() * other.norm())
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
struct BlstmLayer {
    fwd: LstmDirection,
    bwd: LstmDirection,
}

#[derive(Clone, Debug)]
pub struct Embedder<T: Scalar> {
    cfg: EmbedderConfig,
    pub store: ParamStore<T>,
    layers: Vec<BlstmLayer>,
    proj: Linear,
    ge2e_w: ParamId,
    ge2e_b: ParamId,
    mel: MelFrontend<T>,
}

impl<T: Scalar> Embedder<T> {
    pub fn new(cfg: EmbedderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = cfg.hidden_units;
        let layers = (0..cfg.n_blstm_layers)
            .map(|i| {
                let d_in = if i == 0 { cfg.n_mels } else { 2 * h };
                BlstmLayer {
                    fwd: LstmDirection::new(
                        &mut store,
                        &format!("blstm{i}.fwd"),
                        d_in,
                        h,
                        &mut rng,
                    ),
                    bwd: LstmDirection::new(
                        &mut store,
                        &format!("blstm{i}.bwd"),
                        d_in,
                        h,
                        &mut rng,
                    ),
                }
            })
            .collect();
        let pooled = match cfg.pooling {
            Pooling::FirstLastOutput => 2 * h,
            Pooling::FinalStates => h,
        };
        let proj = Linear::new(&mut store, "proj", pooled, cfg.embed_dim, true, &mut rng);
        let ge2e_w = store.add("ge2e.w", Tensor::full(&[1], lit(10.0)));
        let ge2e_b = store.add("ge2e.b", Tensor::full(&[1], lit(-5.0)));
        Ok(Self {
            mel: MelFrontend::new(cfg.mel()),
            cfg,
            store,
            layers,
            proj,
            ge2e_w,
            ge2e_b,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn frozen(&self) -> Weights<'_, T> {
        Weights::frozen(&self.store)
    }

    pub fn trainable(&self) -> Weights<'_, T> {
        Weights::trainable(&self.store)
    }

    /// Current GE2E scale and offset.
    pub fn ge2e_params(&self) -> (T, T) {
        (
            self.store.get(self.ge2e_w).item(),
            self.store.get(self.ge2e_b).item(),
        )
    }

    /// `x: [B, L]` waveforms -> `[B, embed_dim]` unit-norm rows.
    pub fn embed_var(&self, g: &mut Graph<T>, w: Weights<'_, T>, x: Var) -> Result<Var> {
        let feats = self.mel.forward(g, x)?;
        let shape = g.shape(feats).to_vec();
        let (b, t) = (shape[0], shape[1]);
        let h = self.cfg.hidden_units;
        let mut cur = feats;
        let (mut last_f, mut last_b) = (cur, cur);
        for layer in &self.layers {
            last_f = layer.fwd.forward(g, w, cur, false);
            last_b = layer.bwd.forward(g, w, cur, true);
            cur = g.concat_last(&[last_f, last_b]);
        }
        let pooled = match self.cfg.pooling {
            Pooling::FirstLastOutput => {
                let first = g.gather(cur, frame_index(b, t, 2 * h, 0), &[b, 2 * h]);
                let last = g.gather(cur, frame_index(b, t, 2 * h, t - 1), &[b, 2 * h]);
                let s = g.add(first, last);
                g.scale(s, lit(0.5))
            }
            Pooling::FinalStates => {
                let f = g.gather(last_f, frame_index(b, t, h, t - 1), &[b, h]);
                let r = g.gather(last_b, frame_index(b, t, h, 0), &[b, h]);
                let s = g.add(f, r);
                g.scale(s, lit(0.5))
            }
        };
        let z = self.proj.forward(g, w, pooled);
        let out = g.l2_normalize_last(z);
        if !g.value(out).all_finite() {
            return Err(Error::NonFinite("embedder activations".into()));
        }
        Ok(out)
    }

    pub fn embed(&self, w: &Waveform) -> Result<SpeakerEmbedding> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(
            &[1, w.len()],
            w.samples().iter().map(|&v| lit(v as f64)).collect(),
        ));
        let z = self.embed_var(&mut g, self.frozen(), x)?;
        SpeakerEmbedding::new(
            g.value(z)
                .data()
                .iter()
                .map(|v| v.to_f32().unwrap())
                .collect(),
        )
    }

    /// GE2E loss over `e: [N*M, D]` rows grouped by speaker, using the stored scale and offset.
    pub fn ge2e_loss_var(
        &self,
        g: &mut Graph<T>,
        w: Weights<'_, T>,
        e: Var,
        n_speakers: usize,
        n_utts: usize,
    ) -> Result<Var> {
        let sw = w.bind(g, self.ge2e_w);
        let sb = w.bind(g, self.ge2e_b);
        ge2e_loss_var(g, e, n_speakers, n_utts, sw, sb)
    }

    pub fn checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint<T>> {
        let mut c = Checkpoint::new(
            EMBEDDER_KIND,
            serde_json::json!({ "embedder": self.cfg, "meta": meta }),
        );
        c.push_store("", &self.store);
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint<T>) -> Result<Self> {
        c.expect_kind(EMBEDDER_KIND)?;
        Self::from_parts(c, "", &c.meta["embedder"])
    }

    /// Rebuilds an embedder from tensors under `prefix` and a serialized config.
    pub fn from_parts(c: &Checkpoint<T>, prefix: &str, cfg: &serde_json::Value) -> Result<Self> {
        let cfg: EmbedderConfig = serde_json::from_value(cfg.clone())
            .map_err(|e| Error::Checkpoint(format!("embedder config: {e}")))?;
        let mut emb = Self::new(cfg, 0)?;
        c.load_store(prefix, &mut emb.store)?;
        Ok(emb)
    }
}

fn frame_index(b: usize, t: usize, width: usize, frame: usize) -> Rc<[u32]> {
    (0..b)
        .flat_map(|bi| (0..width).map(move |j| ((bi * t + frame) * width + j) as u32))
        .collect()
}

/// GE2E softmax loss with self-exclusive centroids.
///
/// `e: [N*M, D]` holds unit-norm rows, speaker-major. `w` and `b` are `[1]` scalars;
/// `w` is clamped at 1e-6.
pub fn ge2e_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    e: Var,
    n: usize,
    m: usize,
    w: Var,
    b: Var,
) -> Result<Var> {
    if n < 2 {
        return Err(Error::TooFewSpeakers(n));
    }
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 utterances per speaker, got {m}"
        )));
    }
    let shape = g.shape(e).to_vec();
    if shape.len() != 2 || shape[0] != n * m {
        return Err(Error::DimensionMismatch(format!(
            "expected [{}, D] embeddings, got {shape:?}",
            n * m
        )));
    }
    let d = shape[1];
    let rows = g.value(e).data().to_vec();
    for r in rows.chunks(d) {
        let nr = r
            .iter()
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt();
        if (nr - 1.0).abs() > SpeakerEmbedding::NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "embedding rows must be unit norm, got {nr}"
            )));
        }
    }
    let nm = n * m;
    let avg = Tensor::from_fn(&[n, nm], |i| {
        let (k, r) = (i / nm, i % nm);
        if r / m == k {
            lit(1.0 / m as f64)
        } else {
            T::zero()
        }
    });
    let excl = Tensor::from_fn(&[nm, nm], |i| {
        let (r, c) = (i / nm, i % nm);
        if r / m == c / m && r != c {
            lit(1.0 / (m - 1) as f64)
        } else {
            T::zero()
        }
    });
    let own = Tensor::from_fn(&[nm, n], |i| {
        if (i / n) / m == i % n {
            T::one()
        } else {
            T::zero()
        }
    });
    let other = own.map(|v| T::one() - v);

    let avg = g.constant(avg);
    let excl = g.constant(excl);
    let centroids = g.matmul(avg, e, false, false);
    let centroids = g.l2_normalize_last(centroids);
    let excl_c = g.matmul(excl, e, false, false);
    let excl_c = g.l2_normalize_last(excl_c);
    let en = g.l2_normalize_last(e);

    let cos_all = g.matmul(en, centroids, false, true);
    let prod = g.mul(en, excl_c);
    let cos_own = g.sum_last(prod);
    let cos_own = g.reshape(cos_own, &[nm, 1]);
    let ones = g.constant(Tensor::full(&[1, n], T::one()));
    let cos_own = g.matmul(cos_own, ones, false, false);

    let own_c = g.constant(own);
    let other_c = g.constant(other);
    let a = g.mul(cos_all, other_c);
    let bsel = g.mul(cos_own, own_c);
    let sim = g.add(a, bsel);

    let wc = g.clamp_min(w, lit(1e-6));
    let logits = g.mul_bcast(sim, wc);
    let logits = g.add_bcast(logits, b);
    let logp = g.log_softmax_last(logits);
    let picked = g.mul(logp, own_c);
    let total = g.sum_all(picked);
    Ok(g.scale(total, lit(-1.0 / nm as f64)))
}

/// GE2E loss value for `embeddings[speaker][utterance]`.
pub fn ge2e_loss(embeddings: &[Vec<SpeakerEmbedding>], w: f64, b: f64) -> Result<f64> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::TooFewSpeakers(n));
    }
    let m = embeddings[0].len();
    if embeddings.iter().any(|s| s.len() != m) {
        return Err(Error::DimensionMismatch(
            "unequal utterance counts per speaker".into(),
        ));
    }
    let d = embeddings[0]
        .first()
        .map(SpeakerEmbedding::dim)
        .unwrap_or(0);
    let data: Vec<f64> = embeddings
        .iter()
        .flatten()
        .flat_map(|e| e.values().iter().map(|&v| v as f64))
        .collect();
    if data.len() != n * m * d {
        return Err(Error::DimensionMismatch(
            "unequal embedding dimensions".into(),
        ));
    }
    let mut g = Graph::<f64>::new();
    let e = g.constant(Tensor::new(&[n * m, d], data));
    let wv = g.constant(Tensor::full(&[1], w));
    let bv = g.constant(Tensor::full(&[1], b));
    let loss = ge2e_loss_var(&mut g, e, n, m, wv, bv)?;
    Ok(g.value(loss).item())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub speakers_per_batch: usize,
    pub utts_per_speaker: usize,
    pub segment_seconds: f64,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            speakers_per_batch: 4,
            utts_per_speaker: 4,
            segment_seconds: 4.0,
            steps: 300,
            lr: 5e-4,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
}

fn crop(x: &[f32], seg: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    if x.len() <= seg {
        let mut out = vec![0.0; seg];
        let left = (seg - x.len()) / 2;
        out[left..left + x.len()].copy_from_slice(x);
        out
    } else {
        let s = rng.random_range(0..=x.len() - seg);
        x[s..s + seg].to_vec()
    }
}

fn batch_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93)
}

/// Trains a fresh embedder on `corpus` with the GE2E loss.
pub fn pretrain_embedder<T: Scalar>(
    corpus: &Corpus,
    cfg: &EmbedderConfig,
    pcfg: &PretrainConfig,
) -> Result<(Embedder<T>, PretrainReport)> {
    let (n, m) = (pcfg.speakers_per_batch, pcfg.utts_per_speaker);
    let eligible: Vec<u64> = corpus
        .speakers()
        .into_iter()
        .filter(|&s| corpus.utterances_of(s).len() >= m)
        .collect();
    if eligible.len() < 2 || n < 2 {
        return Err(Error::TooFewSpeakers(eligible.len().min(n)));
    }
    if eligible.len() < n {
        return Err(Error::InsufficientData(format!(
            "batches need {n} speakers with {m} utterances each, corpus has {}",
            eligible.len()
        )));
    }
    let seg = (pcfg.segment_seconds * DEFAULT_SAMPLE_RATE as f64).round() as usize;
    let mut emb = Embedder::<T>::new(cfg.clone(), pcfg.seed)?;
    let mut opt = Adam::new(&emb.store, pcfg.adam.clone());
    let mut losses = Vec::with_capacity(pcfg.steps);
    for step in 0..pcfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(pcfg.seed, step));
        let speakers: Vec<u64> = eligible.choose_multiple(&mut rng, n).copied().collect();
        let mut data = Vec::with_capacity(n * m * seg);
        for s in speakers {
            let utts: Vec<usize> = corpus
                .utterances_of(s)
                .choose_multiple(&mut rng, m)
                .copied()
                .collect();
            for u in utts {
                data.extend(
                    crop(corpus.get(u).wave.samples(), seg, &mut rng)
                        .into_iter()
                        .map(|v| lit::<T>(v as f64)),
                );
            }
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[n * m, seg], data));
        let w = emb.trainable();
        let e = emb.embed_var(&mut g, w, x)?;
        let loss = emb.ge2e_loss_var(&mut g, w, e, n, m)?;
        let lv = g.value(loss).item().to_f64().unwrap();
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!("GE2E loss at step {step}")));
        }
        losses.push(lv);
        g.backward(loss);
        let grads = g.param_grads(&emb.store);
        opt.update(&mut emb.store, grads, pcfg.lr);
    }
    Ok((emb, PretrainReport { losses }))
}

/// Mean pairwise cosine within speakers and across speakers.
pub fn cosine_separation(embs: &[(u64, SpeakerEmbedding)]) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            let c = embs[i].1.cosine(&embs[j].1);
            if embs[i].0 == embs[j].0 {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::CorpusSpec;

    fn tiny() -> EmbedderConfig {
        EmbedderConfig {
            n_blstm_layers: 2,
            hidden_units: 8,
            n_mels: 40,
            embed_dim: 6,
            pooling: Pooling::FirstLastOutput,
        }
    }

    fn unit(v: &[f64]) -> SpeakerEmbedding {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        SpeakerEmbedding::new(v.iter().map(|x| (x / n) as f32).collect()).unwrap()
    }

    #[test]
    fn ge2e_uniform_case_is_ln2() {
        let e = unit(&[1.0, 2.0, -1.0]);
        let batch = vec![vec![e.clone(), e.clone()], vec![e.clone(), e]];
        let l = ge2e_loss(&batch, 1.0, 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6, "{l}");
    }

    #[test]
    fn ge2e_separated_clusters() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[0.0, 1.0]);
        let batch = vec![vec![a.clone(), a], vec![b.clone(), b]];
        let l = ge2e_loss(&batch, 10.0, 0.0).unwrap();
        let want = (1.0 + (-10f64).exp()).ln();
        assert!((l - want).abs() < 1e-6, "{l} vs {want}");
    }

    #[test]
    fn ge2e_rejects_single_speaker_and_non_unit_rows() {
        let a = unit(&[1.0, 0.0]);
        assert!(matches!(
            ge2e_loss(&[vec![a.clone(), a]], 1.0, 0.0),
            Err(Error::TooFewSpeakers(1))
        ));
        let mut g = Graph::<f64>::new();
        let e = g.constant(Tensor::new(
            &[4, 2],
            vec![2.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
        ));
        let w = g.constant(Tensor::full(&[1], 1.0));
        let b = g.constant(Tensor::full(&[1], 0.0));
        assert!(ge2e_loss_var(&mut g, e, 2, 2, w, b).is_err());
    }

    #[test]
    fn embedding_is_unit_norm_and_deterministic() {
        let emb = Embedder::<f32>::new(tiny(), 3).unwrap();
        let w = crate::signal::synth_speaker_utterance(1, 0.5, 2).unwrap();
        let a = emb.embed(&w).unwrap();
        let b = emb.embed(&w).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 6);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_frame_pooling_uses_that_frame() {
        for pooling in [Pooling::FirstLastOutput, Pooling::FinalStates] {
            let emb = Embedder::<f64>::new(EmbedderConfig { pooling, ..tiny() }, 5).unwrap();
            let w = Waveform::new(
                (0..200).map(|i| (i as f32 * 0.1).sin() * 0.3).collect(),
                8000,
            )
            .unwrap();
            let z = emb.embed(&w).unwrap();
            assert!((z.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pretraining_needs_enough_speakers() {
        let corpus = Corpus::synthetic(&CorpusSpec {
            n_speakers: 1,
            utts_per_speaker: 4,
            min_duration_s: 0.3,
            max_duration_s: 0.4,
            ..CorpusSpec::default()
        })
        .unwrap();
        let err = pretrain_embedder::<f32>(&corpus, &tiny(), &PretrainConfig::default());
        assert!(matches!(err, Err(Error::TooFewSpeakers(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let emb = Embedder::<f32>::new(tiny(), 9).unwrap();
        let c = emb.checkpoint(serde_json::Value::Null).unwrap();
        let back = Embedder::<f32>::from_checkpoint(
            &Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back.store, emb.store);
    }
}
