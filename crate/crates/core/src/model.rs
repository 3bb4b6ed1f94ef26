//! The separator: encoder, chunking, embedding fusion, dual-path transformer
//! blocks, mask estimation, overlap-add and decoder.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var, NO_INDEX};
use crate::checkpoint::Checkpoint;
use crate::embedder::{Embedder, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_encoding, Linear, TransformerLayer, Weights};
use crate::params::{fan_in_uniform, ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::signal::Waveform;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Concatenate features and embedding, project back to `F`.
    Concat,
    /// Multiply features by a projection of the embedding.
    Mult,
    /// Add a projection of the embedding to the features.
    #[default]
    Add,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Concat, FusionMode::Mult, FusionMode::Add];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::Mult => "mult",
            FusionMode::Add => "add",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionMode::Concat),
            "mult" => Ok(FusionMode::Mult),
            "add" => Ok(FusionMode::Add),
            _ => Err(Error::Config(format!(
                "unknown fusion mode {s:?} (expected concat, mult or add)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExformerConfig {
    pub feature_dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub chunk_len: usize,
    pub n_blocks: usize,
    pub layers_per_path: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub n_sources: usize,
    pub fusion_mode: FusionMode,
    pub embed_dim: usize,
    /// One fusion layer reused by every block instead of one per block.
    pub share_fusion: bool,
    pub positional_encoding: bool,
}

impl Default for ExformerConfig {
    fn default() -> Self {
        Self {
            feature_dim: 256,
            kernel: 16,
            stride: 8,
            chunk_len: 250,
            n_blocks: 2,
            layers_per_path: 8,
            n_heads: 8,
            ff_dim: 1024,
            n_sources: 2,
            fusion_mode: FusionMode::Add,
            embed_dim: 256,
            share_fusion: false,
            positional_encoding: true,
        }
    }
}

impl ExformerConfig {
    /// Small configuration used for CPU tests.
    pub fn desk() -> Self {
        Self {
            feature_dim: 64,
            chunk_len: 16,
            n_blocks: 2,
            layers_per_path: 2,
            n_heads: 4,
            ff_dim: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("chunk_len", self.chunk_len),
            ("n_blocks", self.n_blocks),
            ("layers_per_path", self.layers_per_path),
            ("n_heads", self.n_heads),
            ("ff_dim", self.ff_dim),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        if !self.feature_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "feature_dim {} is not divisible by n_heads {}",
                self.feature_dim, self.n_heads
            )));
        }
        if !self.chunk_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "chunk_len {} must be even",
                self.chunk_len
            )));
        }
        if self.n_sources != 2 {
            return Err(Error::Config(format!(
                "n_sources must be 2, got {}",
                self.n_sources
            )));
        }
        Ok(())
    }

    /// Encoder frame count for `len` samples.
    pub fn n_frames(&self, len: usize) -> Result<usize> {
        if len < self.kernel {
            return Err(Error::TooShort {
                needed: self.kernel,
                got: len,
            });
        }
        Ok(1 + (len - self.kernel) / self.stride)
    }
}

/// Chunk layout for `T` frames: `S` windows of `K` frames at hop `K/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkLayout {
    pub valid_frames: usize,
    pub chunk_len: usize,
    pub n_chunks: usize,
}

impl ChunkLayout {
    pub fn new(valid_frames: usize, chunk_len: usize) -> Self {
        let hop = chunk_len / 2;
        let padded = if valid_frames <= chunk_len {
            chunk_len
        } else {
            chunk_len + (valid_frames - chunk_len).div_ceil(hop) * hop
        };
        Self {
            valid_frames,
            chunk_len,
            n_chunks: 1 + (padded - chunk_len) / hop,
        }
    }

    pub fn hop(&self) -> usize {
        self.chunk_len / 2
    }

    pub fn padded_frames(&self) -> usize {
        self.chunk_len + (self.n_chunks - 1) * self.hop()
    }

    /// Source frame of position `k` in chunk `s`, if it is not padding.
    pub fn frame(&self, s: usize, k: usize) -> Option<usize> {
        let t = s * self.hop() + k;
        (t < self.valid_frames).then_some(t)
    }

    /// Number of chunk positions covering frame `t`.
    pub fn coverage(&self, t: usize) -> usize {
        (0..self.n_chunks)
            .filter(|&s| t >= s * self.hop() && t < s * self.hop() + self.chunk_len)
            .count()
    }

    fn index(&self, feat: usize) -> Rc<[u32]> {
        let mut idx = Vec::with_capacity(self.n_chunks * self.chunk_len * feat);
        for s in 0..self.n_chunks {
            for k in 0..self.chunk_len {
                match self.frame(s, k) {
                    Some(t) => idx.extend((0..feat).map(|f| (t * feat + f) as u32)),
                    None => idx.extend(std::iter::repeat_n(NO_INDEX, feat)),
                }
            }
        }
        idx.into()
    }
}

/// Encoder output `H`, frames by features (`[T, F]`).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRepresentation<T: Scalar> {
    pub values: Tensor<T>,
    pub origin_length: usize,
}

/// Chunked representation, `[S, K, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedTensor<T: Scalar> {
    pub values: Tensor<T>,
    pub layout: ChunkLayout,
}

/// Non-negative mask, `[T, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask<T: Scalar>(pub Tensor<T>);

/// Chunks `h: [T, F]` into `[S, K, F]`, zero-padding on the right.
pub fn segment<T: Scalar>(g: &mut Graph<T>, h: Var, chunk_len: usize) -> (Var, ChunkLayout) {
    let s = g.shape(h).to_vec();
    let (t, f) = (s[0], s[1]);
    let layout = ChunkLayout::new(t, chunk_len);
    let out = g.gather(h, layout.index(f), &[layout.n_chunks, chunk_len, f]);
    (out, layout)
}

/// Inverse of [`segment`]: coverage-normalized overlap-add back to `[T, F]`, then ReLU.
pub fn overlap_add<T: Scalar>(g: &mut Graph<T>, m: Var, layout: ChunkLayout) -> Var {
    let f = *g.shape(m).last().unwrap();
    let t = layout.valid_frames;
    let summed = g.scatter_add(m, layout.index(f), &[t, f]);
    let inv = Tensor::from_fn(&[t, f], |i| lit(1.0 / layout.coverage(i / f) as f64));
    let inv = g.constant(inv);
    let avg = g.mul(summed, inv);
    g.relu(avg)
}

pub fn segment_tensor<T: Scalar>(
    h: &LatentRepresentation<T>,
    chunk_len: usize,
) -> SegmentedTensor<T> {
    let mut g = Graph::new();
    let v = g.constant(h.values.clone());
    let (out, layout) = segment(&mut g, v, chunk_len);
    SegmentedTensor {
        values: g.value(out).clone(),
        layout,
    }
}

pub fn overlap_add_tensor<T: Scalar>(m: &SegmentedTensor<T>) -> Mask<T> {
    let mut g = Graph::new();
    let v = g.constant(m.values.clone());
    let out = overlap_add(&mut g, v, m.layout);
    Mask(g.value(out).clone())
}

#[derive(Clone, Debug)]
pub struct DualPathBlock {
    pub intra: Vec<TransformerLayer>,
    pub inter: Vec<TransformerLayer>,
}

#[derive(Clone, Debug)]
pub struct Exformer<T: Scalar> {
    cfg: ExformerConfig,
    pub store: ParamStore<T>,
    pub enc_weight: ParamId,
    pub enc_bias: ParamId,
    /// One per block, or a single shared entry.
    pub fusion: Vec<Linear>,
    pub blocks: Vec<DualPathBlock>,
    pub mask_head: Linear,
    pub dec_weight: ParamId,
    pub dec_bias: ParamId,
}

/// Graph outputs of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ExtractVars {
    pub target: Var,
    pub residual: Var,
}

impl<T: Scalar> Exformer<T> {
    pub fn new(cfg: ExformerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (f, kern, d) = (cfg.feature_dim, cfg.kernel, cfg.embed_dim);
        let enc_weight = store.add("encoder.weight", fan_in_uniform(&mut rng, &[kern, f], kern));
        let enc_bias = store.add("encoder.bias", fan_in_uniform(&mut rng, &[f], kern));
        let n_fusion = if cfg.share_fusion { 1 } else { cfg.n_blocks };
        let fusion = (0..n_fusion)
            .map(|j| {
                let d_in = match cfg.fusion_mode {
                    FusionMode::Concat => f + d,
                    FusionMode::Mult | FusionMode::Add => d,
                };
                Linear::new(&mut store, &format!("fusion{j}"), d_in, f, true, &mut rng)
            })
            .collect();
        let blocks = (0..cfg.n_blocks)
            .map(|j| {
                let mut mk = |path: &str| {
                    (0..cfg.layers_per_path)
                        .map(|l| {
                            TransformerLayer::new(
                                &mut store,
                                &format!("block{j}.{path}{l}"),
                                f,
                                cfg.n_heads,
                                cfg.ff_dim,
                                &mut rng,
                            )
                        })
                        .collect()
                };
                DualPathBlock {
                    intra: mk("intra"),
                    inter: mk("inter"),
                }
            })
            .collect();
        let mask_head = Linear::new(
            &mut store,
            "mask_head",
            f,
            cfg.n_sources * f,
            true,
            &mut rng,
        );
        let dec_weight = store.add("decoder.weight", fan_in_uniform(&mut rng, &[f, kern], f));
        let dec_bias = store.add("decoder.bias", Tensor::zeros(&[1]));
        Ok(Self {
            cfg,
            store,
            enc_weight,
            enc_bias,
            fusion,
            blocks,
            mask_head,
            dec_weight,
            dec_bias,
        })
    }

    pub fn config(&self) -> &ExformerConfig {
        &self.cfg
    }

    pub fn weights(&self) -> Weights<'_, T> {
        Weights::trainable(&self.store)
    }

    /// Fusion layer applied at the start of block `j`.
    pub fn fusion_layer(&self, j: usize) -> &Linear {
        &self.fusion[if self.cfg.share_fusion { 0 } else { j }]
    }

    /// `x: [L]` -> `H: [T, F]` (strided convolution and ReLU).
    pub fn encode(&self, g: &mut Graph<T>, w: Weights<'_, T>, x: Var) -> Result<Var> {
        let len = g.value(x).len();
        let t = self.cfg.n_frames(len)?;
        let (kern, stride) = (self.cfg.kernel, self.cfg.stride);
        let idx: Rc<[u32]> = (0..t)
            .flat_map(|i| (0..kern).map(move |j| (i * stride + j) as u32))
            .collect();
        let frames = g.gather(x, idx, &[t, kern]);
        let wv = w.bind(g, self.enc_weight);
        let bv = w.bind(g, self.enc_bias);
        let h = g.linear(frames, wv, Some(bv));
        Ok(g.relu(h))
    }

    /// Injects `z: [D]` into `v: [S, K, F]` using the fusion layer of block `j`.
    pub fn fuse(
        &self,
        g: &mut Graph<T>,
        w: Weights<'_, T>,
        v: Var,
        z: Var,
        j: usize,
    ) -> Result<Var> {
        let vs = g.shape(v).to_vec();
        let zs = g.shape(z).to_vec();
        if vs.len() != 3 || vs[2] != self.cfg.feature_dim || zs != [self.cfg.embed_dim] {
            return Err(Error::DimensionMismatch(format!(
                "fuse expects [S, K, {}] and [{}], got {vs:?} and {zs:?}",
                self.cfg.feature_dim, self.cfg.embed_dim
            )));
        }
        let lin = self.fusion_layer(j);
        Ok(match self.cfg.fusion_mode {
            FusionMode::Concat => {
                let d = zs[0];
                let n = vs[0] * vs[1];
                let idx: Rc<[u32]> = (0..n * d).map(|i| (i % d) as u32).collect();
                let zb = g.gather(z, idx, &[vs[0], vs[1], d]);
                let cat = g.concat_last(&[v, zb]);
                lin.forward(g, w, cat)
            }
            FusionMode::Mult => {
                let p = lin.forward(g, w, z);
                g.mul_bcast(v, p)
            }
            FusionMode::Add => {
                let p = lin.forward(g, w, z);
                g.add_bcast(v, p)
            }
        })
    }

    fn run_layers(
        &self,
        g: &mut Graph<T>,
        w: Weights<'_, T>,
        layers: &[TransformerLayer],
        x: Var,
    ) -> Var {
        let s = g.shape(x).to_vec();
        let pe = self
            .cfg
            .positional_encoding
            .then(|| g.constant(sinusoidal_encoding(s[1], s[2])));
        layers.iter().fold(x, |h, l| l.forward(g, w, h, pe))
    }

    /// Intra-chunk path of block `j`: attention along `K`, chunks independent.
    pub fn intra(&self, g: &mut Graph<T>, w: Weights<'_, T>, x: Var, j: usize) -> Var {
        self.run_layers(g, w, &self.blocks[j].intra, x)
    }

    /// Inter-chunk path of block `j`: attention along `S`, chunk positions independent.
    pub fn inter(&self, g: &mut Graph<T>, w: Weights<'_, T>, x: Var, j: usize) -> Var {
        let p = g.permute(x, &[1, 0, 2]);
        let y = self.run_layers(g, w, &self.blocks[j].inter, p);
        g.permute(y, &[1, 0, 2])
    }

    pub fn dual_path_block(
        &self,
        g: &mut Graph<T>,
        w: Weights<'_, T>,
        x: Var,
        j: usize,
    ) -> Result<Var> {
        let u = self.intra(g, w, x, j);
        let out = self.inter(g, w, u, j);
        if !g.value(out).all_finite() {
            return Err(Error::NonFinite(format!("dual-path block {j}")));
        }
        Ok(out)
    }

    /// `[S, K, F]` -> `C` tensors of `[S, K, F]`.
    pub fn masks(&self, g: &mut Graph<T>, w: Weights<'_, T>, v: Var) -> Vec<Var> {
        let f = self.cfg.feature_dim;
        let m = self.mask_head.forward(g, w, v);
        (0..self.cfg.n_sources)
            .map(|c| g.slice_last(m, c * f, f))
            .collect()
    }

    /// `h: [T, F]` -> `[len]` by transposed convolution, trimmed or zero-padded.
    pub fn decode(&self, g: &mut Graph<T>, w: Weights<'_, T>, h: Var, len: usize) -> Var {
        let t = g.shape(h)[0];
        let (kern, stride) = (self.cfg.kernel, self.cfg.stride);
        let wv = w.bind(g, self.dec_weight);
        let frames = g.matmul(h, wv, false, false);
        let idx: Rc<[u32]> = (0..t)
            .flat_map(|i| {
                (0..kern).map(move |j| {
                    let p = i * stride + j;
                    if p < len {
                        p as u32
                    } else {
                        NO_INDEX
                    }
                })
            })
            .collect();
        let out = g.scatter_add(frames, idx, &[len]);
        let bv = w.bind(g, self.dec_bias);
        g.add_bcast(out, bv)
    }

    /// Full separator on `x: [L]` conditioned on `z: [D]`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        w: Weights<'_, T>,
        x: Var,
        z: Var,
    ) -> Result<ExtractVars> {
        let len = g.value(x).len();
        let h = self.encode(g, w, x)?;
        let (mut v, layout) = segment(g, h, self.cfg.chunk_len);
        for j in 0..self.cfg.n_blocks {
            let fused = self.fuse(g, w, v, z, j)?;
            v = self.dual_path_block(g, w, fused, j)?;
        }
        let outs: Vec<Var> = self
            .masks(g, w, v)
            .into_iter()
            .map(|m| {
                let mask = overlap_add(g, m, layout);
                let hc = g.mul(mask, h);
                self.decode(g, w, hc, len)
            })
            .collect();
        for &o in &outs {
            if !g.value(o).all_finite() {
                return Err(Error::NonFinite("separator output".into()));
            }
        }
        Ok(ExtractVars {
            target: outs[0],
            residual: outs[1],
        })
    }

    /// Separates `mixture` given an embedding; returns `(target, residual)`.
    pub fn separate(
        &self,
        mixture: &Waveform,
        z: &SpeakerEmbedding,
    ) -> Result<(Waveform, Waveform)> {
        let mut g = Graph::new();
        let x = g.constant(wave_tensor(mixture));
        let zv = g.constant(Tensor::new(
            &[z.dim()],
            z.values().iter().map(|&v| lit(v as f64)).collect(),
        ));
        let out = self.forward(&mut g, self.weights(), x, zv)?;
        let sr = mixture.sample_rate();
        Ok((
            tensor_wave(g.value(out.target), sr)?,
            tensor_wave(g.value(out.residual), sr)?,
        ))
    }

    /// Embeds `enrollment` with the frozen embedder and separates `mixture`.
    pub fn extract(
        &self,
        embedder: &Embedder<T>,
        mixture: &Waveform,
        enrollment: &Waveform,
    ) -> Result<(Waveform, Waveform)> {
        if embedder.config().embed_dim != self.cfg.embed_dim {
            return Err(Error::DimensionMismatch(format!(
                "embedder produces {} dims, separator expects {}",
                embedder.config().embed_dim,
                self.cfg.embed_dim
            )));
        }
        let z = embedder.embed(enrollment)?;
        self.separate(mixture, &z)
    }

    pub fn encode_value(&self, x: &Waveform) -> Result<LatentRepresentation<T>> {
        let mut g = Graph::new();
        let xv = g.constant(wave_tensor(x));
        let h = self.encode(&mut g, Weights::frozen(&self.store), xv)?;
        Ok(LatentRepresentation {
            values: g.value(h).clone(),
            origin_length: x.len(),
        })
    }

    pub fn decode_value(&self, h: &LatentRepresentation<T>) -> Result<Waveform> {
        let mut g = Graph::new();
        let hv = g.constant(h.values.clone());
        let out = self.decode(&mut g, Weights::frozen(&self.store), hv, h.origin_length);
        tensor_wave(g.value(out), crate::signal::DEFAULT_SAMPLE_RATE)
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.cfg.fusion_mode
    }

    /// Rebuilds a separator from tensors under `prefix` and a serialized config.
    pub fn from_parts(c: &Checkpoint<T>, prefix: &str, cfg: &serde_json::Value) -> Result<Self> {
        let cfg: ExformerConfig = serde_json::from_value(cfg.clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let mut m = Self::new(cfg, 0)?;
        c.load_store(prefix, &mut m.store)?;
        Ok(m)
    }
}

pub fn wave_tensor<T: Scalar>(w: &Waveform) -> Tensor<T> {
    Tensor::new(
        &[w.len()],
        w.samples().iter().map(|&v| lit(v as f64)).collect(),
    )
}

pub fn tensor_wave<T: Scalar>(t: &Tensor<T>, sample_rate: u32) -> Result<Waveform> {
    Waveform::new(
        t.data()
            .iter()
            .map(|v| v.to_f32().unwrap_or(f32::NAN))
            .collect(),
        sample_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: FusionMode) -> ExformerConfig {
        ExformerConfig {
            feature_dim: 8,
            chunk_len: 4,
            n_blocks: 2,
            layers_per_path: 1,
            n_heads: 2,
            ff_dim: 16,
            embed_dim: 6,
            fusion_mode: mode,
            ..ExformerConfig::default()
        }
    }

    #[test]
    fn layout_examples() {
        let l = ChunkLayout::new(6, 4);
        assert_eq!((l.n_chunks, l.padded_frames()), (2, 6));
        assert_eq!(l.frame(1, 0), Some(2));
        assert_eq!(l.coverage(2), 2);
        assert_eq!(l.coverage(0), 1);
        let l = ChunkLayout::new(4, 4);
        assert_eq!((l.n_chunks, l.padded_frames()), (1, 4));
        let l = ChunkLayout::new(5, 4);
        assert_eq!((l.n_chunks, l.padded_frames()), (2, 6));
        assert_eq!(l.frame(1, 3), None);
        assert_eq!(ChunkLayout::new(1, 4).n_chunks, 1);
    }

    #[test]
    fn encoder_length_and_relu() {
        let m = Exformer::<f32>::new(tiny(FusionMode::Add), 1).unwrap();
        for (len, t) in [(24000, 2999), (16, 1), (1000, 124)] {
            let x = Waveform::new(
                (0..len).map(|i| ((i * 13) as f32 * 0.01).sin()).collect(),
                8000,
            )
            .unwrap();
            let h = m.encode_value(&x).unwrap();
            assert_eq!(h.values.shape(), &[t, 8]);
            assert!(h.values.data().iter().all(|&v| v >= 0.0));
        }
        assert!(m.encode_value(&Waveform::zeros(15, 8000).unwrap()).is_err());
    }

    #[test]
    fn decoder_lengths() {
        let m = Exformer::<f32>::new(tiny(FusionMode::Add), 1).unwrap();
        for (t, len) in [(2999, 24000), (1, 16), (3, 40)] {
            let h = LatentRepresentation {
                values: Tensor::full(&[t, 8], 0.1),
                origin_length: len,
            };
            assert_eq!(m.decode_value(&h).unwrap().len(), len);
        }
        let h = LatentRepresentation {
            values: Tensor::zeros(&[1, 8]),
            origin_length: 20,
        };
        assert_eq!(m.decode_value(&h).unwrap().len(), 20);
    }

    #[test]
    fn separate_shapes() {
        let m = Exformer::<f32>::new(tiny(FusionMode::Concat), 2).unwrap();
        let z = SpeakerEmbedding::new(vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0]).unwrap();
        let x = Waveform::new((0..300).map(|i| (i as f32 * 0.3).sin()).collect(), 8000).unwrap();
        let (t, r) = m.separate(&x, &z).unwrap();
        assert_eq!((t.len(), r.len()), (300, 300));
    }

    #[test]
    fn config_validation() {
        assert!(ExformerConfig::default().validate().is_ok());
        assert!(ExformerConfig {
            chunk_len: 5,
            ..ExformerConfig::default()
        }
        .validate()
        .is_err());
        assert!(ExformerConfig {
            n_heads: 3,
            ..ExformerConfig::default()
        }
        .validate()
        .is_err());
        assert!(ExformerConfig {
            n_sources: 3,
            ..ExformerConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!("mult".parse::<FusionMode>().unwrap(), FusionMode::Mult);
        assert!("sum".parse::<FusionMode>().is_err());
    }
}
