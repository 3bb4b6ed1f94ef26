//! Layer building blocks: parameters live in a [`ParamStore`], layers keep only ids.

use rand::Rng;

use crate::autodiff::{Graph, LstmWeights, Var};
use crate::params::{fan_in_uniform, ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// A parameter store viewed either as trainable or as frozen constants.
#[derive(Clone, Copy)]
pub struct Weights<'a, T: Scalar> {
    pub store: &'a ParamStore<T>,
    pub trainable: bool,
}

impl<'a, T: Scalar> Weights<'a, T> {
    pub fn trainable(store: &'a ParamStore<T>) -> Self {
        Self {
            store,
            trainable: true,
        }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self {
            store,
            trainable: false,
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, id: ParamId) -> Var {
        g.bind(self.store, id, self.trainable)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, &[d_in, d_out], d_in),
        );
        let bias =
            bias.then(|| store.add(format!("{name}.bias"), fan_in_uniform(rng, &[d_out], d_in)));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, w: Weights<'_, T>, x: Var) -> Var {
        let wv = w.bind(g, self.weight);
        let bv = self.bias.map(|b| w.bind(g, b));
        g.linear(x, wv, bv)
    }

    /// Sets weight and bias to zero.
    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.weight).data_mut().fill(T::zero());
        if let Some(b) = self.bias {
            store.get_mut(b).data_mut().fill(T::zero());
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, w: Weights<'_, T>, x: Var) -> Var {
        let gm = w.bind(g, self.gamma);
        let bt = w.bind(g, self.beta);
        g.layer_norm_last(x, gm, bt, lit(1e-5))
    }
}

/// Parameters of one LSTM direction.
#[derive(Clone, Debug)]
pub struct LstmDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmDirection {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            fan_in_uniform(rng, &[d_in, 4 * hidden], hidden),
        );
        let w_hh = store.add(
            format!("{name}.w_hh"),
            fan_in_uniform(rng, &[hidden, 4 * hidden], hidden),
        );
        let mut b: Tensor<T> = fan_in_uniform(rng, &[4 * hidden], hidden);
        // Forget-gate bias of one keeps early gradients alive through time.
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v += T::one();
        }
        let bias = store.add(format!("{name}.bias"), b);
        Self { w_ih, w_hh, bias }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        w: Weights<'_, T>,
        x: Var,
        reverse: bool,
    ) -> Var {
        let lw = LstmWeights {
            w_ih: w.bind(g, self.w_ih),
            w_hh: w.bind(g, self.w_hh),
            bias: w.bind(g, self.bias),
        };
        g.lstm(x, lw, reverse)
    }
}

/// Sinusoidal position table `[len, dim]` with sine on even and cosine on odd features.
pub fn sinusoidal_encoding<T: Scalar>(len: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, dim], |i| {
        let (pos, f) = (i / dim, i % dim);
        let rate = 1.0 / 10000f64.powf((f - f % 2) as f64 / dim as f64);
        let a = pos as f64 * rate;
        lit(if f % 2 == 0 { a.sin() } else { a.cos() })
    })
}

/// Pre-norm transformer encoder layer:
/// `y = x + PE`, `a = y + MHA(LN(y))`, `out = a + FF(LN(a))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm_attn: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out_proj: Linear,
    pub norm_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub n_heads: usize,
    pub dim: usize,
}

impl TransformerLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        n_heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Self {
        assert!(
            dim.is_multiple_of(n_heads),
            "feature dim {dim} not divisible by {n_heads} heads"
        );
        Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), dim),
            query: Linear::new(store, &format!("{name}.query"), dim, dim, true, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, true, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, true, rng),
            out_proj: Linear::new(store, &format!("{name}.out_proj"), dim, dim, true, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), dim),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), dim, ff_dim, true, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), ff_dim, dim, true, rng),
            n_heads,
            dim,
        }
    }

    fn split_heads<T: Scalar>(&self, g: &mut Graph<T>, x: Var, n: usize, len: usize) -> Var {
        let dh = self.dim / self.n_heads;
        let r = g.reshape(x, &[n, len, self.n_heads, dh]);
        let p = g.permute(r, &[0, 2, 1, 3]);
        g.reshape(p, &[n * self.n_heads, len, dh])
    }

    /// Multi-head self-attention over `x: [N, L, F]`.
    pub fn attention<T: Scalar>(&self, g: &mut Graph<T>, w: Weights<'_, T>, x: Var) -> Var {
        let s = g.shape(x).to_vec();
        let (n, len) = (s[0], s[1]);
        let dh = self.dim / self.n_heads;
        let q = self.query.forward(g, w, x);
        let k = self.key.forward(g, w, x);
        let v = self.value.forward(g, w, x);
        let q = self.split_heads(g, q, n, len);
        let k = self.split_heads(g, k, n, len);
        let v = self.split_heads(g, v, n, len);
        let scores = g.matmul(q, k, false, true);
        let scores = g.scale(scores, lit(1.0 / (dh as f64).sqrt()));
        let attn = g.softmax_last(scores);
        let ctx = g.matmul(attn, v, false, false);
        let ctx = g.reshape(ctx, &[n, self.n_heads, len, dh]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[n, len, self.dim]);
        self.out_proj.forward(g, w, ctx)
    }

    /// `x: [N, L, F]`, `pe`: optional `[L, F]` table added to the layer input.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        w: Weights<'_, T>,
        x: Var,
        pe: Option<Var>,
    ) -> Var {
        let y = match pe {
            Some(pe) => g.add_bcast(x, pe),
            None => x,
        };
        let n1 = self.norm_attn.forward(g, w, y);
        let att = self.attention(g, w, n1);
        let a = g.add(y, att);
        let n2 = self.norm_ff.forward(g, w, a);
        let h = self.ff_in.forward(g, w, n2);
        let h = g.gelu(h);
        let f = self.ff_out.forward(g, w, h);
        g.add(a, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoding_table_values() {
        let pe = sinusoidal_encoding::<f64>(3, 4);
        assert_eq!(pe.data()[0], 0.0);
        assert_eq!(pe.data()[1], 1.0);
        assert!((pe.data()[4] - 1f64.sin()).abs() < 1e-12);
        assert!((pe.data()[6] - (0.01f64).sin()).abs() < 1e-12);
    }

    #[test]
    fn zeroed_output_projections_make_layer_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let layer = TransformerLayer::new(&mut store, "t", 8, 2, 16, &mut rng);
        layer.out_proj.zero(&mut store);
        layer.ff_out.zero(&mut store);
        let x = Tensor::from_fn(&[3, 5, 8], |i| (i as f64 * 0.37).sin());
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = layer.forward(&mut g, Weights::trainable(&store), xv, None);
        assert_eq!(g.value(out), &x);
    }

    #[test]
    fn attention_is_permutation_equivariant_without_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let layer = TransformerLayer::new(&mut store, "t", 8, 4, 16, &mut rng);
        let x = Tensor::from_fn(&[1, 4, 8], |i| ((i * 7) as f64 * 0.11).cos());
        let perm = [2usize, 0, 3, 1];
        let xp = Tensor::from_fn(&[1, 4, 8], |i| x.data()[perm[i / 8] * 8 + i % 8]);
        let run = |t: &Tensor<f64>| {
            let mut g = Graph::new();
            let v = g.constant(t.clone());
            let o = layer.forward(&mut g, Weights::trainable(&store), v, None);
            g.value(o).clone()
        };
        let (a, b) = (run(&x), run(&xp));
        for i in 0..32 {
            assert!((b.data()[i] - a.data()[perm[i / 8] * 8 + i % 8]).abs() < 1e-12);
        }
    }
}
