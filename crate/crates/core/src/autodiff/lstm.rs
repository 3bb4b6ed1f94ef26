//! Fused single-direction LSTM over a whole sequence, with hand-written BPTT.

use super::ops::mm;
use super::{acc_into, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Graph handles of one LSTM direction. Gate order in the `4H` axis is `i, f, g, o`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[in, 4H]`
    pub w_ih: Var,
    /// `[H, 4H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Graph<T> {
    /// Runs an LSTM over `x: [B, T, in]` and returns all hidden states `[B, T, H]`.
    /// With `reverse` the recurrence runs from the last frame to the first; outputs
    /// stay aligned with their input frames.
    pub fn lstm(&mut self, x: Var, w: LstmWeights, reverse: bool) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "lstm input must be [B, T, in]");
        let (bsz, steps, din) = (xs[0], xs[1], xs[2]);
        let h4 = self.value(w.w_hh).shape()[1];
        let hid = h4 / 4;
        assert_eq!(self.value(w.w_hh).shape(), &[hid, h4]);
        assert_eq!(self.value(w.w_ih).shape(), &[din, h4]);
        assert_eq!(self.value(w.bias).len(), h4);

        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };

        // Input projection for all frames at once.
        let mut gates = vec![T::zero(); bsz * steps * h4];
        mm(
            bsz * steps,
            din,
            h4,
            self.value(x).data(),
            false,
            self.value(w.w_ih).data(),
            false,
            &mut gates,
            T::zero(),
        );
        {
            let bias = self.value(w.bias).data();
            for row in gates.chunks_mut(h4) {
                for (g, &b) in row.iter_mut().zip(bias) {
                    *g += b;
                }
            }
        }
        let mut cell = vec![T::zero(); bsz * steps * hid];
        let mut hidden = vec![T::zero(); bsz * steps * hid];
        let whh = self.value(w.w_hh).data();
        let mut rec = vec![T::zero(); bsz * h4];
        for (s, &t) in order.iter().enumerate() {
            let prev = (s > 0).then(|| order[s - 1]);
            if let Some(tp) = prev {
                T::gemm(
                    bsz,
                    hid,
                    h4,
                    T::one(),
                    &hidden[tp * hid..],
                    (steps * hid) as isize,
                    1,
                    whh,
                    h4 as isize,
                    1,
                    T::zero(),
                    &mut rec,
                    h4 as isize,
                    1,
                );
            }
            for b in 0..bsz {
                let gi = (b * steps + t) * h4;
                let ci = (b * steps + t) * hid;
                let row = &mut gates[gi..gi + h4];
                if prev.is_some() {
                    for (g, &r) in row.iter_mut().zip(&rec[b * h4..(b + 1) * h4]) {
                        *g += r;
                    }
                }
                for j in 0..hid {
                    let i = sigmoid(row[j]);
                    let f = sigmoid(row[hid + j]);
                    let g = row[2 * hid + j].tanh();
                    let o = sigmoid(row[3 * hid + j]);
                    row[j] = i;
                    row[hid + j] = f;
                    row[2 * hid + j] = g;
                    row[3 * hid + j] = o;
                    let c_prev = match prev {
                        Some(tp) => cell[(b * steps + tp) * hid + j],
                        None => T::zero(),
                    };
                    let c = f * c_prev + i * g;
                    cell[ci + j] = c;
                    hidden[ci + j] = o * c.tanh();
                }
            }
        }

        let out = Tensor::new(&[bsz, steps, hid], hidden);
        let id = self.len();
        self.push(
            out,
            &[x, w.w_ih, w.w_hh, w.bias],
            move |gout, nodes, grads| {
                let gout = gout.data();
                let hs = nodes[id].value.data();
                let whh = nodes[w.w_hh.0].value.data();
                let mut dz = vec![T::zero(); bsz * steps * h4];
                let mut dh_next = vec![T::zero(); bsz * hid];
                let mut dc_next = vec![T::zero(); bsz * hid];
                for s in (0..steps).rev() {
                    let t = order[s];
                    let prev = (s > 0).then(|| order[s - 1]);
                    for b in 0..bsz {
                        let gi = (b * steps + t) * h4;
                        let ci = (b * steps + t) * hid;
                        for j in 0..hid {
                            let i = gates[gi + j];
                            let f = gates[gi + hid + j];
                            let g = gates[gi + 2 * hid + j];
                            let o = gates[gi + 3 * hid + j];
                            let c = cell[ci + j];
                            let tc = c.tanh();
                            let dh = gout[ci + j] + dh_next[b * hid + j];
                            let d_o = dh * tc;
                            let dc = dh * o * (T::one() - tc * tc) + dc_next[b * hid + j];
                            let c_prev = match prev {
                                Some(tp) => cell[(b * steps + tp) * hid + j],
                                None => T::zero(),
                            };
                            dc_next[b * hid + j] = dc * f;
                            dz[gi + j] = dc * g * i * (T::one() - i);
                            dz[gi + hid + j] = dc * c_prev * f * (T::one() - f);
                            dz[gi + 2 * hid + j] = dc * i * (T::one() - g * g);
                            dz[gi + 3 * hid + j] = d_o * o * (T::one() - o);
                        }
                    }
                    if prev.is_some() {
                        // dh_prev = dz_t W_hh^T
                        T::gemm(
                            bsz,
                            h4,
                            hid,
                            T::one(),
                            &dz[t * h4..],
                            (steps * h4) as isize,
                            1,
                            whh,
                            1,
                            h4 as isize,
                            T::zero(),
                            &mut dh_next,
                            hid as isize,
                            1,
                        );
                    }
                }
                acc_into(grads, nodes, w.w_hh.0, |buf| {
                    // Row (b, t) of `hprev` holds the hidden state fed into step t.
                    let mut hprev = vec![T::zero(); bsz * steps * hid];
                    for s in 1..steps {
                        let (t, tp) = (order[s], order[s - 1]);
                        for b in 0..bsz {
                            let dst = (b * steps + t) * hid;
                            let src = (b * steps + tp) * hid;
                            hprev[dst..dst + hid].copy_from_slice(&hs[src..src + hid]);
                        }
                    }
                    mm(
                        hid,
                        bsz * steps,
                        h4,
                        &hprev,
                        true,
                        &dz,
                        false,
                        buf,
                        T::one(),
                    );
                });
                acc_into(grads, nodes, w.w_ih.0, |buf| {
                    let xv = nodes[x.0].value.data();
                    mm(din, bsz * steps, h4, xv, true, &dz, false, buf, T::one());
                });
                acc_into(grads, nodes, w.bias.0, |buf| {
                    for row in dz.chunks(h4) {
                        for (d, &v) in buf.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                });
                acc_into(grads, nodes, x.0, |buf| {
                    let wih = nodes[w.w_ih.0].value.data();
                    mm(bsz * steps, h4, din, &dz, false, wih, true, buf, T::one());
                });
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(g: &mut Graph<f64>, ts: &[Tensor<f64>], reverse: bool) -> (Var, Vec<Var>) {
        let vars: Vec<Var> = ts.iter().map(|t| g.variable(t.clone())).collect();
        let w = LstmWeights {
            w_ih: vars[1],
            w_hh: vars[2],
            bias: vars[3],
        };
        let h = g.lstm(vars[0], w, reverse);
        let sq = g.square(h);
        let idx: Vec<f64> = (0..g.value(sq).len())
            .map(|i| 1.0 + 0.1 * i as f64)
            .collect();
        let wt = g.constant(Tensor::new(g.shape(sq), idx));
        let p = g.mul(sq, wt);
        (g.sum_all(p), vars)
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, t, din, hid) = (2, 4, 3, 2);
        let shapes: [&[usize]; 4] = [&[b, t, din], &[din, 4 * hid], &[hid, 4 * hid], &[4 * hid]];
        let ts: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|s| Tensor::from_fn(s, |_| rng.random_range(-0.8..0.8)))
            .collect();
        for reverse in [false, true] {
            let mut g = Graph::new();
            let (loss, vars) = build(&mut g, &ts, reverse);
            g.backward(loss);
            let h = 1e-6;
            for (k, t) in ts.iter().enumerate() {
                let an = g.grad(vars[k]).unwrap().clone();
                for j in 0..t.len() {
                    let mut p = ts.clone();
                    p[k].data_mut()[j] += h;
                    let mut m = ts.clone();
                    m[k].data_mut()[j] -= h;
                    let mut gp = Graph::new();
                    let lp = build(&mut gp, &p, reverse).0;
                    let mut gm = Graph::new();
                    let lm = build(&mut gm, &m, reverse).0;
                    let fd = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h);
                    let a = an.data()[j];
                    assert!(
                        (fd - a).abs() < 1e-6 + 1e-5 * fd.abs(),
                        "reverse={reverse} input {k} elem {j}: fd {fd} vs {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn reverse_direction_sees_future_frames() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 3, 1], |i| i as f64));
        let w = LstmWeights {
            w_ih: g.constant(Tensor::full(&[1, 4], 1.0)),
            w_hh: g.constant(Tensor::zeros(&[1, 4])),
            bias: g.constant(Tensor::zeros(&[4])),
        };
        let fwd = g.lstm(x, w, false);
        let bwd = g.lstm(x, w, true);
        // Frame 0 has zero input, so only the reverse pass carries cell state into it.
        assert_eq!(g.value(fwd).data()[0], 0.0);
        assert!(g.value(bwd).data()[0] > 0.0);
        assert!(g.value(bwd).data()[1] > g.value(fwd).data()[1]);
    }
}
