use std::rc::Rc;

use super::{acc_into, acc_with, Graph, Var};
use crate::scalar::{lit, Scalar};
use crate::tensor::{inverse_perm, Tensor};

/// Index value meaning "no source element" in [`Graph::gather`] / [`Graph::scatter_add`].
pub const NO_INDEX: u32 = u32::MAX;

/// `c[m,n] (+)= op(a)[m,k] op(b)[k,n]`; `a` is stored `[m,k]` (or `[k,m]` when `ta`),
/// `b` is stored `[k,n]` (or `[n,k]` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn mm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    beta: T,
) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        rsa,
        csa,
        b,
        rsb,
        csb,
        beta,
        c,
        n as isize,
        1,
    );
}

fn gelu<T: Scalar>(x: T) -> T {
    let c: T = lit(0.797_884_560_802_865_4);
    let u = c * (x + lit::<T>(0.044715) * x * x * x);
    lit::<T>(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c: T = lit(0.797_884_560_802_865_4);
    let k: T = lit(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let half: T = lit(0.5);
    half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + lit::<T>(3.0) * k * x * x)
}

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let out = self.value(a).map(f);
        let id = self.len();
        self.push(out, &[a], move |g, nodes, grads| {
            let x = nodes[a.0].value.data();
            let y = nodes[id].value.data();
            let g = g.data();
            acc_into(grads, nodes, a.0, |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] * df(x[i], y[i]);
                }
            });
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, |x, _| gelu_grad(x))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), |_, y| lit::<T>(0.5) / y)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| lit::<T>(2.0) * x)
    }

    /// `max(a, lo)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, lo: T) -> Var {
        self.unary(
            a,
            move |x| if x > lo { x } else { lo },
            move |x, _| if x > lo { T::one() } else { T::zero() },
        )
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x + c, |_, _| T::one())
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    fn same_len(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.value(a).len(),
            self.value(b).len(),
            "{op}: shapes {:?} and {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b, "add");
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| p + q)
                .collect(),
        );
        self.push(out, &[a, b], move |g, nodes, grads| {
            for id in [a.0, b.0] {
                acc_into(grads, nodes, id, |buf| {
                    for (d, &gv) in buf.iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                });
            }
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b, "sub");
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| p - q)
                .collect(),
        );
        self.push(out, &[a, b], move |g, nodes, grads| {
            acc_into(grads, nodes, a.0, |buf| {
                for (d, &gv) in buf.iter_mut().zip(g.data()) {
                    *d += gv;
                }
            });
            acc_into(grads, nodes, b.0, |buf| {
                for (d, &gv) in buf.iter_mut().zip(g.data()) {
                    *d -= gv;
                }
            });
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b, "mul");
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| p * q)
                .collect(),
        );
        self.push(out, &[a, b], move |g, nodes, grads| {
            let g = g.data();
            let yv = nodes[b.0].value.data();
            acc_into(grads, nodes, a.0, |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] * yv[i];
                }
            });
            let xv = nodes[a.0].value.data();
            acc_into(grads, nodes, b.0, |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] * xv[i];
                }
            });
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b, "div");
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| p / q)
                .collect(),
        );
        self.push(out, &[a, b], move |g, nodes, grads| {
            let g = g.data();
            let xv = nodes[a.0].value.data();
            let yv = nodes[b.0].value.data();
            acc_into(grads, nodes, a.0, |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] / yv[i];
                }
            });
            acc_into(grads, nodes, b.0, |buf| {
                for i in 0..buf.len() {
                    buf[i] -= g[i] * xv[i] / (yv[i] * yv[i]);
                }
            });
        })
    }

    fn check_bcast(&self, a: Var, b: Var) -> usize {
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        assert!(
            nb > 0 && na % nb == 0,
            "broadcast: {:?} does not tile {:?}",
            self.shape(b),
            self.shape(a)
        );
        nb
    }

    /// `a + b` with `b` tiled over the leading elements of `a` (e.g. a bias over rows).
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Var {
        let nb = self.check_bcast(a, b);
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data()
                .chunks(nb)
                .flat_map(|row| row.iter().zip(y.data()).map(|(&p, &q)| p + q))
                .collect(),
        );
        self.push(out, &[a, b], move |g, nodes, grads| {
            acc_into(grads, nodes, a.0, |buf| {
                for (d, &gv) in buf.iter_mut().zip(g.data()) {
                    *d += gv;
                }
            });
            acc_into(grads, nodes, b.0, |buf| {
                for row in g.data().chunks(nb) {
                    for (d, &gv) in buf.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
            });
        })
    }

    /// `a * b` with `b` tiled over the leading elements of `a`.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Var {
        let nb = self.check_bcast(a, b);
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape(),
            x.data()
                .chunks(nb)
                .flat_map(|row| row.iter().zip(y.data()).map(|(&p, &q)| p * q))
                .collect(),
        );
        self.push(out, &[a, b], move |g, nodes, grads| {
            let yv = nodes[b.0].value.data();
            acc_into(grads, nodes, a.0, |buf| {
                for (drow, grow) in buf.chunks_mut(nb).zip(g.data().chunks(nb)) {
                    for j in 0..nb {
                        drow[j] += grow[j] * yv[j];
                    }
                }
            });
            let xv = nodes[a.0].value.data();
            acc_into(grads, nodes, b.0, |buf| {
                for (xrow, grow) in xv.chunks(nb).zip(g.data().chunks(nb)) {
                    for j in 0..nb {
                        buf[j] += grow[j] * xrow[j];
                    }
                }
            });
        })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), &[a], move |g, nodes, grads| {
            let gv = g.item();
            acc_into(grads, nodes, a.0, |buf| {
                for d in buf.iter_mut() {
                    *d += gv;
                }
            });
        })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, T::one() / lit::<T>(n as f64))
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.last_dim();
        let mut shape = x.shape().to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let out = Tensor::new(
            &shape,
            x.data()
                .chunks(n)
                .map(|r| r.iter().copied().sum())
                .collect(),
        );
        self.push(out, &[a], move |g, nodes, grads| {
            acc_into(grads, nodes, a.0, |buf| {
                for (row, &gv) in buf.chunks_mut(n).zip(g.data()) {
                    for d in row.iter_mut() {
                        *d += gv;
                    }
                }
            });
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape);
        self.push(out, &[a], move |g, nodes, grads| {
            acc_into(grads, nodes, a.0, |buf| {
                for (d, &gv) in buf.iter_mut().zip(g.data()) {
                    *d += gv;
                }
            });
        })
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let out = self.value(a).permuted(perm);
        let inv = inverse_perm(perm);
        self.push(out, &[a], move |g, nodes, grads| {
            acc_with(grads, nodes, a.0, || g.permuted(&inv));
        })
    }

    /// Concatenates along the last axis; all inputs share their leading shape.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let lead: Vec<usize> = {
            let s = self.shape(parts[0]);
            s[..s.len() - 1].to_vec()
        };
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(
                &s[..s.len() - 1],
                &lead[..],
                "concat_last leading shapes differ"
            );
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(Tensor::new(&shape, data), parts, move |g, nodes, grads| {
            let mut offset = 0;
            for (&id, &w) in ids.iter().zip(&widths) {
                acc_into(grads, nodes, id, |buf| {
                    for r in 0..rows {
                        let src = &g.data()[r * total + offset..r * total + offset + w];
                        for (d, &gv) in buf[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *d += gv;
                        }
                    }
                });
                offset += w;
            }
        })
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let w = x.last_dim();
        assert!(start + len <= w);
        let rows = x.len() / w;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&x.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(Tensor::new(&shape, data), &[a], move |g, nodes, grads| {
            acc_into(grads, nodes, a.0, |buf| {
                for r in 0..rows {
                    for j in 0..len {
                        buf[r * w + start + j] += g.data()[r * len + j];
                    }
                }
            });
        })
    }

    /// `out[i] = a[index[i]]`, or zero where `index[i] == NO_INDEX`.
    pub fn gather(&mut self, a: Var, index: Rc<[u32]>, shape: &[usize]) -> Var {
        assert_eq!(index.len(), shape.iter().product::<usize>());
        let x = self.value(a).data();
        let data = index
            .iter()
            .map(|&i| {
                if i == NO_INDEX {
                    T::zero()
                } else {
                    x[i as usize]
                }
            })
            .collect();
        self.push(Tensor::new(shape, data), &[a], move |g, nodes, grads| {
            acc_into(grads, nodes, a.0, |buf| {
                for (&i, &gv) in index.iter().zip(g.data()) {
                    if i != NO_INDEX {
                        buf[i as usize] += gv;
                    }
                }
            });
        })
    }

    /// `out[index[i]] += a[i]` into a zero tensor of `shape`; `NO_INDEX` entries are dropped.
    pub fn scatter_add(&mut self, a: Var, index: Rc<[u32]>, shape: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(index.len(), x.len());
        let mut out = Tensor::zeros(shape);
        {
            let o = out.data_mut();
            for (&i, &v) in index.iter().zip(x.data()) {
                if i != NO_INDEX {
                    o[i as usize] += v;
                }
            }
        }
        self.push(out, &[a], move |g, nodes, grads| {
            let gd = g.data();
            acc_into(grads, nodes, a.0, |buf| {
                for (d, &i) in buf.iter_mut().zip(index.iter()) {
                    if i != NO_INDEX {
                        *d += gd[i as usize];
                    }
                }
            });
        })
    }

    /// Matrix product `op(a) op(b)`.
    ///
    /// Supported layouts: `b` rank 2 with `a` of any rank ≥ 2 (leading axes of `a`
    /// are flattened into rows when `ta` is false), or both rank 3 with a shared
    /// batch axis.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n, out_shape);
        if sb.len() == 2 && (!ta || sa.len() == 2) {
            batch = 1;
            let (ra, ca) = if ta {
                (sa[0], sa[1])
            } else {
                let ca = *sa.last().unwrap();
                (sa.iter().product::<usize>() / ca, ca)
            };
            let (ka, ma) = if ta { (ra, ca) } else { (ca, ra) };
            let (kb, nb) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
            assert_eq!(
                ka, kb,
                "matmul inner dims {sa:?} x {sb:?} (ta={ta}, tb={tb})"
            );
            m = ma;
            k = ka;
            n = nb;
            out_shape = if ta {
                vec![m, n]
            } else {
                let mut s = sa[..sa.len() - 1].to_vec();
                s.push(n);
                s
            };
        } else {
            assert!(
                sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0],
                "bmm shapes {sa:?} x {sb:?}"
            );
            batch = sa[0];
            let (ma, ka) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
            let (kb, nb) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
            assert_eq!(ka, kb, "bmm inner dims {sa:?} x {sb:?}");
            m = ma;
            k = ka;
            n = nb;
            out_shape = vec![batch, m, n];
        }
        let mut out = Tensor::zeros(&out_shape);
        {
            let (x, y) = (self.value(a).data(), self.value(b).data());
            let o = out.data_mut();
            let b_step = if batch == 1 { 0 } else { k * n };
            for bi in 0..batch {
                mm(
                    m,
                    k,
                    n,
                    &x[bi * m * k..(bi + 1) * m * k],
                    ta,
                    &y[bi * b_step..bi * b_step + k * n],
                    tb,
                    &mut o[bi * m * n..(bi + 1) * m * n],
                    T::zero(),
                );
            }
        }
        self.push(out, &[a, b], move |g, nodes, grads| {
            let gd = g.data();
            let xa = nodes[a.0].value.data();
            let xb = nodes[b.0].value.data();
            let b_step = if batch == 1 { 0 } else { k * n };
            acc_into(grads, nodes, a.0, |buf| {
                for bi in 0..batch {
                    let gc = &gd[bi * m * n..(bi + 1) * m * n];
                    let bb = &xb[bi * b_step..bi * b_step + k * n];
                    let da = &mut buf[bi * m * k..(bi + 1) * m * k];
                    if ta {
                        mm(k, n, m, bb, tb, gc, true, da, T::one());
                    } else {
                        mm(m, n, k, gc, false, bb, !tb, da, T::one());
                    }
                }
            });
            acc_into(grads, nodes, b.0, |buf| {
                for bi in 0..batch {
                    let gc = &gd[bi * m * n..(bi + 1) * m * n];
                    let aa = &xa[bi * m * k..(bi + 1) * m * k];
                    let db = &mut buf[bi * b_step..bi * b_step + k * n];
                    if tb {
                        mm(n, m, k, gc, true, aa, ta, db, T::one());
                    } else {
                        mm(k, m, n, aa, !ta, gc, false, db, T::one());
                    }
                }
            });
        })
    }

    /// `x w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w, false, false);
        match b {
            Some(b) => self.add_bcast(y, b),
            None => y,
        }
    }

    pub fn softmax_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.last_dim();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let id = self.len();
        self.push(out, &[a], move |g, nodes, grads| {
            let y = nodes[id].value.data();
            acc_into(grads, nodes, a.0, |buf| {
                for ((drow, yrow), grow) in
                    buf.chunks_mut(n).zip(y.chunks(n)).zip(g.data().chunks(n))
                {
                    let dot: T = yrow.iter().zip(grow).map(|(&p, &q)| p * q).sum();
                    for j in 0..n {
                        drow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            });
        })
    }

    pub fn log_softmax_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.last_dim();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let id = self.len();
        self.push(out, &[a], move |g, nodes, grads| {
            let y = nodes[id].value.data();
            acc_into(grads, nodes, a.0, |buf| {
                for ((drow, yrow), grow) in
                    buf.chunks_mut(n).zip(y.chunks(n)).zip(g.data().chunks(n))
                {
                    let gs: T = grow.iter().copied().sum();
                    for j in 0..n {
                        drow[j] += grow[j] - yrow[j].exp() * gs;
                    }
                }
            });
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm_last(&mut self, a: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let x = self.value(a);
        let n = x.last_dim();
        assert_eq!(self.value(gamma).len(), n);
        assert_eq!(self.value(beta).len(), n);
        let rows = x.len() / n;
        let inv_n = T::one() / lit::<T>(n as f64);
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        let mut out = Tensor::zeros(x.shape());
        {
            let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
            for (row, orow) in x.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
                let mean = row.iter().copied().sum::<T>() * inv_n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
                let rstd = T::one() / (var + eps).sqrt();
                for j in 0..n {
                    orow[j] = (row[j] - mean) * rstd * gm[j] + bt[j];
                }
                means.push(mean);
                rstds.push(rstd);
            }
        }
        self.push(out, &[a, gamma, beta], move |g, nodes, grads| {
            let x = nodes[a.0].value.data();
            let gm = nodes[gamma.0].value.data();
            let gd = g.data();
            let xhat = |r: usize, j: usize| (x[r * n + j] - means[r]) * rstds[r];
            acc_into(grads, nodes, a.0, |buf| {
                for r in 0..rows {
                    let grow = &gd[r * n..(r + 1) * n];
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..n {
                        let dxh = grow[j] * gm[j];
                        m1 += dxh;
                        m2 += dxh * xhat(r, j);
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    for j in 0..n {
                        let dxh = grow[j] * gm[j];
                        buf[r * n + j] += rstds[r] * (dxh - m1 - xhat(r, j) * m2);
                    }
                }
            });
            acc_into(grads, nodes, gamma.0, |buf| {
                for r in 0..rows {
                    for j in 0..n {
                        buf[j] += gd[r * n + j] * xhat(r, j);
                    }
                }
            });
            acc_into(grads, nodes, beta.0, |buf| {
                for row in gd.chunks(n) {
                    for j in 0..n {
                        buf[j] += row[j];
                    }
                }
            });
        })
    }

    /// Scales every row of the last axis to unit Euclidean norm.
    pub fn l2_normalize_last(&mut self, a: Var) -> Var {
        let floor: T = lit(1e-12);
        let x = self.value(a);
        let n = x.last_dim();
        let norms: Vec<T> = x
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt().max(floor))
            .collect();
        let mut out = x.clone();
        for (row, &nr) in out.data_mut().chunks_mut(n).zip(&norms) {
            for v in row.iter_mut() {
                *v /= nr;
            }
        }
        let id = self.len();
        self.push(out, &[a], move |g, nodes, grads| {
            let y = nodes[id].value.data();
            acc_into(grads, nodes, a.0, |buf| {
                for (r, &nr) in norms.iter().enumerate() {
                    let yrow = &y[r * n..(r + 1) * n];
                    let grow = &g.data()[r * n..(r + 1) * n];
                    let dot: T = if nr > floor {
                        yrow.iter().zip(grow).map(|(&p, &q)| p * q).sum()
                    } else {
                        T::zero()
                    };
                    for j in 0..n {
                        buf[r * n + j] += (grow[j] - yrow[j] * dot) / nr;
                    }
                }
            });
        })
    }
}
