//! Training objectives: negative SI-SDR reconstruction, the triplet embedder
//! loss and their semi-supervised combination.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::embedder::{Embedder, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::model::wave_tensor;
use crate::scalar::{lit, Scalar};
use crate::signal::{si_sdr, TrainItem, Waveform, SI_SDR_EPS};
use crate::tensor::Tensor;

/// Stabilizer inside embedding distances.
pub const DIST_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_u: f64,
    /// Triplet margin.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            lambda_u: 0.05,
            gamma: 1.0,
        }
    }
}

/// SI-SDR in dB as a graph scalar; same floors as [`crate::signal::SiSdr`].
pub fn si_sdr_var<T: Scalar>(g: &mut Graph<T>, reference: Var, estimate: Var) -> Var {
    let eps: T = lit(SI_SDR_EPS);
    let prod = g.mul(estimate, reference);
    let dot = g.sum_all(prod);
    let sq = g.square(reference);
    let energy = g.sum_all(sq);
    let energy = g.clamp_min(energy, eps);
    let alpha = g.div(dot, energy);
    let proj = g.mul_bcast(reference, alpha);
    let err = g.sub(proj, estimate);
    let psq = g.square(proj);
    let num = g.sum_all(psq);
    let esq = g.square(err);
    let den = g.sum_all(esq);
    let den = g.clamp_min(den, eps);
    let ratio = g.div(num, den);
    let ratio = g.clamp_min(ratio, eps);
    let l = g.ln(ratio);
    g.scale(l, lit(10.0 / std::f64::consts::LN_10))
}

/// `(-si_sdr(s_t, est_t) - si_sdr(s_r, est_r)) / 2`.
pub fn si_sdr_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    s_t: Var,
    s_r: Var,
    est_t: Var,
    est_r: Var,
) -> Result<Var> {
    let n = g.value(s_t).len();
    for v in [s_r, est_t, est_r] {
        if g.value(v).len() != n {
            return Err(Error::LengthMismatch(n, g.value(v).len()));
        }
    }
    let a = si_sdr_var(g, s_t, est_t);
    let b = si_sdr_var(g, s_r, est_r);
    let sum = g.add(a, b);
    Ok(g.scale(sum, lit(-0.5)))
}

pub fn si_sdr_loss(
    s_t: &Waveform,
    s_r: &Waveform,
    est_t: &Waveform,
    est_r: &Waveform,
) -> Result<f64> {
    for w in [s_r, est_t, est_r] {
        if w.len() != s_t.len() {
            return Err(Error::LengthMismatch(s_t.len(), w.len()));
        }
    }
    let a = si_sdr(s_t.samples(), est_t.samples())?;
    let b = si_sdr(s_r.samples(), est_r.samples())?;
    Ok(-0.5 * (a + b))
}

/// `max(|z_e - z_t| - |z_e - z_r| + gamma, 0)`.
pub fn triplet_var<T: Scalar>(
    g: &mut Graph<T>,
    z_e: Var,
    z_t: Var,
    z_r: Var,
    gamma: f64,
) -> Result<Var> {
    let d = g.shape(z_e).to_vec();
    for v in [z_t, z_r] {
        if g.shape(v) != d.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "triplet embeddings {d:?} vs {:?}",
                g.shape(v)
            )));
        }
    }
    let mut dist = |a: Var, b: Var| {
        let diff = g.sub(a, b);
        let sq = g.square(diff);
        let s = g.sum_all(sq);
        let s = g.add_scalar(s, lit(DIST_EPS));
        g.sqrt(s)
    };
    let dt = dist(z_e, z_t);
    let dr = dist(z_e, z_r);
    let diff = g.sub(dt, dr);
    let m = g.add_scalar(diff, lit(gamma));
    Ok(g.relu(m))
}

pub fn triplet_embedder_loss(
    z_e: &SpeakerEmbedding,
    z_t: &SpeakerEmbedding,
    z_r: &SpeakerEmbedding,
    gamma: f64,
) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let mut c = |z: &SpeakerEmbedding| {
        g.constant(Tensor::new(
            &[z.dim()],
            z.values().iter().map(|&v| v as f64).collect(),
        ))
    };
    let (e, t, r) = (c(z_e), c(z_t), c(z_r));
    let l = triplet_var(&mut g, e, t, r, gamma)?;
    Ok(g.value(l).item())
}

/// Graph nodes of the combined objective. `recon` is only built for labeled items.
#[derive(Clone, Copy, Debug)]
pub struct SemiLossVars {
    pub total: Var,
    pub recon: Option<Var>,
    pub triplet: Var,
}

/// Evaluated objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: Option<f64>,
    pub triplet: f64,
}

/// `lambda_s * recon + lambda_u * triplet` for labeled items, `lambda_u * triplet` otherwise.
/// Estimates are `[L]` graph nodes; the embedder is applied with frozen weights.
pub fn semi_supervised_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    item: &TrainItem,
    est_t: Var,
    est_r: Var,
    embedder: &Embedder<T>,
    weights: &LossWeights,
) -> Result<SemiLossVars> {
    let len = item.mixture().len();
    for v in [est_t, est_r] {
        if g.value(v).len() != len {
            return Err(Error::LengthMismatch(len, g.value(v).len()));
        }
    }
    let w = embedder.frozen();
    let embed = |g: &mut Graph<T>, x: Var| -> Result<Var> {
        let n = g.value(x).len();
        let x2 = g.reshape(x, &[1, n]);
        let z = embedder.embed_var(g, w, x2)?;
        let d = g.shape(z)[1];
        Ok(g.reshape(z, &[d]))
    };
    let enroll = g.constant(wave_tensor(item.enrollment()));
    let z_e = embed(g, enroll)?;
    let z_t = embed(g, est_t)?;
    let z_r = embed(g, est_r)?;
    let triplet = triplet_var(g, z_e, z_t, z_r, weights.gamma)?;
    let trip_term = g.scale(triplet, lit(weights.lambda_u));
    let (total, recon) = match (item.target(), item.residual()) {
        (Some(t), Some(r)) => {
            let s_t = g.constant(wave_tensor(t));
            let s_r = g.constant(wave_tensor(r));
            let recon = si_sdr_loss_var(g, s_t, s_r, est_t, est_r)?;
            let rec_term = g.scale(recon, lit(weights.lambda_s));
            (g.add(rec_term, trip_term), Some(recon))
        }
        _ => (trip_term, None),
    };
    Ok(SemiLossVars {
        total,
        recon,
        triplet,
    })
}

pub fn semi_supervised_loss<T: Scalar>(
    item: &TrainItem,
    est_t: &Waveform,
    est_r: &Waveform,
    embedder: &Embedder<T>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let t = g.constant(wave_tensor(est_t));
    let r = g.constant(wave_tensor(est_r));
    let v = semi_supervised_loss_var(&mut g, item, t, r, embedder, weights)?;
    let val = |x: Var| g.value(x).item().to_f64().unwrap_or(f64::NAN);
    Ok(LossBreakdown {
        total: val(v.total),
        recon: v.recon.map(val),
        triplet: val(v.triplet),
    })
}

/// Combines precomputed term values the same way as [`semi_supervised_loss_var`].
pub fn combine_terms(recon: Option<f64>, triplet: f64, weights: &LossWeights) -> f64 {
    match recon {
        Some(r) => weights.lambda_s * r + weights.lambda_u * triplet,
        None => weights.lambda_u * triplet,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(v: &[f32]) -> Waveform {
        Waveform::new(v.to_vec(), 8000).unwrap()
    }

    fn emb(v: &[f32]) -> SpeakerEmbedding {
        SpeakerEmbedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_example_is_zero() {
        let s = wave(&[1.0, -1.0]);
        let e = wave(&[1.0, 0.0]);
        assert!(si_sdr_loss(&s, &s, &e, &e).unwrap().abs() < 1e-12);
    }

    #[test]
    fn graph_matches_metric() {
        let s: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        let e: Vec<f64> = (0..50)
            .map(|i| (i as f64 * 0.7).sin() + 0.3 * (i as f64 * 1.9).cos())
            .collect();
        let mut g = Graph::<f64>::new();
        let sv = g.constant(Tensor::new(&[50], s.clone()));
        let ev = g.constant(Tensor::new(&[50], e.clone()));
        let v = si_sdr_var(&mut g, sv, ev);
        assert!((g.value(v).item() - si_sdr(&s, &e).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn perfect_reconstruction_and_scale() {
        let s = wave(&[0.5, -0.3, 0.9, 0.1, -0.7]);
        let r = wave(&[0.2, 0.4, -0.1, 0.3, 0.6]);
        assert!(si_sdr_loss(&s, &r, &s, &r).unwrap() <= -60.0);
        let e = wave(&[0.4, -0.1, 0.8, 0.3, -0.5]);
        let f = wave(&[0.1, 0.5, 0.0, 0.2, 0.4]);
        let scale = |w: &Waveform| wave(&w.samples().iter().map(|v| v * 3.0).collect::<Vec<_>>());
        let a = si_sdr_loss(&s, &r, &e, &f).unwrap();
        let b = si_sdr_loss(&s, &r, &scale(&e), &scale(&f)).unwrap();
        assert!((a - b).abs() < 1e-6);
        assert!(si_sdr_loss(&s, &r, &wave(&[1.0]), &f).is_err());
    }

    #[test]
    fn triplet_worked_values() {
        let e = emb(&[1.0, 0.0]);
        let o = emb(&[0.0, 1.0]);
        assert!(triplet_embedder_loss(&e, &e, &o, 1.0).unwrap().abs() < 1e-5);
        assert!((triplet_embedder_loss(&e, &o, &o, 1.0).unwrap() - 1.0).abs() < 1e-9);
        let v = triplet_embedder_loss(&e, &o, &e, 1.0).unwrap();
        assert!((v - (2f64.sqrt() + 1.0)).abs() < 1e-5, "{v}");
        assert!(triplet_embedder_loss(&e, &emb(&[1.0]), &o, 1.0).is_err());
    }

    #[test]
    fn combine_matches_plug_in() {
        let w = LossWeights::default();
        assert_eq!(combine_terms(Some(-10.0), 1.0, &w), -9.95);
        assert_eq!(combine_terms(None, 2.0, &w), 0.05 * 2.0);
    }
}
