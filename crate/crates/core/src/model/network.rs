use rand::Rng;

use super::{Dims, Group, Interaction, Params, Variant};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::seed;

pub const LAYER_NORM_EPSILON: f64 = 1e-5;

/// Examples per gradient work unit. Fixed so that the reduction order does not
/// depend on the executor.
const GRADIENT_CHUNK: usize = 16;

/// Intermediates of one forward pass, all `e x d` row-major unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Causal attention weights, `e x e`; entries above the diagonal are zero.
    pub probs: Vec<f64>,
    pub att: Vec<f64>,
    pub h: Vec<f64>,
    pub xhat: Vec<f64>,
    /// Per-row `1 / sqrt(var + eps)`, length `e`.
    pub inv_std: Vec<f64>,
    /// Sequence features before dropout.
    pub sf: Vec<f64>,
    /// Sequence features as consumed by the head (after dropout).
    pub sf_used: Vec<f64>,
    pub dropout: Option<Vec<f64>>,
    pub prediction: f64,
}

/// `N_t = aspect_embed[ids[t]] + pos_embed[t]`.
pub fn embed_path(params: &Params, ids: &[usize], with_position: bool) -> Result<Vec<f64>> {
    let Dims { aspects, seq_len, latent: d, .. } = params.dims;
    if ids.len() > seq_len {
        return Err(Error::invalid(format!("path of length {} exceeds {seq_len}", ids.len())));
    }
    let a = params.get(Group::AspectEmbed);
    let p = params.get(Group::PosEmbed);
    let mut n = vec![0.0; ids.len() * d];
    for (t, &k) in ids.iter().enumerate() {
        if k >= aspects {
            return Err(Error::invalid(format!("aspect id {k} out of range (l = {aspects})")));
        }
        for j in 0..d {
            n[t * d + j] = a[k * d + j] + if with_position { p[t * d + j] } else { 0.0 };
        }
    }
    Ok(n)
}

/// `x (rows x d) * w (d x d)`.
fn project(x: &[f64], w: &[f64], d: usize) -> Vec<f64> {
    let rows = x.len() / d;
    let mut out = vec![0.0; rows * d];
    for t in 0..rows {
        for j in 0..d {
            let xv = x[t * d + j];
            if xv == 0.0 {
                continue;
            }
            for c in 0..d {
                out[t * d + c] += xv * w[j * d + c];
            }
        }
    }
    out
}

struct Attention {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    att: Vec<f64>,
}

fn attend(n: &[f64], wq: &[f64], wk: &[f64], wv: &[f64], d: usize) -> Attention {
    let e = n.len() / d;
    let (q, k, v) = (project(n, wq, d), project(n, wk, d), project(n, wv, d));
    let scale = 1.0 / (d as f64).sqrt();
    let mut probs = vec![0.0; e * e];
    let mut att = vec![0.0; e * d];
    for t in 0..e {
        let row = &mut probs[t * e..t * e + t + 1];
        for (s, p) in row.iter_mut().enumerate() {
            *p = (0..d).map(|c| q[t * d + c] * k[s * d + c]).sum::<f64>() * scale;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for p in row.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        for p in row.iter_mut() {
            *p /= total;
        }
        for (s, &p) in row.iter().enumerate() {
            for c in 0..d {
                att[t * d + c] += p * v[s * d + c];
            }
        }
    }
    Attention { q, k, v, probs, att }
}

/// Causally masked single-head scaled dot-product attention over the rows of
/// `n` (`e x d`).
pub fn self_attention(n: &[f64], params: &Params) -> Vec<f64> {
    let d = params.dims.latent;
    attend(n, params.get(Group::Wq), params.get(Group::Wk), params.get(Group::Wv), d).att
}

/// Standardizes one row with the population variance, then applies gain and
/// shift. Returns `(output, xhat, 1/std)`.
fn normalize_row(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + LAYER_NORM_EPSILON).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv).collect();
    let out = xhat.iter().zip(gain).zip(bias).map(|((x, g), b)| g * x + b).collect();
    (out, xhat, inv)
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    normalize_row(x, gain, bias).0
}

/// `LayerNorm(N + Att)` applied row-wise.
pub fn sequence_feature(n: &[f64], att: &[f64], params: &Params) -> Vec<f64> {
    let d = params.dims.latent;
    let h: Vec<f64> = n.iter().zip(att).map(|(a, b)| a + b).collect();
    h.chunks(d)
        .flat_map(|row| layer_norm(row, params.get(Group::LnGain), params.get(Group::LnBias)))
        .collect()
}

/// Row `t` of the output is `seq[t] * sf_t`.
pub fn modulate(seq: &[f64], sf: &[f64], d: usize) -> Vec<f64> {
    sf.chunks(d)
        .zip(seq)
        .flat_map(|(row, &s)| row.iter().map(move |v| s * v))
        .collect()
}

/// Mean squared error.
pub fn mse_loss(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("mse of an empty set"));
    }
    if preds.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ratings",
            preds.len(),
            truths.len()
        )));
    }
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub params: Params,
    pub variant: Variant,
}

impl Predictor {
    pub fn new(params: Params, variant: Variant) -> Self {
        Predictor { params, variant }
    }

    pub fn dims(&self) -> Dims {
        self.params.dims
    }

    /// Rejects out-of-range ids and sequences of the wrong length.
    pub fn check(&self, x: &Interaction) -> Result<()> {
        let dims = self.params.dims;
        if x.user >= dims.users {
            return Err(Error::invalid(format!("unknown user id {}", x.user)));
        }
        if x.item >= dims.items {
            return Err(Error::invalid(format!("unknown item id {}", x.item)));
        }
        let e = dims.seq_len;
        if x.ids.len() != e || x.useq.len() != e || x.iseq.len() != e {
            return Err(Error::invalid(format!(
                "interaction sequences must have length {e} (got {}, {}, {})",
                x.ids.len(),
                x.useq.len(),
                x.iseq.len()
            )));
        }
        if let Some(&k) = x.ids.iter().find(|&&k| k >= dims.aspects) {
            return Err(Error::invalid(format!("aspect id {k} out of range (l = {})", dims.aspects)));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Interaction, dropout: Option<Vec<f64>>) -> Result<Trace> {
        self.check(x)?;
        let p = &self.params;
        let Dims { seq_len: e, latent: d, .. } = p.dims;
        let n = embed_path(p, &x.ids, self.variant.position)?;

        let (q, k, v, probs, att) = if self.variant.attention {
            let a = attend(&n, p.get(Group::Wq), p.get(Group::Wk), p.get(Group::Wv), d);
            (a.q, a.k, a.v, a.probs, a.att)
        } else {
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), vec![0.0; e * d])
        };
        let h: Vec<f64> = n.iter().zip(&att).map(|(a, b)| a + b).collect();

        let (sf, xhat, inv_std) = if self.variant.layer_norm {
            let (gain, bias) = (p.get(Group::LnGain), p.get(Group::LnBias));
            let mut sf = Vec::with_capacity(e * d);
            let mut xhat = Vec::with_capacity(e * d);
            let mut inv_std = Vec::with_capacity(e);
            for row in h.chunks(d) {
                let (o, xh, inv) = normalize_row(row, gain, bias);
                sf.extend(o);
                xhat.extend(xh);
                inv_std.push(inv);
            }
            (sf, xhat, inv_std)
        } else {
            (h.clone(), Vec::new(), Vec::new())
        };

        let sf_used = match &dropout {
            Some(mask) => sf.iter().zip(mask).map(|(s, m)| s * m).collect(),
            None => sf.clone(),
        };

        let w1 = p.get(Group::W1);
        let mut prediction = 0.0;
        for t in 0..e {
            let c = x.useq[t] * x.iseq[t];
            if c == 0.0 {
                continue;
            }
            let row = &sf_used[t * d..(t + 1) * d];
            prediction += c * row.iter().zip(w1).map(|(s, w)| w * s * s).sum::<f64>();
        }
        let (pu, qi) = (
            &p.get(Group::UserEmbed)[x.user * d..(x.user + 1) * d],
            &p.get(Group::ItemEmbed)[x.item * d..(x.item + 1) * d],
        );
        prediction += p.get(Group::W2).iter().zip(pu).zip(qi).map(|((w, a), b)| w * a * b).sum::<f64>();
        prediction += p.get(Group::UserBias)[x.user] + p.get(Group::ItemBias)[x.item] + p.get(Group::GlobalBias)[0];

        Ok(Trace {
            n,
            q,
            k,
            v,
            probs,
            att,
            h,
            xhat,
            inv_std,
            sf,
            sf_used,
            dropout,
            prediction,
        })
    }

    pub fn predict(&self, x: &Interaction) -> Result<f64> {
        Ok(self.forward(x, None)?.prediction)
    }

    pub fn predict_all(&self, xs: &[Interaction], exec: Exec) -> Result<Vec<f64>> {
        exec.map(xs, |x| self.predict(x)).into_iter().collect()
    }

    /// Accumulates `d prediction / d params * dpred` into `grads`.
    pub fn backward(&self, x: &Interaction, trace: &Trace, dpred: f64, grads: &mut Params) {
        let p = &self.params;
        let Dims { seq_len: e, latent: d, .. } = p.dims;
        let (u, i) = (x.user, x.item);

        grads.get_mut(Group::GlobalBias)[0] += dpred;
        grads.get_mut(Group::UserBias)[u] += dpred;
        grads.get_mut(Group::ItemBias)[i] += dpred;

        let w2 = p.get(Group::W2);
        let pu = &p.get(Group::UserEmbed)[u * d..(u + 1) * d];
        let qi = &p.get(Group::ItemEmbed)[i * d..(i + 1) * d];
        for j in 0..d {
            grads.get_mut(Group::W2)[j] += dpred * pu[j] * qi[j];
            grads.get_mut(Group::UserEmbed)[u * d + j] += dpred * w2[j] * qi[j];
            grads.get_mut(Group::ItemEmbed)[i * d + j] += dpred * w2[j] * pu[j];
        }

        let w1 = p.get(Group::W1);
        let mut dsf = vec![0.0; e * d];
        {
            let dw1 = grads.get_mut(Group::W1);
            for t in 0..e {
                let c = x.useq[t] * x.iseq[t];
                if c == 0.0 {
                    continue;
                }
                for j in 0..d {
                    let s = trace.sf_used[t * d + j];
                    dw1[j] += dpred * c * s * s;
                    dsf[t * d + j] = dpred * c * 2.0 * w1[j] * s;
                }
            }
        }
        if let Some(mask) = &trace.dropout {
            for (g, m) in dsf.iter_mut().zip(mask) {
                *g *= m;
            }
        }

        let dh = if self.variant.layer_norm {
            let gain = p.get(Group::LnGain);
            let mut dh = vec![0.0; e * d];
            for t in 0..e {
                let row = t * d..(t + 1) * d;
                let (dy, xh) = (&dsf[row.clone()], &trace.xhat[row.clone()]);
                for j in 0..d {
                    grads.get_mut(Group::LnGain)[j] += dy[j] * xh[j];
                    grads.get_mut(Group::LnBias)[j] += dy[j];
                }
                let dxhat: Vec<f64> = dy.iter().zip(gain).map(|(a, g)| a * g).collect();
                let mean_dx = dxhat.iter().sum::<f64>() / d as f64;
                let mean_dx_x = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    dh[t * d + j] = trace.inv_std[t] * (dxhat[j] - mean_dx - xh[j] * mean_dx_x);
                }
            }
            dh
        } else {
            dsf
        };

        let mut dn = dh.clone();
        if self.variant.attention {
            self.attention_backward(trace, &dh, &mut dn, grads);
        }

        for (t, &k) in x.ids.iter().enumerate() {
            for j in 0..d {
                grads.get_mut(Group::AspectEmbed)[k * d + j] += dn[t * d + j];
            }
            if self.variant.position {
                for j in 0..d {
                    grads.get_mut(Group::PosEmbed)[t * d + j] += dn[t * d + j];
                }
            }
        }
    }

    fn attention_backward(&self, trace: &Trace, datt: &[f64], dn: &mut [f64], grads: &mut Params) {
        let p = &self.params;
        let Dims { seq_len: e, latent: d, .. } = p.dims;
        let scale = 1.0 / (d as f64).sqrt();
        let (q, k, v, probs) = (&trace.q, &trace.k, &trace.v, &trace.probs);

        let mut dq = vec![0.0; e * d];
        let mut dk = vec![0.0; e * d];
        let mut dv = vec![0.0; e * d];
        for t in 0..e {
            let dp: Vec<f64> = (0..=t)
                .map(|s| (0..d).map(|c| datt[t * d + c] * v[s * d + c]).sum())
                .collect();
            let row = &probs[t * e..t * e + t + 1];
            let inner: f64 = row.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for s in 0..=t {
                let pr = row[s];
                for c in 0..d {
                    dv[s * d + c] += pr * datt[t * d + c];
                }
                let ds = pr * (dp[s] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..d {
                    dq[t * d + c] += ds * k[s * d + c];
                    dk[s * d + c] += ds * q[t * d + c];
                }
            }
        }

        for (group, dproj) in [(Group::Wq, &dq), (Group::Wk, &dk), (Group::Wv, &dv)] {
            let w = p.get(group);
            let gw = grads.get_mut(group);
            for t in 0..e {
                for j in 0..d {
                    let nv = trace.n[t * d + j];
                    let mut acc = 0.0;
                    for c in 0..d {
                        let g = dproj[t * d + c];
                        gw[j * d + c] += nv * g;
                        acc += g * w[j * d + c];
                    }
                    dn[t * d + j] += acc;
                }
            }
        }
    }

    /// Inverted-dropout mask with keep probability `1 - rate`.
    pub fn dropout_mask(&self, rate: f64, seed_value: u64) -> Option<Vec<f64>> {
        if rate <= 0.0 {
            return None;
        }
        let Dims { seq_len: e, latent: d, .. } = self.params.dims;
        let keep = 1.0 - rate;
        let mut rng = seed::rng(seed_value);
        Some(
            (0..e * d)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
                .collect(),
        )
    }

    /// Mean squared error of `batch` and its gradient. Example `j` of the
    /// batch draws its dropout mask from `derive(seed, [j])`.
    pub fn batch_gradient(
        &self,
        batch: &[&Interaction],
        dropout: f64,
        seed_value: u64,
        exec: Exec,
    ) -> Result<BatchGradient> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let scale = 2.0 / batch.len() as f64;
        let indexed: Vec<(usize, &Interaction)> = batch.iter().copied().enumerate().collect();
        let parts = exec.map_chunks(&indexed, GRADIENT_CHUNK, |chunk| -> Result<(f64, Params)> {
            let mut grads = self.params.zeros_like();
            let mut sq = 0.0;
            for &(j, x) in chunk {
                let mask = self.dropout_mask(dropout, seed::derive(seed_value, &[j as u64]));
                let trace = self.forward(x, mask)?;
                let err = trace.prediction - x.rating;
                sq += err * err;
                self.backward(x, &trace, scale * err, &mut grads);
            }
            Ok((sq, grads))
        });
        let mut grads = self.params.zeros_like();
        let mut sq = 0.0;
        for part in parts {
            let (s, g) = part?;
            sq += s;
            grads.add_scaled(&g, 1.0);
        }
        Ok(BatchGradient {
            loss: sq / batch.len() as f64,
            grads,
        })
    }
}
