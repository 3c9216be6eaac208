//! Fused loss kernels with analytic gradients.
//!
//! Each kernel returns a single-element tensor. Terms normalised by a count
//! evaluate to a constant zero when the count is zero.

use crate::error::{Result, TensorError};
use crate::ops::pointwise::sigmoid;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// Softmax focal loss of one row given its class probabilities.
///
/// `alpha` weights foreground targets (index >= 1), `1 - alpha` the
/// background class 0.
pub fn focal_term(probs: &[f64], target: usize, alpha: f64, gamma: f64) -> f64 {
    let pt = probs[target];
    let alpha_t = if target == 0 { 1.0 - alpha } else { alpha };
    -alpha_t * (1.0 - pt).powf(gamma) * pt.ln()
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Temporal IoU of `[s0, e0]` and `[s1, e1]`; 0 when the union is empty.
fn interval_iou(s0: f64, e0: f64, s1: f64, e1: f64) -> (f64, f64, f64) {
    let inter = (e0.min(e1) - s0.max(s1)).max(0.0);
    let union = (e0 - s0) + (e1 - s1) - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    (iou, inter, union)
}

struct FocalRule {
    targets: Vec<usize>,
    alpha: f64,
    gamma: f64,
    inv_norm: f64,
}

impl Backward for FocalRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let k = logits.cols();
        let scale = grad.item() * self.inv_norm;
        let mut g = vec![0.0; logits.len()];
        for (r, &y) in self.targets.iter().enumerate() {
            let logp = log_softmax(logits.row(r));
            let pt = logp[y].exp();
            let alpha_t = if y == 0 { 1.0 - self.alpha } else { self.alpha };
            let q = 1.0 - pt;
            // dFL/dpt * pt, written to stay finite as pt -> 0 or 1.
            let slope = if q > 0.0 {
                -alpha_t * (q.powf(self.gamma) - self.gamma * q.powf(self.gamma - 1.0) * pt * logp[y])
            } else {
                0.0
            };
            for j in 0..k {
                let delta = if j == y { 1.0 } else { 0.0 };
                g[r * k + j] = scale * slope * (delta - logp[j].exp());
            }
        }
        vec![Some(Tensor::new(logits.shape().to_vec(), g).expect("logit shape"))]
    }
}

struct TiouRule {
    anchors: Vec<f64>,
    targets: Vec<Option<(f64, f64)>>,
    inv_norm: f64,
}

impl Backward for TiouRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let dist = inputs[0];
        let scale = grad.item() * self.inv_norm;
        let mut g = vec![0.0; dist.len()];
        for (r, target) in self.targets.iter().enumerate() {
            let Some((gs, ge)) = *target else { continue };
            let t = self.anchors[r];
            let (ps, pe) = (t - dist.at(r, 0), t + dist.at(r, 1));
            let (_, inter, union) = interval_iou(ps, pe, gs, ge);
            if union <= 0.0 {
                continue;
            }
            // d(inter)/d(d_start), d(inter)/d(d_end)
            let overlapping = inter > 0.0;
            let di_s = if overlapping && ps > gs { 1.0 } else { 0.0 };
            let di_e = if overlapping && pe < ge { 1.0 } else { 0.0 };
            let diou = |di: f64| (di * union - inter * (1.0 - di)) / (union * union);
            g[r * 2] = -scale * diou(di_s);
            g[r * 2 + 1] = -scale * diou(di_e);
        }
        vec![Some(Tensor::new(dist.shape().to_vec(), g).expect("dist shape"))]
    }
}

struct L1Rule {
    signs: Vec<f64>,
    inv_norm: f64,
}

impl Backward for L1Rule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let s = grad.item() * self.inv_norm;
        let g = self.signs.iter().map(|v| v * s).collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), g).expect("pred shape"))]
    }
}

struct BceLogitsRule {
    targets: Vec<Option<f64>>,
    inv_norm: f64,
}

impl Backward for BceLogitsRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let z = inputs[0];
        let s = grad.item() * self.inv_norm;
        let g = z
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&zi, t)| t.map_or(0.0, |t| s * (sigmoid(zi) - t)))
            .collect();
        vec![Some(Tensor::new(z.shape().to_vec(), g).expect("logit shape"))]
    }
}

struct BceRule {
    targets: Vec<f64>,
    eps: f64,
}

impl Backward for BceRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let s = grad.item() / p.len() as f64;
        let g = p
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&pi, &t)| {
                if pi <= self.eps || pi >= 1.0 - self.eps {
                    0.0
                } else {
                    s * (pi - t) / (pi * (1.0 - pi))
                }
            })
            .collect();
        vec![Some(Tensor::new(p.shape().to_vec(), g).expect("prob shape"))]
    }
}

struct TripletRule {
    active: bool,
}

impl Backward for TripletRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        if !self.active {
            return vec![None, None, None];
        }
        let (a, p, n) = (inputs[0], inputs[1], inputs[2]);
        let s = grad.item();
        let zip3 = |f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let data = a
                .data()
                .iter()
                .zip(p.data())
                .zip(n.data())
                .map(|((&a, &p), &n)| s * f(a, p, n))
                .collect();
            Tensor::new(a.shape().to_vec(), data).expect("feature shape")
        };
        vec![
            Some(zip3(&|_, p, n| 2.0 * (n - p))),
            Some(zip3(&|a, p, _| -2.0 * (a - p))),
            Some(zip3(&|a, _, n| 2.0 * (a - n))),
        ]
    }
}

fn check_rows(t: &Tensor, rows: usize, what: &str) -> Result<()> {
    if t.rows() != rows {
        return Err(TensorError::Shape(format!(
            "{what}: {} rows but {rows} targets",
            t.rows()
        )));
    }
    Ok(())
}

impl Tape {
    /// `(1 / normalizer) * sum_i FL(softmax(logits_i), targets_i)` over every row.
    pub fn softmax_focal(
        &mut self,
        logits: Var,
        targets: &[usize],
        alpha: f64,
        gamma: f64,
        normalizer: f64,
    ) -> Result<Var> {
        let lv = self.value(logits);
        check_rows(lv, targets.len(), "softmax_focal")?;
        let k = lv.cols();
        if let Some(&bad) = targets.iter().find(|&&y| y >= k) {
            return Err(TensorError::Shape(format!(
                "softmax_focal: target {bad} outside {k} classes"
            )));
        }
        if normalizer <= 0.0 {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            let logp = log_softmax(lv.row(r));
            let pt = logp[y].exp();
            let alpha_t = if y == 0 { 1.0 - alpha } else { alpha };
            total += -alpha_t * (1.0 - pt).powf(gamma) * logp[y];
        }
        let inv_norm = 1.0 / normalizer;
        Ok(self.record(
            Tensor::scalar(total * inv_norm),
            vec![logits],
            Box::new(FocalRule {
                targets: targets.to_vec(),
                alpha,
                gamma,
                inv_norm,
            }),
        ))
    }

    /// `(1 / normalizer) * sum (1 - tIoU)` over rows with a target, where row
    /// `i` of `dist` holds the distances `(d_start, d_end)` from `anchors[i]`.
    pub fn tiou_loss(
        &mut self,
        dist: Var,
        anchors: &[f64],
        targets: &[Option<(f64, f64)>],
        normalizer: f64,
    ) -> Result<Var> {
        let dv = self.value(dist);
        if dv.cols() != 2 || anchors.len() != targets.len() {
            return Err(TensorError::Shape(format!(
                "tiou_loss: distances {:?}, {} anchors, {} targets",
                dv.shape(),
                anchors.len(),
                targets.len()
            )));
        }
        check_rows(dv, targets.len(), "tiou_loss")?;
        if normalizer <= 0.0 {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        let mut total = 0.0;
        let mut branches = Vec::new();
        for (r, target) in targets.iter().enumerate() {
            let Some((gs, ge)) = *target else { continue };
            let (ps, pe) = (anchors[r] - dv.at(r, 0), anchors[r] + dv.at(r, 1));
            let (iou, inter, _) = interval_iou(ps, pe, gs, ge);
            total += 1.0 - iou;
            branches.extend([inter > 0.0, ps > gs, pe < ge]);
        }
        branches.into_iter().for_each(|b| self.note_flag(b));
        let inv_norm = 1.0 / normalizer;
        Ok(self.record(
            Tensor::scalar(total * inv_norm),
            vec![dist],
            Box::new(TiouRule {
                anchors: anchors.to_vec(),
                targets: targets.to_vec(),
                inv_norm,
            }),
        ))
    }

    /// `(1 / normalizer) * sum |pred_i - target_i|_1` over rows with a target.
    pub fn l1_loss(&mut self, pred: Var, targets: &[Option<Vec<f64>>], normalizer: f64) -> Result<Var> {
        let pv = self.value(pred);
        check_rows(pv, targets.len(), "l1_loss")?;
        let d = pv.cols();
        if normalizer <= 0.0 {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        let mut total = 0.0;
        let mut signs = vec![0.0; pv.len()];
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = target else { continue };
            if t.len() != d {
                return Err(TensorError::Shape(format!("l1_loss: target width {} vs {d}", t.len())));
            }
            for (c, tv) in t.iter().enumerate() {
                let diff = pv.at(r, c) - tv;
                total += diff.abs();
                signs[r * d + c] = diff.signum() * (diff != 0.0) as u8 as f64;
            }
        }
        for s in signs.clone() {
            self.note_flag(s > 0.0);
        }
        let inv_norm = 1.0 / normalizer;
        Ok(self.record(
            Tensor::scalar(total * inv_norm),
            vec![pred],
            Box::new(L1Rule { signs, inv_norm }),
        ))
    }

    /// `(1 / normalizer) * sum BCE(sigmoid(z_i), t_i)` over entries with a target.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[Option<f64>], normalizer: f64) -> Result<Var> {
        let zv = self.value(logits);
        if zv.len() != targets.len() {
            return Err(TensorError::Shape(format!(
                "bce_with_logits: {} logits, {} targets",
                zv.len(),
                targets.len()
            )));
        }
        if normalizer <= 0.0 {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        let total: f64 = zv
            .data()
            .iter()
            .zip(targets)
            .filter_map(|(&z, t)| t.map(|t| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()))
            .sum();
        let inv_norm = 1.0 / normalizer;
        Ok(self.record(
            Tensor::scalar(total * inv_norm),
            vec![logits],
            Box::new(BceLogitsRule {
                targets: targets.to_vec(),
                inv_norm,
            }),
        ))
    }

    /// Mean binary cross-entropy of probabilities `p` against `targets`;
    /// probabilities are clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, targets: &[f64], eps: f64) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != targets.len() {
            return Err(TensorError::Shape(format!(
                "bce: {} probabilities, {} targets",
                pv.len(),
                targets.len()
            )));
        }
        let mut total = 0.0;
        let mut flags = Vec::with_capacity(targets.len());
        for (&pi, &t) in pv.data().iter().zip(targets) {
            let q = pi.clamp(eps, 1.0 - eps);
            total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
            flags.push(pi <= eps || pi >= 1.0 - eps);
        }
        let n = targets.len() as f64;
        flags.into_iter().for_each(|f| self.note_flag(f));
        Ok(self.record(
            Tensor::scalar(total / n),
            vec![p],
            Box::new(BceRule {
                targets: targets.to_vec(),
                eps,
            }),
        ))
    }

    /// `max(|a - p|^2 - |a - n|^2 + margin, 0)`.
    pub fn triplet(&mut self, anchor: Var, positive: Var, negative: Var, margin: f64) -> Result<Var> {
        let (a, p, n) = (self.value(anchor), self.value(positive), self.value(negative));
        if a.len() != p.len() || a.len() != n.len() {
            return Err(TensorError::Shape("triplet: feature sizes differ".into()));
        }
        let sq =
            |x: &Tensor, y: &Tensor| -> f64 { x.data().iter().zip(y.data()).map(|(u, v)| (u - v) * (u - v)).sum() };
        let raw = sq(a, p) - sq(a, n) + margin;
        let active = raw > 0.0;
        self.note_flag(active);
        Ok(self.record(
            Tensor::scalar(raw.max(0.0)),
            vec![anchor, positive, negative],
            Box::new(TripletRule { active }),
        ))
    }
}
