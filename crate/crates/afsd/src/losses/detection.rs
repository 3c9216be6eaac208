use serde::{Deserialize, Serialize};
use tensorcore::{Tape, Var};

use super::assign::{assign, Assignment};
use crate::annotation::Instance;
use crate::config::{LossConfig, QualityMode};
use crate::error::Result;
use crate::interval::tiou_unchecked;
use crate::model::Forward;

/// Per-term loss values of one step. `total` is the detection objective;
/// `act` and `trip` belong to the separate consistency step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cls_coarse: f64,
    pub loc_coarse: f64,
    pub cls_refined: f64,
    pub loc_refined: f64,
    pub quality: f64,
    pub act: f64,
    pub trip: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.cls_coarse,
            self.loc_coarse,
            self.cls_refined,
            self.loc_refined,
            self.quality,
            self.act,
            self.trip,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Everything the detection loss compares against, frozen at build time.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub assignment: Assignment,
    /// Quality target per location, set on refined positives only.
    pub quality: Vec<Option<f64>>,
}

/// Assigns labels from the current coarse predictions and computes the
/// quality targets from the current refinement offsets. The result holds
/// plain numbers, so no gradient flows through any target.
pub fn build_targets(tape: &Tape, fwd: &Forward, gts: &[Instance], cfg: &LossConfig) -> Targets {
    let assignment = assign(&fwd.anchors, &fwd.coarse, gts, cfg.refine_tiou);
    let delta = tape.value(fwd.delta);
    let quality = assignment
        .refined
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let r = r.as_ref()?;
            let gt = gts[r.gt].as_pair();
            match cfg.quality {
                QualityMode::Quality => {
                    let (s, e) = fwd.coarse[i].refine(delta.at(i, 0), delta.at(i, 1));
                    Some(if s < e { tiou_unchecked((s, e), gt) } else { 0.0 })
                }
                QualityMode::Centerness => Some(centerness(fwd.anchors[i], gt)),
                QualityMode::None => None,
            }
        })
        .collect();
    Targets { assignment, quality }
}

/// One-dimensional centerness of time `t` inside `gt`.
fn centerness(t: f64, gt: (f64, f64)) -> f64 {
    let (l, r) = (t - gt.0, gt.1 - t);
    let hi = l.max(r);
    if hi > 0.0 {
        (l.min(r) / hi).max(0.0)
    } else {
        0.0
    }
}

/// Softmax focal loss summed over all rows and divided by `n`.
pub fn focal_cls_loss(tape: &mut Tape, logits: Var, labels: &[usize], n: usize, cfg: &LossConfig) -> Result<Var> {
    Ok(tape.softmax_focal(logits, labels, cfg.focal_alpha, cfg.focal_gamma, n as f64)?)
}

/// The weighted detection objective and its per-term breakdown.
pub fn detection_loss(
    tape: &mut Tape,
    fwd: &Forward,
    targets: &Targets,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    let a = &targets.assignment;
    let cls_c = focal_cls_loss(tape, fwd.cls, &a.coarse_labels(), a.n_coarse, cfg)?;
    let boxes: Vec<Option<(f64, f64)>> = a.coarse.iter().map(|t| t.map(|t| (t.start, t.end))).collect();
    let loc_c = tape.tiou_loss(fwd.dist, &fwd.anchors, &boxes, a.n_coarse as f64)?;
    let cls_r = focal_cls_loss(tape, fwd.rcls, &a.refined_labels(), a.n_refined, cfg)?;
    let offsets: Vec<Option<Vec<f64>>> = a
        .refined
        .iter()
        .map(|t| t.map(|t| vec![t.offsets.0, t.offsets.1]))
        .collect();
    let loc_r = tape.l1_loss(fwd.delta, &offsets, a.n_refined as f64)?;
    let mut terms = vec![(cls_c, 1.0), (loc_c, cfg.lambda), (cls_r, 1.0), (loc_r, cfg.lambda)];
    let mut quality = None;
    if cfg.quality != QualityMode::None {
        let q = tape.bce_with_logits(fwd.quality, &targets.quality, a.n_refined as f64)?;
        terms.push((q, cfg.gamma));
        quality = Some(q);
    }
    let total = tape.weighted_sum(&terms)?;
    let report = LossReport {
        cls_coarse: tape.value(cls_c).item(),
        loc_coarse: tape.value(loc_c).item(),
        cls_refined: tape.value(cls_r).item(),
        loc_refined: tape.value(loc_r).item(),
        quality: quality.map_or(0.0, |q| tape.value(q).item()),
        act: 0.0,
        trip: 0.0,
        total: tape.value(total).item(),
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centerness_profile() {
        assert_eq!(centerness(5.0, (0.0, 10.0)), 1.0);
        assert_eq!(centerness(0.0, (0.0, 10.0)), 0.0);
        assert!((centerness(2.0, (0.0, 10.0)) - 0.25).abs() < 1e-15);
    }
}
