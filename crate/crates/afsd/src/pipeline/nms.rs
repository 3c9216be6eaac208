//! Soft non-maximum suppression.

use std::cmp::Ordering;

use super::detections::Detection;
use crate::config::{InferConfig, NmsKind};
use crate::interval::tiou_unchecked;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmsParams {
    pub kind: NmsKind,
    /// Linear decay only applies above this overlap.
    pub threshold: f64,
    /// Gaussian width.
    pub sigma: f64,
    /// Detections decayed below this are dropped.
    pub floor: f64,
}

impl NmsParams {
    pub fn from_config(cfg: &InferConfig) -> Self {
        NmsParams {
            kind: cfg.nms,
            threshold: cfg.nms_threshold,
            sigma: cfg.nms_sigma,
            floor: cfg.score_floor,
        }
    }

    fn decay(&self, overlap: f64) -> f64 {
        match self.kind {
            NmsKind::Linear if overlap > self.threshold => 1.0 - overlap,
            NmsKind::Linear => 1.0,
            NmsKind::Gaussian => (-overlap * overlap / self.sigma).exp(),
        }
    }
}

/// Score descending, then start, end and label ascending.
pub fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then(a.end.total_cmp(&b.end))
        .then(a.label.cmp(&b.label))
}

/// Runs the decay loop and returns every detection with its final score,
/// in selection order.
///
/// Expects detections of one class in one video.
pub fn rescore(dets: &[Detection], p: &NmsParams) -> Vec<Detection> {
    let mut rest: Vec<Detection> = dets.to_vec();
    let mut out = Vec::with_capacity(rest.len());
    while !rest.is_empty() {
        let best = (0..rest.len())
            .min_by(|&i, &j| rank(&rest[i], &rest[j]))
            .expect("non-empty");
        let top = rest.swap_remove(best);
        for d in &mut rest {
            d.score *= p.decay(tiou_unchecked(top.as_pair(), d.as_pair()));
        }
        out.push(top);
    }
    out
}

/// [`rescore`] followed by dropping everything below the floor.
pub fn soft_nms(dets: &[Detection], p: &NmsParams) -> Vec<Detection> {
    let mut out = rescore(dets, p);
    out.retain(|d| d.score >= p.floor);
    out
}

/// Soft-NMS applied per video and class. The result is sorted by
/// video, then [`rank`].
pub fn soft_nms_grouped(dets: Vec<Detection>, p: &NmsParams) -> Vec<Detection> {
    let mut groups: std::collections::BTreeMap<(String, usize), Vec<Detection>> = Default::default();
    for d in dets {
        groups.entry((d.video.clone(), d.label)).or_default().push(d);
    }
    let mut out: Vec<Detection> = groups.values().flat_map(|g| soft_nms(g, p)).collect();
    out.sort_by(|a, b| a.video.cmp(&b.video).then_with(|| rank(a, b)));
    out
}
