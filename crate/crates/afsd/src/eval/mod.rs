//! Detection metrics: per-class average precision at tIoU thresholds and
//! their mean.
//!
//! Matching is greedy in score order. Each detection takes the unmatched
//! ground truth of its class and video with the highest tIoU and counts as
//! a true positive when that tIoU reaches the threshold. AP is the area
//! under the all-point interpolated precision-recall curve.

mod chance;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::Instance;
use crate::interval::tiou_unchecked;
use crate::pipeline::detections::Detection;
use crate::pipeline::nms::rank;

pub use chance::{chance_map, ChanceModel};

/// Ground truth keyed by video id.
pub type GroundTruth = BTreeMap<String, Vec<Instance>>;

/// Precision and recall after each detection of one class, best first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub num_gt: usize,
}

/// Detections of `class`, best first. Ties are broken by segment and then
/// video so the order never depends on the input order.
fn ranked(dets: &[Detection], class: usize) -> Vec<&Detection> {
    let mut out: Vec<&Detection> = dets.iter().filter(|d| d.label == class).collect();
    out.sort_by(|a, b| rank(a, b).then_with(|| a.video.cmp(&b.video)));
    out
}

/// True-positive flag of each detection of `class`, in ranked order.
pub fn match_detections(dets: &[Detection], gts: &GroundTruth, class: usize, threshold: f64) -> Vec<bool> {
    let mut used: BTreeMap<&str, Vec<bool>> = gts.iter().map(|(v, g)| (v.as_str(), vec![false; g.len()])).collect();
    ranked(dets, class)
        .into_iter()
        .map(|d| {
            let (Some(g), Some(taken)) = (gts.get(&d.video), used.get_mut(d.video.as_str())) else {
                return false;
            };
            let best = g
                .iter()
                .enumerate()
                .filter(|(j, gt)| gt.label == class && !taken[*j])
                .map(|(j, gt)| (j, tiou_unchecked(d.as_pair(), gt.as_pair())))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((j, o)) if o >= threshold => {
                    taken[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

pub fn num_gt(gts: &GroundTruth, class: usize) -> usize {
    gts.values().flatten().filter(|g| g.label == class).count()
}

pub fn pr_curve(dets: &[Detection], gts: &GroundTruth, class: usize, threshold: f64) -> PrCurve {
    let n = num_gt(gts, class);
    let mut curve = PrCurve {
        num_gt: n,
        ..PrCurve::default()
    };
    let mut tp = 0usize;
    for (k, hit) in match_detections(dets, gts, class, threshold).into_iter().enumerate() {
        tp += hit as usize;
        curve.recall.push(if n > 0 { tp as f64 / n as f64 } else { 0.0 });
        curve.precision.push(tp as f64 / (k + 1) as f64);
    }
    curve
}

/// All-point interpolated area under a precision-recall curve.
pub fn interpolated_ap(recall: &[f64], precision: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in recall.iter().zip(envelope) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// AP of one class at one threshold; 0 when the class has no ground truth.
pub fn average_precision(dets: &[Detection], gts: &GroundTruth, class: usize, threshold: f64) -> f64 {
    let c = pr_curve(dets, gts, class, threshold);
    if c.num_gt == 0 {
        log::warn!("class {class} has no ground truth; AP set to 0");
        return 0.0;
    }
    interpolated_ap(&c.recall, &c.precision)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub label: String,
    pub num_gt: usize,
    /// AP per threshold.
    pub ap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    /// mAP per threshold.
    pub map: Vec<f64>,
    pub average: f64,
    pub classes: Vec<ClassAp>,
    pub num_detections: usize,
}

/// mAP at every threshold, averaged over the classes that have ground
/// truth. `labels[i]` names class `i + 1`.
pub fn mean_ap(dets: &[Detection], gts: &GroundTruth, labels: &[String], thresholds: &[f64]) -> MapReport {
    let classes: Vec<ClassAp> = labels
        .iter()
        .enumerate()
        .map(|(i, label)| ClassAp {
            label: label.clone(),
            num_gt: num_gt(gts, i + 1),
            ap: thresholds
                .iter()
                .map(|&t| average_precision(dets, gts, i + 1, t))
                .collect(),
        })
        .collect();
    let scored: Vec<&ClassAp> = classes.iter().filter(|c| c.num_gt > 0).collect();
    let map: Vec<f64> = (0..thresholds.len())
        .map(|t| {
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(|c| c.ap[t]).sum::<f64>() / scored.len() as f64
            }
        })
        .collect();
    let average = if map.is_empty() {
        0.0
    } else {
        map.iter().sum::<f64>() / map.len() as f64
    };
    MapReport {
        thresholds: thresholds.to_vec(),
        map,
        average,
        classes,
        num_detections: dets.len(),
    }
}

impl MapReport {
    /// mAP at the threshold closest to `t`.
    pub fn map_at(&self, t: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&x| (x - t).abs() < 1e-9)
            .map(|i| self.map[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize") + "\n"
    }

    /// Plain-text table with one column per threshold plus the average, in
    /// percent.
    pub fn table(&self) -> String {
        let width = self.classes.iter().map(|c| c.label.len()).max().unwrap_or(0).max(8);
        let mut s = format!("{:<width$}", "tIoU");
        for t in &self.thresholds {
            let _ = write!(s, " {:>6.2}", t);
        }
        s.push_str("   Avg.\n");
        let mut row = |name: &str, vals: &[f64]| {
            let _ = write!(s, "{name:<width$}");
            for v in vals {
                let _ = write!(s, " {:>6.1}", 100.0 * v);
            }
            let avg = if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            let _ = writeln!(s, " {:>6.1}", 100.0 * avg);
        };
        for c in &self.classes {
            row(&c.label, &c.ap);
        }
        row("mAP", &self.map);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(s: f64, e: f64, score: f64) -> Detection {
        Detection {
            video: "v".into(),
            start: s,
            end: e,
            label: 1,
            score,
        }
    }

    fn gts(spans: &[(f64, f64)]) -> GroundTruth {
        let g = spans.iter().map(|&(s, e)| Instance::new(s, e, 1).unwrap()).collect();
        BTreeMap::from([("v".to_string(), g)])
    }

    #[test]
    fn hand_fixtures() {
        let g = gts(&[(0.0, 10.0)]);
        assert_eq!(average_precision(&[det(0.0, 10.0, 1.0)], &g, 1, 0.5), 1.0);
        let c = pr_curve(&[det(0.0, 10.0, 0.9), det(0.0, 10.0, 0.5)], &g, 1, 0.5);
        assert_eq!((c.recall, c.precision), (vec![1.0, 1.0], vec![1.0, 0.5]));
        assert_eq!(
            average_precision(&[det(0.0, 10.0, 0.9), det(0.0, 10.0, 0.5)], &g, 1, 0.5),
            1.0
        );
        let g2 = gts(&[(0.0, 10.0), (20.0, 30.0)]);
        assert_eq!(average_precision(&[det(0.0, 10.0, 0.9)], &g2, 1, 0.5), 0.5);
    }

    #[test]
    fn unknown_videos_are_false_positives() {
        let g = gts(&[(0.0, 10.0)]);
        let mut ghost = det(0.0, 10.0, 0.95);
        ghost.video = "elsewhere".into();
        assert_eq!(average_precision(&[ghost, det(0.0, 10.0, 0.9)], &g, 1, 0.5), 0.5);
    }

    #[test]
    fn report_table() {
        let g = gts(&[(0.0, 10.0)]);
        let r = mean_ap(&[det(0.0, 10.0, 1.0)], &g, &["a".into(), "b".into()], &[0.3, 0.5]);
        assert_eq!(r.map, [1.0, 1.0]);
        assert_eq!(r.map_at(0.5), Some(1.0));
        let t = r.table();
        assert!(t.starts_with("tIoU       0.30   0.50   Avg.\n"), "{t}");
        assert!(t.contains("mAP       100.0  100.0  100.0"), "{t}");
    }
}
