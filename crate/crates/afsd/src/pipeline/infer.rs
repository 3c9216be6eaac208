//! Inference: per-location decoding, stream fusion and video-level
//! post-processing.

use super::clips::ClipSample;
use super::detections::Detection;
use super::nms::{rank, soft_nms_grouped, NmsParams};
use crate::config::{InferConfig, QualityMode};
use crate::error::{AfsdError, Result};
use crate::model::Afsd;

/// Decoded head outputs of one clip, one entry per pyramid location whose
/// anchor lies inside the valid part of the clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPrediction {
    pub video: String,
    pub origin_frame: f64,
    pub scale: f64,
    pub anchors: Vec<f64>,
    /// Refined boundaries in clip frames.
    pub bounds: Vec<(f64, f64)>,
    /// Per location, the final score of every non-background class.
    pub scores: Vec<Vec<f64>>,
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Final score of one class: the mean of the coarse and refined class
/// probabilities, scaled by the predicted quality.
pub fn combine_score(coarse: f64, refined: f64, quality: f64) -> f64 {
    0.5 * (coarse + refined) * quality
}

/// Runs the model on one clip and decodes every location.
pub fn predict_clip(model: &Afsd, clip: &ClipSample, quality: QualityMode) -> Result<ClipPrediction> {
    let (tape, _, fwd) = model.run(&clip.features, clip.frames_per_step)?;
    let (cls, rcls, delta, q) = (
        tape.value(fwd.cls),
        tape.value(fwd.rcls),
        tape.value(fwd.delta),
        tape.value(fwd.quality),
    );
    let valid = clip.valid_steps as f64 * clip.frames_per_step;
    let k = cls.cols();
    let mut pred = ClipPrediction {
        video: clip.video.clone(),
        origin_frame: clip.origin_frame,
        scale: clip.scale,
        anchors: Vec::new(),
        bounds: Vec::new(),
        scores: Vec::new(),
    };
    for (i, (&t, c)) in fwd.anchors.iter().zip(&fwd.coarse).enumerate() {
        if t >= valid {
            continue;
        }
        let pc = softmax_row(&cls.data()[i * k..(i + 1) * k]);
        let pr = softmax_row(&rcls.data()[i * k..(i + 1) * k]);
        let eta = match quality {
            QualityMode::None => 1.0,
            _ => sigmoid(q.at(i, 0)),
        };
        pred.anchors.push(t);
        pred.bounds.push(c.refine(delta.at(i, 0), delta.at(i, 1)));
        pred.scores
            .push((1..k).map(|j| combine_score(pc[j], pr[j], eta)).collect());
    }
    Ok(pred)
}

/// Averages boundaries and scores of two predictions made on the same
/// clip grid.
pub fn fuse_streams(a: &[ClipPrediction], b: &[ClipPrediction]) -> Result<Vec<ClipPrediction>> {
    if a.len() != b.len() {
        return Err(AfsdError::Argument(format!(
            "stream clip counts differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.video != y.video || x.origin_frame != y.origin_frame || x.anchors != y.anchors {
                return Err(AfsdError::Argument(format!(
                    "stream grids differ at {}@{} / {}@{}",
                    x.video, x.origin_frame, y.video, y.origin_frame
                )));
            }
            let bounds = x
                .bounds
                .iter()
                .zip(&y.bounds)
                .map(|(p, q)| (0.5 * (p.0 + q.0), 0.5 * (p.1 + q.1)))
                .collect();
            let scores = x
                .scores
                .iter()
                .zip(&y.scores)
                .map(|(p, q)| p.iter().zip(q).map(|(u, v)| 0.5 * (u + v)).collect())
                .collect();
            Ok(ClipPrediction {
                bounds,
                scores,
                ..x.clone()
            })
        })
        .collect()
}

/// Turns one clip prediction into video-frame detections: thresholding,
/// top-k, mapping out of clip coordinates and clamping to the video.
pub fn decode(pred: &ClipPrediction, duration_frames: f64, cfg: &InferConfig) -> Vec<Detection> {
    let mut dets = Vec::new();
    for (&(s, e), scores) in pred.bounds.iter().zip(&pred.scores) {
        let start = (pred.origin_frame + s / pred.scale).clamp(0.0, duration_frames);
        let end = (pred.origin_frame + e / pred.scale).clamp(0.0, duration_frames);
        if !(end > start) {
            continue;
        }
        for (j, &score) in scores.iter().enumerate() {
            if score >= cfg.score_threshold {
                dets.push(Detection {
                    video: pred.video.clone(),
                    start,
                    end,
                    label: j + 1,
                    score,
                });
            }
        }
    }
    dets.sort_by(rank);
    dets.truncate(cfg.top_k);
    dets
}

/// Union of all clip detections of one video, Soft-NMS per class, then the
/// per-video cap.
pub fn detect_video(preds: &[ClipPrediction], duration_frames: f64, cfg: &InferConfig) -> Vec<Detection> {
    let all: Vec<Detection> = preds.iter().flat_map(|p| decode(p, duration_frames, cfg)).collect();
    let mut out = soft_nms_grouped(all, &NmsParams::from_config(cfg));
    out.sort_by(rank);
    out.truncate(cfg.max_per_video);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::model::CoarseBounds;

    #[test]
    fn score_fixture() {
        assert!((combine_score(0.8, 0.6, 0.5) - 0.35).abs() < 1e-15);
        assert_eq!(CoarseBounds { start: 4.0, end: 10.0 }.refine(0.0, 0.0), (4.0, 10.0));
    }

    fn pred(score: f64) -> ClipPrediction {
        ClipPrediction {
            video: "v".into(),
            origin_frame: 100.0,
            scale: 1.0,
            anchors: vec![0.0],
            bounds: vec![(-10.0, 20.0)],
            scores: vec![vec![score, 0.0]],
        }
    }

    #[test]
    fn fusion_averages_and_checks_grids() {
        let f = fuse_streams(&[pred(0.4)], &[pred(0.8)]).unwrap();
        assert!((f[0].scores[0][0] - 0.6).abs() < 1e-15);
        assert_eq!(fuse_streams(&[pred(0.4)], &[pred(0.4)]).unwrap(), [pred(0.4)]);
        let mut other = pred(0.4);
        other.origin_frame = 0.0;
        assert!(fuse_streams(&[pred(0.4)], &[other]).is_err());
        assert!(fuse_streams(&[pred(0.4)], &[]).is_err());
    }

    #[test]
    fn decode_maps_and_clamps() {
        let cfg = Config::thumos().infer;
        let dets = decode(&pred(0.5), 115.0, &cfg);
        assert_eq!(dets.len(), 1);
        assert_eq!((dets[0].start, dets[0].end, dets[0].label), (90.0, 115.0, 1));
    }
}
