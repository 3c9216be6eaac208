//! Monte-Carlo chance level.
//!
//! The random detector knows the distribution of action widths and the
//! class vocabulary but nothing about the video content: widths are drawn
//! from a pool, positions and classes uniformly, scores at random.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mean_ap, GroundTruth};
use crate::pipeline::detections::Detection;

#[derive(Clone, Debug, PartialEq)]
pub struct ChanceModel {
    /// Widths in frames to draw from.
    pub widths: Vec<f64>,
    pub per_video: usize,
    pub trials: usize,
}

/// Mean mAP of the random detector at `threshold` over `trials` runs.
pub fn chance_map(
    model: &ChanceModel,
    gts: &GroundTruth,
    durations: &BTreeMap<String, f64>,
    labels: &[String],
    threshold: f64,
    seed: u64,
) -> f64 {
    if model.widths.is_empty() || model.trials == 0 || labels.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..model.trials {
        let mut dets = Vec::new();
        for (video, &dur) in durations {
            for _ in 0..model.per_video {
                let w = model.widths.choose(&mut rng).expect("non-empty").min(dur);
                let start = rng.random_range(0.0..=dur - w);
                dets.push(Detection {
                    video: video.clone(),
                    start,
                    end: start + w,
                    label: rng.random_range(1..=labels.len()),
                    score: rng.random::<f64>(),
                });
            }
        }
        total += mean_ap(&dets, gts, labels, &[threshold]).map[0];
    }
    total / model.trials as f64
}
