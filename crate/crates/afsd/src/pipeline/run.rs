//! Dataset-level training and inference.

use super::clips::{split_clips, Mode};
use super::dataset::VideoRecord;
use super::detections::Detection;
use super::infer::{detect_video, fuse_streams, predict_clip, ClipPrediction};
use super::nms::rank;
use super::train::{StepRecord, TrainOutcome, Trainer};
use crate::config::Config;
use crate::error::{AfsdError, Result};
use crate::model::{Afsd, ModelSpec};

/// Trains a fresh model on every clip of `videos`.
pub fn train_model<S, E>(
    cfg: &Config,
    videos: &[VideoRecord],
    classes: usize,
    on_step: S,
    on_epoch: E,
) -> Result<(Afsd, TrainOutcome)>
where
    S: FnMut(&StepRecord) -> Result<()>,
    E: FnMut(usize, &Afsd) -> Result<()>,
{
    let input_dim = videos
        .first()
        .map(|v| v.features.channels())
        .ok_or_else(|| AfsdError::Argument("no training videos".into()))?;
    let clips: Vec<_> = videos
        .iter()
        .flat_map(|v| split_clips(v, &cfg.data, Mode::Train))
        .collect();
    let model = Afsd::new(ModelSpec::from_config(cfg, input_dim, classes), cfg.model.init_seed)?;
    let mut trainer = Trainer::new(cfg.clone(), model);
    let outcome = trainer.fit(&clips, on_step, on_epoch)?;
    Ok((trainer.model, outcome))
}

/// Per-clip predictions of one model over one video.
pub fn predict_video(model: &Afsd, video: &VideoRecord, cfg: &Config) -> Result<Vec<ClipPrediction>> {
    split_clips(video, &cfg.data, Mode::Test)
        .iter()
        .map(|c| predict_clip(model, c, cfg.loss.quality))
        .collect()
}

/// Detections for every video. `streams` pairs each model with the videos
/// of its stream; with two streams the videos must line up and the
/// predictions are fused before post-processing.
pub fn infer_videos(streams: &[(&Afsd, &[VideoRecord])], cfg: &Config) -> Result<Vec<Detection>> {
    let (first, rest) = streams
        .split_first()
        .ok_or_else(|| AfsdError::Argument("no stream to run".into()))?;
    if rest.len() > 1 {
        return Err(AfsdError::Argument("at most two streams can be fused".into()));
    }
    let mut out = Vec::new();
    for (i, video) in first.1.iter().enumerate() {
        let mut preds = predict_video(first.0, video, cfg)?;
        if let Some((model, videos)) = rest.first() {
            let other = videos
                .get(i)
                .filter(|v| v.id == video.id)
                .ok_or_else(|| AfsdError::Argument(format!("second stream lacks video {}", video.id)))?;
            preds = fuse_streams(&preds, &predict_video(model, other, cfg)?)?;
        }
        out.extend(detect_video(&preds, video.duration_frames, &cfg.infer));
    }
    out.sort_by(|a, b| a.video.cmp(&b.video).then_with(|| rank(a, b)));
    Ok(out)
}
