use tensorcore::Tensor;

use super::dataset::VideoRecord;
use crate::annotation::Instance;
use crate::config::DataConfig;

/// Visible portions shorter than this many frames are dropped.
const MIN_VISIBLE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

/// A fixed-length window of a video.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub video: String,
    /// Video frame of clip frame 0.
    pub origin_frame: f64,
    /// Clip frames per video frame (1 unless the video was resampled).
    pub scale: f64,
    pub frames_per_step: f64,
    /// `clip_steps x C`, zero-padded past `valid_steps`.
    pub features: Tensor,
    pub valid_steps: usize,
    /// Ground truth in clip frames.
    pub instances: Vec<Instance>,
}

impl ClipSample {
    pub fn name(&self) -> String {
        format!("{}@{}", self.video, self.origin_frame)
    }

    pub fn steps(&self) -> usize {
        self.features.rows()
    }

    /// Maps a clip frame back to a video frame.
    pub fn to_video_frame(&self, frame: f64) -> f64 {
        self.origin_frame + frame / self.scale
    }

    /// Ground truth as `[start, end)` step spans.
    pub fn step_spans(&self) -> Vec<(usize, usize)> {
        self.instances
            .iter()
            .filter_map(|i| {
                let s = (i.start / self.frames_per_step).round().max(0.0) as usize;
                let e = ((i.end / self.frames_per_step).round() as usize).min(self.valid_steps);
                (e > s).then_some((s, e))
            })
            .collect()
    }
}

/// Clip window length and start stride, in feature steps.
pub fn clip_grid(data: &DataConfig, frames_per_step: f64, mode: Mode) -> (usize, usize) {
    let clip = ((data.clip_length as f64 / frames_per_step).round() as usize).max(1);
    let overlap = match mode {
        Mode::Train => data.train_overlap,
        Mode::Test => data.test_overlap,
    };
    let stride = (((data.clip_length - overlap) as f64 / frames_per_step).floor() as usize).max(1);
    (clip, stride.min(clip))
}

/// Start steps of the clips covering `len` steps.
pub fn clip_starts(len: usize, clip: usize, stride: usize) -> Vec<usize> {
    let mut starts = vec![0];
    let mut s = 0;
    while s + clip < len {
        s += stride;
        starts.push(s);
    }
    starts
}

/// Cuts a video into clips.
///
/// With `resample_frames` set, the whole video is linearly resampled to
/// that many frames and returned as a single clip.
pub fn split_clips(video: &VideoRecord, data: &DataConfig, mode: Mode) -> Vec<ClipSample> {
    let fps_step = video.features.frames_per_step;
    let x = &video.features.values;
    if data.resample_frames > 0 {
        let steps = ((data.resample_frames as f64 / fps_step).round() as usize).max(1);
        let scale = data.resample_frames as f64 / video.duration_frames;
        let instances = video
            .instances
            .iter()
            .map(|i| Instance {
                start: i.start * scale,
                end: i.end * scale,
                label: i.label,
            })
            .collect();
        return vec![ClipSample {
            video: video.id.clone(),
            origin_frame: 0.0,
            scale,
            frames_per_step: fps_step,
            features: resample_rows(x, steps),
            valid_steps: steps,
            instances,
        }];
    }
    let (clip, stride) = clip_grid(data, fps_step, mode);
    let len = x.rows();
    let cols = x.cols();
    clip_starts(len, clip, stride)
        .into_iter()
        .map(|start| {
            let valid = clip.min(len - start);
            let mut data = vec![0.0; clip * cols];
            data[..valid * cols].copy_from_slice(&x.data()[start * cols..(start + valid) * cols]);
            let origin = start as f64 * fps_step;
            let window = clip as f64 * fps_step;
            let instances = video
                .instances
                .iter()
                .filter_map(|i| {
                    let s = (i.start - origin).max(0.0);
                    let e = (i.end - origin).min(window);
                    (e - s >= MIN_VISIBLE).then_some(Instance {
                        start: s,
                        end: e,
                        label: i.label,
                    })
                })
                .collect();
            ClipSample {
                video: video.id.clone(),
                origin_frame: origin,
                scale: 1.0,
                frames_per_step: fps_step,
                features: Tensor::matrix(clip, cols, data).expect("clip buffer matches shape"),
                valid_steps: valid,
                instances,
            }
        })
        .collect()
}

/// Linear interpolation of rows onto `n` evenly spaced positions with the
/// end rows aligned.
pub fn resample_rows(x: &Tensor, n: usize) -> Tensor {
    let (t, c) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(n * c);
    for j in 0..n {
        let pos = if n > 1 {
            j as f64 * (t - 1) as f64 / (n - 1) as f64
        } else {
            0.0
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t - 1);
        let w = pos - lo as f64;
        for ch in 0..c {
            out.push((1.0 - w) * x.at(lo, ch) + w * x.at(hi, ch));
        }
    }
    Tensor::matrix(n, c, out).expect("resampled buffer matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::pipeline::features::FeatureSequence;

    fn video(steps: usize, instances: Vec<Instance>) -> VideoRecord {
        let values = Tensor::matrix(steps, 1, (0..steps).map(|i| i as f64).collect()).unwrap();
        VideoRecord {
            id: "v".into(),
            features: FeatureSequence::new(values, 1.0).unwrap(),
            instances,
            fps: 25.0,
            duration_frames: steps as f64,
        }
    }

    #[test]
    fn test_mode_starts() {
        let cfg = Config::thumos();
        let clips = split_clips(&video(512, vec![]), &cfg.data, Mode::Test);
        let starts: Vec<f64> = clips.iter().map(|c| c.origin_frame).collect();
        assert_eq!(starts, [0.0, 128.0, 256.0]);
        let short = split_clips(&video(100, vec![]), &cfg.data, Mode::Test);
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].steps(), 256);
        assert_eq!(short[0].valid_steps, 100);
        assert_eq!(short[0].features.at(150, 0), 0.0);
    }

    #[test]
    fn instances_are_translated_and_cropped() {
        let cfg = Config::thumos();
        let v = video(
            600,
            vec![
                Instance::new(200.0, 300.0, 1).unwrap(),
                Instance::new(255.5, 260.0, 2).unwrap(),
            ],
        );
        let clips = split_clips(&v, &cfg.data, Mode::Train);
        assert_eq!(clips[1].origin_frame, 226.0);
        // the second instance shows only half a frame in clip 0
        assert_eq!(clips[0].instances, [Instance::new(200.0, 256.0, 1).unwrap()]);
        assert_eq!(clips[1].instances[0], Instance::new(0.0, 74.0, 1).unwrap());
    }

    #[test]
    fn resampled_single_clip() {
        let mut cfg = Config::activitynet();
        cfg.data.resample_frames = 8;
        let v = video(4, vec![Instance::new(1.0, 2.0, 1).unwrap()]);
        let clips = split_clips(&v, &cfg.data, Mode::Test);
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].features.rows(), 8);
        assert_eq!(clips[0].instances[0].start, 2.0);
        assert_eq!(clips[0].to_video_frame(4.0), 2.0);
        assert_eq!(clips[0].features.at(7, 0), 3.0);
    }
}
