//! Clip windows cover every feature step and map ground truth
//! consistently.

use afsd::annotation::Instance;
use afsd::config::Config;
use afsd::pipeline::clips::clip_starts;
use afsd::pipeline::{split_clips, FeatureSequence, Mode, VideoRecord};
use proptest::prelude::*;
use tensorcore::Tensor;

fn video(steps: usize, spans: &[(f64, f64)]) -> VideoRecord {
    let values = Tensor::matrix(steps, 2, (0..steps * 2).map(|i| i as f64).collect()).unwrap();
    VideoRecord {
        id: "v".into(),
        features: FeatureSequence::new(values, 4.0).unwrap(),
        instances: spans.iter().map(|&(s, e)| Instance::new(s, e, 1).unwrap()).collect(),
        fps: 30.0,
        duration_frames: steps as f64 * 4.0,
    }
}

proptest! {
    #[test]
    fn windows_cover_every_step(len in 1usize..600, clip in 1usize..80, frac in 0.0f64..1.0) {
        let stride = 1 + ((clip - 1) as f64 * frac) as usize;
        let starts = clip_starts(len, clip, stride);
        prop_assert_eq!(starts[0], 0);
        for w in starts.windows(2) {
            prop_assert_eq!(w[1] - w[0], stride);
        }
        let last = *starts.last().unwrap();
        prop_assert!(last + clip >= len);
        prop_assert!(last == 0 || last < len);
    }

    #[test]
    fn clips_reproduce_the_video_and_its_actions(
        steps in 40usize..400,
        raw in prop::collection::vec((0.0f64..1.0, 4.0f64..200.0), 0..5),
        test_mode in any::<bool>(),
    ) {
        let total = steps as f64 * 4.0;
        let spans: Vec<(f64, f64)> = raw
            .iter()
            .map(|&(p, w)| {
                let s = p * (total - 4.0);
                (s, (s + w).min(total))
            })
            .collect();
        let v = video(steps, &spans);
        let cfg = Config::thumos();
        let mode = if test_mode { Mode::Test } else { Mode::Train };
        let clips = split_clips(&v, &cfg.data, mode);
        let mut seen = vec![false; steps];
        for c in &clips {
            let first = (c.origin_frame / 4.0) as usize;
            for r in 0..c.steps() {
                if r < c.valid_steps {
                    prop_assert_eq!(c.features.row(r), v.features.values.row(first + r));
                    seen[first + r] = true;
                } else {
                    prop_assert!(c.features.row(r).iter().all(|&x| x == 0.0));
                }
            }
            for i in &c.instances {
                let (s, e) = (c.to_video_frame(i.start), c.to_video_frame(i.end));
                let inside = v.instances.iter().any(|g| g.label == i.label && g.start <= s + 1e-9 && e <= g.end + 1e-9);
                prop_assert!(inside, "clip action ({}, {}) has no source", s, e);
                prop_assert!(i.start >= 0.0 && i.end <= c.steps() as f64 * 4.0);
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}
