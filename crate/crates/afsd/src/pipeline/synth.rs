//! Seeded synthetic datasets.
//!
//! Each video is unit Gaussian noise with actions planted on the feature
//! grid. Every action step adds `snr` times a class pattern; the first and
//! last `edge_steps` steps of an action also add a start or end signature
//! shared by all classes, so boundaries are locally visible. Patterns are
//! random sign vectors drawn once per dataset and stream. With `snr = 0`
//! the annotations are kept but the features carry no information.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tensorcore::Tensor;

use super::dataset::{feature_path, AnnotationDoc, LabeledInstance, VideoMeta, VideoRecord, ANNOTATION_FILE};
use super::features::{save_features, FeatureSequence, Stream};
use crate::annotation::Instance;
use crate::config::SynthConfig;
use crate::error::{AfsdError, Result};

const PLACEMENT_TRIES: usize = 200;

pub struct SynthDataset {
    pub doc: AnnotationDoc,
    /// Features keyed by stream and video id.
    pub features: BTreeMap<(Stream, String), Tensor>,
    /// Feature steps per second.
    pub feature_fps: f32,
}

struct Patterns {
    classes: Vec<Vec<f64>>,
    onset: Vec<f64>,
    offset: Vec<f64>,
}

fn signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

impl Patterns {
    fn draw(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Self {
        Patterns {
            classes: (0..classes).map(|_| signs(rng, dim)).collect(),
            onset: signs(rng, dim),
            offset: signs(rng, dim),
        }
    }
}

pub fn label_names(classes: usize) -> Vec<String> {
    (1..=classes).map(|k| format!("class{k}")).collect()
}

/// Planted actions of one video as `(start_step, end_step, class)`.
fn place_actions(rng: &mut ChaCha8Rng, cfg: &SynthConfig, steps: usize) -> Vec<(usize, usize, usize)> {
    let fps = cfg.frames_per_step;
    let min_len = ((cfg.min_action as f64 / fps).ceil() as usize).max(1);
    let max_len = ((cfg.max_action as f64 / fps).floor() as usize).max(min_len);
    let gap = cfg.edge_steps + 1;
    let count = rng.random_range(cfg.min_actions..=cfg.max_actions);
    let mut placed: Vec<(usize, usize, usize)> = Vec::new();
    for _ in 0..count {
        let len = rng.random_range(min_len..=max_len);
        let class = rng.random_range(1..=cfg.classes);
        if len >= steps {
            continue;
        }
        for _ in 0..PLACEMENT_TRIES {
            let s = rng.random_range(0..=steps - len);
            let e = s + len;
            if placed.iter().all(|&(ps, pe, _)| e + gap <= ps || pe + gap <= s) {
                placed.push((s, e, class));
                break;
            }
        }
    }
    placed.sort();
    placed
}

fn render(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    patterns: &Patterns,
    steps: usize,
    actions: &[(usize, usize, usize)],
) -> Tensor {
    let d = cfg.feature_dim;
    let mut data: Vec<f64> = (0..steps * d).map(|_| StandardNormal.sample(rng)).collect();
    for &(s, e, class) in actions {
        for j in s..e {
            let row = &mut data[j * d..(j + 1) * d];
            let mut add = |p: &[f64]| row.iter_mut().zip(p).for_each(|(x, v)| *x += cfg.snr * v);
            add(&patterns.classes[class - 1]);
            if j < s + cfg.edge_steps {
                add(&patterns.onset);
            }
            if j + cfg.edge_steps >= e {
                add(&patterns.offset);
            }
        }
    }
    // Stored as f32 on disk; keep the in-memory copy identical.
    data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    Tensor::matrix(steps, d, data).expect("rendered buffer matches shape")
}

/// Generates `train_videos + test_videos` videos from `seed`.
pub fn synth_dataset(seed: u64, cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.classes == 0 || cfg.feature_dim == 0 || !(cfg.frames_per_step > 0.0) {
        return Err(AfsdError::Config(format!("degenerate synth config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: BTreeMap<Stream, Patterns> = Stream::ALL
        .iter()
        .map(|&s| (s, Patterns::draw(&mut rng, cfg.classes, cfg.feature_dim)))
        .collect();
    let labels = label_names(cfg.classes);
    let mut videos = BTreeMap::new();
    let mut features = BTreeMap::new();
    for v in 0..cfg.train_videos + cfg.test_videos {
        let id = format!("video_{v:03}");
        let frames = rng.random_range(cfg.min_frames..=cfg.max_frames);
        let steps = ((frames as f64 / cfg.frames_per_step).floor() as usize).max(1);
        let actions = place_actions(&mut rng, cfg, steps);
        for (&stream, p) in &patterns {
            let x = render(&mut rng, cfg, p, steps, &actions);
            features.insert((stream, id.clone()), x);
        }
        let instances = actions
            .iter()
            .map(|&(s, e, c)| LabeledInstance {
                start: s as f64 * cfg.frames_per_step,
                end: e as f64 * cfg.frames_per_step,
                label: labels[c - 1].clone(),
            })
            .collect();
        let subset = if v < cfg.train_videos { "train" } else { "test" };
        videos.insert(
            id,
            VideoMeta {
                duration_frames: steps as f64 * cfg.frames_per_step,
                fps: cfg.fps,
                subset: subset.to_string(),
                instances,
            },
        );
    }
    Ok(SynthDataset {
        doc: AnnotationDoc { labels, videos },
        features,
        feature_fps: (cfg.fps / cfg.frames_per_step) as f32,
    })
}

impl SynthDataset {
    /// In-memory videos of one subset and stream.
    pub fn videos(&self, subset: &str, stream: Stream) -> Result<Vec<VideoRecord>> {
        let mut out = Vec::new();
        for (id, meta) in &self.doc.videos {
            if meta.subset != subset {
                continue;
            }
            let values = self.features[&(stream, id.clone())].clone();
            out.push(VideoRecord {
                id: id.clone(),
                features: FeatureSequence::new(values, meta.fps / self.feature_fps as f64)?,
                instances: self.doc.instances(id)?,
                fps: meta.fps,
                duration_frames: meta.duration_frames,
            });
        }
        Ok(out)
    }

    pub fn ground_truth(&self, subset: &str) -> Result<BTreeMap<String, Vec<Instance>>> {
        self.doc.ground_truth(Some(subset))
    }

    /// Writes `annotations.json` and every feature file under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join(ANNOTATION_FILE), self.doc.to_json())?;
        for ((stream, id), x) in &self.features {
            save_features(&feature_path(root, *stream, id), self.feature_fps, x)?;
        }
        Ok(())
    }
}
