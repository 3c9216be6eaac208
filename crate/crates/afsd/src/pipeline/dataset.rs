//! Annotation documents and dataset directories.
//!
//! A dataset directory contains `annotations.json` and one feature file
//! per video and stream at `features/<stream>/<video>.afsd`. The
//! annotation document looks like
//!
//! ```json
//! {
//!   "labels": ["jump", "throw"],
//!   "videos": {
//!     "video_000": {
//!       "duration_frames": 480.0,
//!       "fps": 30.0,
//!       "subset": "train",
//!       "instances": [{"start": 40.0, "end": 90.0, "label": "jump"}]
//!     }
//!   }
//! }
//! ```
//!
//! Instance times are in frames. Class `i` of `labels` is class index
//! `i + 1`; index 0 is background.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{load_features, FeatureSequence, Stream};
use crate::annotation::Instance;
use crate::error::{AfsdError, Result};

pub const ANNOTATION_FILE: &str = "annotations.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDoc {
    pub labels: Vec<String>,
    pub videos: BTreeMap<String, VideoMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMeta {
    pub duration_frames: f64,
    pub fps: f64,
    pub subset: String,
    pub instances: Vec<LabeledInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledInstance {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl AnnotationDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: AnnotationDoc = serde_json::from_str(text)?;
        doc.check()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        AnnotationDoc::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation documents always serialize") + "\n"
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Class index (1-based) of a label name.
    pub fn class_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| i + 1)
            .ok_or_else(|| AfsdError::format("annotations", format!("unknown label `{label}`")))
    }

    pub fn label_name(&self, class: usize) -> Option<&str> {
        class
            .checked_sub(1)
            .and_then(|i| self.labels.get(i))
            .map(String::as_str)
    }

    fn check(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.labels {
            if !seen.insert(l) {
                return Err(AfsdError::format("annotations", format!("duplicate label `{l}`")));
            }
        }
        for (id, v) in &self.videos {
            if !(v.duration_frames > 0.0 && v.fps > 0.0) {
                return Err(AfsdError::format(
                    "annotations",
                    format!("{id}: duration and fps must be positive"),
                ));
            }
            for inst in &v.instances {
                self.class_of(&inst.label)?;
                if !(inst.start < inst.end && inst.start >= 0.0 && inst.end <= v.duration_frames) {
                    return Err(AfsdError::format(
                        "annotations",
                        format!(
                            "{id}: instance [{}, {}] outside [0, {}]",
                            inst.start, inst.end, v.duration_frames
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Ground truth of one video with class indices.
    pub fn instances(&self, video: &str) -> Result<Vec<Instance>> {
        let v = self
            .videos
            .get(video)
            .ok_or_else(|| AfsdError::Argument(format!("no video `{video}` in annotations")))?;
        v.instances
            .iter()
            .map(|i| Instance::new(i.start, i.end, self.class_of(&i.label)?))
            .collect()
    }

    /// Ground truth of every video in `subset` (all videos when `None`).
    pub fn ground_truth(&self, subset: Option<&str>) -> Result<BTreeMap<String, Vec<Instance>>> {
        self.videos
            .iter()
            .filter(|(_, v)| subset.is_none_or(|s| v.subset == s))
            .map(|(id, _)| Ok((id.clone(), self.instances(id)?)))
            .collect()
    }
}

/// A video with its features and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureSequence,
    pub instances: Vec<Instance>,
    pub fps: f64,
    pub duration_frames: f64,
}

pub fn feature_path(root: &Path, stream: Stream, video: &str) -> PathBuf {
    root.join("features").join(stream.name()).join(format!("{video}.afsd"))
}

/// Loads every video of `subset` for one stream.
pub fn load_videos(root: &Path, doc: &AnnotationDoc, subset: Option<&str>, stream: Stream) -> Result<Vec<VideoRecord>> {
    let mut out = Vec::new();
    for (id, meta) in &doc.videos {
        if subset.is_some_and(|s| meta.subset != s) {
            continue;
        }
        let file = load_features(&feature_path(root, stream, id))?;
        let frames_per_step = meta.fps / file.fps as f64;
        out.push(VideoRecord {
            id: id.clone(),
            features: FeatureSequence::new(file.values, frames_per_step)?,
            instances: doc.instances(id)?,
            fps: meta.fps,
            duration_frames: meta.duration_frames,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> AnnotationDoc {
        AnnotationDoc::parse(
            r#"{"labels": ["a", "b"], "videos": {"v": {"duration_frames": 100, "fps": 25,
                "subset": "test", "instances": [{"start": 10, "end": 20, "label": "b"}]}}}"#,
        )
        .unwrap()
    }

    #[test]
    fn labels_map_to_one_based_classes() {
        let d = doc();
        assert_eq!(d.instances("v").unwrap(), [Instance::new(10.0, 20.0, 2).unwrap()]);
        assert_eq!(d.label_name(1), Some("a"));
        assert_eq!(d.label_name(0), None);
        assert_eq!(d.ground_truth(Some("train")).unwrap().len(), 0);
        assert_eq!(AnnotationDoc::parse(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn rejects_bad_documents() {
        let bad_label = r#"{"labels": ["a"], "videos": {"v": {"duration_frames": 100, "fps": 25,
            "subset": "x", "instances": [{"start": 1, "end": 2, "label": "z"}]}}}"#;
        assert!(AnnotationDoc::parse(bad_label).is_err());
        let outside = r#"{"labels": ["a"], "videos": {"v": {"duration_frames": 10, "fps": 25,
            "subset": "x", "instances": [{"start": 1, "end": 20, "label": "a"}]}}}"#;
        assert!(AnnotationDoc::parse(outside).is_err());
        let extra = r#"{"labels": [], "videos": {}, "other": 1}"#;
        assert!(AnnotationDoc::parse(extra).is_err());
    }
}
