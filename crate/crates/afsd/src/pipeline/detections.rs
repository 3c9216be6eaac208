//! Detections and the detections file.
//!
//! The file holds one JSON object per line:
//! `{"video": "...", "start_sec": 1.2, "end_sec": 3.4, "label": "jump", "score": 0.87}`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::AnnotationDoc;
use crate::error::{AfsdError, Result};

/// A scored segment in video frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub video: String,
    pub start: f64,
    pub end: f64,
    /// Class index, 1-based.
    pub label: usize,
    pub score: f64,
}

impl Detection {
    pub fn as_pair(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    video: String,
    start_sec: f64,
    end_sec: f64,
    label: String,
    score: f64,
}

/// Frame rate of `video`; videos missing from the document use 1 so their
/// detections still load (they can only be false positives).
fn fps_of(doc: &AnnotationDoc, video: &str) -> f64 {
    doc.videos.get(video).map_or(1.0, |v| v.fps)
}

pub fn write_detections<W: Write>(mut w: W, dets: &[Detection], doc: &AnnotationDoc) -> Result<()> {
    for d in dets {
        let fps = fps_of(doc, &d.video);
        let label = doc
            .label_name(d.label)
            .ok_or_else(|| AfsdError::Argument(format!("detection with unknown class {}", d.label)))?;
        let rec = Record {
            video: d.video.clone(),
            start_sec: d.start / fps,
            end_sec: d.end / fps,
            label: label.to_string(),
            score: d.score,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_detections<R: BufRead>(r: R, doc: &AnnotationDoc) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| AfsdError::format("detections", format!("line {}: {e}", n + 1)))?;
        if !(rec.start_sec < rec.end_sec && rec.score.is_finite()) {
            return Err(AfsdError::format(
                "detections",
                format!("line {}: invalid segment or score", n + 1),
            ));
        }
        let fps = fps_of(doc, &rec.video);
        out.push(Detection {
            label: doc.class_of(&rec.label)?,
            start: rec.start_sec * fps,
            end: rec.end_sec * fps,
            video: rec.video,
            score: rec.score,
        });
    }
    Ok(out)
}

pub fn save_detections(path: &Path, dets: &[Detection], doc: &AnnotationDoc) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_detections(&mut w, dets, doc)?;
    w.flush()?;
    Ok(())
}

pub fn load_detections(path: &Path, doc: &AnnotationDoc) -> Result<Vec<Detection>> {
    read_detections(std::io::BufReader::new(std::fs::File::open(path)?), doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_in_seconds() {
        let doc = AnnotationDoc::parse(
            r#"{"labels": ["a", "b"], "videos": {"v": {"duration_frames": 100, "fps": 25,
                "subset": "test", "instances": []}}}"#,
        )
        .unwrap();
        let dets = vec![Detection {
            video: "v".into(),
            start: 25.0,
            end: 50.0,
            label: 2,
            score: 0.5,
        }];
        let mut buf = Vec::new();
        write_detections(&mut buf, &dets, &doc).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"video\":\"v\",\"start_sec\":1.0,\"end_sec\":2.0,\"label\":\"b\",\"score\":0.5}\n"
        );
        assert_eq!(read_detections(&buf[..], &doc).unwrap(), dets);
        assert!(read_detections(&b"{\"video\":\"v\"}"[..], &doc).is_err());
    }
}
