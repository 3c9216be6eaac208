//! Feature sequences and their on-disk format.
//!
//! A feature file holds one `T x C` sequence, all little-endian:
//!
//! ```text
//! magic    4 bytes  "AFSD"
//! version  u16      1
//! T        u32      feature steps
//! C        u32      channels
//! fps      f32      feature steps per second
//! payload  T*C f32  row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tensorcore::Tensor;

use crate::error::{AfsdError, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"AFSD";
pub const FEATURE_VERSION: u16 = 1;

/// Feature stream kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Rgb,
    Flow,
}

impl Stream {
    pub const ALL: [Stream; 2] = [Stream::Rgb, Stream::Flow];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Flow => "flow",
        }
    }
}

/// A `T x C` feature matrix on a regular temporal grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub values: Tensor,
    /// Video frames per feature step.
    pub frames_per_step: f64,
    /// Frame time of step 0.
    pub origin_frame: f64,
}

impl FeatureSequence {
    pub fn new(values: Tensor, frames_per_step: f64) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(AfsdError::Argument(format!(
                "features must be T x C, got {:?}",
                values.shape()
            )));
        }
        if !(frames_per_step > 0.0) {
            return Err(AfsdError::Argument(format!(
                "frames_per_step {frames_per_step} must be positive"
            )));
        }
        Ok(FeatureSequence {
            values,
            frames_per_step,
            origin_frame: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn time_of(&self, step: usize) -> f64 {
        self.origin_frame + step as f64 * self.frames_per_step
    }
}

/// Contents of one feature file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    /// Feature steps per second.
    pub fps: f32,
    pub values: Tensor,
}

pub fn write_features<W: Write>(mut w: W, fps: f32, values: &Tensor) -> Result<()> {
    if values.shape().len() != 2 {
        return Err(AfsdError::Argument(format!(
            "features must be T x C, got {:?}",
            values.shape()
        )));
    }
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(values.rows() as u32).to_le_bytes())?;
    w.write_all(&(values.cols() as u32).to_le_bytes())?;
    w.write_all(&fps.to_le_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<FeatureFile> {
    let bad = |m: String| AfsdError::format("feature file", m);
    let mut header = [0u8; 18];
    r.read_exact(&mut header).map_err(|e| bad(format!("header: {e}")))?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let t = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    let c = u32::from_le_bytes(header[10..14].try_into().expect("4 bytes")) as usize;
    let fps = f32::from_le_bytes(header[14..18].try_into().expect("4 bytes"));
    if t == 0 || c == 0 {
        return Err(bad(format!("empty shape {t} x {c}")));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(bad(format!("fps {fps} must be positive")));
    }
    let mut payload = vec![0u8; t * c * 4];
    r.read_exact(&mut payload).map_err(|e| bad(format!("payload: {e}")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite payload value".into()));
    }
    Ok(FeatureFile {
        fps,
        values: Tensor::matrix(t, c, data)?,
    })
}

pub fn save_features(path: &Path, fps: f32, values: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write_features(&mut buf, fps, values)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureFile> {
    let bytes = std::fs::read(path)?;
    read_features(bytes.as_slice()).map_err(|e| match e {
        AfsdError::Format { what, message } => AfsdError::Format {
            what,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let values = Tensor::matrix(3, 2, vec![0.5, -1.25, 3.0, 1e-3, 0.0, 7.75]).unwrap();
        let mut a = Vec::new();
        write_features(&mut a, 7.5, &values).unwrap();
        assert_eq!(a.len(), 18 + 24);
        let f = read_features(a.as_slice()).unwrap();
        assert_eq!(f.fps, 7.5);
        assert_eq!(f.values.shape(), [3, 2]);
        let mut b = Vec::new();
        write_features(&mut b, f.fps, &f.values).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_malformed() {
        let values = Tensor::matrix(2, 2, vec![1.0; 4]).unwrap();
        let mut a = Vec::new();
        write_features(&mut a, 1.0, &values).unwrap();
        assert!(read_features(&a[..a.len() - 1]).is_err());
        let mut long = a.clone();
        long.push(0);
        assert!(read_features(long.as_slice()).is_err());
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(read_features(bad.as_slice()).is_err());
    }
}
