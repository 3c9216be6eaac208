use serde::{Deserialize, Serialize};

use crate::error::{AfsdError, Result};

/// One ground-truth action in frames. Label 0 is reserved for background.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

impl Instance {
    pub fn new(start: f64, end: f64, label: usize) -> Result<Self> {
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(AfsdError::Argument(format!(
                "instance [{start}, {end}] is not a proper interval"
            )));
        }
        if label == 0 {
            return Err(AfsdError::Argument("instance label 0 is the background class".into()));
        }
        Ok(Instance { start, end, label })
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn as_pair(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}
