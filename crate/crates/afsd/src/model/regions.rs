use crate::error::{AfsdError, Result};

/// Coarse boundaries of one location, in clip frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseBounds {
    pub start: f64,
    pub end: f64,
}

impl CoarseBounds {
    /// Boundaries from an anchor time and non-negative distances, widened
    /// symmetrically to at least `floor` frames.
    pub fn from_distances(anchor: f64, d_start: f64, d_end: f64, floor: f64) -> Self {
        let (mut start, mut end) = (anchor - d_start, anchor + d_end);
        let width = end - start;
        if width < floor {
            let pad = 0.5 * (floor - width);
            start -= pad;
            end += pad;
        }
        CoarseBounds { start, end }
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn as_pair(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    /// Applies predicted offsets: each boundary moves by half the width
    /// times its offset.
    pub fn refine(&self, d_start: f64, d_end: f64) -> (f64, f64) {
        let w = self.width();
        (self.start + 0.5 * w * d_start, self.end + 0.5 * w * d_end)
    }

    /// Offsets that [`CoarseBounds::refine`] maps onto `target`.
    pub fn offsets_to(&self, target: (f64, f64)) -> (f64, f64) {
        let w = self.width();
        (2.0 * (target.0 - self.start) / w, 2.0 * (target.1 - self.end) / w)
    }
}

/// Start and end pooling regions of a proposal, in frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryRegions {
    pub start: (f64, f64),
    pub end: (f64, f64),
}

/// Regions reaching `w / delta_a` outside and `w / delta_b` inside each
/// boundary, where `w` is the proposal width.
pub fn boundary_regions(start: f64, end: f64, delta_a: f64, delta_b: f64) -> Result<BoundaryRegions> {
    if !(delta_a > 0.0 && delta_b > 0.0) {
        return Err(AfsdError::Config(format!(
            "region deltas must be positive, got {delta_a} and {delta_b}"
        )));
    }
    let w = end - start;
    Ok(BoundaryRegions {
        start: (start - w / delta_a, start + w / delta_b),
        end: (end - w / delta_b, end + w / delta_a),
    })
}
