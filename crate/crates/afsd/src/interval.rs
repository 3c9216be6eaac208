//! Temporal intervals.

use crate::error::{AfsdError, Result};

/// Temporal IoU of two `(start, end)` intervals.
///
/// Disjoint intervals give 0, and so do two points (empty union).
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if a.0 > a.1 || b.0 > b.1 {
        return Err(AfsdError::Argument(format!("inverted interval in tiou({a:?}, {b:?})")));
    }
    Ok(tiou_unchecked(a, b))
}

/// [`tiou`] without the ordering check; inverted inputs give meaningless
/// but finite values.
pub fn tiou_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        assert_eq!(tiou((2.0, 9.0), (2.0, 9.0)).unwrap(), 1.0);
        assert!((tiou((0.0, 10.0), (5.0, 15.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert_eq!(tiou((4.0, 4.0), (4.0, 4.0)).unwrap(), 0.0);
        assert!(tiou((3.0, 1.0), (0.0, 1.0)).is_err());
    }
}
