use crate::annotation::Instance;
use crate::interval::tiou_unchecked;
use crate::model::CoarseBounds;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseTarget {
    pub gt: usize,
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinedTarget {
    pub gt: usize,
    /// Offsets that move the coarse boundaries onto the ground truth.
    pub offsets: (f64, f64),
    pub label: usize,
    /// tIoU between the coarse proposal and its ground truth.
    pub tiou: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    pub coarse: Vec<Option<CoarseTarget>>,
    pub refined: Vec<Option<RefinedTarget>>,
    pub n_coarse: usize,
    pub n_refined: usize,
}

impl Assignment {
    /// Class targets for the coarse head (0 for background).
    pub fn coarse_labels(&self) -> Vec<usize> {
        self.coarse.iter().map(|t| t.map_or(0, |t| t.label)).collect()
    }

    pub fn refined_labels(&self) -> Vec<usize> {
        self.refined.iter().map(|t| t.map_or(0, |t| t.label)).collect()
    }
}

/// Assigns every location to the narrowest ground truth containing its
/// anchor time (ties to the lower index). A coarse positive whose proposal
/// overlaps that ground truth by more than `refine_tiou` is also a refined
/// positive.
pub fn assign(anchors: &[f64], coarse: &[CoarseBounds], gts: &[Instance], refine_tiou: f64) -> Assignment {
    let mut out = Assignment::default();
    for (&t, bounds) in anchors.iter().zip(coarse) {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.start <= t && t <= g.end)
            .min_by(|(i, a), (j, b)| a.width().total_cmp(&b.width()).then(i.cmp(j)));
        let Some((gt, g)) = best else {
            out.coarse.push(None);
            out.refined.push(None);
            continue;
        };
        out.coarse.push(Some(CoarseTarget {
            gt,
            start: g.start,
            end: g.end,
            label: g.label,
        }));
        out.n_coarse += 1;
        let overlap = tiou_unchecked(bounds.as_pair(), g.as_pair());
        if overlap > refine_tiou {
            out.refined.push(Some(RefinedTarget {
                gt,
                offsets: bounds.offsets_to(g.as_pair()),
                label: g.label,
                tiou: overlap,
            }));
            out.n_refined += 1;
        } else {
            out.refined.push(None);
        }
    }
    out
}
