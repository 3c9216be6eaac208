//! Boundary consistency terms.
//!
//! The activation term asks the channel mean of the frame-level sensitive
//! features to light up near annotated starts and ends. The contrastive
//! term splits a long action, inserts a background segment between the
//! halves and asks the features at the cut to stay closer to each other
//! than to the inserted background.

use rand::Rng;
use tensorcore::{PoolKind, Region, Tape, Tensor, Var};

use crate::annotation::Instance;
use crate::config::ActNorm;
use crate::error::{AfsdError, Result};
use crate::model::{boundary_regions, FrameFeatures};

const BCE_EPS: f64 = 1e-6;

/// Start and end indicators over `len` frame-level steps of `step` frames:
/// position `i` is 1 when it lies within `radius` steps of a boundary.
pub fn boundary_indicators(len: usize, step: f64, gts: &[Instance], radius: usize) -> (Vec<f64>, Vec<f64>) {
    let near = |i: usize, t: f64| (i as f64 - t / step).abs() <= radius as f64;
    let mark = |pick: fn(&Instance) -> f64| -> Vec<f64> {
        (0..len)
            .map(|i| if gts.iter().any(|g| near(i, pick(g))) { 1.0 } else { 0.0 })
            .collect()
    };
    (mark(|g| g.start), mark(|g| g.end))
}

fn confidence(tape: &mut Tape, x: Var, norm: ActNorm) -> Result<Var> {
    let y = match norm {
        ActNorm::Tanh | ActNorm::TanhAffine => tape.tanh(x),
        ActNorm::Clip01 => tape.clamp(x, 0.0, 1.0),
        ActNorm::Minmax => tape.minmax_normalize(x)?,
    };
    let g = tape.channel_mean(y)?;
    Ok(match norm {
        ActNorm::TanhAffine => tape.affine(g, 0.5, 0.5),
        _ => g,
    })
}

/// Binary cross-entropy between the normalised channel means of the
/// sensitive features and the boundary indicators, summed over start and
/// end.
pub fn activation_guided_loss(
    tape: &mut Tape,
    frame: &FrameFeatures,
    gts: &[Instance],
    radius: usize,
    norm: ActNorm,
) -> Result<Var> {
    let len = tape.shape(frame.start)[0];
    let (gs, ge) = boundary_indicators(len, frame.step, gts, radius);
    let cs = confidence(tape, frame.start, norm)?;
    let ce = confidence(tape, frame.end, norm)?;
    let ls = tape.bce(cs, &gs, BCE_EPS)?;
    let le = tape.bce(ce, &ge, BCE_EPS)?;
    Ok(tape.weighted_sum(&[(ls, 1.0), (le, 1.0)])?)
}

/// What makes a clip usable for the contrastive term.
#[derive(Clone, Debug, PartialEq)]
pub struct Eligibility {
    /// Shortest action, in steps.
    pub w_min: usize,
    /// Indices of actions longer than `2 * w_min`.
    pub actions: Vec<usize>,
    /// Admissible background start positions (a window of `w_min` steps
    /// starting there touches no action).
    pub background_starts: Vec<usize>,
}

/// Checks the contrastive precondition on action spans given in steps
/// (`[start, end)`), over the first `len` steps.
pub fn bcl_eligibility(spans: &[(usize, usize)], len: usize) -> Option<Eligibility> {
    let w_min = spans.iter().map(|&(s, e)| e.saturating_sub(s)).min()?;
    if w_min == 0 {
        return None;
    }
    let actions: Vec<usize> = (0..spans.len())
        .filter(|&i| spans[i].1 - spans[i].0 > 2 * w_min)
        .collect();
    let mut covered = vec![false; len];
    for &(s, e) in spans {
        covered[s.min(len)..e.min(len)].iter_mut().for_each(|c| *c = true);
    }
    let background_starts: Vec<usize> = (0..len.saturating_sub(w_min - 1))
        .filter(|&b| covered[b..b + w_min].iter().all(|c| !c))
        .collect();
    if actions.is_empty() || background_starts.is_empty() {
        return None;
    }
    Some(Eligibility {
        w_min,
        actions,
        background_starts,
    })
}

/// A clip with one action cut in two and a background segment inserted at
/// the cut. Spans are `[start, end)` in steps of the new sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Rearranged {
    pub features: Tensor,
    pub a1: (usize, usize),
    pub bg: (usize, usize),
    pub a2: (usize, usize),
    pub w_min: usize,
}

/// Builds the rearranged clip, or `None` when the clip is ineligible.
///
/// The action to split, the cut and the background window are drawn
/// uniformly; each fragment keeps at least `w_min` steps.
pub fn rearrange_clip<R: Rng>(
    features: &Tensor,
    valid_len: usize,
    spans: &[(usize, usize)],
    rng: &mut R,
) -> Option<Rearranged> {
    let el = bcl_eligibility(spans, valid_len.min(features.rows()))?;
    let w = el.w_min;
    let (s, e) = spans[el.actions[rng.random_range(0..el.actions.len())]];
    let cut = rng.random_range(s + w..=e - w);
    let b = el.background_starts[rng.random_range(0..el.background_starts.len())];
    let c = features.cols();
    let mut data = Vec::with_capacity((features.rows() + w) * c);
    for r in (0..cut).chain(b..b + w).chain(cut..features.rows()) {
        data.extend_from_slice(features.row(r));
    }
    Some(Rearranged {
        features: Tensor::matrix(features.rows() + w, c, data).expect("row count matches"),
        a1: (s, cut),
        bg: (cut, cut + w),
        a2: (cut + w, e + w),
        w_min: w,
    })
}

/// Triplet term over boundary-pooled frame features of a rearranged clip.
///
/// The anchor is the end feature of the first fragment, the positive the
/// start feature of the second, and the negatives the start and end
/// features of the inserted background. The result averages the two
/// negatives (and, with `symmetric`, the two anchors).
pub fn boundary_contrastive_loss(
    tape: &mut Tape,
    frame: &FrameFeatures,
    r: &Rearranged,
    delta_a: f64,
    delta_b: f64,
    margin: f64,
    symmetric: bool,
) -> Result<Var> {
    let step = frame.step;
    let frames = |span: (usize, usize)| (span.0 as f64 * step, span.1 as f64 * step);
    let pool = |tape: &mut Tape, x: Var, region: (f64, f64)| -> Result<Var> {
        let reg = Region::new(region.0 / step, region.1 / step);
        Ok(tape.region_pool(x, &[reg], PoolKind::Max)?)
    };
    let span_regions = |span| {
        let (s, e) = frames(span);
        boundary_regions(s, e, delta_a, delta_b)
    };
    let (ra1, ra2, rbg) = (span_regions(r.a1)?, span_regions(r.a2)?, span_regions(r.bg)?);
    let a1_end = pool(tape, frame.end, ra1.end)?;
    let a2_start = pool(tape, frame.start, ra2.start)?;
    let bg_start = pool(tape, frame.start, rbg.start)?;
    let bg_end = pool(tape, frame.end, rbg.end)?;
    let mut terms = Vec::new();
    for n in [bg_start, bg_end] {
        terms.push(tape.triplet(a1_end, a2_start, n, margin)?);
        if symmetric {
            terms.push(tape.triplet(a2_start, a1_end, n, margin)?);
        }
    }
    let w = 1.0 / terms.len() as f64;
    let weighted: Vec<(Var, f64)> = terms.into_iter().map(|t| (t, w)).collect();
    tape.weighted_sum(&weighted).map_err(AfsdError::from)
}
