//! Boundary pooling over temporal regions.
//!
//! A region `[lo, hi]` is given in fractional index units of the pooled
//! sequence. Max and mean pooling read every integer index in
//! `[floor(lo), ceil(hi)]` clamped to `[0, T - 1]`; the stack and conv
//! variants read three samples at `lo`, the midpoint and `hi`, each rounded to
//! the nearest index.

use crate::error::{Result, TensorError};
use crate::ops::expect_matrix;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub lo: f64,
    pub hi: f64,
}

impl Region {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// Inclusive integer index range covered by the region on a sequence of
    /// length `len`.
    pub fn index_range(&self, len: usize) -> (usize, usize) {
        let last = (len - 1) as f64;
        let lo = self.lo.floor().clamp(0.0, last) as usize;
        let hi = self.hi.ceil().clamp(0.0, last) as usize;
        (lo, hi)
    }

    /// Nearest indices of the three uniformly spaced samples.
    pub fn sample_indices(&self, len: usize) -> [usize; 3] {
        let last = (len - 1) as f64;
        let mid = 0.5 * (self.lo + self.hi);
        [self.lo, mid, self.hi].map(|p| p.round().clamp(0.0, last) as usize)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(TensorError::Shape(format!(
                "invalid pooling region [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Mean,
    Stack,
    Conv,
}

impl PoolKind {
    /// Output width for a `channels`-wide input.
    pub fn output_width(self, channels: usize) -> usize {
        match self {
            PoolKind::Stack => 3 * channels,
            _ => channels,
        }
    }
}

enum Routing {
    /// Per region and channel, the source row.
    Argmax(Vec<usize>),
    /// Per region, the inclusive row range.
    Mean(Vec<(usize, usize)>),
    /// Per region, the three sampled rows.
    Samples(Vec<[usize; 3]>),
}

struct PoolRule {
    routing: Routing,
}

impl Backward for PoolRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let cols = x.cols();
        let mut gx = Tensor::zeros(x.shape());
        let (g, gd) = (gx.data_mut(), grad.data());
        match &self.routing {
            Routing::Argmax(rows) => {
                for (i, &row) in rows.iter().enumerate() {
                    let c = i % cols;
                    g[row * cols + c] += gd[i];
                }
            }
            Routing::Mean(ranges) => {
                for (r, &(lo, hi)) in ranges.iter().enumerate() {
                    let inv = 1.0 / (hi - lo + 1) as f64;
                    for j in lo..=hi {
                        for c in 0..cols {
                            g[j * cols + c] += gd[r * cols + c] * inv;
                        }
                    }
                }
            }
            Routing::Samples(samples) => {
                for (r, idx) in samples.iter().enumerate() {
                    for (s, &j) in idx.iter().enumerate() {
                        for c in 0..cols {
                            g[j * cols + c] += gd[r * 3 * cols + s * cols + c];
                        }
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

struct ConvPoolRule {
    samples: Vec<[usize; 3]>,
}

impl Backward for ConvPoolRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let cols = x.cols();
        let mut gx = Tensor::zeros(x.shape());
        let mut gw = Tensor::zeros(w.shape());
        for (r, idx) in self.samples.iter().enumerate() {
            for (s, &j) in idx.iter().enumerate() {
                for c in 0..cols {
                    let gv = grad.data()[r * cols + c];
                    gx.data_mut()[j * cols + c] += gv * w.data()[s * cols + c];
                    gw.data_mut()[s * cols + c] += gv * x.data()[j * cols + c];
                }
            }
        }
        vec![Some(gx), Some(gw)]
    }
}

impl Tape {
    /// Pools one feature row per region from a `T x C` sequence.
    ///
    /// Max pooling keeps, per channel, the first maximal row; its backward
    /// pass routes the whole gradient to that row. Use
    /// [`Tape::region_pool_conv`] for the learned three-tap variant.
    pub fn region_pool(&mut self, x: Var, regions: &[Region], kind: PoolKind) -> Result<Var> {
        let (len, cols) = expect_matrix(self.value(x), "region_pool")?;
        if regions.is_empty() {
            return Err(TensorError::Shape("region_pool: no regions".into()));
        }
        for r in regions {
            r.validate()?;
        }
        let xv = self.value(x);
        let (value, routing) = match kind {
            PoolKind::Max => {
                let mut out = Vec::with_capacity(regions.len() * cols);
                let mut rows = Vec::with_capacity(regions.len() * cols);
                for r in regions {
                    let (lo, hi) = r.index_range(len);
                    for c in 0..cols {
                        let mut best = lo;
                        for j in lo + 1..=hi {
                            if xv.at(j, c) > xv.at(best, c) {
                                best = j;
                            }
                        }
                        out.push(xv.at(best, c));
                        rows.push(best);
                    }
                }
                (Tensor::matrix(regions.len(), cols, out)?, Routing::Argmax(rows))
            }
            PoolKind::Mean => {
                let mut out = Vec::with_capacity(regions.len() * cols);
                let mut ranges = Vec::with_capacity(regions.len());
                for r in regions {
                    let (lo, hi) = r.index_range(len);
                    let inv = 1.0 / (hi - lo + 1) as f64;
                    for c in 0..cols {
                        out.push((lo..=hi).map(|j| xv.at(j, c)).sum::<f64>() * inv);
                    }
                    ranges.push((lo, hi));
                }
                (Tensor::matrix(regions.len(), cols, out)?, Routing::Mean(ranges))
            }
            PoolKind::Stack => {
                let mut out = Vec::with_capacity(regions.len() * 3 * cols);
                let mut samples = Vec::with_capacity(regions.len());
                for r in regions {
                    let idx = r.sample_indices(len);
                    for &j in &idx {
                        out.extend_from_slice(xv.row(j));
                    }
                    samples.push(idx);
                }
                (Tensor::matrix(regions.len(), 3 * cols, out)?, Routing::Samples(samples))
            }
            PoolKind::Conv => {
                return Err(TensorError::Config(
                    "region_pool: the conv variant needs weights, use region_pool_conv".into(),
                ))
            }
        };
        match &routing {
            Routing::Argmax(rows) => rows.iter().for_each(|&j| self.note_index(j)),
            Routing::Mean(ranges) => ranges.iter().for_each(|&(a, b)| {
                self.note_index(a);
                self.note_index(b);
            }),
            Routing::Samples(samples) => samples.iter().flatten().for_each(|&j| self.note_index(j)),
        }
        Ok(self.record(value, vec![x], Box::new(PoolRule { routing })))
    }

    /// Learned aggregation of the three region samples:
    /// `out[r, c] = sum_s w[s, c] * x[sample_s(r), c]` with `w` of shape `3 x C`.
    pub fn region_pool_conv(&mut self, x: Var, regions: &[Region], w: Var) -> Result<Var> {
        let (len, cols) = expect_matrix(self.value(x), "region_pool_conv")?;
        if self.value(w).shape() != [3, cols] {
            return Err(TensorError::Shape(format!(
                "region_pool_conv: weight shape {:?}, expected [3, {cols}]",
                self.value(w).shape()
            )));
        }
        if regions.is_empty() {
            return Err(TensorError::Shape("region_pool_conv: no regions".into()));
        }
        for r in regions {
            r.validate()?;
        }
        let (xv, wv) = (self.value(x), self.value(w));
        let mut out = Vec::with_capacity(regions.len() * cols);
        let mut samples = Vec::with_capacity(regions.len());
        for r in regions {
            let idx = r.sample_indices(len);
            for c in 0..cols {
                out.push(idx.iter().enumerate().map(|(s, &j)| wv.at(s, c) * xv.at(j, c)).sum());
            }
            samples.push(idx);
        }
        let value = Tensor::matrix(regions.len(), cols, out)?;
        for &j in samples.iter().flatten() {
            self.note_index(j);
        }
        Ok(self.record(value, vec![x, w], Box::new(ConvPoolRule { samples })))
    }

    /// Per-channel maximum of `x` over a single region, as a length-`C` vector.
    pub fn region_max_pool(&mut self, x: Var, region: Region) -> Result<Var> {
        let pooled = self.region_pool(x, &[region], PoolKind::Max)?;
        let cols = self.value(pooled).cols();
        self.reshape(pooled, vec![cols])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Tensor {
        Tensor::matrix(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn max_over_region() {
        let mut tape = Tape::new();
        let x = tape.leaf(column(&[0.1, 0.9, 0.4]));
        let y = tape.region_max_pool(x, Region::new(0.0, 2.0)).unwrap();
        assert_eq!(tape.value(y).data(), &[0.9]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_point_region_is_a_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0], vec![5.0, 6.0]]).unwrap());
        let y = tape.region_max_pool(x, Region::new(1.0, 1.0)).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -4.0]);
    }

    #[test]
    fn fractional_bounds_expand_outward_and_clamp() {
        assert_eq!(Region::new(0.4, 1.2).index_range(5), (0, 2));
        assert_eq!(Region::new(-3.0, 0.5).index_range(5), (0, 1));
        assert_eq!(Region::new(6.5, 9.0).index_range(5), (4, 4));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(column(&[0.5, 0.7, 0.7, 0.1]));
        let y = tape.region_pool(x, &[Region::new(0.0, 3.0)], PoolKind::Max).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_variant() {
        let mut tape = Tape::new();
        let x = tape.leaf(column(&[0.1, 0.9, 0.4]));
        let y = tape.region_pool(x, &[Region::new(0.0, 2.0)], PoolKind::Mean).unwrap();
        assert!((tape.value(y).item() - 1.4 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stack_of_degenerate_region_repeats_the_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let y = tape.region_pool(x, &[Region::new(1.0, 1.0)], PoolKind::Stack).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_selector_kernel_picks_midpoint() {
        let mut tape = Tape::new();
        let x = tape.leaf(column(&[0.1, 0.9, 0.4, 0.3, 0.8]));
        let w = tape.leaf(Tensor::matrix(3, 1, vec![0.0, 1.0, 0.0]).unwrap());
        let y = tape.region_pool_conv(x, &[Region::new(0.0, 4.0)], w).unwrap();
        assert_eq!(tape.value(y).item(), 0.4);
    }

    #[test]
    fn inverted_region_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(column(&[0.1, 0.9]));
        assert!(tape.region_pool(x, &[Region::new(1.0, 0.0)], PoolKind::Max).is_err());
        assert!(tape.region_pool(x, &[Region::new(0.0, 1.0)], PoolKind::Conv).is_err());
    }
}
