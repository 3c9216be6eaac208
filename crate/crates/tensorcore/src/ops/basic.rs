//! Structural and elementwise glue: sums, concatenation, row selection,
//! channel means and the normalisations used by the boundary signals.

use crate::error::{Result, TensorError};
use crate::ops::expect_matrix;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

struct AddRule;

impl Backward for AddRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone()), Some(grad.clone())]
    }
}

struct AffineRule {
    scale: f64,
}

impl Backward for AffineRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        g.data_mut().iter_mut().for_each(|v| *v *= self.scale);
        vec![Some(g)]
    }
}

struct ReshapeRule;

impl Backward for ReshapeRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(
            Tensor::new(inputs[0].shape().to_vec(), grad.data().to_vec()).expect("same size"),
        )]
    }
}

struct SumRule;

impl Backward for SumRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.item()))]
    }
}

struct WeightedSumRule {
    weights: Vec<f64>,
}

impl Backward for WeightedSumRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        self.weights
            .iter()
            .map(|w| Some(Tensor::scalar(w * grad.item())))
            .collect()
    }
}

struct ConcatColsRule {
    widths: Vec<usize>,
}

impl Backward for ConcatColsRule {
    fn backward(&self, _: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let rows = out.rows();
        let total = out.cols();
        let mut offset = 0;
        self.widths
            .iter()
            .map(|&w| {
                let mut data = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    data.extend_from_slice(&grad.data()[r * total + offset..r * total + offset + w]);
                }
                offset += w;
                Some(Tensor::matrix(rows, w, data).expect("shape checked at record time"))
            })
            .collect()
    }
}

struct ConcatRowsRule {
    heights: Vec<usize>,
}

impl Backward for ConcatRowsRule {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let cols = out.cols();
        let mut offset = 0;
        self.heights
            .iter()
            .zip(inputs)
            .map(|(&h, input)| {
                let data = grad.data()[offset * cols..(offset + h) * cols].to_vec();
                offset += h;
                Some(Tensor::new(input.shape().to_vec(), data).expect("shape checked at record time"))
            })
            .collect()
    }
}

struct SelectRowsRule {
    indices: Vec<usize>,
}

impl Backward for SelectRowsRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let cols = inputs[0].cols();
        let mut g = Tensor::zeros(inputs[0].shape());
        for (out_row, &src) in self.indices.iter().enumerate() {
            let dst = &mut g.data_mut()[src * cols..(src + 1) * cols];
            for (d, s) in dst.iter_mut().zip(&grad.data()[out_row * cols..(out_row + 1) * cols]) {
                *d += s;
            }
        }
        vec![Some(g)]
    }
}

struct ChannelMeanRule;

impl Backward for ChannelMeanRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let cols = inputs[0].cols();
        let inv = 1.0 / cols as f64;
        let mut g = Tensor::zeros(inputs[0].shape());
        for (r, chunk) in g.data_mut().chunks_mut(cols).enumerate() {
            chunk.iter_mut().for_each(|v| *v = grad.data()[r] * inv);
        }
        vec![Some(g)]
    }
}

struct ClampRule {
    lo: f64,
    hi: f64,
}

impl Backward for ClampRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        for (gv, &x) in g.data_mut().iter_mut().zip(inputs[0].data()) {
            if x <= self.lo || x >= self.hi {
                *gv = 0.0;
            }
        }
        vec![Some(g)]
    }
}

struct MinMaxRule {
    /// Per channel: (argmin, argmax, range); range 0 marks a constant channel.
    stats: Vec<(usize, usize, f64)>,
}

impl Backward for MinMaxRule {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (rows, cols) = (x.rows(), x.cols());
        let mut g = Tensor::zeros(x.shape());
        for (c, &(arg_min, arg_max, range)) in self.stats.iter().enumerate() {
            if range == 0.0 {
                continue;
            }
            // y_i = (x_i - m) / r with m = min, r = max - min.
            let mut d_min = 0.0;
            let mut d_max = 0.0;
            for t in 0..rows {
                let gy = grad.data()[t * cols + c];
                let y = out.data()[t * cols + c];
                g.data_mut()[t * cols + c] += gy / range;
                d_min += gy * (y - 1.0) / range;
                d_max -= gy * y / range;
            }
            g.data_mut()[arg_min * cols + c] += d_min;
            g.data_mut()[arg_max * cols + c] += d_max;
        }
        vec![Some(g)]
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::Shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.record(value, vec![a, b], Box::new(AddRule)))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.record(value, vec![x], Box::new(AffineRule { scale }))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.record(value, vec![x], Box::new(ReshapeRule)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.record(Tensor::scalar(total), vec![x], Box::new(SumRule))
    }

    /// `sum_k w_k * s_k` over single-element inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(TensorError::NotScalar(t.shape().to_vec()));
            }
            total += w * t.item();
        }
        let inputs = terms.iter().map(|t| t.0).collect();
        let weights = terms.iter().map(|t| t.1).collect();
        Ok(self.record(Tensor::scalar(total), inputs, Box::new(WeightedSumRule { weights })))
    }

    /// Channel-wise concatenation of sequences sharing their length.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Shape("concat_cols: no inputs".into()))?;
        let rows = expect_matrix(self.value(*first), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = expect_matrix(self.value(p), "concat_cols")?;
            if r != rows {
                return Err(TensorError::Shape(format!("concat_cols: length {r} vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        Ok(self.record(value, parts.to_vec(), Box::new(ConcatColsRule { widths })))
    }

    /// Time-wise concatenation of sequences sharing their channel count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Shape("concat_rows: no inputs".into()))?;
        let cols = self.value(*first).cols();
        let mut heights = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(TensorError::Shape(format!("concat_rows: width {} vs {cols}", v.cols())));
            }
            heights.push(v.rows());
            data.extend_from_slice(v.data());
        }
        let rows = heights.iter().sum();
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.record(value, parts.to_vec(), Box::new(ConcatRowsRule { heights })))
    }

    /// Gathers rows of a sequence (repeats allowed).
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Shape(format!("select_rows: index {bad} out of {rows}")));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let value = Tensor::matrix(indices.len(), cols, data)?;
        Ok(self.record(
            value,
            vec![x],
            Box::new(SelectRowsRule {
                indices: indices.to_vec(),
            }),
        ))
    }

    /// Mean over channels: `T x C -> T`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = expect_matrix(self.value(x), "channel_mean")?;
        let v = self.value(x);
        let data = (0..rows).map(|r| v.row(r).iter().sum::<f64>() / cols as f64).collect();
        let value = Tensor::vector(data)?;
        Ok(self.record(value, vec![x], Box::new(ChannelMeanRule)))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x);
        let data: Vec<f64> = v.data().iter().map(|&e| e.clamp(lo, hi)).collect();
        let flags: Vec<(bool, bool)> = v.data().iter().map(|&e| (e <= lo, e >= hi)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        for (below, above) in flags {
            self.note_flag(below);
            self.note_flag(above);
        }
        self.record(value, vec![x], Box::new(ClampRule { lo, hi }))
    }

    /// Per-channel rescaling of a sequence to `[0, 1]` using its temporal
    /// minimum and maximum. Constant channels map to zero.
    pub fn minmax_normalize(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = expect_matrix(self.value(x), "minmax_normalize")?;
        let v = self.value(x);
        let mut out = vec![0.0; rows * cols];
        let mut stats = Vec::with_capacity(cols);
        for c in 0..cols {
            let (mut arg_min, mut arg_max) = (0, 0);
            for t in 1..rows {
                if v.at(t, c) < v.at(arg_min, c) {
                    arg_min = t;
                }
                if v.at(t, c) > v.at(arg_max, c) {
                    arg_max = t;
                }
            }
            let (lo, hi) = (v.at(arg_min, c), v.at(arg_max, c));
            let range = hi - lo;
            if range > 0.0 {
                for t in 0..rows {
                    out[t * cols + c] = (v.at(t, c) - lo) / range;
                }
            }
            stats.push((arg_min, arg_max, if range > 0.0 { range } else { 0.0 }));
        }
        for &(a, b, _) in &stats {
            self.note_index(a);
            self.note_index(b);
        }
        let value = Tensor::matrix(rows, cols, out)?;
        Ok(self.record(value, vec![x], Box::new(MinMaxRule { stats })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_select_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = tape.select_rows(c, &[1, 1]).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 5.0, 6.0, 2.0, 5.0, 6.0]);
        let bad = tape.leaf(Tensor::from_rows(&[vec![1.0]]).unwrap());
        assert!(tape.concat_cols(&[a, bad]).is_err());
    }

    #[test]
    fn minmax_matches_formula() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![2.0, 1.0], vec![4.0, 1.0], vec![3.0, 1.0]]).unwrap());
        let y = tape.minmax_normalize(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 1.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn channel_mean_averages_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 3.0], vec![-2.0, 2.0]]).unwrap());
        let m = tape.channel_mean(x).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 0.0]);
    }
}
