use crate::error::{Result, TensorError};
use crate::ops::expect_matrix;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

/// Source taps of output row `j`: `(i0, i1, weight of i1)`. Output row `j`
/// sits at source position `j / factor`; positions past the last row
/// replicate it.
fn taps(j: usize, factor: usize, len: usize) -> (usize, usize, f64) {
    let i0 = j / factor;
    let frac = (j % factor) as f64 / factor as f64;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, frac)
}

struct UpsampleRule {
    factor: usize,
}

impl Backward for UpsampleRule {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (len, cols) = (x.rows(), x.cols());
        let mut gx = Tensor::zeros(x.shape());
        let g = gx.data_mut();
        for j in 0..out.rows() {
            let (i0, i1, w) = taps(j, self.factor, len);
            for c in 0..cols {
                let gv = grad.data()[j * cols + c];
                g[i0 * cols + c] += (1.0 - w) * gv;
                g[i1 * cols + c] += w * gv;
            }
        }
        vec![Some(gx)]
    }
}

impl Tape {
    /// Linear interpolation along time by an integer factor.
    pub fn linear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(TensorError::Config("linear_upsample: factor must be >= 1".into()));
        }
        let (len, cols) = expect_matrix(self.value(x), "linear_upsample")?;
        let xv = self.value(x);
        let out_len = len * factor;
        let mut out = Vec::with_capacity(out_len * cols);
        for j in 0..out_len {
            let (i0, i1, w) = taps(j, factor, len);
            for c in 0..cols {
                out.push((1.0 - w) * xv.at(i0, c) + w * xv.at(i1, c));
            }
        }
        let value = Tensor::matrix(out_len, cols, out)?;
        Ok(self.record(value, vec![x], Box::new(UpsampleRule { factor })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn up(values: &[f64], factor: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(values.len(), 1, values.to_vec()).unwrap());
        let y = tape.linear_upsample(x, factor).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn doubles_with_edge_replication() {
        assert_eq!(up(&[0.0, 2.0], 2), vec![0.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn factor_one_is_identity() {
        assert_eq!(up(&[3.0, -1.0, 4.0], 1), vec![3.0, -1.0, 4.0]);
    }

    #[test]
    fn constants_stay_constant() {
        assert!(up(&[1.5; 5], 4).iter().all(|&v| v == 1.5));
    }
}
