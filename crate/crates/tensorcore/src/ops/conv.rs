use crate::error::{Result, TensorError};
use crate::ops::expect_matrix;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

struct Conv1dRule {
    stride: usize,
    pad: usize,
}

impl Backward for Conv1dRule {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (len, c_in) = (x.rows(), x.cols());
        let (kernel, c_out) = (w.shape()[0], w.shape()[2]);
        let out_len = out.rows();
        let mut gx = vec![0.0; len * c_in];
        let mut gw = vec![0.0; kernel * c_in * c_out];
        let mut gb = vec![0.0; c_out];
        let (xd, wd, gd) = (x.data(), w.data(), grad.data());
        for t in 0..out_len {
            let g_row = &gd[t * c_out..(t + 1) * c_out];
            for (b, g) in gb.iter_mut().zip(g_row) {
                *b += g;
            }
            for k in 0..kernel {
                let Some(j) = (t * self.stride + k).checked_sub(self.pad) else {
                    continue;
                };
                if j >= len {
                    continue;
                }
                for c in 0..c_in {
                    let w_off = (k * c_in + c) * c_out;
                    let w_row = &wd[w_off..w_off + c_out];
                    let mut acc = 0.0;
                    for (wv, g) in w_row.iter().zip(g_row) {
                        acc += wv * g;
                    }
                    gx[j * c_in + c] += acc;
                    let xv = xd[j * c_in + c];
                    for (gwv, g) in gw[w_off..w_off + c_out].iter_mut().zip(g_row) {
                        *gwv += xv * g;
                    }
                }
            }
        }
        vec![
            Some(Tensor::new(x.shape().to_vec(), gx).expect("input shape")),
            Some(Tensor::new(w.shape().to_vec(), gw).expect("weight shape")),
            Some(Tensor::new(vec![c_out], gb).expect("bias shape")),
        ]
    }
}

/// Output length of a temporal convolution, if non-empty.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl Tape {
    /// Temporal cross-correlation with zero padding.
    ///
    /// `x` is `T x C_in`, `w` is `K x C_in x C_out`, `b` has `C_out` entries.
    /// `out[t, o] = b[o] + sum_{k,c} w[k, c, o] * x_pad[t * stride + k, c]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (len, c_in) = expect_matrix(self.value(x), "conv1d input")?;
        let w_shape = self.value(w).shape().to_vec();
        let [kernel, w_in, c_out] = w_shape[..] else {
            return Err(TensorError::Shape(format!(
                "conv1d weight must be K x C_in x C_out, got {w_shape:?}"
            )));
        };
        if w_in != c_in {
            return Err(TensorError::Shape(format!(
                "conv1d: input has {c_in} channels, weight expects {w_in}"
            )));
        }
        if kernel % 2 == 0 {
            return Err(TensorError::Shape(format!("conv1d: kernel size {kernel} must be odd")));
        }
        if self.value(b).shape() != [c_out] {
            return Err(TensorError::Shape(format!(
                "conv1d: bias shape {:?}, expected [{c_out}]",
                self.value(b).shape()
            )));
        }
        if stride == 0 {
            return Err(TensorError::Shape("conv1d: stride must be >= 1".into()));
        }
        let out_len = conv_output_len(len, kernel, stride, pad).ok_or(TensorError::EmptyOutput {
            len,
            kernel,
            stride,
            pad,
        })?;

        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(out_len * c_out);
        for t in 0..out_len {
            out.extend_from_slice(bd);
            let o_row = &mut out[t * c_out..(t + 1) * c_out];
            for k in 0..kernel {
                let Some(j) = (t * stride + k).checked_sub(pad) else {
                    continue;
                };
                if j >= len {
                    continue;
                }
                for c in 0..c_in {
                    let xv = xd[j * c_in + c];
                    if xv == 0.0 {
                        continue;
                    }
                    let w_off = (k * c_in + c) * c_out;
                    for (o, wv) in o_row.iter_mut().zip(&wd[w_off..w_off + c_out]) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let value = Tensor::matrix(out_len, c_out, out)?;
        Ok(self.record(value, vec![x, w, b], Box::new(Conv1dRule { stride, pad })))
    }
}
