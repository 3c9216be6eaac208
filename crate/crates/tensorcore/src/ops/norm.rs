use crate::error::{Result, TensorError};
use crate::ops::expect_matrix;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

struct GroupNormRule {
    groups: usize,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Backward for GroupNormRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (len, channels) = (x.rows(), x.cols());
        let per_group = channels / self.groups;
        let count = (len * per_group) as f64;
        let (gd, xh, gm) = (grad.data(), &self.normalized, gamma.data());

        let mut g_gamma = vec![0.0; channels];
        let mut g_beta = vec![0.0; channels];
        for t in 0..len {
            for c in 0..channels {
                let i = t * channels + c;
                g_gamma[c] += gd[i] * xh[i];
                g_beta[c] += gd[i];
            }
        }

        let mut gx = vec![0.0; len * channels];
        for g in 0..self.groups {
            let cs = g * per_group..(g + 1) * per_group;
            let (mut mean_g, mut mean_gx) = (0.0, 0.0);
            for t in 0..len {
                for c in cs.clone() {
                    let i = t * channels + c;
                    let gxh = gd[i] * gm[c];
                    mean_g += gxh;
                    mean_gx += gxh * xh[i];
                }
            }
            mean_g /= count;
            mean_gx /= count;
            let inv = self.inv_std[g];
            for t in 0..len {
                for c in cs.clone() {
                    let i = t * channels + c;
                    gx[i] = inv * (gd[i] * gm[c] - mean_g - xh[i] * mean_gx);
                }
            }
        }
        vec![
            Some(Tensor::new(x.shape().to_vec(), gx).expect("input shape")),
            Some(Tensor::new(vec![channels], g_gamma).expect("gamma shape")),
            Some(Tensor::new(vec![channels], g_beta).expect("beta shape")),
        ]
    }
}

impl Tape {
    /// Group normalisation of a `T x C` sequence: each group of `C / groups`
    /// channels is standardised over all its `T * C / groups` entries, then
    /// scaled by `gamma` and shifted by `beta` per channel.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (len, channels) = expect_matrix(self.value(x), "group_norm")?;
        if groups == 0 || channels % groups != 0 {
            return Err(TensorError::Config(format!(
                "group_norm: {channels} channels not divisible into {groups} groups"
            )));
        }
        if eps <= 0.0 {
            return Err(TensorError::Config(format!("group_norm: eps must be > 0, got {eps}")));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [channels] {
                return Err(TensorError::Shape(format!(
                    "group_norm: {name} shape {:?}, expected [{channels}]",
                    self.value(v).shape()
                )));
            }
        }
        let per_group = channels / groups;
        let count = (len * per_group) as f64;
        let xd = self.value(x).data();
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut normalized = vec![0.0; len * channels];
        let mut inv_std = Vec::with_capacity(groups);
        for g in 0..groups {
            let cs = g * per_group..(g + 1) * per_group;
            let mut mean = 0.0;
            for t in 0..len {
                mean += xd[t * channels + cs.start..t * channels + cs.end].iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for t in 0..len {
                for v in &xd[t * channels + cs.start..t * channels + cs.end] {
                    var += (v - mean) * (v - mean);
                }
            }
            var /= count;
            let inv = 1.0 / (var + eps).sqrt();
            for t in 0..len {
                for c in cs.clone() {
                    let i = t * channels + c;
                    normalized[i] = (xd[i] - mean) * inv;
                }
            }
            inv_std.push(inv);
        }
        let out = normalized
            .iter()
            .enumerate()
            .map(|(i, v)| gm[i % channels] * v + bt[i % channels])
            .collect();
        let value = Tensor::matrix(len, channels, out)?;
        Ok(self.record(
            value,
            vec![x, gamma, beta],
            Box::new(GroupNormRule {
                groups,
                normalized,
                inv_std,
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(x: Tensor, groups: usize, gamma: f64, beta: f64, eps: f64) -> Result<Vec<f64>> {
        let c = x.cols();
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let g = tape.leaf(Tensor::full(&[c], gamma));
        let b = tape.leaf(Tensor::full(&[c], beta));
        let y = tape.group_norm(xv, groups, g, b, eps)?;
        Ok(tape.value(y).data().to_vec())
    }

    #[test]
    fn two_point_standardisation() {
        let y = norm(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap(), 1, 1.0, 0.0, 1e-12).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn affine_after_normalisation() {
        let y = norm(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap(), 1, 2.0, 5.0, 1e-12).unwrap();
        assert!((y[0] - 3.0).abs() < 1e-9 && (y[1] - 7.0).abs() < 1e-9);
    }

    #[test]
    fn constant_input_maps_to_zero() {
        let y = norm(Tensor::full(&[5, 4], 3.5), 2, 1.0, 0.0, 1e-5).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn groups_must_divide_channels() {
        assert!(matches!(
            norm(Tensor::zeros(&[3, 6]), 4, 1.0, 0.0, 1e-5),
            Err(TensorError::Config(_))
        ));
    }
}
