use crate::tape::{Backward, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Tanh,
    Sigmoid,
}

impl Pointwise {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Pointwise::Relu => x.max(0.0),
            Pointwise::Tanh => x.tanh(),
            Pointwise::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Pointwise::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Pointwise::Tanh => 1.0 - y * y,
            Pointwise::Sigmoid => y * (1.0 - y),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct PointwiseRule(Pointwise);

impl Backward for PointwiseRule {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        for ((gv, &x), &y) in g.data_mut().iter_mut().zip(inputs[0].data()).zip(out.data()) {
            *gv *= self.0.derivative(x, y);
        }
        vec![Some(g)]
    }
}

impl Tape {
    pub fn pointwise(&mut self, x: Var, kind: Pointwise) -> Var {
        let v = self.value(x);
        let data: Vec<f64> = v.data().iter().map(|&e| kind.apply(e)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        if kind == Pointwise::Relu {
            let signs: Vec<bool> = self.value(x).data().iter().map(|&e| e > 0.0).collect();
            for s in signs {
                self.note_flag(s);
            }
        }
        self.record(value, vec![x], Box::new(PointwiseRule(kind)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(x, Pointwise::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.pointwise(x, Pointwise::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.pointwise(x, Pointwise::Sigmoid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definitions() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.leaf(Tensor::scalar(0.0));
        let t = tape.tanh(z);
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(t).item(), 0.0);
        assert_eq!(tape.value(s).item(), 0.5);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
    }
}
