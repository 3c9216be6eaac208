//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor of the relative error; gradients smaller than this are
/// compared in absolute terms.
pub const DEFAULT_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub floor: f64,
    /// Check at most this many coordinates per input (chosen at random).
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            floor: DEFAULT_FLOOR,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a non-smooth point.
    pub excluded: usize,
    pub per_input: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(TensorError::NotScalar(value.shape().to_vec()));
    }
    Ok((value.item(), tape.signature()))
}

/// Compares the analytic gradient of the scalar `f` against central finite
/// differences with step `h` at every coordinate of every input.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_gradients_with(
        f,
        inputs,
        &GradCheckOptions {
            h,
            ..GradCheckOptions::default()
        },
    )
}

pub fn check_gradients_with<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&opts.h) {
        return Err(TensorError::Config(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            opts.h
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.signature();
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
        per_input: Vec::with_capacity(inputs.len()),
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut entry = InputReport {
            max_rel_error: 0.0,
            checked: 0,
            excluded: 0,
        };
        for j in coords {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + opts.h;
            let (plus, sig_plus) = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig - opts.h;
            let (minus, sig_minus) = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                entry.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            entry.checked += 1;
            entry.max_rel_error = entry.max_rel_error.max(err);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, j, a, numeric));
            }
        }
        report.checked += entry.checked;
        report.excluded += entry.excluded;
        report.per_input.push(entry);
    }
    Ok(report)
}
