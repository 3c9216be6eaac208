//! Finite-difference checks of every kernel on small random inputs, and an
//! exhaustive max-pooling oracle.
//!
//! [`kernel_suite`] backs both the test suite and the command-line
//! `gradcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheckReport};
use crate::ops::{Pointwise, PoolKind, Region};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const H: f64 = 1e-5;

/// Uniform `[-1, 1)` entries.
pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Reduces a tensor to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(y));
    let n = w.len();
    let flat = tape.reshape(y, vec![n, 1])?;
    let mut terms = Vec::with_capacity(n);
    for (i, wi) in w.data().iter().enumerate() {
        let row = tape.select_rows(flat, &[i])?;
        terms.push((row, *wi));
    }
    tape.weighted_sum(&terms)
}

/// Named reports for every kernel and its parameter variants.
pub fn kernel_suite() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    conv1d_all_inputs(&mut out)?;
    group_norm_all_inputs(&mut out)?;
    pointwise_kinds(&mut out)?;
    pooling_variants(&mut out)?;
    upsample_and_glue(&mut out)?;
    normalisations(&mut out)?;
    loss_kernels(&mut out)?;
    triplet_kernel(&mut out)?;
    Ok(out)
}

fn conv1d_all_inputs(out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 2)] {
        let inputs = [
            random(&mut rng, &[9, 3]),
            random(&mut rng, &[3, 3, 4]),
            random(&mut rng, &[4]),
        ];
        let f = move |tape: &mut Tape, v: &[Var]| {
            let y = tape.conv1d(v[0], v[1], v[2], stride, pad)?;
            project(tape, y, 11)
        };
        out.push((
            format!("conv1d s{stride} p{pad}").to_string(),
            check_gradients(f, &inputs, H)?,
        ));
    }
    Ok(())
}

fn group_norm_all_inputs(out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [
        random(&mut rng, &[7, 8]),
        random(&mut rng, &[8]),
        random(&mut rng, &[8]),
    ];
    let f = |tape: &mut Tape, v: &[Var]| {
        let y = tape.group_norm(v[0], 4, v[1], v[2], 1e-5)?;
        project(tape, y, 12)
    };
    out.push(("group_norm".to_string(), check_gradients(f, &inputs, H)?));
    Ok(())
}

fn pointwise_kinds(out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = [random(&mut rng, &[6, 3])];
    for kind in [Pointwise::Relu, Pointwise::Tanh, Pointwise::Sigmoid] {
        let f = move |tape: &mut Tape, v: &[Var]| {
            let y = tape.pointwise(v[0], kind);
            project(tape, y, 13)
        };
        out.push((format!("{kind:?}").to_string(), check_gradients(f, &inputs, H)?));
    }
    Ok(())
}

fn pooling_variants(out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let regions = vec![
        Region::new(0.3, 2.6),
        Region::new(-1.0, 0.2),
        Region::new(4.0, 4.0),
        Region::new(2.2, 9.5),
    ];
    let x = random(&mut rng, &[8, 3]);
    for kind in [PoolKind::Max, PoolKind::Mean, PoolKind::Stack] {
        let regions = regions.clone();
        let f = move |tape: &mut Tape, v: &[Var]| {
            let y = tape.region_pool(v[0], &regions, kind)?;
            project(tape, y, 14)
        };
        out.push((
            format!("pool {kind:?}").to_string(),
            check_gradients(f, std::slice::from_ref(&x), H)?,
        ));
    }
    let w = random(&mut rng, &[3, 3]);
    let f = move |tape: &mut Tape, v: &[Var]| {
        let y = tape.region_pool_conv(v[0], &regions, v[1])?;
        project(tape, y, 15)
    };
    out.push(("pool conv".to_string(), check_gradients(f, &[x, w], H)?));
    Ok(())
}

fn upsample_and_glue(out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = [random(&mut rng, &[5, 2]), random(&mut rng, &[5, 3])];
    let f = |tape: &mut Tape, v: &[Var]| {
        let up = tape.linear_upsample(v[0], 3)?;
        let cat = tape.concat_cols(&[v[0], v[1]])?;
        let rows = tape.concat_rows(&[cat, cat])?;
        let sel = tape.select_rows(rows, &[0, 3, 3, 9])?;
        let mean = tape.channel_mean(sel)?;
        let aff = tape.affine(mean, -1.5, 0.25);
        let a = project(tape, up, 16)?;
        let b = project(tape, aff, 17)?;
        tape.weighted_sum(&[(a, 1.0), (b, 0.5)])
    };
    out.push(("upsample+glue".to_string(), check_gradients(f, &inputs, H)?));
    Ok(())
}

fn normalisations(out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = [random(&mut rng, &[9, 4])];
    let f = |tape: &mut Tape, v: &[Var]| {
        let m = tape.minmax_normalize(v[0])?;
        let c = tape.clamp(v[0], -0.5, 0.5);
        let a = project(tape, m, 18)?;
        let b = project(tape, c, 19)?;
        tape.weighted_sum(&[(a, 1.0), (b, 1.0)])
    };
    out.push(("minmax+clamp".to_string(), check_gradients(f, &inputs, H)?));
    Ok(())
}

fn loss_kernels(out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random(&mut rng, &[6, 4]);
    let dist =
        Tensor::new(vec![4, 2], (0..8).map(|_| rng.random_range(0.5..6.0)).collect()).expect("shape matches data");
    let offsets = random(&mut rng, &[4, 2]);
    let quality = random(&mut rng, &[4, 1]);
    let probs =
        Tensor::new(vec![5], (0..5).map(|_| rng.random_range(0.05..0.95)).collect()).expect("shape matches data");
    let anchors = vec![4.0, 9.0, 12.0, 20.0];
    let boxes = vec![Some((2.0, 8.0)), None, Some((10.0, 15.5)), Some((18.0, 30.0))];
    let f = move |tape: &mut Tape, v: &[Var]| {
        let focal = tape.softmax_focal(v[0], &[0, 1, 3, 0, 2, 2], 0.25, 2.0, 3.0)?;
        let tiou = tape.tiou_loss(v[1], &anchors, &boxes, 3.0)?;
        let l1 = tape.l1_loss(v[2], &[Some(vec![0.1, 0.2]), None, Some(vec![-0.3, 0.9]), None], 2.0)?;
        let bq = tape.bce_with_logits(v[3], &[Some(0.7), Some(0.1), None, Some(1.0)], 3.0)?;
        let bp = tape.bce(v[4], &[1.0, 0.0, 0.0, 1.0, 0.0], 1e-6)?;
        tape.weighted_sum(&[(focal, 1.0), (tiou, 10.0), (l1, 10.0), (bq, 1.0), (bp, 1.0)])
    };
    out.push((
        "losses".to_string(),
        check_gradients(f, &[logits, dist, offsets, quality, probs], H)?,
    ));
    Ok(())
}

fn triplet_kernel(out: &mut Vec<(String, GradCheckReport)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(&mut rng, &[6]);
    let p = random(&mut rng, &[6]);
    let n = random(&mut rng, &[6]);
    let f = |tape: &mut Tape, v: &[Var]| tape.triplet(v[0], v[1], v[2], 1.0);
    out.push(("triplet".to_string(), check_gradients(f, &[a, p, n], H)?));
    Ok(())
}

/// Integer rows covered by a fractional region, enumerated one by one.
fn covered(lo: f64, hi: f64, len: usize) -> Vec<usize> {
    let last = (len - 1) as f64;
    let a = lo.floor().clamp(0.0, last);
    let b = hi.ceil().clamp(0.0, last);
    (0..len).filter(|&j| j as f64 >= a && j as f64 <= b).collect()
}

/// Coarse values so ties occur regularly.
fn tie_prone(len: usize, cols: usize, seed: usize) -> Vec<f64> {
    (0..len * cols)
        .map(|i| (((i + 7) * (seed + 13) * 2654435761usize) % 11) as f64 / 4.0)
        .collect()
}

/// Compares max pooling with direct enumeration on every half-integer
/// region of every `T <= 8`, `C <= 4` grid: the pooled value must equal the
/// enumerated maximum and the whole gradient must land on the first
/// maximising row. Returns the number of regions checked, or the first
/// mismatch.
pub fn max_pool_oracle() -> std::result::Result<usize, String> {
    let mut cases = 0usize;
    for len in 1..=8 {
        for cols in 1..=4 {
            for seed in 0..3 {
                let x = Tensor::matrix(len, cols, tie_prone(len, cols, seed)).map_err(|e| e.to_string())?;
                let endpoints: Vec<f64> = (-3..=2 * len as i32 + 2).map(|k| k as f64 * 0.5).collect();
                for (i, &lo) in endpoints.iter().enumerate() {
                    for &hi in &endpoints[i..] {
                        let mut tape = Tape::new();
                        let xv = tape.leaf(x.clone());
                        let y = tape
                            .region_pool(xv, &[Region::new(lo, hi)], PoolKind::Max)
                            .map_err(|e| e.to_string())?;
                        let pooled = tape.value(y).clone();
                        let s = tape.sum(y);
                        let g = tape.backward(s).map_err(|e| e.to_string())?;
                        let gx = g.get(xv).ok_or("no gradient for the input")?;
                        let idx = covered(lo, hi, len);
                        for c in 0..cols {
                            let best = idx.iter().map(|&j| x.at(j, c)).fold(f64::NEG_INFINITY, f64::max);
                            let first = idx.iter().copied().find(|&j| x.at(j, c) == best);
                            let here = format!("T={len} C={cols} [{lo}, {hi}] column {c}");
                            if pooled.at(0, c) != best {
                                return Err(format!("{here}: pooled {} but max is {best}", pooled.at(0, c)));
                            }
                            for j in 0..len {
                                let expected = if Some(j) == first { 1.0 } else { 0.0 };
                                if gx.at(j, c) != expected {
                                    return Err(format!("{here}: gradient {} at row {j}", gx.at(j, c)));
                                }
                            }
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(cases)
}
