//! Finite-difference check of the composed detection head.
//!
//! The pooling regions, label assignment and quality targets depend on
//! forward values, so they are computed once at the base point and frozen;
//! the check then covers everything differentiable downstream of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::{check_gradients_with, GradCheckOptions, GradCheckReport, Tape, Tensor, Var};

use crate::annotation::Instance;
use crate::config::{Config, PoolMode};
use crate::error::{AfsdError, Result};
use crate::losses::{activation_guided_loss, boundary_contrastive_loss, build_targets, detection_loss, rearrange_clip};
use crate::model::{Afsd, ModelSpec, ParamVars};

pub const CLIP_STEPS: usize = 32;
pub const INPUT_DIM: usize = 16;

/// Coordinates checked per input tensor, drawn at random.
const COORDS_PER_INPUT: usize = 64;

/// Small model, random `32 x 16` clip, full detection plus consistency
/// objective.
pub fn composite_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let mut cfg = Config::thumos();
    // a permissive threshold so the refined terms have positives at init
    cfg.loss.refine_tiou = 0.1;
    let spec = ModelSpec {
        input_dim: INPUT_DIM,
        classes: 2,
        channels: 8,
        num_levels: 3,
        level0_stride: 1,
        groups: 2,
        pool: PoolMode::Max,
        frame_convs: 1,
        width_floor: 1.0,
        delta_a: cfg.loss.delta_a,
        delta_b: cfg.loss.delta_b,
    };
    let model = Afsd::new(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::matrix(
        CLIP_STEPS,
        INPUT_DIM,
        (0..CLIP_STEPS * INPUT_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    let gts = vec![Instance::new(2.0, 5.0, 1)?, Instance::new(12.0, 22.0, 2)?];
    let spans = [(2, 5), (12, 22)];
    let rearranged = rearrange_clip(&x, CLIP_STEPS, &spans, &mut rng).expect("fixture clip is eligible");

    let (tape, _, base) = model.run(&x, 1.0)?;
    let targets = build_targets(&tape, &base, &gts, &cfg.loss);
    drop(tape);
    if targets.assignment.n_refined == 0 {
        return Err(AfsdError::Argument(format!("seed {seed} gives no refined positives")));
    }

    let names = model.params.names();
    let mut inputs = vec![x];
    inputs.extend(model.params.tensors());
    let lc = cfg.loss.clone();
    let f = |tape: &mut Tape, v: &[Var]| -> tensorcore::Result<Var> {
        let params = ParamVars::from_parts(&names, &v[1..]);
        let run = |tape: &mut Tape| -> Result<Var> {
            let fwd = model.forward(tape, &params, v[0], 1.0, Some(&base.plan))?;
            let (det, _) = detection_loss(tape, &fwd, &targets, &lc)?;
            let act = activation_guided_loss(tape, &fwd.frame, &gts, lc.act_radius, lc.act_norm)?;
            let xr = tape.constant(rearranged.features.clone());
            let fr = model.frame_features(tape, &params, xr, 1.0)?;
            let trip = boundary_contrastive_loss(
                tape,
                &fr,
                &rearranged,
                lc.delta_a,
                lc.delta_b_con,
                lc.trip_margin,
                lc.trip_symmetric,
            )?;
            Ok(tape.weighted_sum(&[(det, 1.0), (act, 1.0), (trip, 1.0)])?)
        };
        run(tape).map_err(|e| tensorcore::TensorError::Config(e.to_string()))
    };
    let opts = GradCheckOptions {
        max_coords_per_input: Some(COORDS_PER_INPUT),
        seed,
        ..GradCheckOptions::default()
    };
    Ok(check_gradients_with(f, &inputs, &opts)?)
}
