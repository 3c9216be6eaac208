//! Trainer behaviour on small synthetic data: single-clip overfitting,
//! determinism, the consistency-step precondition and translation
//! equivariance of the network.

use afsd::config::Config;
use afsd::model::{Afsd, ModelSpec};
use afsd::pipeline::{split_clips, synth_dataset, ClipSample, Mode, StepRecord, Stream, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::Tensor;

fn small_config() -> Config {
    let mut cfg = Config::thumos();
    cfg.model.channels = 16;
    cfg.model.groups = 4;
    cfg.model.num_levels = 3;
    cfg.train.lr = 1e-3;
    cfg.synth.train_videos = 4;
    cfg.synth.test_videos = 1;
    cfg
}

fn model(cfg: &Config) -> Afsd {
    let spec = ModelSpec::from_config(cfg, cfg.synth.feature_dim, cfg.synth.classes);
    Afsd::new(spec, cfg.model.init_seed).unwrap()
}

fn train_clips(cfg: &Config) -> Vec<ClipSample> {
    let data = synth_dataset(cfg.train.seed, &cfg.synth).unwrap();
    data.videos("train", Stream::Rgb)
        .unwrap()
        .iter()
        .flat_map(|v| split_clips(v, &cfg.data, Mode::Train))
        .collect()
}

#[test]
fn one_clip_overfits_with_strictly_falling_loss() {
    let mut cfg = small_config();
    cfg.loss.bcl = false;
    // every coarse positive is also refined, so the objective itself does
    // not change from step to step
    cfg.loss.refine_tiou = 0.0;
    let clip = train_clips(&cfg).into_iter().find(|c| !c.instances.is_empty()).unwrap();
    let mut trainer = Trainer::new(cfg.clone(), model(&cfg));
    let losses: Vec<f64> = (0..20)
        .map(|_| trainer.train_step(&clip, 0).unwrap().loss.total)
        .collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

fn run(cfg: &Config, clips: &[ClipSample]) -> (Vec<StepRecord>, Afsd) {
    let mut records = Vec::new();
    let mut trainer = Trainer::new(cfg.clone(), model(cfg));
    trainer
        .fit(
            clips,
            |r| {
                records.push(r.clone());
                Ok(())
            },
            |_, _| Ok(()),
        )
        .unwrap();
    (records, trainer.model)
}

#[test]
fn training_is_deterministic() {
    let mut cfg = small_config();
    cfg.train.max_steps = 25;
    let clips = train_clips(&cfg);
    let (ra, ma) = run(&cfg, &clips);
    let (rb, mb) = run(&cfg, &clips);
    assert_eq!(ra.len(), 25);
    assert_eq!(ra, rb);
    assert_eq!(ma.params, mb.params);
    assert!(
        ra.iter().any(|r| r.bcl),
        "the fixture should exercise the consistency step"
    );

    cfg.train.seed += 1;
    let (rc, _) = run(&cfg, &clips);
    assert_ne!(ra, rc);
}

#[test]
fn single_action_clips_never_take_the_consistency_step() {
    let mut cfg = small_config();
    cfg.synth.min_actions = 1;
    cfg.synth.max_actions = 1;
    cfg.train.epochs = 2;
    let clips = train_clips(&cfg);
    let mut trainer = Trainer::new(cfg.clone(), model(&cfg));
    let out = trainer.fit(&clips, |_| Ok(()), |_, _| Ok(())).unwrap();
    assert!(out.steps > 0);
    assert_eq!(out.bcl_steps, 0);
}

/// A pattern surrounded by zeros, moved by a multiple of the coarsest
/// stride, moves every prediction by the same amount away from the clip
/// edges.
#[test]
fn predictions_follow_a_shifted_input() {
    let cfg = small_config();
    let net = model(&cfg);
    let (t, c, fps) = (128usize, cfg.synth.feature_dim, 4.0);
    let shift = 1usize << (cfg.model.num_levels - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pattern: Vec<f64> = (0..16 * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let embed = |at: usize| {
        let mut x = vec![0.0; t * c];
        x[at * c..(at + 16) * c].copy_from_slice(&pattern);
        Tensor::matrix(t, c, x).unwrap()
    };
    let (ta, _, fa) = net.run(&embed(56), fps).unwrap();
    let (tb, _, fb) = net.run(&embed(56 + shift), fps).unwrap();
    let offset = shift as f64 * fps;
    let window = (0.25 * t as f64 * fps, 0.75 * t as f64 * fps);
    let mut compared = 0;
    for (i, (&a, &level)) in fa.anchors.iter().zip(&fa.levels).enumerate() {
        if a < window.0 || a > window.1 {
            continue;
        }
        let j = (0..fb.anchors.len())
            .find(|&j| fb.levels[j] == level && fb.anchors[j] == a + offset)
            .expect("shifted anchor exists");
        for (va, vb) in [
            (fa.cls, fb.cls),
            (fa.dist, fb.dist),
            (fa.delta, fb.delta),
            (fa.rcls, fb.rcls),
            (fa.quality, fb.quality),
        ] {
            let (ra, rb) = (ta.value(va).row(i), tb.value(vb).row(j));
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-8, "level {level} anchor {a}: {x} vs {y}");
            }
        }
        compared += 1;
    }
    assert!(compared > 50);
}
