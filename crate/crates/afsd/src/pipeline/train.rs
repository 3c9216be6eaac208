//! Training loop.
//!
//! Every step first optimises the detection objective on one clip. If
//! boundary consistency is enabled and the clip admits a rearrangement, a
//! second optimiser step follows on the activation and contrastive terms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::Tape;

use super::clips::ClipSample;
use super::optim::{clip_grad_norm, AdamW};
use crate::config::Config;
use crate::error::{AfsdError, Result};
use crate::losses::{
    activation_guided_loss, boundary_contrastive_loss, build_targets, detection_loss, rearrange_clip, LossReport,
};
use crate::model::Afsd;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub clip: String,
    /// Whether the consistency step ran.
    pub bcl: bool,
    #[serde(flatten)]
    pub loss: LossReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps: usize,
    pub bcl_steps: usize,
    pub skipped_clips: usize,
    pub epochs: usize,
}

pub struct Trainer {
    pub cfg: Config,
    pub model: Afsd,
    opt: AdamW,
    /// Separate moments for the consistency step; sharing them with the
    /// detection step lets the larger detection gradients swamp it.
    opt_con: AdamW,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: Config, model: Afsd) -> Self {
        let opt = AdamW::new(&cfg.train);
        let opt_con = AdamW::new(&cfg.train);
        Trainer {
            cfg,
            model,
            opt,
            opt_con,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn apply(
        &mut self,
        tape: &mut Tape,
        vars: &crate::model::ParamVars,
        loss: tensorcore::Var,
        consistency: bool,
        clip: &ClipSample,
        report: &LossReport,
    ) -> Result<()> {
        let mut grads = tape.backward(loss)?;
        let mut g = self.model.params.collect_grads(vars, &mut grads);
        let norm = clip_grad_norm(&mut g, self.cfg.train.grad_clip);
        if !norm.is_finite() {
            return Err(self.non_finite(clip, report, &format!("gradient norm {norm}")));
        }
        let opt = if consistency { &mut self.opt_con } else { &mut self.opt };
        opt.step(&mut self.model.params, &g);
        Ok(())
    }

    fn non_finite(&self, clip: &ClipSample, report: &LossReport, what: &str) -> AfsdError {
        let x = &clip.features;
        let (lo, hi) = x
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        AfsdError::NonFinite {
            step: self.step,
            clip: clip.name(),
            detail: format!(
                "{what}; losses {}; features {:?} in [{lo}, {hi}]; instances {:?}",
                serde_json::to_string(report).unwrap_or_default(),
                x.shape(),
                clip.instances
            ),
        }
    }

    /// One detection step and, when applicable, one consistency step.
    pub fn train_step(&mut self, clip: &ClipSample, epoch: usize) -> Result<StepRecord> {
        let lc = self.cfg.loss.clone();
        let (mut tape, vars, fwd) = self.model.run(&clip.features, clip.frames_per_step)?;
        let targets = build_targets(&tape, &fwd, &clip.instances, &lc);
        let (loss, mut report) = detection_loss(&mut tape, &fwd, &targets, &lc)?;
        if !report.is_finite() {
            return Err(self.non_finite(clip, &report, "detection loss"));
        }
        self.apply(&mut tape, &vars, loss, false, clip, &report)?;

        let mut bcl = false;
        if lc.bcl {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.train.seed);
            rng.set_stream(self.step as u64);
            let spans = clip.step_spans();
            if let Some(r) = rearrange_clip(&clip.features, clip.valid_steps, &spans, &mut rng) {
                let mut tape = Tape::new();
                let vars = self.model.params.attach(&mut tape);
                let x = tape.constant(clip.features.clone());
                let f = self.model.frame_features(&mut tape, &vars, x, clip.frames_per_step)?;
                let act = activation_guided_loss(&mut tape, &f, &clip.instances, lc.act_radius, lc.act_norm)?;
                let xr = tape.constant(r.features.clone());
                let fr = self.model.frame_features(&mut tape, &vars, xr, clip.frames_per_step)?;
                let trip = boundary_contrastive_loss(
                    &mut tape,
                    &fr,
                    &r,
                    lc.delta_a,
                    lc.delta_b_con,
                    lc.trip_margin,
                    lc.trip_symmetric,
                )?;
                report.act = tape.value(act).item();
                report.trip = tape.value(trip).item();
                if !report.is_finite() {
                    return Err(self.non_finite(clip, &report, "consistency loss"));
                }
                let total = tape.weighted_sum(&[(act, 1.0), (trip, 1.0)])?;
                self.apply(&mut tape, &vars, total, true, clip, &report)?;
                bcl = true;
            }
        }
        self.step += 1;
        Ok(StepRecord {
            epoch,
            step: self.step,
            clip: clip.name(),
            bcl,
            loss: report,
        })
    }

    /// Runs the configured number of epochs (or until `max_steps`).
    ///
    /// Clips without any ground truth are skipped. `on_epoch` runs after
    /// every completed epoch.
    pub fn fit<S, E>(&mut self, clips: &[ClipSample], mut on_step: S, mut on_epoch: E) -> Result<TrainOutcome>
    where
        S: FnMut(&StepRecord) -> Result<()>,
        E: FnMut(usize, &Afsd) -> Result<()>,
    {
        let usable: Vec<&ClipSample> = clips.iter().filter(|c| !c.instances.is_empty()).collect();
        let mut out = TrainOutcome {
            skipped_clips: clips.len() - usable.len(),
            ..TrainOutcome::default()
        };
        if usable.is_empty() {
            return Err(AfsdError::Argument("no training clip contains an action".into()));
        }
        let max_steps = self.cfg.train.max_steps;
        'epochs: for epoch in 0..self.cfg.train.epochs {
            let mut order: Vec<usize> = (0..usable.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.train.seed);
            rng.set_stream((1 << 32) + epoch as u64);
            order.shuffle(&mut rng);
            for i in order {
                if max_steps > 0 && self.step >= max_steps {
                    break 'epochs;
                }
                let rec = self.train_step(usable[i], epoch)?;
                out.steps += 1;
                out.bcl_steps += rec.bcl as usize;
                on_step(&rec)?;
            }
            out.epochs += 1;
            on_epoch(epoch, &self.model)?;
        }
        Ok(out)
    }
}
