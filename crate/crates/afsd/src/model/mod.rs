//! The AFSD network.
//!
//! A temporal pyramid is built over the input feature sequence. Every
//! pyramid location regresses its distances to the action start and end
//! and classifies itself (the coarse stage). Each coarse proposal is then
//! refined from features max-pooled around its two boundaries, taken both
//! from its own pyramid level and from a frame-level feature obtained by
//! upsampling the bottom level. All heads are shared across levels.
//!
//! Times are clip-local frames throughout. Location `i` of level `l` sits
//! at `i * frames_per_step * level0_stride * 2^l`.

pub mod checkpoint;
mod params;
mod regions;

pub use checkpoint::{load_model, save_model, ModelMeta};
pub use params::{ParamStore, ParamVars};
pub use regions::{boundary_regions, BoundaryRegions, CoarseBounds};

use tensorcore::{PoolKind, Region, Tape, Tensor, Var};

use crate::config::{Config, PoolMode};
use crate::error::{AfsdError, Result};
use params::Init;

const TOWER_DEPTH: usize = 2;
/// Prior foreground probability used to initialise the class heads.
const CLASS_PRIOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Action classes, not counting background.
    pub classes: usize,
    pub channels: usize,
    pub num_levels: usize,
    pub level0_stride: usize,
    pub groups: usize,
    pub pool: PoolMode,
    pub frame_convs: usize,
    pub width_floor: f64,
    pub delta_a: f64,
    pub delta_b: f64,
}

impl ModelSpec {
    pub fn from_config(cfg: &Config, input_dim: usize, classes: usize) -> Self {
        ModelSpec {
            input_dim,
            classes,
            channels: cfg.model.channels,
            num_levels: cfg.model.num_levels,
            level0_stride: cfg.model.level0_stride,
            groups: cfg.model.groups,
            pool: cfg.model.pool,
            frame_convs: cfg.model.frame_convs,
            width_floor: cfg.model.width_floor,
            delta_a: cfg.loss.delta_a,
            delta_b: cfg.loss.delta_b,
        }
    }

    fn pool_kind(&self) -> PoolKind {
        match self.pool {
            PoolMode::Max => PoolKind::Max,
            PoolMode::Mean => PoolKind::Mean,
            PoolMode::Conv => PoolKind::Conv,
            PoolMode::Stack => PoolKind::Stack,
        }
    }

    /// Minimum input length, in feature steps.
    pub fn min_len(&self) -> usize {
        self.level0_stride << (self.num_levels - 1)
    }

    /// Frames per step of pyramid level `level`.
    pub fn level_stride(&self, level: usize, frames_per_step: f64) -> f64 {
        frames_per_step * (self.level0_stride << level) as f64
    }
}

/// Boundary regions used by the refinement stage, one per location.
///
/// Passing a plan to [`Afsd::forward`] fixes the pooling regions instead
/// of deriving them from the current coarse predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPlan {
    pub regions: Vec<BoundaryRegions>,
}

/// Outputs of one forward pass, stacked over all pyramid levels (level 0
/// first).
#[derive(Clone, Debug)]
pub struct Forward {
    pub anchors: Vec<f64>,
    pub levels: Vec<usize>,
    pub coarse: Vec<CoarseBounds>,
    /// `N x 2` start and end distances in frames.
    pub dist: Var,
    /// `N x (classes + 1)` coarse logits.
    pub cls: Var,
    /// `N x 2` refinement offsets.
    pub delta: Var,
    /// `N x (classes + 1)` refined logits.
    pub rcls: Var,
    /// `N x 1` quality logits.
    pub quality: Var,
    pub frame: FrameFeatures,
    pub plan: RegionPlan,
}

/// Start- and end-sensitive frame-level features.
#[derive(Clone, Copy, Debug)]
pub struct FrameFeatures {
    pub start: Var,
    pub end: Var,
    /// Frames per frame-level step.
    pub step: f64,
}

/// Per-level coarse predictions.
#[derive(Clone, Debug)]
pub struct CoarseOutput {
    pub loc: Var,
    pub cls_feat: Var,
    pub dist: Var,
    pub logits: Var,
    pub anchors: Vec<f64>,
    pub bounds: Vec<CoarseBounds>,
}

#[derive(Clone, Debug)]
pub struct Afsd {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

impl Afsd {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        if !spec.channels.is_multiple_of(spec.groups) {
            return Err(AfsdError::Config(format!(
                "channels {} not divisible by groups {}",
                spec.channels, spec.groups
            )));
        }
        if spec.num_levels == 0 || spec.level0_stride == 0 || spec.input_dim == 0 || spec.classes == 0 {
            return Err(AfsdError::Config(format!("degenerate model spec {spec:?}")));
        }
        let params = init_params(&spec, seed);
        Ok(Afsd { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let expected = init_params(&spec, 0);
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(AfsdError::format(
                        "checkpoint",
                        format!("{name}: shape {:?}, model expects {:?}", p.shape(), t.shape()),
                    ))
                }
                None => return Err(AfsdError::format("checkpoint", format!("missing parameter {name}"))),
            }
        }
        if params.len() != expected.len() {
            return Err(AfsdError::format("checkpoint", "unexpected extra parameters"));
        }
        Ok(Afsd { spec, params })
    }

    fn conv(&self, tape: &mut Tape, v: &ParamVars, prefix: &str, x: Var, stride: usize) -> Result<Var> {
        let w = v.get(&format!("{prefix}.w"))?;
        let pad = tape.shape(w)[0] / 2;
        let b = v.get(&format!("{prefix}.b"))?;
        Ok(tape.conv1d(x, w, b, stride, pad)?)
    }

    /// Convolution, group norm and relu.
    fn block(&self, tape: &mut Tape, v: &ParamVars, prefix: &str, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv(tape, v, prefix, x, stride)?;
        let g = v.get(&format!("{prefix}.gn.gamma"))?;
        let b = v.get(&format!("{prefix}.gn.beta"))?;
        let y = tape.group_norm(y, self.spec.groups, g, b, 1e-5)?;
        Ok(tape.relu(y))
    }

    /// Pyramid levels over an input of shape `T x input_dim`.
    pub fn build_pyramid(&self, tape: &mut Tape, v: &ParamVars, x: Var) -> Result<Vec<Var>> {
        let t = tape.shape(x)[0];
        if t < self.spec.min_len() {
            return Err(AfsdError::Config(format!(
                "input of {t} steps is shorter than the {} the pyramid needs",
                self.spec.min_len()
            )));
        }
        let mut levels = vec![self.block(tape, v, "proj", x, self.spec.level0_stride)?];
        for l in 1..self.spec.num_levels {
            let prev = levels[l - 1];
            levels.push(self.block(tape, v, &format!("down{l}"), prev, 2)?);
        }
        Ok(levels)
    }

    /// Upsampled bottom level followed by the frame convolutions.
    pub fn frame_level_feature(&self, tape: &mut Tape, v: &ParamVars, level0: Var) -> Result<Var> {
        let mut f = tape.linear_upsample(level0, self.spec.level0_stride)?;
        for i in 0..self.spec.frame_convs {
            f = self.block(tape, v, &format!("frame{i}"), f, 1)?;
        }
        Ok(f)
    }

    fn frame_sensitive(
        &self,
        tape: &mut Tape,
        v: &ParamVars,
        level0: Var,
        frames_per_step: f64,
    ) -> Result<FrameFeatures> {
        let f = self.frame_level_feature(tape, v, level0)?;
        Ok(FrameFeatures {
            start: self.block(tape, v, "frame_start", f, 1)?,
            end: self.block(tape, v, "frame_end", f, 1)?,
            step: frames_per_step,
        })
    }

    /// Frame-level sensitive features only, skipping the detection heads.
    pub fn frame_features(
        &self,
        tape: &mut Tape,
        v: &ParamVars,
        x: Var,
        frames_per_step: f64,
    ) -> Result<FrameFeatures> {
        let level0 = self.block(tape, v, "proj", x, self.spec.level0_stride)?;
        self.frame_sensitive(tape, v, level0, frames_per_step)
    }

    /// Shared towers and heads applied to one pyramid level.
    pub fn predict_coarse(
        &self,
        tape: &mut Tape,
        v: &ParamVars,
        feat: Var,
        level: usize,
        frames_per_step: f64,
    ) -> Result<CoarseOutput> {
        let mut loc = feat;
        let mut cls_feat = feat;
        for i in 0..TOWER_DEPTH {
            loc = self.block(tape, v, &format!("loc_tower{i}"), loc, 1)?;
            cls_feat = self.block(tape, v, &format!("cls_tower{i}"), cls_feat, 1)?;
        }
        let stride = self.spec.level_stride(level, frames_per_step);
        let raw = self.conv(tape, v, "loc_head", loc, 1)?;
        let raw = tape.relu(raw);
        let dist = tape.scale(raw, stride);
        let logits = self.conv(tape, v, "cls_head", cls_feat, 1)?;
        let dv = tape.value(dist);
        let anchors: Vec<f64> = (0..dv.rows()).map(|i| i as f64 * stride).collect();
        let bounds = anchors
            .iter()
            .enumerate()
            .map(|(i, &t)| CoarseBounds::from_distances(t, dv.at(i, 0), dv.at(i, 1), self.spec.width_floor))
            .collect();
        Ok(CoarseOutput {
            loc,
            cls_feat,
            dist,
            logits,
            anchors,
            bounds,
        })
    }

    fn pool(&self, tape: &mut Tape, v: &ParamVars, x: Var, regions: &[Region], conv_name: &str) -> Result<Var> {
        Ok(match self.spec.pool {
            PoolMode::Conv => tape.region_pool_conv(x, regions, v.get(conv_name)?)?,
            _ => tape.region_pool(x, regions, self.spec.pool_kind())?,
        })
    }

    /// Refinement offsets, refined logits and quality logits for one level.
    pub fn refine(
        &self,
        tape: &mut Tape,
        v: &ParamVars,
        coarse: &CoarseOutput,
        level_stride: f64,
        frame: &FrameFeatures,
        regions: &[BoundaryRegions],
    ) -> Result<(Var, Var, Var)> {
        let to_units = |r: (f64, f64), unit: f64| Region::new(r.0 / unit, r.1 / unit);
        let starts_l: Vec<Region> = regions.iter().map(|r| to_units(r.start, level_stride)).collect();
        let ends_l: Vec<Region> = regions.iter().map(|r| to_units(r.end, level_stride)).collect();
        let starts_f: Vec<Region> = regions.iter().map(|r| to_units(r.start, frame.step)).collect();
        let ends_f: Vec<Region> = regions.iter().map(|r| to_units(r.end, frame.step)).collect();

        let fs = self.pool(tape, v, frame.start, &starts_f, "pool_frame_start.w")?;
        let fe = self.pool(tape, v, frame.end, &ends_f, "pool_frame_end.w")?;

        let path = |tape: &mut Tape, feat: Var, name: &str| -> Result<Var> {
            let s = self.block(tape, v, &format!("{name}_start"), feat, 1)?;
            let e = self.block(tape, v, &format!("{name}_end"), feat, 1)?;
            let ps = self.pool(tape, v, s, &starts_l, "pool_level_start.w")?;
            let pe = self.pool(tape, v, e, &ends_l, "pool_level_end.w")?;
            let cat = tape.concat_cols(&[feat, ps, pe, fs, fe])?;
            let fused = self.conv(tape, v, &format!("{name}_fuse"), cat, 1)?;
            Ok(tape.relu(fused))
        };
        let loc = path(tape, coarse.loc, "loc")?;
        let cls = path(tape, coarse.cls_feat, "cls")?;
        let delta = self.conv(tape, v, "delta_head", loc, 1)?;
        let quality = self.conv(tape, v, "quality_head", loc, 1)?;
        let rcls = self.conv(tape, v, "rcls_head", cls, 1)?;
        Ok((delta, rcls, quality))
    }

    /// Full forward pass over `x` (`T x input_dim` feature steps).
    pub fn forward(
        &self,
        tape: &mut Tape,
        v: &ParamVars,
        x: Var,
        frames_per_step: f64,
        plan: Option<&RegionPlan>,
    ) -> Result<Forward> {
        let pyramid = self.build_pyramid(tape, v, x)?;
        let frame = self.frame_sensitive(tape, v, pyramid[0], frames_per_step)?;
        let mut out = Stacker::default();
        let mut all_regions = Vec::new();
        let mut offset = 0;
        for (level, &feat) in pyramid.iter().enumerate() {
            let coarse = self.predict_coarse(tape, v, feat, level, frames_per_step)?;
            let n = coarse.anchors.len();
            let regions: Vec<BoundaryRegions> = match plan {
                Some(p) => {
                    if p.regions.len() < offset + n {
                        return Err(AfsdError::Argument("region plan is shorter than the pyramid".into()));
                    }
                    p.regions[offset..offset + n].to_vec()
                }
                None => coarse
                    .bounds
                    .iter()
                    .map(|b| boundary_regions(b.start, b.end, self.spec.delta_a, self.spec.delta_b))
                    .collect::<Result<_>>()?,
            };
            let stride = self.spec.level_stride(level, frames_per_step);
            let (delta, rcls, quality) = self.refine(tape, v, &coarse, stride, &frame, &regions)?;
            out.levels.extend(std::iter::repeat_n(level, n));
            out.anchors.extend_from_slice(&coarse.anchors);
            out.coarse.extend_from_slice(&coarse.bounds);
            out.dist.push(coarse.dist);
            out.cls.push(coarse.logits);
            out.delta.push(delta);
            out.rcls.push(rcls);
            out.quality.push(quality);
            all_regions.extend(regions);
            offset += n;
        }
        if let Some(p) = plan {
            if p.regions.len() != offset {
                return Err(AfsdError::Argument("region plan is longer than the pyramid".into()));
            }
        }
        Ok(Forward {
            dist: tape.concat_rows(&out.dist)?,
            cls: tape.concat_rows(&out.cls)?,
            delta: tape.concat_rows(&out.delta)?,
            rcls: tape.concat_rows(&out.rcls)?,
            quality: tape.concat_rows(&out.quality)?,
            anchors: out.anchors,
            levels: out.levels,
            coarse: out.coarse,
            frame,
            plan: RegionPlan { regions: all_regions },
        })
    }

    /// Convenience wrapper: attaches the parameters to a fresh tape and
    /// runs the forward pass.
    pub fn run(&self, x: &Tensor, frames_per_step: f64) -> Result<(Tape, ParamVars, Forward)> {
        let mut tape = Tape::new();
        let v = self.params.attach(&mut tape);
        let xv = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, &v, xv, frames_per_step, None)?;
        Ok((tape, v, fwd))
    }
}

#[derive(Default)]
struct Stacker {
    anchors: Vec<f64>,
    levels: Vec<usize>,
    coarse: Vec<CoarseBounds>,
    dist: Vec<Var>,
    cls: Vec<Var>,
    delta: Vec<Var>,
    rcls: Vec<Var>,
    quality: Vec<Var>,
}

fn init_params(spec: &ModelSpec, seed: u64) -> ParamStore {
    let mut init = Init::new(seed);
    let mut p = ParamStore::new();
    let c = spec.channels;
    let k1 = spec.classes + 1;
    let block = |p: &mut ParamStore, init: &mut Init, name: &str, k: usize, cin: usize| {
        p.insert(format!("{name}.w"), init.conv(k, cin, c));
        p.insert(format!("{name}.b"), Tensor::zeros(&[c]));
        p.insert(format!("{name}.gn.gamma"), Tensor::full(&[c], 1.0));
        p.insert(format!("{name}.gn.beta"), Tensor::zeros(&[c]));
    };
    block(&mut p, &mut init, "proj", 3, spec.input_dim);
    for l in 1..spec.num_levels {
        block(&mut p, &mut init, &format!("down{l}"), 3, c);
    }
    for i in 0..TOWER_DEPTH {
        block(&mut p, &mut init, &format!("loc_tower{i}"), 3, c);
        block(&mut p, &mut init, &format!("cls_tower{i}"), 3, c);
    }
    for i in 0..spec.frame_convs {
        block(&mut p, &mut init, &format!("frame{i}"), 3, c);
    }
    for name in [
        "loc_start",
        "loc_end",
        "cls_start",
        "cls_end",
        "frame_start",
        "frame_end",
    ] {
        block(&mut p, &mut init, name, 1, c);
    }
    let pooled = spec.pool_kind().output_width(c);
    for name in ["loc_fuse", "cls_fuse"] {
        p.insert(format!("{name}.w"), init.conv(1, c + 4 * pooled, c));
        p.insert(format!("{name}.b"), Tensor::zeros(&[c]));
    }
    if spec.pool == PoolMode::Conv {
        for name in [
            "pool_level_start",
            "pool_level_end",
            "pool_frame_start",
            "pool_frame_end",
        ] {
            p.insert(format!("{name}.w"), Tensor::full(&[3, c], 1.0 / 3.0));
        }
    }
    let head = |p: &mut ParamStore, init: &mut Init, name: &str, cout: usize, bias: Vec<f64>| {
        p.insert(format!("{name}.w"), init.normal(&[3, c, cout], 0.01));
        p.insert(format!("{name}.b"), Tensor::vector(bias).expect("non-empty bias"));
    };
    // Distances start near one level stride on each side.
    head(&mut p, &mut init, "loc_head", 2, vec![1.0, 1.0]);
    let mut cls_bias = vec![0.0; k1];
    cls_bias[0] = ((1.0 - CLASS_PRIOR) / CLASS_PRIOR * spec.classes as f64).ln();
    head(&mut p, &mut init, "cls_head", k1, cls_bias.clone());
    head(&mut p, &mut init, "rcls_head", k1, cls_bias);
    head(&mut p, &mut init, "delta_head", 2, vec![0.0, 0.0]);
    head(&mut p, &mut init, "quality_head", 1, vec![0.0]);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(levels: usize, pool: PoolMode) -> ModelSpec {
        ModelSpec {
            input_dim: 5,
            classes: 2,
            channels: 8,
            num_levels: levels,
            level0_stride: 1,
            groups: 4,
            pool,
            frame_convs: 2,
            width_floor: 1.0,
            delta_a: 4.0,
            delta_b: 10.0,
        }
    }

    fn input(t: usize, d: usize) -> Tensor {
        Tensor::new(
            vec![t, d],
            (0..t * d).map(|i| ((i * 37 % 17) as f64 / 8.0) - 1.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn pyramid_halves() {
        let m = Afsd::new(spec(6, PoolMode::Max), 1).unwrap();
        let mut tape = Tape::new();
        let v = m.params.attach(&mut tape);
        let x = tape.constant(input(32, 5));
        let levels = m.build_pyramid(&mut tape, &v, x).unwrap();
        let lens: Vec<usize> = levels.iter().map(|&l| tape.shape(l)[0]).collect();
        assert_eq!(lens, [32, 16, 8, 4, 2, 1]);
        assert!(levels.iter().all(|&l| tape.shape(l)[1] == 8));

        let single = Afsd::new(spec(1, PoolMode::Max), 1).unwrap();
        let mut tape = Tape::new();
        let v = single.params.attach(&mut tape);
        let x = tape.constant(input(32, 5));
        assert_eq!(single.build_pyramid(&mut tape, &v, x).unwrap().len(), 1);

        let x = tape.constant(input(16, 5));
        assert!(m
            .build_pyramid(&mut tape, &m.params.attach(&mut Tape::new()), x)
            .is_err());
    }

    #[test]
    fn frame_feature_resolution() {
        let mut s = spec(3, PoolMode::Max);
        s.level0_stride = 4;
        let m = Afsd::new(s, 2).unwrap();
        let mut tape = Tape::new();
        let v = m.params.attach(&mut tape);
        let x = tape.constant(input(128, 5));
        let levels = m.build_pyramid(&mut tape, &v, x).unwrap();
        assert_eq!(tape.shape(levels[0])[0], 32);
        let f = m.frame_level_feature(&mut tape, &v, levels[0]).unwrap();
        assert_eq!(tape.shape(f)[0], 128);
    }

    #[test]
    fn proposal_counts_and_anchor_alignment() {
        let m = Afsd::new(spec(4, PoolMode::Max), 3).unwrap();
        let (tape, _, fwd) = m.run(&input(24, 5), 2.0).unwrap();
        assert_eq!(fwd.anchors.len(), 24 + 12 + 6 + 3);
        assert_eq!(tape.shape(fwd.dist), [45, 2]);
        assert_eq!(tape.shape(fwd.cls), [45, 3]);
        assert_eq!(tape.shape(fwd.quality), [45, 1]);
        // level l index 2i and level l+1 index i share a time
        assert_eq!(fwd.anchors[4], fwd.anchors[24 + 2]);
        assert_eq!(fwd.anchors[24 + 4], fwd.anchors[36 + 2]);
        for (b, &a) in fwd.coarse.iter().zip(&fwd.anchors) {
            assert!(b.width() >= 1.0 - 1e-12 && b.start <= a + 0.5 && b.end >= a - 0.5);
        }
    }

    #[test]
    fn pool_modes_share_shapes() {
        let mut shapes = Vec::new();
        for pool in [PoolMode::Max, PoolMode::Mean, PoolMode::Conv, PoolMode::Stack] {
            let m = Afsd::new(spec(3, pool), 4).unwrap();
            let (mut tape, v, fwd) = m.run(&input(16, 5), 1.0).unwrap();
            shapes.push([
                tape.shape(fwd.delta).to_vec(),
                tape.shape(fwd.rcls).to_vec(),
                tape.shape(fwd.quality).to_vec(),
            ]);
            let a = tape.sum(fwd.rcls);
            let b = tape.sum(fwd.delta);
            let total = tape.weighted_sum(&[(a, 1.0), (b, 1.0)]).unwrap();
            let mut g = tape.backward(total).unwrap();
            let grads = m.params.collect_grads(&v, &mut g);
            assert!(grads.values().all(|t| t.is_finite()));
        }
        assert!(shapes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn plan_is_honoured() {
        let m = Afsd::new(spec(2, PoolMode::Max), 5).unwrap();
        let x = input(8, 5);
        let (tape, _, base) = m.run(&x, 1.0).unwrap();
        let mut tape2 = Tape::new();
        let v = m.params.attach(&mut tape2);
        let xv = tape2.constant(x);
        let again = m.forward(&mut tape2, &v, xv, 1.0, Some(&base.plan)).unwrap();
        assert_eq!(tape.value(base.delta), tape2.value(again.delta));
        let short = RegionPlan {
            regions: base.plan.regions[..3].to_vec(),
        };
        let mut tape3 = Tape::new();
        let v = m.params.attach(&mut tape3);
        let xv = tape3.constant(input(8, 5));
        assert!(m.forward(&mut tape3, &v, xv, 1.0, Some(&short)).is_err());
    }

    #[test]
    fn checkpoint_shapes_are_checked() {
        let m = Afsd::new(spec(2, PoolMode::Max), 6).unwrap();
        assert!(Afsd::from_params(m.spec.clone(), m.params.clone()).is_ok());
        let other = Afsd::new(spec(3, PoolMode::Max), 6).unwrap();
        assert!(Afsd::from_params(m.spec.clone(), other.params).is_err());
    }
}
