//! Structure generation block: sketch refinement, sketch-gated color
//! propagation and fusion into the encoder skip feature.
//!
//! Round `i` of a block with `n` rounds computes
//!
//! ```text
//! F_s^0 = I(mean_c(F_enc), S ⊕ (N ⊙ M))
//! F_s^i = I(Conv(F_s^{i-1}), S ⊕ (N ⊙ M))
//! F_c^i = (1 − σ(F_s^{i-1})) ⊗ Conv(F_c^{i-1})
//! F^i   = I(F^{i-1} ⊗ (σ(F_s^{i-1}) + 1), F_c^{i-1})
//! ```
//!
//! with `F^0 = F_enc` and `F_c^0` a 1×1 projection of the color control.
//! The block output is `F^n`. Only `F_s^0..F_s^{n-1}` and
//! `F_c^0..F_c^{n-1}` feed the output, so those are the rounds built.

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamStore, ParamView, Var};
use crate::injection::{default_hidden_channels, InjectionParams};
use crate::layers::Conv2d;
use crate::rng;
use crate::tensor::Tensor;

/// Fusion rounds never exceed this at the shallowest scale.
pub const MAX_INJECTIONS: usize = 6;

/// Sketch binarization threshold applied after area-averaging.
pub const SKETCH_RESIZE_THRESHOLD: f64 = 0.05;

/// Rounds for the block at `level_index` (0 = shallowest) of a `levels`-deep encoder.
pub fn injection_count(levels: usize, level_index: usize) -> usize {
    levels.saturating_sub(level_index).clamp(1, MAX_INJECTIONS)
}

/// Color branch width for a `feature_channels`-wide skip feature.
pub fn color_width(feature_channels: usize) -> usize {
    (feature_channels / 2).max(4)
}

/// Controls at one resolution. `mask` is 1 inside the hole.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBundle {
    /// `[N, 1, h, w]` in `[0, 1]`.
    pub sketch: Tensor,
    /// `[N, 3, h, w]` in `[0, 1]`, zero off the strokes.
    pub color: Tensor,
    /// `[N, 1, h, w]` binary.
    pub mask: Tensor,
    /// `[N, 1, h, w]` standard normal.
    pub noise: Tensor,
}

impl ControlBundle {
    pub fn new(sketch: Tensor, color: Tensor, mask: Tensor, noise: Tensor) -> Result<Self> {
        let (n, c, h, w) = sketch.dims4()?;
        if c != 1 {
            return Err(Error::shape(format!("sketch must have 1 channel, got {c}")));
        }
        if color.shape() != [n, 3, h, w] {
            return Err(Error::shape(format!(
                "color control {:?} does not match sketch {:?}",
                color.shape(),
                sketch.shape()
            )));
        }
        for (name, t) in [("mask", &mask), ("noise", &noise)] {
            if t.shape() != sketch.shape() {
                return Err(Error::shape(format!("{name} {:?} does not match sketch {:?}", t.shape(), sketch.shape())));
            }
        }
        if !mask.is_binary() {
            return Err(Error::invalid("mask must be exactly binary"));
        }
        Ok(Self { sketch, color, mask, noise })
    }

    /// Bundle with noise drawn from `noise_seed` at this resolution.
    pub fn with_fresh_noise(sketch: Tensor, color: Tensor, mask: Tensor, noise_seed: u64) -> Result<Self> {
        let noise = fresh_noise(sketch.shape(), noise_seed);
        Self::new(sketch, color, mask, noise)
    }

    /// `(height, width)`
    pub fn size(&self) -> (usize, usize) {
        (self.sketch.shape()[2], self.sketch.shape()[3])
    }
}

fn fresh_noise(shape: &[usize], noise_seed: u64) -> Tensor {
    let mut r = rng::rng_from(noise_seed, &[shape[2] as u64, shape[3] as u64]);
    rng::standard_normal(shape.to_vec(), &mut r)
}

fn pool(t: &Tensor, factor: usize, reduce: impl Fn(&[f64]) -> f64) -> Tensor {
    let (n, c, h, w) = t.dims4().expect("4-D");
    let (oh, ow) = (h / factor, w / factor);
    let mut window = Vec::with_capacity(factor * factor);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    window.clear();
                    for dy in 0..factor {
                        for dx in 0..factor {
                            window.push(t.at4(b, ch, oy * factor + dy, ox * factor + dx));
                        }
                    }
                    out.set4(b, ch, oy, ox, reduce(&window));
                }
            }
        }
    }
    out
}

/// Brings image-resolution controls to a `target × target` scale.
///
/// Sketch and color are area-averaged (the sketch is then re-binarized at
/// [`SKETCH_RESIZE_THRESHOLD`]), the mask is max-pooled so holes never
/// shrink, and noise is drawn fresh at the target size from `noise_seed`.
/// An identity resize leaves sketch, color and mask untouched.
pub fn resize_controls(raw: &ControlBundle, target: (usize, usize), noise_seed: u64) -> Result<ControlBundle> {
    let (h, w) = raw.size();
    let (th, tw) = target;
    let factor = if th > 0 { h / th } else { 0 };
    let dyadic = th > 0 && tw > 0 && factor.is_power_of_two() && th * factor == h && tw * factor == w;
    if !dyadic {
        return Err(Error::invalid(format!(
            "cannot resize {h}x{w} controls to {th}x{tw}: not a power-of-two reduction"
        )));
    }
    let noise = fresh_noise(&[raw.sketch.shape()[0], 1, th, tw], noise_seed);
    if factor == 1 {
        return ControlBundle::new(raw.sketch.clone(), raw.color.clone(), raw.mask.clone(), noise);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sketch = pool(&raw.sketch, factor, mean).map(|v| if v >= SKETCH_RESIZE_THRESHOLD { 1.0 } else { 0.0 });
    let color = pool(&raw.color, factor, mean);
    let mask = pool(&raw.mask, factor, |v| v.iter().copied().fold(0.0, f64::max));
    ControlBundle::new(sketch, color, mask, noise)
}

/// Graph handles for the controls of one block.
#[derive(Clone, Copy, Debug)]
pub struct ScaleControls {
    pub sketch: Var,
    pub color: Var,
    /// `N ⊙ M`
    pub masked_noise: Var,
}

impl ScaleControls {
    /// Controls taken as constants.
    pub fn constant(g: &mut Graph, bundle: &ControlBundle) -> Result<Self> {
        let sketch = g.constant(bundle.sketch.clone());
        let color = g.constant(bundle.color.clone());
        Self::with_vars(g, bundle, sketch, color)
    }

    /// Uses the given sketch/color nodes, which must hold `bundle`'s values.
    pub fn with_vars(g: &mut Graph, bundle: &ControlBundle, sketch: Var, color: Var) -> Result<Self> {
        let masked_noise = g.constant(bundle.noise.zip_map(&bundle.mask, |n, m| n * m)?);
        Ok(Self { sketch, color, masked_noise })
    }

    /// Resizes `raw` to `target`. At identity scale the raw sketch and
    /// color nodes are used directly so gradients reach them.
    pub fn prepare(
        g: &mut Graph,
        raw: &ControlBundle,
        raw_sketch: Var,
        raw_color: Var,
        target: (usize, usize),
        noise_seed: u64,
    ) -> Result<Self> {
        let resized = resize_controls(raw, target, noise_seed)?;
        if raw.size() == target {
            Self::with_vars(g, &resized, raw_sketch, raw_color)
        } else {
            Self::constant(g, &resized)
        }
    }

    /// `S ⊕ (N ⊙ M)`
    pub fn sketch_control(&self, g: &mut Graph) -> Result<Var> {
        g.concat_channels(&[self.sketch, self.masked_noise])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SgbConfig {
    pub scale_index: usize,
    pub n_injections: usize,
    pub feature_channels: usize,
    pub color_width: usize,
}

impl SgbConfig {
    pub fn for_level(levels: usize, level_index: usize, feature_channels: usize) -> Self {
        Self {
            scale_index: level_index,
            n_injections: injection_count(levels, level_index),
            feature_channels,
            color_width: color_width(feature_channels),
        }
    }
}

/// Per-round intermediate features of one block.
#[derive(Clone, Debug)]
pub struct SgbState {
    /// `F_s^0 .. F_s^{n-1}`
    pub sketch_feats: Vec<Var>,
    /// `F_c^0 .. F_c^{n-1}`
    pub color_feats: Vec<Var>,
    /// `F^0 .. F^n`; `F^0` is the encoder feature.
    pub fused: Vec<Var>,
}

impl SgbState {
    pub fn output(&self) -> Var {
        *self.fused.last().expect("at least F^0")
    }

    pub fn rounds(&self) -> usize {
        self.fused.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct SketchStep {
    pub conv: Conv2d,
    pub inject: InjectionParams,
}

#[derive(Clone, Debug)]
pub struct SgbParams {
    pub config: SgbConfig,
    pub sketch_init: InjectionParams,
    /// Rounds `1..n` of sketch refinement.
    pub sketch_steps: Vec<SketchStep>,
    pub color_init: Conv2d,
    /// Rounds `1..n` of color propagation.
    pub color_steps: Vec<Conv2d>,
    /// Rounds `1..=n` of fusion.
    pub fusion: Vec<InjectionParams>,
}

impl SgbParams {
    pub fn build(store: &mut ParamStore, name: &str, config: SgbConfig, seed: u64) -> Result<Self> {
        let n = config.n_injections;
        if n == 0 {
            return Err(Error::invalid("an SGB needs at least one injection"));
        }
        let (c, cc) = (config.feature_channels, config.color_width);
        let sketch_hidden = default_hidden_channels(1);
        let mut r = rng::rng_from(seed, &[rng::tag(name)]);
        let sketch_init = InjectionParams::build(store, &format!("{name}.sketch0.inject"), 1, 2, sketch_hidden, seed)?;
        let mut sketch_steps = Vec::with_capacity(n - 1);
        let mut color_steps = Vec::with_capacity(n - 1);
        for i in 1..n {
            let conv = Conv2d::same(store, &format!("{name}.sketch{i}.conv"), 1, 1, 3, &mut r)?;
            let inject = InjectionParams::build(store, &format!("{name}.sketch{i}.inject"), 1, 2, sketch_hidden, seed)?;
            sketch_steps.push(SketchStep { conv, inject });
            color_steps.push(Conv2d::same(store, &format!("{name}.color{i}.conv"), cc, cc, 3, &mut r)?);
        }
        let color_init = Conv2d::same(store, &format!("{name}.color0.proj"), 3, cc, 1, &mut r)?;
        let fusion = (1..=n)
            .map(|i| {
                InjectionParams::build(
                    store,
                    &format!("{name}.fuse{i}.inject"),
                    c,
                    cc,
                    default_hidden_channels(c),
                    seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, sketch_init, sketch_steps, color_init, color_steps, fusion })
    }

    /// Runs all rounds on a feature whose controls are already at its scale.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: ParamView<'_>,
        feature: Var,
        controls: &ScaleControls,
    ) -> Result<SgbState> {
        let (_, c, h, w) = g.value(feature).dims4()?;
        let (_, _, ch, cw) = g.value(controls.sketch).dims4()?;
        if (h, w) != (ch, cw) {
            return Err(Error::shape(format!("SGB controls are {ch}x{cw} but the feature is {h}x{w}")));
        }
        if c != self.config.feature_channels {
            return Err(Error::shape(format!(
                "SGB built for {} channels, feature has {c}",
                self.config.feature_channels
            )));
        }
        let sketch_ctl = controls.sketch_control(g)?;
        let n = self.config.n_injections;

        let mut fs = sketch_init(g, params, &self.sketch_init, feature, sketch_ctl)?;
        let mut fc = color_init(g, params, &self.color_init, controls.color)?;
        let mut f = feature;
        let mut state = SgbState { sketch_feats: vec![fs], color_feats: vec![fc], fused: vec![f] };
        for i in 1..=n {
            let f_next = fusion_step(g, params, &self.fusion[i - 1], f, fs, fc)?;
            if i < n {
                let step = &self.sketch_steps[i - 1];
                let fs_next = sketch_step(g, params, &step.conv, &step.inject, fs, sketch_ctl)?;
                let fc_next = color_step(g, params, &self.color_steps[i - 1], fc, fs)?;
                fs = fs_next;
                fc = fc_next;
                state.sketch_feats.push(fs);
                state.color_feats.push(fc);
            }
            f = f_next;
            state.fused.push(f);
        }
        Ok(state)
    }
}

/// `F_s^0 = I(mean_c(F_enc), S ⊕ (N ⊙ M))`
pub fn sketch_init(
    g: &mut Graph,
    params: ParamView<'_>,
    inject: &InjectionParams,
    feature: Var,
    sketch_control: Var,
) -> Result<Var> {
    let avg = g.channel_mean(feature)?;
    inject.inject(g, params, avg, sketch_control)
}

/// `F_s^i = I(Conv(F_s^{i-1}), S ⊕ (N ⊙ M))`
pub fn sketch_step(
    g: &mut Graph,
    params: ParamView<'_>,
    conv: &Conv2d,
    inject: &InjectionParams,
    fs_prev: Var,
    sketch_control: Var,
) -> Result<Var> {
    let refined = conv.forward(g, params, fs_prev)?;
    inject.inject(g, params, refined, sketch_control)
}

/// `F_c^0`: 1×1 projection of the 3-channel color control.
pub fn color_init(g: &mut Graph, params: ParamView<'_>, proj: &Conv2d, color: Var) -> Result<Var> {
    proj.forward(g, params, color)
}

/// `F_c^i = (1 − σ(F_s^{i-1})) ⊗ Conv(F_c^{i-1})`, gate broadcast over channels.
pub fn color_step(g: &mut Graph, params: ParamView<'_>, conv: &Conv2d, fc_prev: Var, fs_prev: Var) -> Result<Var> {
    let (_, cc, h, w) = g.value(fc_prev).dims4()?;
    let (_, _, sh, sw) = g.value(fs_prev).dims4()?;
    if (h, w) != (sh, sw) {
        return Err(Error::shape(format!("color feature is {h}x{w} but sketch feature is {sh}x{sw}")));
    }
    let propagated = conv.forward(g, params, fc_prev)?;
    // 1 − σ(x) = σ(−x), which keeps precision when σ(x) is close to 1
    let neg = g.scale(fs_prev, -1.0);
    let gate = g.sigmoid(neg);
    let gate = g.broadcast_channel(gate, cc)?;
    g.mul(gate, propagated)
}

/// `F^i = I(F^{i-1} ⊗ (σ(F_s^{i-1}) + 1), F_c^{i-1})`
pub fn fusion_step(
    g: &mut Graph,
    params: ParamView<'_>,
    inject: &InjectionParams,
    f_prev: Var,
    fs_prev: Var,
    fc_prev: Var,
) -> Result<Var> {
    let amplified = fusion_input(g, f_prev, fs_prev)?;
    inject.inject(g, params, amplified, fc_prev)
}

/// `F^{i-1} ⊗ (σ(F_s^{i-1}) + 1)`
pub fn fusion_input(g: &mut Graph, f_prev: Var, fs_prev: Var) -> Result<Var> {
    let (_, c, h, w) = g.value(f_prev).dims4()?;
    let (_, _, sh, sw) = g.value(fs_prev).dims4()?;
    if (h, w) != (sh, sw) {
        return Err(Error::shape(format!("fused feature is {h}x{w} but sketch feature is {sh}x{sw}")));
    }
    let s = g.sigmoid(fs_prev);
    let multiplier = g.add_scalar(s, 1.0);
    let multiplier = g.broadcast_channel(multiplier, c)?;
    g.mul(f_prev, multiplier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use crate::ops;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        rng::standard_normal(shape, &mut rng::rng_from(seed, &[]))
    }

    fn bundle(n: usize, size: usize, seed: u64) -> ControlBundle {
        let mut r = rng::rng_from(seed, &[1]);
        let sketch = rng::uniform([n, 1, size, size], 0.0, 1.0, &mut r);
        let color = rng::uniform([n, 3, size, size], 0.0, 1.0, &mut r);
        let mask = rng::uniform([n, 1, size, size], 0.0, 1.0, &mut r).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        ControlBundle::with_fresh_noise(sketch, color, mask, seed).unwrap()
    }

    #[test]
    fn injection_schedule() {
        let counts: Vec<_> = (0..6).map(|i| injection_count(6, i)).collect();
        assert_eq!(counts, [6, 5, 4, 3, 2, 1]);
        let counts: Vec<_> = (0..4).map(|i| injection_count(4, i)).collect();
        assert_eq!(counts, [4, 3, 2, 1]);
        assert_eq!(injection_count(8, 0), 6);
        assert_eq!(color_width(16), 8);
        assert_eq!(color_width(4), 4);
    }

    #[test]
    fn identity_resize_keeps_sketch() {
        let raw = bundle(1, 8, 3);
        let out = resize_controls(&raw, (8, 8), 5).unwrap();
        assert_eq!(out.sketch, raw.sketch);
        assert_eq!(out.mask, raw.mask);
    }

    #[test]
    fn all_hole_mask_stays_all_hole() {
        let mut raw = bundle(1, 16, 3);
        raw.mask = Tensor::ones([1, 1, 16, 16]);
        for t in [8, 4, 2, 1] {
            assert_eq!(resize_controls(&raw, (t, t), 0).unwrap().mask, Tensor::ones([1, 1, t, t]));
        }
    }

    #[test]
    fn small_hole_pools_to_one_cell() {
        let mut raw = bundle(1, 16, 3);
        let mut mask = Tensor::zeros([1, 1, 16, 16]);
        for (y, x) in [(6, 10), (6, 11), (7, 10), (7, 11)] {
            mask.set4(0, 0, y, x, 1.0);
        }
        raw.mask = mask;
        let out = resize_controls(&raw, (8, 8), 0).unwrap();
        // pooling windows are aligned to even coordinates, so the 2×2 hole
        // at rows 6-7, cols 10-11 lands in exactly cell (3, 5)
        let ones: Vec<_> = (0..64).filter(|&i| out.mask.data()[i] == 1.0).collect();
        assert_eq!(ones, vec![3 * 8 + 5]);
    }

    #[test]
    fn resize_rejects_non_dyadic_targets() {
        let raw = bundle(1, 16, 3);
        assert!(resize_controls(&raw, (6, 6), 0).is_err());
        assert!(resize_controls(&raw, (0, 0), 0).is_err());
        assert!(resize_controls(&raw, (8, 4), 0).is_err());
    }

    #[test]
    fn resized_sketch_is_binary_and_keeps_thin_lines() {
        let mut raw = bundle(1, 16, 3);
        let mut sketch = Tensor::zeros([1, 1, 16, 16]);
        for y in 0..16 {
            sketch.set4(0, 0, y, 5, 1.0);
        }
        raw.sketch = sketch;
        let out = resize_controls(&raw, (1, 1), 0).unwrap();
        assert_eq!(out.sketch.data(), &[1.0]);
        let out = resize_controls(&raw, (4, 4), 0).unwrap();
        assert!(out.sketch.is_binary());
        assert_eq!(out.sketch.sum(), 4.0);
    }

    #[test]
    fn color_gate_is_half_for_zero_sketch() {
        let mut store = ParamStore::new();
        let mut r = rng::rng_from(1, &[]);
        let conv = Conv2d::same(&mut store, "c", 4, 4, 3, &mut r).unwrap();
        let mut g = Graph::new();
        let fc = g.constant(random([1, 4, 5, 5], 2));
        let fs = g.constant(Tensor::zeros([1, 1, 5, 5]));
        let out = color_step(&mut g, store.frozen(), &conv, fc, fs).unwrap();
        let expected =
            ops::conv2d(g.value(fc), store.get(conv.weight), store.get(conv.bias), 1, 1).unwrap().map(|v| 0.5 * v);
        assert_eq!(g.value(out), &expected);
    }

    #[test]
    fn saturated_sketch_blocks_color() {
        let mut store = ParamStore::new();
        let mut r = rng::rng_from(1, &[]);
        let conv = Conv2d::same(&mut store, "c", 4, 4, 3, &mut r).unwrap();
        let mut g = Graph::new();
        let fc_t = random([1, 4, 5, 5], 2);
        let mut fs_t = Tensor::zeros([1, 1, 5, 5]);
        fs_t.set4(0, 0, 2, 2, 20.0);
        let fc = g.constant(fc_t.clone());
        let fs = g.constant(fs_t);
        let out = color_step(&mut g, store.frozen(), &conv, fc, fs).unwrap();
        let conv_out = ops::conv2d(&fc_t, store.get(conv.weight), store.get(conv.bias), 1, 1).unwrap();
        for ch in 0..4 {
            let o = g.value(out).at4(0, ch, 2, 2).abs();
            assert!(o <= 2.1e-9 * conv_out.at4(0, ch, 2, 2).abs());
        }
    }

    #[test]
    fn fusion_multiplier_limits() {
        let mut g = Graph::new();
        let f = g.constant(random([1, 3, 2, 2], 5));
        for (s, m) in [(-800.0, 1.0), (800.0, 2.0)] {
            let fs = g.constant(Tensor::full([1, 1, 2, 2], s));
            let out = fusion_input(&mut g, f, fs).unwrap();
            assert_eq!(g.value(out), &g.value(f).map(|v| v * m));
        }
    }

    #[test]
    fn sketch_init_averages_channels() {
        let (mut store, inj) = crate::injection::build_injection(1, 2, 16, 1).unwrap();
        for id in [inj.gamma.weight, inj.beta.weight, inj.beta.bias] {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(shape)).unwrap();
        }
        // γ ≡ 1, β ≡ 0: output is the standardized channel mean
        let mut g = Graph::new();
        let f = g.constant(Tensor::new([1, 4, 1, 2], vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0]).unwrap());
        let ctl = g.constant(Tensor::zeros([1, 2, 1, 2]));
        let out = sketch_init(&mut g, store.frozen(), &inj, f, ctl).unwrap();
        assert_eq!(g.shape(out), &[1, 1, 1, 2]);
        // channel mean is [2.5, 0]: μ = 1.25, σ = 1.25
        let expected = 1.25 / (1.25f64 * 1.25 + 1e-5).sqrt();
        assert!((g.value(out).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn single_round_block_applies_one_fusion() {
        let mut store = ParamStore::new();
        let cfg = SgbConfig::for_level(2, 1, 4);
        assert_eq!(cfg.n_injections, 1);
        let sgb = SgbParams::build(&mut store, "sgb", cfg, 3).unwrap();
        assert!(sgb.sketch_steps.is_empty());
        assert_eq!(sgb.fusion.len(), 1);
        let raw = bundle(1, 4, 9);
        let mut g = Graph::new();
        let f = g.constant(random([1, 4, 4, 4], 1));
        let ctl = ScaleControls::constant(&mut g, &raw).unwrap();
        let state = sgb.forward(&mut g, store.frozen(), f, &ctl).unwrap();
        assert_eq!(state.rounds(), 1);
        assert_eq!(state.fused[0], f);
        assert_eq!(g.shape(state.output()), &[1, 4, 4, 4]);
    }

    #[test]
    fn block_is_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            let sgb = SgbParams::build(&mut store, "sgb", SgbConfig::for_level(3, 0, 4), 3).unwrap();
            let raw = bundle(1, 8, 9);
            let mut g = Graph::new();
            let f = g.constant(random([1, 4, 8, 8], 1));
            let ctl = ScaleControls::constant(&mut g, &raw).unwrap();
            let state = sgb.forward(&mut g, store.frozen(), f, &ctl).unwrap();
            g.value(state.output()).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn block_gradients_reach_all_inputs() {
        let mut store = ParamStore::new();
        let cfg = SgbConfig { scale_index: 0, n_injections: 2, feature_channels: 4, color_width: 4 };
        let sgb = SgbParams::build(&mut store, "sgb", cfg, 5).unwrap();
        let raw = bundle(1, 8, 17);
        let feat = store.add("feature", random([1, 4, 8, 8], 18)).unwrap();
        let sk = store.add("sketch", raw.sketch.clone()).unwrap();
        let col = store.add("color", raw.color.clone()).unwrap();
        let weights = random([1, 4, 8, 8], 19);
        let report = grad_check(
            &mut store,
            |g, view| {
                let f = g.param(view, feat);
                let s = g.param(view, sk);
                let c = g.param(view, col);
                let mut raw_now = raw.clone();
                raw_now.sketch = g.value(s).clone();
                raw_now.color = g.value(c).clone();
                let ctl = ScaleControls::prepare(g, &raw_now, s, c, (8, 8), 23)?;
                let out = sgb.forward(g, view, f, &ctl)?.output();
                let w = g.constant(weights.clone());
                let p = g.mul(out, w)?;
                Ok(g.sum(p))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{:?}", report.worst());

        let mut g = Graph::new();
        let view = store.trainable();
        let (f, s, c) = (g.param(view, feat), g.param(view, sk), g.param(view, col));
        let ctl = ScaleControls::prepare(&mut g, &raw, s, c, (8, 8), 23).unwrap();
        let out = sgb.forward(&mut g, view, f, &ctl).unwrap().output();
        let total = g.sum(out);
        let grads = g.backward(total).unwrap();
        for v in [f, s, c] {
            assert!(grads.wrt(v).max_abs() > 0.0);
        }
    }
}
