//! Training objective: pixel, perceptual, style, relativistic average
//! adversarial and masked total-variation terms, and their weighted total.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::DEFAULT_LEAKY_SLOPE;
use crate::rng;
use crate::tensor::Tensor;

/// Floor applied inside every logarithm of the adversarial loss.
pub const LOG_CLAMP: f64 = 1e-12;

const EXTRACTOR_SEED: u64 = 0x0076_6767_3136;
const EXTRACTOR_WIDTHS: [usize; 5] = [8, 16, 16, 32, 32];

/// Fixed convolutional feature pyramid standing in for a pretrained
/// backbone. Five stages emit maps at strides 1, 2, 4, 8 and 16.
///
/// The weights are constants: gradients flow through the extractor to its
/// input but never into it.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    stages: Vec<(Tensor, Tensor, usize)>,
    slope: f64,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(EXTRACTOR_SEED)
    }
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut r = rng::rng_from(seed, &[rng::tag("feature-extractor")]);
        let mut cin = 3;
        let stages = EXTRACTOR_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let w = rng::glorot_uniform([cout, cin, 3, 3], &mut r);
                cin = cout;
                (w, Tensor::zeros([cout]), if i == 0 { 1 } else { 2 })
            })
            .collect();
        Self { stages, slope: DEFAULT_LEAKY_SLOPE }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Feature maps of all stages, shallowest first.
    pub fn features(&self, g: &mut Graph, image: Var) -> Result<Vec<Var>> {
        let mut x = image;
        let mut out = Vec::with_capacity(self.stages.len());
        for (w, b, stride) in &self.stages {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let y = g.conv2d(x, wv, bv, *stride, 1)?;
            x = g.leaky_relu(y, self.slope);
            out.push(x);
        }
        Ok(out)
    }
}

/// λ weights of the total objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub perceptual: f64,
    pub style: f64,
    pub tv: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { reconstruction: 1.0, perceptual: 0.05, style: 250.0, tv: 0.1, adversarial: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.reconstruction, self.perceptual, self.style, self.tv, self.adversarial];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!("loss weights must be finite and >= 0, got {self:?}")))
        }
    }
}

/// The five loss terms and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossReport {
    pub re: f64,
    pub prec: f64,
    pub style: f64,
    pub adv: f64,
    pub tv: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(re: f64, prec: f64, style: f64, tv: f64, adv: f64, weights: &LossWeights) -> Result<Self> {
        weights.validate()?;
        let total = weights.reconstruction * re
            + weights.perceptual * prec
            + weights.style * style
            + weights.tv * tv
            + weights.adversarial * adv;
        Ok(Self { re, prec, style, adv, tv, total })
    }

    pub fn all_finite(&self) -> bool {
        [self.re, self.prec, self.style, self.adv, self.tv, self.total].iter().all(|v| v.is_finite())
    }
}

fn check_pair(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(format!("loss operands differ in shape: {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

fn mean_abs_diff(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

fn sum_vars(g: &mut Graph, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t).expect("scalars");
    }
    acc
}

/// Mean absolute pixel difference.
pub fn pixel_loss(g: &mut Graph, output: Var, target: Var) -> Result<Var> {
    check_pair(g, output, target)?;
    mean_abs_diff(g, output, target)
}

/// `Σ_i mean |F_i(out) − F_i(gt)|` over the extractor stages.
pub fn perceptual_loss(g: &mut Graph, fx: &FeatureExtractor, output: Var, target: Var) -> Result<Var> {
    check_pair(g, output, target)?;
    let fo = fx.features(g, output)?;
    let ft = fx.features(g, target)?;
    perceptual_from_features(g, &fo, &ft)
}

/// `Σ_i mean |G_i(out) − G_i(gt)|`, `G_i` the normalized Gram matrices.
pub fn style_loss(g: &mut Graph, fx: &FeatureExtractor, output: Var, target: Var) -> Result<Var> {
    check_pair(g, output, target)?;
    let fo = fx.features(g, output)?;
    let ft = fx.features(g, target)?;
    style_from_features(g, &fo, &ft)
}

/// Perceptual and style terms sharing one pass through the extractor.
pub fn perceptual_and_style(g: &mut Graph, fx: &FeatureExtractor, output: Var, target: Var) -> Result<(Var, Var)> {
    check_pair(g, output, target)?;
    let fo = fx.features(g, output)?;
    let ft = fx.features(g, target)?;
    Ok((perceptual_from_features(g, &fo, &ft)?, style_from_features(g, &fo, &ft)?))
}

fn perceptual_from_features(g: &mut Graph, fo: &[Var], ft: &[Var]) -> Result<Var> {
    let terms = fo.iter().zip(ft).map(|(&a, &b)| mean_abs_diff(g, a, b)).collect::<Result<Vec<_>>>()?;
    Ok(sum_vars(g, &terms))
}

fn style_from_features(g: &mut Graph, fo: &[Var], ft: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(fo.len());
    for (&a, &b) in fo.iter().zip(ft) {
        let ga = g.gram(a)?;
        let gb = g.gram(b)?;
        terms.push(mean_abs_diff(g, ga, gb)?);
    }
    Ok(sum_vars(g, &terms))
}

/// Which side of the adversarial game a loss is computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversarialRole {
    Generator,
    Discriminator,
}

/// Relativistic average adversarial loss on raw critic scores.
///
/// With `D(a, b) = σ(C(a) − mean C(b))`:
///
/// - generator: `−E[log(1 − D(x_r, x_f))] − E[log D(x_f, x_r)]`
/// - discriminator: `−E[log D(x_r, x_f)] − E[log(1 − D(x_f, x_r))]`
///
/// Logarithms are clamped below at `ln 1e-12`.
pub fn adversarial_loss(g: &mut Graph, real_scores: Var, fake_scores: Var, role: AdversarialRole) -> Result<Var> {
    for v in [real_scores, fake_scores] {
        let t = g.value(v);
        if t.is_empty() {
            return Err(Error::invalid("adversarial loss needs at least one score"));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("critic scores".into()));
        }
    }
    let real_shape = g.shape(real_scores).to_vec();
    let fake_shape = g.shape(fake_scores).to_vec();
    let mean_fake = g.mean(fake_scores);
    let mean_real = g.mean(real_scores);
    let mean_fake = g.broadcast_scalar(mean_fake, &real_shape)?;
    let mean_real = g.broadcast_scalar(mean_real, &fake_shape)?;
    let real_vs_fake = g.sub(real_scores, mean_fake)?;
    let fake_vs_real = g.sub(fake_scores, mean_real)?;
    // log(1 − σ(z)) = log σ(−z)
    let (real_arg, fake_arg) = match role {
        AdversarialRole::Generator => (g.scale(real_vs_fake, -1.0), fake_vs_real),
        AdversarialRole::Discriminator => (real_vs_fake, g.scale(fake_vs_real, -1.0)),
    };
    let lr = g.log_sigmoid(real_arg, LOG_CLAMP);
    let lf = g.log_sigmoid(fake_arg, LOG_CLAMP);
    let mr = g.mean(lr);
    let mf = g.mean(lf);
    let s = g.add(mr, mf)?;
    Ok(g.scale(s, -1.0))
}

/// Masked total variation; `mask` is `[N, 1, H, W]` with 1 in the hole.
pub fn tv_loss(g: &mut Graph, output: Var, mask: &Tensor) -> Result<Var> {
    g.masked_tv(output, mask)
}

/// Graph handles of the five terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub re: Var,
    pub prec: Var,
    pub style: Var,
    pub tv: Var,
    pub adv: Var,
}

/// Weighted total plus a report of the term values.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, weights: &LossWeights) -> Result<(Var, LossReport)> {
    weights.validate()?;
    let weighted = [
        (terms.re, weights.reconstruction),
        (terms.prec, weights.perceptual),
        (terms.style, weights.style),
        (terms.tv, weights.tv),
        (terms.adv, weights.adversarial),
    ]
    .map(|(v, w)| g.scale(v, w));
    let total = sum_vars(g, &weighted);
    let value = |v: Var| g.value(v).item();
    let report = LossReport::new(
        value(terms.re)?,
        value(terms.prec)?,
        value(terms.style)?,
        value(terms.tv)?,
        value(terms.adv)?,
        weights,
    )?;
    Ok((total, report))
}

/// Plain-tensor evaluation of the individual terms.
pub mod eval {
    use super::*;

    fn binary(a: &Tensor, b: &Tensor, f: impl FnOnce(&mut Graph, Var, Var) -> Result<Var>) -> Result<f64> {
        let mut g = Graph::new();
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let out = f(&mut g, av, bv)?;
        g.value(out).item()
    }

    pub fn pixel(output: &Tensor, target: &Tensor) -> Result<f64> {
        binary(output, target, pixel_loss)
    }

    pub fn perceptual(fx: &FeatureExtractor, output: &Tensor, target: &Tensor) -> Result<f64> {
        binary(output, target, |g, a, b| perceptual_loss(g, fx, a, b))
    }

    pub fn style(fx: &FeatureExtractor, output: &Tensor, target: &Tensor) -> Result<f64> {
        binary(output, target, |g, a, b| style_loss(g, fx, a, b))
    }

    pub fn adversarial(real: &Tensor, fake: &Tensor, role: AdversarialRole) -> Result<f64> {
        binary(real, fake, |g, a, b| adversarial_loss(g, a, b, role))
    }

    pub fn tv(output: &Tensor, mask: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let o = g.constant(output.clone());
        let out = tv_loss(&mut g, o, mask)?;
        g.value(out).item()
    }
}
