//! Tiered finite-difference suites: individual operations and losses,
//! injection and block steps, and the whole toy model.

use std::fmt;

use crate::error::Result;
use crate::gradcheck::{check_inputs, grad_check, GradCheckConfig, GradCheckReport};
use crate::graph::{Graph, ParamStore, ParamView, Var};
use crate::injection::InjectionParams;
use crate::layers::Conv2d;
use crate::losses::{self, AdversarialRole, FeatureExtractor, LossTerms, LossWeights};
use crate::network::{discriminate, BackboneConfig, CriticKind, Discriminators, EditInput, Generator};
use crate::ops::{BoundingBox, CropResizePlan};
use crate::rng;
use crate::sgb::{self, ControlBundle, ScaleControls, SgbConfig, SgbParams};
use crate::tensor::Tensor;

/// Pass threshold for every entry.
pub const TOLERANCE: f64 = 1e-4;
/// Largest fraction of an entry's coordinates that may be skipped as kink
/// crossings before the entry fails anyway. One leaky unit sitting near zero
/// spoils every sampled weight that feeds it, so this is not tiny.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;

fn entry_passes(r: &GradCheckReport) -> bool {
    r.passes(TOLERANCE) && r.skipped() as f64 <= MAX_SKIPPED_FRACTION * r.coords() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tier {
    Ops,
    Block,
    Model,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Ops, Tier::Block, Tier::Model];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Ops => "ops",
            Tier::Block => "block",
            Tier::Model => "model",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub tier: Tier,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.entries.iter().all(|e| entry_passes(&e.report))
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let status = if entry_passes(&e.report) { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<28} {:>10.3e}  {:>4}/{:<4} skipped  {status}",
                e.name,
                e.report.max_rel_error,
                e.report.skipped(),
                e.report.coords()
            )?;
        }
        write!(f, "tier {}: max relative error {:.3e}", self.tier.name(), self.max_rel_error())
    }
}

struct Inputs {
    seed: u64,
    next: u64,
}

impl Inputs {
    fn normal(&mut self, shape: &[usize]) -> Tensor {
        self.next += 1;
        rng::standard_normal(shape.to_vec(), &mut rng::rng_from(self.seed, &[rng::tag("suite"), self.next]))
    }

    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        self.next += 1;
        rng::uniform(shape.to_vec(), lo, hi, &mut rng::rng_from(self.seed, &[rng::tag("suite"), self.next]))
    }
}

/// Moves every bias off zero. Freshly built layers have zero biases, so
/// zero-valued controls would put leaky ReLU inputs exactly on the kink,
/// where central differences are meaningless.
fn jitter_biases(store: &mut ParamStore, seed: u64) {
    let mut r = rng::rng_from(seed, &[rng::tag("jitter")]);
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).ends_with(".bias")).collect();
    for id in ids {
        let noise = rng::uniform(store.get(id).shape().to_vec(), -0.1, 0.1, &mut r);
        store.get_mut(id).add_assign(&noise).expect("same shape");
    }
}

/// `Σ y ⊙ w` for a fixed random `w`, turning any output into a generic scalar.
fn project(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

struct Runner {
    cfg: GradCheckConfig,
    entries: Vec<SuiteEntry>,
}

impl Runner {
    fn inputs(
        &mut self,
        name: &str,
        inputs: &[Tensor],
        f: impl FnMut(&mut Graph, &[Var]) -> Result<Var>,
    ) -> Result<()> {
        let report = check_inputs(inputs, f, &self.cfg)?;
        self.entries.push(SuiteEntry { name: name.to_string(), report });
        Ok(())
    }

    fn params(
        &mut self,
        name: &str,
        store: &mut ParamStore,
        f: impl FnMut(&mut Graph, ParamView<'_>) -> Result<Var>,
    ) -> Result<()> {
        let report = grad_check(store, f, &self.cfg)?;
        self.entries.push(SuiteEntry { name: name.to_string(), report });
        Ok(())
    }
}

/// Elementwise and structural operations plus every loss.
pub fn ops_suite(seed: u64) -> Result<SuiteReport> {
    let mut x = Inputs { seed, next: 0 };
    let mut r = Runner { cfg: GradCheckConfig { seed, ..GradCheckConfig::default() }, entries: Vec::new() };

    let (cx, ck, cb) = (x.normal(&[2, 3, 5, 5]), x.normal(&[4, 3, 3, 3]), x.normal(&[4]));
    let wy = x.normal(&[2, 4, 3, 3]);
    r.inputs("conv2d", &[cx, ck, cb], |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
        project(g, y, &wy)
    })?;
    let (tx, tk, tb) = (x.normal(&[2, 3, 3, 3]), x.normal(&[3, 2, 4, 4]), x.normal(&[2]));
    let wt = x.normal(&[2, 2, 6, 6]);
    r.inputs("conv_transpose2d", &[tx, tk, tb], |g, v| {
        let y = g.conv_transpose2d(v[0], v[1], v[2], 2, 1)?;
        project(g, y, &wt)
    })?;

    let a = x.normal(&[2, 3, 4, 4]);
    let wa = x.normal(&[2, 3, 4, 4]);
    let unary: [(&str, fn(&mut Graph, Var) -> Result<Var>); 6] = [
        ("sigmoid", |g, v| Ok(g.sigmoid(v))),
        ("leaky_relu", |g, v| Ok(g.leaky_relu(v, 0.2))),
        ("abs", |g, v| Ok(g.abs(v))),
        ("log_sigmoid", |g, v| Ok(g.log_sigmoid(v, losses::LOG_CLAMP))),
        ("instance_norm", |g, v| g.instance_norm(v, 1e-5)),
        ("scale_add_scalar", |g, v| {
            let s = g.scale(v, -1.5);
            Ok(g.add_scalar(s, 0.25))
        }),
    ];
    for (name, op) in unary {
        r.inputs(name, std::slice::from_ref(&a), |g, v| {
            let y = op(g, v[0])?;
            project(g, y, &wa)
        })?;
    }
    let (b, c) = (x.normal(&[2, 3, 4, 4]), x.normal(&[2, 3, 4, 4]));
    r.inputs("add_sub_mul", &[b, c], |g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(v[0], v[1])?;
        let y = g.mul(s, d)?;
        project(g, y, &wa)
    })?;
    let wm = x.normal(&[2, 1, 4, 4]);
    r.inputs("channel_mean", std::slice::from_ref(&a), |g, v| {
        let y = g.channel_mean(v[0])?;
        project(g, y, &wm)
    })?;
    let single = x.normal(&[2, 1, 4, 4]);
    r.inputs("broadcast_channel", &[single], |g, v| {
        let y = g.broadcast_channel(v[0], 3)?;
        project(g, y, &wa)
    })?;
    let (p, q) = (x.normal(&[2, 1, 4, 4]), x.normal(&[2, 2, 4, 4]));
    r.inputs("concat_channels", &[p, q], |g, v| {
        let y = g.concat_channels(&[v[0], v[1]])?;
        project(g, y, &wa)
    })?;
    let wg = x.normal(&[2, 3, 3]);
    r.inputs("gram", std::slice::from_ref(&a), |g, v| {
        let y = g.gram(v[0])?;
        project(g, y, &wg)
    })?;
    let ws = x.normal(&[2, 3, 1, 1]);
    r.inputs("spatial_mean", std::slice::from_ref(&a), |g, v| {
        let y = g.spatial_mean(v[0])?;
        project(g, y, &ws)
    })?;
    let boxes = [BoundingBox { y0: 0, x0: 1, y1: 3, x1: 4 }, BoundingBox { y0: 1, x0: 0, y1: 4, x1: 2 }];
    let plan = CropResizePlan::new(a.shape(), &boxes, 5)?;
    let wc = x.normal(&[2, 3, 5, 5]);
    r.inputs("crop_resize", std::slice::from_ref(&a), |g, v| {
        let y = g.crop_resize(v[0], plan.clone())?;
        project(g, y, &wc)
    })?;

    // losses, differentiated w.r.t. their image / score inputs
    let img = |x: &mut Inputs| x.uniform(&[1, 3, 16, 16], 0.0, 1.0);
    let (out, gt) = (img(&mut x), img(&mut x));
    r.inputs("pixel_loss", &[out.clone(), gt.clone()], |g, v| losses::pixel_loss(g, v[0], v[1]))?;
    let fx = FeatureExtractor::default();
    r.inputs("perceptual_loss", &[out.clone(), gt.clone()], |g, v| losses::perceptual_loss(g, &fx, v[0], v[1]))?;
    r.inputs("style_loss", &[out.clone(), gt.clone()], |g, v| losses::style_loss(g, &fx, v[0], v[1]))?;
    let (real, fake) = (x.normal(&[3, 1]), x.normal(&[3, 1]));
    for (name, role) in [
        ("adversarial_loss(gen)", AdversarialRole::Generator),
        ("adversarial_loss(disc)", AdversarialRole::Discriminator),
    ] {
        r.inputs(name, &[real.clone(), fake.clone()], |g, v| losses::adversarial_loss(g, v[0], v[1], role))?;
    }
    let mask = x.uniform(&[1, 1, 16, 16], 0.0, 1.0).map(|v| if v < 0.6 { 1.0 } else { 0.0 });
    r.inputs("tv_loss", std::slice::from_ref(&out), |g, v| losses::tv_loss(g, v[0], &mask))?;
    r.inputs("total_loss", &[out, gt, real, fake], |g, v| {
        let terms = LossTerms {
            re: losses::pixel_loss(g, v[0], v[1])?,
            prec: losses::perceptual_loss(g, &fx, v[0], v[1])?,
            style: losses::style_loss(g, &fx, v[0], v[1])?,
            tv: losses::tv_loss(g, v[0], &mask)?,
            adv: losses::adversarial_loss(g, v[2], v[3], AdversarialRole::Generator)?,
        };
        Ok(losses::total_loss(g, &terms, &LossWeights::default())?.0)
    })?;
    Ok(SuiteReport { tier: Tier::Ops, entries: r.entries })
}

/// Injection and the individual SGB steps, w.r.t. parameters and inputs.
pub fn block_suite(seed: u64) -> Result<SuiteReport> {
    let mut x = Inputs { seed, next: 100 };
    let mut r = Runner { cfg: GradCheckConfig { seed, ..GradCheckConfig::default() }, entries: Vec::new() };
    let (n, c, s) = (2, 4, 6);
    let cc = sgb::color_width(c);
    let mut prng = rng::rng_from(seed, &[rng::tag("block-params")]);

    {
        let mut store = ParamStore::new();
        let inj = InjectionParams::build(&mut store, "inject", c, 2, 4, seed)?;
        let f = store.add("feature", x.normal(&[n, c, s, s]))?;
        let l = store.add("control", x.normal(&[n, 2, s, s]))?;
        let w = x.normal(&[n, c, s, s]);
        r.params("inject", &mut store, |g, view| {
            let (fv, lv) = (g.param(view, f), g.param(view, l));
            let y = inj.inject(g, view, fv, lv)?;
            project(g, y, &w)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let inj = InjectionParams::build(&mut store, "sketch0", 1, 2, 4, seed)?;
        let f = store.add("feature", x.normal(&[n, c, s, s]))?;
        let l = store.add("control", x.normal(&[n, 2, s, s]))?;
        let w = x.normal(&[n, 1, s, s]);
        r.params("sketch_init", &mut store, |g, view| {
            let (fv, lv) = (g.param(view, f), g.param(view, l));
            let y = sgb::sketch_init(g, view, &inj, fv, lv)?;
            project(g, y, &w)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let conv = Conv2d::same(&mut store, "sketch1.conv", 1, 1, 3, &mut prng)?;
        let inj = InjectionParams::build(&mut store, "sketch1", 1, 2, 4, seed)?;
        let fs = store.add("fs", x.normal(&[n, 1, s, s]))?;
        let l = store.add("control", x.normal(&[n, 2, s, s]))?;
        let w = x.normal(&[n, 1, s, s]);
        r.params("sketch_step", &mut store, |g, view| {
            let (fv, lv) = (g.param(view, fs), g.param(view, l));
            let y = sgb::sketch_step(g, view, &conv, &inj, fv, lv)?;
            project(g, y, &w)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let conv = Conv2d::same(&mut store, "color1.conv", cc, cc, 3, &mut prng)?;
        let fc = store.add("fc", x.normal(&[n, cc, s, s]))?;
        let fs = store.add("fs", x.normal(&[n, 1, s, s]))?;
        let w = x.normal(&[n, cc, s, s]);
        r.params("color_step", &mut store, |g, view| {
            let (cv, sv) = (g.param(view, fc), g.param(view, fs));
            let y = sgb::color_step(g, view, &conv, cv, sv)?;
            project(g, y, &w)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let inj = InjectionParams::build(&mut store, "fuse1", c, cc, 4, seed)?;
        let f = store.add("f", x.normal(&[n, c, s, s]))?;
        let fs = store.add("fs", x.normal(&[n, 1, s, s]))?;
        let fc = store.add("fc", x.normal(&[n, cc, s, s]))?;
        let w = x.normal(&[n, c, s, s]);
        r.params("fusion_step", &mut store, |g, view| {
            let (a, b, d) = (g.param(view, f), g.param(view, fs), g.param(view, fc));
            let y = sgb::fusion_step(g, view, &inj, a, b, d)?;
            project(g, y, &w)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let cfg = SgbConfig { scale_index: 0, n_injections: 3, feature_channels: c, color_width: cc };
        let block = SgbParams::build(&mut store, "sgb", cfg, seed)?;
        jitter_biases(&mut store, seed);
        let f = store.add("feature", x.normal(&[n, c, s, s]))?;
        let sketch = x.uniform(&[n, 1, s, s], 0.0, 1.0).map(|v| if v < 0.3 { 1.0 } else { 0.0 });
        let color = x.uniform(&[n, 3, s, s], 0.0, 1.0);
        let mask = x.uniform(&[n, 1, s, s], 0.0, 1.0).map(|v| if v < 0.5 { 1.0 } else { 0.0 });
        let bundle = ControlBundle::with_fresh_noise(sketch, color, mask, seed)?;
        let w = x.normal(&[n, c, s, s]);
        r.params("sgb_block(3 rounds)", &mut store, |g, view| {
            let fv = g.param(view, f);
            let ctl = ScaleControls::constant(g, &bundle)?;
            let y = block.forward(g, view, fv, &ctl)?.output();
            project(g, y, &w)
        })?;
    }
    Ok(SuiteReport { tier: Tier::Block, entries: r.entries })
}

/// The configuration the model tier checks: 16×16 images, 2 levels, base 4.
pub fn toy_backbone() -> BackboneConfig {
    BackboneConfig { levels: 2, base_channels: 4, image_size: 16 }
}

/// Full generator and both critics on the toy configuration.
pub fn model_suite(seed: u64) -> Result<SuiteReport> {
    let mut x = Inputs { seed, next: 200 };
    let mut r = Runner { cfg: GradCheckConfig { seed, ..GradCheckConfig::default() }, entries: Vec::new() };
    let cfg = toy_backbone();
    let size = cfg.image_size;
    let image = x.uniform(&[1, 3, size, size], 0.0, 1.0);
    let mask = Tensor::from_fn([1, 1, size, size], |i| {
        let (y, xx) = (i / size, i % size);
        if (4..11).contains(&y) && (3..9).contains(&xx) {
            1.0
        } else {
            0.0
        }
    });
    let sketch =
        Tensor::from_fn([1, 1, size, size], |i| if i % size == 6 { 1.0 } else { 0.0 }).zip_map(&mask, |a, b| a * b)?;
    let color = Tensor::from_fn([1, 3, size, size], |i| {
        let p = i % (size * size);
        if p == 5 * size + 4 || p == 5 * size + 5 {
            [0.9, 0.2, 0.4][i / (size * size)]
        } else {
            0.0
        }
    });
    let input = EditInput::new(image.clone(), mask.clone(), sketch, color, seed)?;

    let mut store = ParamStore::new();
    let gen = Generator::build(&mut store, cfg, seed)?;
    jitter_biases(&mut store, seed);
    let w = x.normal(&[1, 3, size, size]);
    r.params("generator(16x16, 2 levels)", &mut store, |g, view| {
        let y = gen.forward(g, view, &input)?.image;
        project(g, y, &w)
    })?;

    let mut dstore = ParamStore::new();
    let critics = Discriminators::build(&mut dstore, 4, seed)?;
    jitter_biases(&mut dstore, seed);
    let img_id = dstore.add("image", image)?;
    for (name, which) in [("critic(global)", CriticKind::Global), ("critic(local)", CriticKind::Local)] {
        r.params(name, &mut dstore, |g, view| {
            let im = g.param(view, img_id);
            let s = discriminate(g, view, &critics, im, &mask, which)?;
            Ok(g.sum(s))
        })?;
    }
    Ok(SuiteReport { tier: Tier::Model, entries: r.entries })
}

pub fn run_tier(tier: Tier, seed: u64) -> Result<SuiteReport> {
    match tier {
        Tier::Ops => ops_suite(seed),
        Tier::Block => block_suite(seed),
        Tier::Model => model_suite(seed),
    }
}
