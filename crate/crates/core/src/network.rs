//! Generator (encoder, per-level SGBs, texture branch, decoder) and the
//! global/local critics.

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, ParamView, Var};
use crate::layers::{Conv2d, ConvTranspose2d};
use crate::ops::{BoundingBox, CropResizePlan, DEFAULT_LEAKY_SLOPE};
use crate::rng;
use crate::sgb::{resize_controls, ControlBundle, ScaleControls, SgbConfig, SgbParams, SgbState};
use crate::tensor::Tensor;

/// Side length the local critic's crop is resized to.
pub const LOCAL_CROP_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub image_size: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { levels: 4, base_channels: 16, image_size: 64 }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Config("levels and base_channels must be >= 1".into()));
        }
        if !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!("image_size {} is not a power of two", self.image_size)));
        }
        if self.levels >= usize::BITS as usize || self.image_size < 1 << self.levels {
            return Err(Error::Config(format!(
                "image_size {} is smaller than 2^levels for {} levels",
                self.image_size, self.levels
            )));
        }
        Ok(())
    }

    /// Channels of encoder level `i` (0 = shallowest).
    pub fn level_channels(&self, i: usize) -> usize {
        (self.base_channels << i).min(8 * self.base_channels)
    }

    /// Side length of encoder level `i`.
    pub fn level_size(&self, i: usize) -> usize {
        self.image_size >> (i + 1)
    }
}

/// One edit request. Hole pixels of `image` are zeroed on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EditInput {
    /// `[N, 3, H, W]`
    pub image: Tensor,
    /// `[N, 1, H, W]`, 1 in the hole.
    pub mask: Tensor,
    /// `[N, 1, H, W]`
    pub sketch: Tensor,
    /// `[N, 3, H, W]`
    pub color: Tensor,
    pub noise_seed: u64,
}

impl EditInput {
    pub fn new(image: Tensor, mask: Tensor, sketch: Tensor, color: Tensor, noise_seed: u64) -> Result<Self> {
        let (n, c, h, w) = image.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("image must have 3 channels, got {c}")));
        }
        if mask.shape() != [n, 1, h, w] {
            return Err(Error::shape(format!("mask {:?} does not match image {:?}", mask.shape(), image.shape())));
        }
        // validates sketch/color/mask against each other
        ControlBundle::new(sketch.clone(), color.clone(), mask.clone(), Tensor::zeros([n, 1, h, w]))?;
        let mut image = image;
        let plane = h * w;
        for (i, v) in image.data_mut().iter_mut().enumerate() {
            let b = i / (3 * plane);
            if mask.data()[b * plane + i % plane] != 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self { image, mask, sketch, color, noise_seed })
    }

    /// Inpainting only: empty sketch and color controls.
    pub fn inpaint(image: Tensor, mask: Tensor, noise_seed: u64) -> Result<Self> {
        let (n, _, h, w) = image.dims4()?;
        Self::new(image, mask, Tensor::zeros([n, 1, h, w]), Tensor::zeros([n, 3, h, w]), noise_seed)
    }

    pub fn controls(&self) -> Result<ControlBundle> {
        ControlBundle::with_fresh_noise(self.sketch.clone(), self.color.clone(), self.mask.clone(), self.noise_seed)
    }
}

/// Encoder features, shallowest first, and the bottleneck.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: Vec<Var>,
    pub bottleneck: Var,
}

#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    /// `[N, 3, H, W]` in `[0, 1]`.
    pub image: Var,
    pub pyramid: Pyramid,
    pub sgb: Vec<SgbState>,
    pub texture: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: BackboneConfig,
    /// 3×3 stride-2 convolutions, one per level.
    pub encoder: Vec<Conv2d>,
    pub bottleneck: Conv2d,
    pub sgbs: Vec<SgbParams>,
    /// Upsampling layer feeding decoder level `i`.
    pub decoder_up: Vec<ConvTranspose2d>,
    /// 3×3 convolution over `d_i ⊕ sgb_i`.
    pub decoder_merge: Vec<Conv2d>,
    /// Texture branch; layer `i` has the shape of `decoder_up[i]`.
    pub texture: Vec<ConvTranspose2d>,
    pub output: ConvTranspose2d,
    pub slope: f64,
}

impl Generator {
    pub fn build(store: &mut ParamStore, config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let levels = config.levels;
        let ch = |i| config.level_channels(i);
        let mut r = rng::rng_from(seed, &[rng::tag("generator")]);
        let mut encoder = Vec::with_capacity(levels);
        let mut cin = 4;
        for i in 0..levels {
            encoder.push(Conv2d::new(store, &format!("enc{i}"), cin, ch(i), 3, 2, 1, &mut r)?);
            cin = ch(i);
        }
        let deepest = ch(levels - 1);
        let bottleneck = Conv2d::same(store, "bottleneck", deepest, deepest, 3, &mut r)?;
        let sgbs = (0..levels)
            .map(|i| {
                let cfg = SgbConfig::for_level(levels, i, ch(i));
                SgbParams::build(store, &format!("sgb{i}"), cfg, rng::derive_seed(seed, &[rng::tag("sgb"), i as u64]))
            })
            .collect::<Result<Vec<_>>>()?;
        // The deepest decoder level keeps the bottleneck resolution; the
        // others double it.
        let up_geometry = |i: usize| if i + 1 == levels { (3, 1, 1) } else { (4, 2, 1) };
        let up_in = |i: usize| if i + 1 == levels { deepest } else { ch(i + 1) };
        let mut decoder_up = Vec::with_capacity(levels);
        let mut decoder_merge = Vec::with_capacity(levels);
        let mut texture = Vec::with_capacity(levels);
        for i in 0..levels {
            let (k, s, p) = up_geometry(i);
            decoder_up.push(ConvTranspose2d::new(store, &format!("dec{i}.up"), up_in(i), ch(i), k, s, p, &mut r)?);
            decoder_merge.push(Conv2d::same(store, &format!("dec{i}.merge"), 2 * ch(i), ch(i), 3, &mut r)?);
            texture.push(ConvTranspose2d::new(store, &format!("tgb{i}.up"), up_in(i), ch(i), k, s, p, &mut r)?);
        }
        let output = ConvTranspose2d::new(store, "out", ch(0), 3, 4, 2, 1, &mut r)?;
        Ok(Self {
            config,
            encoder,
            bottleneck,
            sgbs,
            decoder_up,
            decoder_merge,
            texture,
            output,
            slope: DEFAULT_LEAKY_SLOPE,
        })
    }

    /// Encodes `image ⊕ mask`.
    pub fn encode(&self, g: &mut Graph, params: ParamView<'_>, image: Var, mask: Var) -> Result<Pyramid> {
        let (_, _, h, w) = g.value(image).dims4()?;
        let size = self.config.image_size;
        if (h, w) != (size, size) {
            return Err(Error::shape(format!("generator configured for {size}x{size} images, got {h}x{w}")));
        }
        let mut x = g.concat_channels(&[image, mask])?;
        let mut levels = Vec::with_capacity(self.encoder.len());
        for conv in &self.encoder {
            let y = conv.forward(g, params, x)?;
            x = g.leaky_relu(y, self.slope);
            levels.push(x);
        }
        let b = self.bottleneck.forward(g, params, x)?;
        let bottleneck = g.leaky_relu(b, self.slope);
        Ok(Pyramid { levels, bottleneck })
    }

    /// Texture features, indexed like the decoder levels.
    pub fn tgb_forward(&self, g: &mut Graph, params: ParamView<'_>, bottleneck: Var) -> Result<Vec<Var>> {
        let mut out = vec![bottleneck; self.texture.len()];
        let mut t = bottleneck;
        for i in (0..self.texture.len()).rev() {
            let y = self.texture[i].forward(g, params, t)?;
            t = g.leaky_relu(y, self.slope);
            out[i] = t;
        }
        Ok(out)
    }

    /// Decodes from the bottleneck. `texture = None` skips the residual add.
    pub fn decode(
        &self,
        g: &mut Graph,
        params: ParamView<'_>,
        bottleneck: Var,
        sgb: &[Var],
        texture: Option<&[Var]>,
    ) -> Result<Var> {
        let levels = self.decoder_up.len();
        if sgb.len() != levels || texture.is_some_and(|t| t.len() != levels) {
            return Err(Error::shape(format!(
                "decoder has {levels} levels, got {} SGB and {:?} texture features",
                sgb.len(),
                texture.map(<[Var]>::len)
            )));
        }
        let mut x = bottleneck;
        for i in (0..levels).rev() {
            let up = self.decoder_up[i].forward(g, params, x)?;
            let mut d = g.leaky_relu(up, self.slope);
            if let Some(t) = texture {
                d = g.add(d, t[i])?;
            }
            let cat = g.concat_channels(&[d, sgb[i]])?;
            let merged = self.decoder_merge[i].forward(g, params, cat)?;
            x = g.leaky_relu(merged, self.slope);
        }
        let y = self.output.forward(g, params, x)?;
        Ok(g.sigmoid(y))
    }

    pub fn forward(&self, g: &mut Graph, params: ParamView<'_>, input: &EditInput) -> Result<GeneratorOutput> {
        let image = g.constant(input.image.clone());
        let mask = g.constant(input.mask.clone());
        let pyramid = self.encode(g, params, image, mask)?;
        let raw = input.controls()?;
        let mut sgb = Vec::with_capacity(self.sgbs.len());
        for (i, block) in self.sgbs.iter().enumerate() {
            let size = self.config.level_size(i);
            let controls = ScaleControls::constant(g, &resize_controls(&raw, (size, size), input.noise_seed)?)?;
            sgb.push(block.forward(g, params, pyramid.levels[i], &controls)?);
        }
        let texture = self.tgb_forward(g, params, pyramid.bottleneck)?;
        let skips: Vec<Var> = sgb.iter().map(SgbState::output).collect();
        let image = self.decode(g, params, pyramid.bottleneck, &skips, Some(&texture))?;
        Ok(GeneratorOutput { image, pyramid, sgb, texture })
    }

    /// Inference on plain tensors.
    pub fn generate(&self, store: &ParamStore, input: &EditInput) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store.frozen(), input)?;
        Ok(g.value(out.image).clone())
    }
}

/// Which critic scores an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticKind {
    Global,
    Local,
}

/// Four 3×3 stride-2 convolutions, widths `b, 2b, 4b, 1`, then a spatial mean.
///
/// The scoring layer has no bias: the relativistic loss only sees score
/// differences, so a shared offset would never receive a gradient.
#[derive(Clone, Debug)]
pub struct Critic {
    pub convs: Vec<Conv2d>,
    /// `[1, 4b, 3, 3]` kernel of the scoring layer.
    pub head: ParamId,
    pub slope: f64,
}

impl Critic {
    pub fn build(store: &mut ParamStore, name: &str, base_channels: usize, seed: u64) -> Result<Self> {
        let mut r = rng::rng_from(seed, &[rng::tag(name)]);
        let widths = [3, base_channels, 2 * base_channels, 4 * base_channels];
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(store, &format!("{name}.conv{i}"), w[0], w[1], 3, 2, 1, &mut r))
            .collect::<Result<Vec<_>>>()?;
        let head =
            store.add(format!("{name}.head.weight"), rng::glorot_uniform([1, 4 * base_channels, 3, 3], &mut r))?;
        Ok(Self { convs, head, slope: DEFAULT_LEAKY_SLOPE })
    }

    /// Raw scores `[N, 1]`.
    pub fn score(&self, g: &mut Graph, params: ParamView<'_>, image: Var) -> Result<Var> {
        let mut x = image;
        for conv in &self.convs {
            let y = conv.forward(g, params, x)?;
            x = g.leaky_relu(y, self.slope);
        }
        let w = g.param(params, self.head);
        let b = g.constant(Tensor::zeros([1]));
        let s = g.conv2d(x, w, b, 2, 1)?;
        let m = g.spatial_mean(s)?;
        let n = g.shape(m)[0];
        g.reshape(m, &[n, 1])
    }
}

#[derive(Clone, Debug)]
pub struct Discriminators {
    pub global: Critic,
    pub local: Critic,
}

impl Discriminators {
    pub fn build(store: &mut ParamStore, base_channels: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            global: Critic::build(store, "global", base_channels, seed)?,
            local: Critic::build(store, "local", base_channels, seed)?,
        })
    }
}

/// Tight bounding box of the ones in a `[H, W]` plane.
pub fn plane_bbox(plane: &[f64], h: usize, w: usize) -> Option<BoundingBox> {
    let mut bb: Option<BoundingBox> = None;
    for y in 0..h {
        for x in 0..w {
            if plane[y * w + x] != 0.0 {
                let b = bb.get_or_insert(BoundingBox { y0: y, x0: x, y1: y + 1, x1: x + 1 });
                b.y0 = b.y0.min(y);
                b.x0 = b.x0.min(x);
                b.y1 = b.y1.max(y + 1);
                b.x1 = b.x1.max(x + 1);
            }
        }
    }
    bb
}

/// Per-sample bounding boxes of a `[N, 1, H, W]` mask; empty masks are an error.
pub fn mask_bboxes(mask: &Tensor) -> Result<Vec<BoundingBox>> {
    let (n, c, h, w) = mask.dims4()?;
    if c != 1 {
        return Err(Error::shape(format!("mask must have 1 channel, got {c}")));
    }
    (0..n)
        .map(|b| {
            plane_bbox(&mask.data()[b * h * w..][..h * w], h, w)
                .ok_or_else(|| Error::invalid(format!("local critic needs a nonempty mask (sample {b} is empty)")))
        })
        .collect()
}

/// Critic scores `[N, 1]`. The local critic sees the mask's bounding box
/// bilinearly resized to [`LOCAL_CROP_SIZE`].
pub fn discriminate(
    g: &mut Graph,
    params: ParamView<'_>,
    critics: &Discriminators,
    image: Var,
    mask: &Tensor,
    which: CriticKind,
) -> Result<Var> {
    let (n, _, h, w) = g.value(image).dims4()?;
    if mask.shape() != [n, 1, h, w] {
        return Err(Error::shape(format!("mask {:?} does not match image {:?}", mask.shape(), g.shape(image))));
    }
    match which {
        CriticKind::Global => critics.global.score(g, params, image),
        CriticKind::Local => {
            let plan = CropResizePlan::new(g.shape(image), &mask_bboxes(mask)?, LOCAL_CROP_SIZE)?;
            let crop = g.crop_resize(image, plan)?;
            critics.local.score(g, params, crop)
        }
    }
}
