//! Synthetic training scenes, free-form masks, and the sketch / color
//! control extractors.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

/// Gradient-magnitude threshold for sketch extraction.
pub const SKETCH_THRESHOLD: f64 = 0.2;
/// Longest color stroke placed per region.
pub const MAX_STROKE_LEN: usize = 5;
/// Mask regeneration attempts before giving up.
pub const MASK_ATTEMPTS: usize = 16;

const DARK_BAND: (f64, f64) = (0.05, 0.3);
const LIGHT_BAND: (f64, f64) = (0.7, 0.95);

/// Flat-colored shapes on a flat background.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// `[1, 3, S, S]`
    pub image: Tensor,
    /// `[1, 1, S, S]`: shape pixels with a 4-neighbour in the background.
    pub true_edges: Tensor,
    /// Region index per pixel; 0 is the background.
    pub labels: Vec<usize>,
    /// Color of each region, background first.
    pub region_colors: Vec<[f64; 3]>,
}

fn band_color(r: &mut SeededRng, band: (f64, f64)) -> [f64; 3] {
    // any convex combination of in-band channels has in-band luminance
    [0; 3].map(|_| r.random_range(band.0..=band.1))
}

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, cos: f64, sin: f64 },
    Polygon { verts: Vec<(f64, f64)> },
}

impl Shape {
    fn random(r: &mut SeededRng, size: usize) -> Self {
        let rmin = (size as f64 / 12.0).max(2.5);
        let rmax = (size as f64 / 5.0).max(rmin + 1.0);
        let radius = r.random_range(rmin..rmax);
        let lo = radius + 1.0;
        let hi = size as f64 - radius - 2.0;
        let cy = r.random_range(lo..hi.max(lo + 1e-9));
        let cx = r.random_range(lo..hi.max(lo + 1e-9));
        if r.random_bool(0.5) {
            let theta: f64 = r.random_range(0.0..std::f64::consts::PI);
            Shape::Ellipse {
                cy,
                cx,
                ry: radius,
                rx: radius * r.random_range(0.6..1.0),
                cos: theta.cos(),
                sin: theta.sin(),
            }
        } else {
            let n = r.random_range(3..=6);
            let mut angles: Vec<f64> =
                (0..n).map(|k| (k as f64 + r.random_range(0.1..0.9)) * std::f64::consts::TAU / n as f64).collect();
            angles.sort_by(f64::total_cmp);
            let verts = angles
                .iter()
                .map(|a| {
                    let rr = radius * r.random_range(0.75..1.0);
                    (cy + rr * a.sin(), cx + rr * a.cos())
                })
                .collect();
            Shape::Polygon { verts }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse { cy, cx, ry, rx, cos, sin } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Polygon { verts } => {
                // vertices are ordered by angle, so every edge turns the same way
                (0..verts.len()).all(|i| {
                    let (y0, x0) = verts[i];
                    let (y1, x1) = verts[(i + 1) % verts.len()];
                    (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0.0
                })
            }
        }
    }
}

/// Draws up to `n_shapes` non-touching shapes; at least one is always placed.
pub fn generate_scene(size: usize, n_shapes: usize, seed: u64) -> Result<SyntheticScene> {
    if !size.is_power_of_two() || size < 8 {
        return Err(Error::invalid(format!("scene size must be a power of two >= 8, got {size}")));
    }
    if n_shapes == 0 {
        return Err(Error::invalid("a scene needs at least one shape"));
    }
    let mut r = rng::rng_from(seed, &[rng::tag("scene")]);
    let dark_background = r.random_bool(0.5);
    let (bg_band, fg_band) = if dark_background { (DARK_BAND, LIGHT_BAND) } else { (LIGHT_BAND, DARK_BAND) };
    let mut region_colors = vec![band_color(&mut r, bg_band)];
    let mut labels = vec![0usize; size * size];
    let min_pixels = 12;
    for _ in 0..n_shapes * 40 {
        if region_colors.len() > n_shapes {
            break;
        }
        let shape = Shape::random(&mut r, size);
        let color = band_color(&mut r, fg_band);
        let pixels: Vec<usize> =
            (0..size * size).filter(|&i| shape.contains((i / size) as f64 + 0.5, (i % size) as f64 + 0.5)).collect();
        if pixels.len() < min_pixels {
            continue;
        }
        // keep a one-pixel background gap to the border and other shapes
        let clear = pixels.iter().all(|&i| {
            let (y, x) = ((i / size) as isize, (i % size) as isize);
            (-2..=2).all(|dy| {
                (-2..=2).all(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    yy >= 0
                        && xx >= 0
                        && (yy as usize) < size
                        && (xx as usize) < size
                        && labels[yy as usize * size + xx as usize] == 0
                })
            })
        });
        if !clear {
            continue;
        }
        let id = region_colors.len();
        for &i in &pixels {
            labels[i] = id;
        }
        region_colors.push(color);
    }
    if region_colors.len() == 1 {
        return Err(Error::invalid(format!("could not place a shape in a {size}x{size} scene")));
    }
    let plane = size * size;
    let mut image = vec![0.0; 3 * plane];
    let mut edges = vec![0.0; plane];
    for i in 0..plane {
        for c in 0..3 {
            image[c * plane + i] = region_colors[labels[i]][c];
        }
        let (y, x) = (i / size, i % size);
        let lower = |yy: usize, xx: usize| labels[yy * size + xx] < labels[i];
        if (y > 0 && lower(y - 1, x))
            || (y + 1 < size && lower(y + 1, x))
            || (x > 0 && lower(y, x - 1))
            || (x + 1 < size && lower(y, x + 1))
        {
            edges[i] = 1.0;
        }
    }
    Ok(SyntheticScene {
        image: Tensor::new([1, 3, size, size], image)?,
        true_edges: Tensor::new([1, 1, size, size], edges)?,
        labels,
        region_colors,
    })
}

/// Free-form stroke mask parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub strokes: usize,
    pub width_min: usize,
    pub width_max: usize,
    /// Points visited by each stroke's random walk.
    pub walk_length: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub seed: u64,
}

impl MaskSpec {
    /// Defaults scaled to the image side.
    pub fn for_size(size: usize, seed: u64) -> Self {
        Self {
            strokes: 3,
            width_min: (size / 16).max(1),
            width_max: (size / 8).max(2),
            walk_length: size,
            min_fraction: 0.05,
            max_fraction: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.strokes >= 1
            && self.width_min >= 1
            && self.width_min <= self.width_max
            && self.walk_length >= 1
            && (0.0..=1.0).contains(&self.min_fraction)
            && (0.0..=1.0).contains(&self.max_fraction)
            && self.min_fraction <= self.max_fraction;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid mask spec {self:?}")))
        }
    }
}

fn stamp(mask: &mut [f64], size: usize, cy: f64, cx: f64, width: usize) {
    let r = width as f64 / 2.0;
    let (py, px) = (cy.round() as isize, cx.round() as isize);
    let reach = r.ceil() as isize;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dy * dy + dx * dx) as f64) > r * r {
                continue;
            }
            let (y, x) = (py + dy, px + dx);
            if y >= 0 && x >= 0 && (y as usize) < size && (x as usize) < size {
                mask[y as usize * size + x as usize] = 1.0;
            }
        }
    }
}

fn draw_mask(spec: &MaskSpec, size: usize, r: &mut SeededRng) -> Vec<f64> {
    let mut mask = vec![0.0; size * size];
    let hi = size as f64 - 1.0;
    for _ in 0..spec.strokes {
        let width = r.random_range(spec.width_min..=spec.width_max);
        let (mut y, mut x) = (r.random_range(0.0..=hi), r.random_range(0.0..=hi));
        let mut angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
        stamp(&mut mask, size, y, x, width);
        for _ in 1..spec.walk_length {
            angle += r.random_range(-0.6..0.6);
            y = (y + angle.sin()).clamp(0.0, hi);
            x = (x + angle.cos()).clamp(0.0, hi);
            stamp(&mut mask, size, y, x, width);
        }
    }
    mask
}

/// `[1, 1, S, S]` union of dilated random-walk strokes whose hole fraction
/// lies within the spec's bounds.
pub fn generate_mask(spec: &MaskSpec, size: usize) -> Result<Tensor> {
    spec.validate()?;
    if size == 0 {
        return Err(Error::invalid("mask size must be >= 1"));
    }
    for attempt in 0..MASK_ATTEMPTS {
        let mut r = rng::rng_from(spec.seed, &[rng::tag("mask"), attempt as u64]);
        let mask = draw_mask(spec, size, &mut r);
        let frac = mask.iter().sum::<f64>() / mask.len() as f64;
        if (spec.min_fraction..=spec.max_fraction).contains(&frac) {
            return Tensor::new([1, 1, size, size], mask);
        }
    }
    Err(Error::MaskBounds { min: spec.min_fraction, max: spec.max_fraction, attempts: MASK_ATTEMPTS })
}

/// ITU-R BT.601 luma.
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Binary `[N, 1, H, W]` sketch: Sobel gradient magnitude (scaled by 1/4)
/// of the luminance, thresholded and thinned by non-maximum suppression
/// along the quantized gradient direction.
pub fn extract_sketch(image: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = image.dims4()?;
    if c != 3 {
        return Err(Error::shape(format!("sketch extraction needs 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut out = vec![0.0; n * plane];
    for b in 0..n {
        let px = &image.data()[b * 3 * plane..][..3 * plane];
        let lum: Vec<f64> = (0..plane).map(|i| luminance(px[i], px[plane + i], px[2 * plane + i])).collect();
        let at =
            |y: isize, x: isize| lum[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
        let mut mag = vec![0.0; plane];
        let mut dir = vec![(0isize, 0isize); plane];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                    - at(y - 1, x - 1)
                    - 2.0 * at(y, x - 1)
                    - at(y + 1, x - 1))
                    / 4.0;
                let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                    - at(y - 1, x - 1)
                    - 2.0 * at(y - 1, x)
                    - at(y - 1, x + 1))
                    / 4.0;
                let i = y as usize * w + x as usize;
                mag[i] = gx.hypot(gy);
                // fold to [0, π) and quantize to 45° steps
                let mut a = gy.atan2(gx);
                if a < 0.0 {
                    a += std::f64::consts::PI;
                }
                let bin = ((a / std::f64::consts::FRAC_PI_4).round() as usize) % 4;
                dir[i] = [(0, 1), (1, 1), (1, 0), (1, -1)][bin];
            }
        }
        let m_at = |y: isize, x: isize| {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                mag[y as usize * w + x as usize]
            }
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                let m = mag[i];
                if m < SKETCH_THRESHOLD {
                    continue;
                }
                let (dy, dx) = dir[i];
                if m >= m_at(y - dy, x - dx) && m > m_at(y + dy, x + dx) {
                    out[b * plane + i] = 1.0;
                }
            }
        }
    }
    Tensor::new([n, 1, h, w], out)
}

/// 4-connected components of the pixels where `keep` holds, in scan order.
pub fn components(h: usize, w: usize, keep: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || !keep(start) {
            continue;
        }
        seen[start] = true;
        let mut region = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            region.push(i);
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && keep(j) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        region.sort_unstable();
        out.push(region);
    }
    out
}

/// Sparse `[N, 3, H, W]` color control. Each 4-connected hole region not
/// covered by the sketch gets a horizontal stroke of
/// `min(5, ⌊size / 10⌋)` pixels near its centroid carrying the region's
/// per-channel (lower) median color. Zero elsewhere.
pub fn extract_color_control(image: &Tensor, mask: &Tensor, sketch: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = image.dims4()?;
    if c != 3 || mask.shape() != [n, 1, h, w] || sketch.shape() != [n, 1, h, w] {
        return Err(Error::shape(format!(
            "color control needs image [N,3,H,W] with mask and sketch [N,1,H,W], got {:?}, {:?}, {:?}",
            image.shape(),
            mask.shape(),
            sketch.shape()
        )));
    }
    if !mask.is_binary() {
        return Err(Error::invalid("mask must be binary"));
    }
    let plane = h * w;
    let mut out = vec![0.0; n * 3 * plane];
    for b in 0..n {
        let m = &mask.data()[b * plane..][..plane];
        let s = &sketch.data()[b * plane..][..plane];
        let px = &image.data()[b * 3 * plane..][..3 * plane];
        for region in components(h, w, |i| m[i] == 1.0 && s[i] == 0.0) {
            let len = MAX_STROKE_LEN.min(region.len() / 10);
            if len == 0 {
                continue;
            }
            let color = [0, 1, 2].map(|ch| {
                let mut v: Vec<f64> = region.iter().map(|&i| px[ch * plane + i]).collect();
                v.sort_by(f64::total_cmp);
                v[(v.len() - 1) / 2]
            });
            let k = region.len() as f64;
            let cy = region.iter().map(|&i| (i / w) as f64).sum::<f64>() / k;
            let cx = region.iter().map(|&i| (i % w) as f64).sum::<f64>() / k;
            let d2 = |i: usize| ((i / w) as f64 - cy).powi(2) + ((i % w) as f64 - cx).powi(2);
            let seed = *region.iter().min_by(|&&a, &&b| d2(a).total_cmp(&d2(b))).expect("nonempty region");
            let in_region = |i: usize| region.binary_search(&i).is_ok();
            let (row, col) = (seed / w, seed % w);
            let mut lo = col;
            let mut hi = col;
            while hi - lo + 1 < len {
                if hi + 1 < w && in_region(row * w + hi + 1) {
                    hi += 1;
                } else if lo > 0 && in_region(row * w + lo - 1) {
                    lo -= 1;
                } else {
                    break;
                }
            }
            for x in lo..=hi {
                for ch in 0..3 {
                    out[(b * 3 + ch) * plane + row * w + x] = color[ch];
                }
            }
        }
    }
    Tensor::new([n, 3, h, w], out)
}

/// Per-sample training pair drawn from a single seed.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub target: Tensor,
    pub mask: Tensor,
    pub sketch: Tensor,
    pub color: Tensor,
}

pub fn training_sample(size: usize, n_shapes: usize, seed: u64) -> Result<TrainingSample> {
    let scene = generate_scene(size, n_shapes, rng::derive_seed(seed, &[rng::tag("scene")]))?;
    let mask = generate_mask(&MaskSpec::for_size(size, rng::derive_seed(seed, &[rng::tag("mask")])), size)?;
    let full_sketch = extract_sketch(&scene.image)?;
    let sketch = full_sketch.zip_map(&mask, |s, m| s * m)?;
    let color = extract_color_control(&scene.image, &mask, &sketch)?;
    Ok(TrainingSample { target: scene.image, mask, sketch, color })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge_components(scene: &SyntheticScene, size: usize) -> usize {
        // 8-connected components of the contour map
        let e = scene.true_edges.data();
        let mut seen = vec![false; e.len()];
        let mut count = 0;
        for s in 0..e.len() {
            if e[s] == 0.0 || seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(i) = stack.pop() {
                let (y, x) = ((i / size) as isize, (i % size) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy < 0 || xx < 0 || yy >= size as isize || xx >= size as isize {
                            continue;
                        }
                        let j = yy as usize * size + xx as usize;
                        if e[j] != 0.0 && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn scene_basics() {
        assert!(generate_scene(32, 0, 1).is_err());
        assert!(generate_scene(24, 1, 1).is_err());
        for seed in 0..20 {
            let s = generate_scene(32, 1, seed).unwrap();
            assert_eq!(s.region_colors.len(), 2);
            assert_eq!(edge_components(&s, 32), 1, "seed {seed}");
        }
        assert_eq!(generate_scene(32, 3, 9).unwrap(), generate_scene(32, 3, 9).unwrap());
    }

    #[test]
    fn single_point_mask() {
        let spec = MaskSpec {
            strokes: 1,
            width_min: 1,
            width_max: 1,
            walk_length: 1,
            min_fraction: 0.0,
            max_fraction: 1.0,
            seed: 3,
        };
        let m = generate_mask(&spec, 16).unwrap();
        assert_eq!(m.sum(), 1.0);
    }

    #[test]
    fn unmeetable_bounds_fail() {
        let spec = MaskSpec { min_fraction: 0.9, max_fraction: 1.0, ..MaskSpec::for_size(32, 1) };
        assert!(matches!(generate_mask(&spec, 32), Err(Error::MaskBounds { attempts: 16, .. })));
    }

    #[test]
    fn constant_and_step_sketches() {
        let flat = Tensor::full([1, 3, 8, 8], 0.5);
        assert_eq!(extract_sketch(&flat).unwrap().sum(), 0.0);
        let step = Tensor::from_fn([1, 3, 8, 8], |i| if i % 8 >= 4 { 0.9 } else { 0.1 });
        let s = extract_sketch(&step).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(s.at4(0, 0, y, x), if x == 4 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn color_control_examples() {
        let img = Tensor::from_fn([1, 3, 8, 8], |i| [0.2, 0.4, 0.6][i / 64]);
        let zero = Tensor::zeros([1, 1, 8, 8]);
        assert_eq!(extract_color_control(&img, &zero, &zero).unwrap().max_abs(), 0.0);
        let full = Tensor::ones([1, 1, 8, 8]);
        let c = extract_color_control(&img, &full, &zero).unwrap();
        let lit: Vec<usize> = (0..64).filter(|&i| c.data()[i] != 0.0).collect();
        assert_eq!(lit.len(), 5);
        for &i in &lit {
            assert_eq!([c.data()[i], c.data()[64 + i], c.data()[128 + i]], [0.2, 0.4, 0.6]);
        }
    }

    #[test]
    fn training_sample_is_deterministic() {
        let a = training_sample(32, 3, 5).unwrap();
        let b = training_sample(32, 3, 5).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.sketch, b.sketch);
        assert_eq!(a.color, b.color);
    }
}
