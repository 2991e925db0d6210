//! Per-round feature visualization for a structure generation block.
//!
//! Each fused feature `F^i` is mapped to RGB and each sketch feature to a
//! gray image by a learned 1×1 convolution. The maps are fitted by least
//! squares and then refined against the L1 error to the targets.

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::sgb::SgbState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VizConfig {
    /// L1 refinement iterations after the least-squares fit.
    pub iterations: usize,
    pub lr: f64,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self { iterations: 100, lr: 1e-3 }
    }
}

/// One RGB and one gray map per injection round.
#[derive(Clone, Debug)]
pub struct FeatureMaps {
    /// Mapped `F^1 .. F^n`, each `[N, 3, h, w]`.
    pub color: Vec<Tensor>,
    /// Mapped `F_s^0 .. F_s^{n-1}`, each `[N, 1, h, w]`.
    pub gray: Vec<Tensor>,
}

/// A fitted 1×1 mapping and its mean absolute error.
#[derive(Clone, Debug)]
pub struct Mapping {
    pub weight: Tensor,
    pub bias: Tensor,
    pub output: Tensor,
    pub l1: f64,
}

/// Solves `A x = b` for symmetric positive definite `A` (`n × n`, row-major).
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    Some(x)
}

fn apply_mapping(features: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    crate::ops::conv2d(features, weight, bias, 1, 0)
}

fn mean_abs(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(a.zip_map(b, |x, y| (x - y).abs())?.sum() / a.len() as f64)
}

/// Fits `target ≈ W · features + b` per pixel.
pub fn fit_mapping(features: &Tensor, target: &Tensor, cfg: &VizConfig) -> Result<Mapping> {
    let (n, c, h, w) = features.dims4()?;
    let (nt, k, ht, wt) = target.dims4()?;
    if (n, h, w) != (nt, ht, wt) {
        return Err(Error::shape(format!(
            "mapping target {:?} is not aligned with features {:?}",
            target.shape(),
            features.shape()
        )));
    }
    let plane = h * w;
    let d = c + 1;
    // normal equations over rows [f_1 .. f_c, 1]
    let mut ata = vec![0.0; d * d];
    let mut atb = vec![0.0; d * k];
    let mut row = vec![0.0; d];
    for b in 0..n {
        for p in 0..plane {
            for ch in 0..c {
                row[ch] = features.data()[(b * c + ch) * plane + p];
            }
            row[c] = 1.0;
            for i in 0..d {
                for j in 0..d {
                    ata[i * d + j] += row[i] * row[j];
                }
                for o in 0..k {
                    atb[o * d + i] += row[i] * target.data()[(b * k + o) * plane + p];
                }
            }
        }
    }
    let ridge = 1e-12 * (0..d).map(|i| ata[i * d + i]).sum::<f64>().max(1.0);
    for i in 0..d {
        ata[i * d + i] += ridge;
    }
    let mut weight = Tensor::zeros([k, c, 1, 1]);
    let mut bias = Tensor::zeros([k]);
    for o in 0..k {
        if let Some(x) = cholesky_solve(&ata, &atb[o * d..][..d], d) {
            weight.data_mut()[o * c..][..c].copy_from_slice(&x[..c]);
            bias.data_mut()[o] = x[c];
        }
    }
    let mut output = apply_mapping(features, &weight, &bias)?;
    let mut best =
        Mapping { l1: mean_abs(&output, target)?, weight: weight.clone(), bias: bias.clone(), output: output.clone() };

    let mut store = ParamStore::new();
    let wid = store.add("weight", weight)?;
    let bid = store.add("bias", bias)?;
    let mut opt = Adam::new(&store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    for _ in 0..cfg.iterations {
        let mut g = Graph::new();
        let f = g.constant(features.clone());
        let t = g.constant(target.clone());
        let wv = g.param(store.trainable(), wid);
        let bv = g.param(store.trainable(), bid);
        let out = g.conv2d(f, wv, bv, 1, 0)?;
        let diff = g.sub(out, t)?;
        let a = g.abs(diff);
        let loss = g.mean(a);
        store.zero_grad();
        store.backward(&g, loss)?;
        opt.step(&mut store)?;
        output = apply_mapping(features, store.get(wid), store.get(bid))?;
        let l1 = mean_abs(&output, target)?;
        if l1 < best.l1 {
            best = Mapping { weight: store.get(wid).clone(), bias: store.get(bid).clone(), output: output.clone(), l1 };
        }
    }
    Ok(best)
}

/// Average-pools a `[N, C, H, W]` tensor by an integer factor to `size × size`.
pub fn area_resize(t: &Tensor, size: usize) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    if size == 0 || h % size != 0 || w % size != 0 || h != w {
        return Err(Error::shape(format!("cannot area-resize {h}x{w} to {size}x{size}")));
    }
    let f = h / size;
    let inv = 1.0 / (f * f) as f64;
    Ok(Tensor::from_fn([n, c, size, size], |i| {
        let (plane, y, x) = (i / (size * size), (i / size) % size, i % size);
        let mut s = 0.0;
        for dy in 0..f {
            for dx in 0..f {
                s += t.data()[plane * h * w + (y * f + dy) * w + x * f + dx];
            }
        }
        s * inv
    }))
}

/// Maps every round of `state` (values taken from `g`). Targets must
/// already be at the block's resolution.
pub fn visualize_features(
    g: &Graph,
    state: &SgbState,
    image_target: &Tensor,
    sketch_target: &Tensor,
    cfg: &VizConfig,
) -> Result<FeatureMaps> {
    let n = state.rounds();
    let color = (1..=n)
        .map(|i| fit_mapping(g.value(state.fused[i]), image_target, cfg).map(|m| m.output))
        .collect::<Result<Vec<_>>>()?;
    let gray = (0..n)
        .map(|i| fit_mapping(g.value(state.sketch_feats[i]), sketch_target, cfg).map(|m| m.output))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMaps { color, gray })
}

/// Two-row grid for the first sample: RGB maps on top, gray maps below.
pub fn feature_grid(maps: &FeatureMaps) -> Result<Tensor> {
    let cols = maps.color.len();
    if cols == 0 || maps.gray.len() != cols {
        return Err(Error::invalid("grid needs matching, nonempty color and gray rows"));
    }
    let (_, _, h, w) = maps.color[0].dims4()?;
    let gw = cols * w;
    let mut out = Tensor::zeros([1, 3, 2 * h, gw]);
    for (col, (c, s)) in maps.color.iter().zip(&maps.gray).enumerate() {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    out.set4(0, ch, y, col * w + x, c.at4(0, ch, y, x));
                    out.set4(0, ch, h + y, col * w + x, s.at4(0, 0, y, x));
                }
            }
        }
    }
    Ok(out)
}
