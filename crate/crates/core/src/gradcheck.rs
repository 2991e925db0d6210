//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, ParamView, Var};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Relative step; the absolute step at `θ` is `step · (1 + |θ|)`.
    pub step: f64,
    /// Coordinates sampled per parameter tensor.
    pub max_coords: usize,
    pub seed: u64,
    /// A mismatching coordinate is re-measured with a 10× smaller step; if the
    /// two central differences disagree by more than this (relative), the
    /// stencil crossed a kink and the coordinate is counted in `skipped`.
    pub kink_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, max_coords: 64, seed: 0, kink_tolerance: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords: usize,
    /// Coordinates left out because the stencil crossed a non-differentiable point.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn coords(&self) -> usize {
        self.params.iter().map(|p| p.coords).sum()
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval(store: &ParamStore, f: &mut impl FnMut(&mut Graph, ParamView<'_>) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let out = f(&mut g, store.frozen())?;
    let v = g.value(out).item()?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("closure returned {v}")))
    }
}

fn central(
    store: &mut ParamStore,
    f: &mut impl FnMut(&mut Graph, ParamView<'_>) -> Result<Var>,
    id: ParamId,
    c: usize,
    h: f64,
) -> Result<f64> {
    let orig = store.get(id).data()[c];
    store.get_mut(id).data_mut()[c] = orig + h;
    let plus = eval(store, f);
    store.get_mut(id).data_mut()[c] = orig - h;
    let minus = eval(store, f);
    store.get_mut(id).data_mut()[c] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences, for every tensor in `store`.
///
/// `f` must be deterministic. Gradients accumulated in `store` are reset.
pub fn grad_check(
    store: &mut ParamStore,
    mut f: impl FnMut(&mut Graph, ParamView<'_>) -> Result<Var>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(cfg.step > 0.0) {
        return Err(Error::invalid("grad_check step must be > 0"));
    }
    store.zero_grad();
    {
        let mut g = Graph::new();
        let out = f(&mut g, store.trainable())?;
        let v = g.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("closure returned {v}")));
        }
        store.backward(&g, out)?;
    }
    let analytic: Vec<Tensor> = store.ids().map(|id| store.grad(id).clone()).collect();
    store.zero_grad();

    let mut params = Vec::with_capacity(analytic.len());
    let mut overall: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let len = store.get(id).len();
        let coords: Vec<usize> = if len <= cfg.max_coords {
            (0..len).collect()
        } else {
            let mut r = rng::rng_from(cfg.seed, &[pi as u64]);
            let mut picked = index::sample(&mut r, len, cfg.max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut worst: f64 = 0.0;
        let mut skipped = 0;
        for &c in &coords {
            let orig = store.get(id).data()[c];
            let h = cfg.step * (1.0 + orig.abs());
            let numeric = central(store, &mut f, id, c, h)?;
            let mut err = relative_error(analytic[pi].data()[c], numeric);
            if err > cfg.kink_tolerance {
                let fine = central(store, &mut f, id, c, h / 10.0)?;
                if relative_error(numeric, fine) > cfg.kink_tolerance {
                    skipped += 1;
                    err = 0.0;
                }
            }
            worst = worst.max(err);
        }
        overall = overall.max(worst);
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            coords: coords.len(),
            skipped,
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { params, max_rel_error: overall })
}

/// Convenience wrapper: differentiates `f` w.r.t. the given input tensors.
pub fn check_inputs(
    inputs: &[Tensor],
    mut f: impl FnMut(&mut Graph, &[Var]) -> Result<Var>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let ids = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("input{i}"), t.clone()))
        .collect::<Result<Vec<_>>>()?;
    grad_check(
        &mut store,
        |g, view| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(view, id)).collect();
            f(g, &vars)
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::from_fn([5], |i| i as f64 - 2.0);
        let r = check_inputs(
            &[x],
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let s = g.scale(sq, 3.0);
                Ok(g.sum(s))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn sigmoid_chain() {
        let x = Tensor::from_fn([6], |i| (i as f64 * 0.7).sin() * 2.0);
        let r = check_inputs(
            &[x],
            |g, v| {
                let a = g.sigmoid(v[0]);
                let b = g.scale(a, 3.0);
                let c = g.sigmoid(b);
                let d = g.mul(c, a)?;
                Ok(g.sum(d))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // the squared term goes through a detached copy, so the tape misses it
        let x = Tensor::from_fn([4], |i| i as f64 + 0.5);
        let r = check_inputs(
            &[x],
            |g, v| {
                let detached = g.constant(g.value(v[0]).clone());
                let sq = g.mul(detached, detached)?;
                let s = g.add(sq, v[0])?;
                Ok(g.sum(s))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error > 0.5, "{r:?}");
        assert_eq!(r.skipped(), 0);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        // |x| at 1e-7 with a 1e-5 step straddles the kink
        let x = Tensor::from_fn([3], |i| [1e-7, 0.5, -0.5][i]);
        let r = check_inputs(
            &[x],
            |g, v| {
                let a = g.abs(v[0]);
                Ok(g.sum(a))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(r.skipped(), 1);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Tensor::scalar(1.0);
        let r = check_inputs(
            &[x],
            |g, v| {
                let big = g.scale(v[0], f64::INFINITY);
                Ok(g.sum(big))
            },
            &GradCheckConfig::default(),
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
