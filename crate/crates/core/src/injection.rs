//! Spatially-adaptive control injection.
//!
//! The input feature is standardized per sample and channel, then
//! modulated element-wise:
//!
//! `out[x, y, c] = γ[x, y, c](L) · (F[x, y, c] − μ_c) / sqrt(σ_c² + ε) + β[x, y, c](L)`
//!
//! γ and β are predicted from the control map `L` by a shared 3×3
//! convolution with a leaky ReLU, followed by two parallel 3×3 heads.

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamStore, ParamView, Var};
use crate::layers::Conv2d;
use crate::ops::{DEFAULT_LEAKY_SLOPE, DEFAULT_NORM_EPSILON};
use crate::rng;
use crate::tensor::Tensor;

/// Width of the control trunk for a given feature width.
pub fn default_hidden_channels(feature_channels: usize) -> usize {
    feature_channels.max(16)
}

#[derive(Clone, Debug)]
pub struct InjectionParams {
    pub shared: Conv2d,
    pub gamma: Conv2d,
    pub beta: Conv2d,
    pub epsilon: f64,
    pub slope: f64,
    pub feature_channels: usize,
    pub control_channels: usize,
}

impl InjectionParams {
    /// Registers a fresh injection under `name` with weights drawn from `seed`.
    ///
    /// The γ head's bias starts at 1 so a freshly built injection passes the
    /// normalized feature through rather than collapsing it to β.
    pub fn build(
        store: &mut ParamStore,
        name: &str,
        feature_channels: usize,
        control_channels: usize,
        hidden_channels: usize,
        seed: u64,
    ) -> Result<Self> {
        if feature_channels == 0 || control_channels == 0 || hidden_channels == 0 {
            return Err(Error::invalid("injection channel counts must be >= 1"));
        }
        let mut r = rng::rng_from(seed, &[rng::tag(name)]);
        let shared = Conv2d::same(store, &format!("{name}.shared"), control_channels, hidden_channels, 3, &mut r)?;
        let gamma = Conv2d::same(store, &format!("{name}.gamma"), hidden_channels, feature_channels, 3, &mut r)?;
        let beta = Conv2d::same(store, &format!("{name}.beta"), hidden_channels, feature_channels, 3, &mut r)?;
        store.set(gamma.bias, Tensor::ones([feature_channels]))?;
        Ok(Self {
            shared,
            gamma,
            beta,
            epsilon: DEFAULT_NORM_EPSILON,
            slope: DEFAULT_LEAKY_SLOPE,
            feature_channels,
            control_channels,
        })
    }

    /// Returns `(γ, β)` for a control map.
    pub fn modulation(&self, g: &mut Graph, params: ParamView<'_>, control: Var) -> Result<(Var, Var)> {
        let hidden = self.shared.forward(g, params, control)?;
        let hidden = g.leaky_relu(hidden, self.slope);
        let gamma = self.gamma.forward(g, params, hidden)?;
        let beta = self.beta.forward(g, params, hidden)?;
        Ok((gamma, beta))
    }

    /// Injects `control` into `feature`.
    pub fn inject(&self, g: &mut Graph, params: ParamView<'_>, feature: Var, control: Var) -> Result<Var> {
        let (n, c, h, w) = g.value(feature).dims4()?;
        let (nl, cl, hl, wl) = g.value(control).dims4()?;
        if (n, h, w) != (nl, hl, wl) {
            return Err(Error::shape(format!(
                "injection control {:?} is not aligned with feature {:?}",
                g.shape(control),
                g.shape(feature)
            )));
        }
        if c != self.feature_channels || cl != self.control_channels {
            return Err(Error::shape(format!(
                "injection built for {} feature / {} control channels, got {c} / {cl}",
                self.feature_channels, self.control_channels
            )));
        }
        let normalized = g.instance_norm(feature, self.epsilon)?;
        let (gamma, beta) = self.modulation(g, params, control)?;
        let scaled = g.mul(gamma, normalized)?;
        g.add(scaled, beta)
    }
}

/// Builds a standalone injection in its own store.
pub fn build_injection(
    feature_channels: usize,
    control_channels: usize,
    hidden_channels: usize,
    seed: u64,
) -> Result<(ParamStore, InjectionParams)> {
    let mut store = ParamStore::new();
    let params =
        InjectionParams::build(&mut store, "inject", feature_channels, control_channels, hidden_channels, seed)?;
    Ok((store, params))
}

/// Inference-only evaluation on plain tensors.
pub fn inject(store: &ParamStore, params: &InjectionParams, feature: &Tensor, control: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let f = g.constant(feature.clone());
    let l = g.constant(control.clone());
    let out = params.inject(&mut g, store.frozen(), f, l)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use crate::ops::channel_stats;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        rng::standard_normal(shape, &mut rng::rng_from(seed, &[]))
    }

    fn zero_heads(store: &mut ParamStore, p: &InjectionParams) {
        for id in [p.gamma.weight, p.gamma.bias, p.beta.weight, p.beta.bias] {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(shape)).unwrap();
        }
    }

    #[test]
    fn build_is_deterministic_and_seed_dependent() {
        let (s1, p1) = build_injection(8, 2, 16, 7).unwrap();
        let (s2, _) = build_injection(8, 2, 16, 7).unwrap();
        let (s3, _) = build_injection(8, 2, 16, 8).unwrap();
        for id in s1.ids() {
            assert_eq!(s1.get(id), s2.get(id));
        }
        assert_ne!(s1.get(p1.shared.weight), s3.get(p1.shared.weight));
        assert_eq!(s1.get(p1.gamma.weight).shape()[0], 8);
        assert_eq!(s1.get(p1.beta.weight).shape()[0], 8);
    }

    #[test]
    fn zero_heads_give_zero_output() {
        let (mut store, p) = build_injection(3, 2, 16, 1).unwrap();
        zero_heads(&mut store, &p);
        let out = inject(&store, &p, &random([2, 3, 5, 5], 1), &random([2, 2, 5, 5], 2)).unwrap();
        assert_eq!(out, Tensor::zeros([2, 3, 5, 5]));
    }

    #[test]
    fn constant_feature_yields_beta_exactly() {
        let (store, p) = build_injection(2, 2, 16, 3).unwrap();
        let control = random([1, 2, 6, 6], 4);
        let feature = Tensor::full([1, 2, 6, 6], 0.1);
        let out = inject(&store, &p, &feature, &control).unwrap();
        let mut g = Graph::new();
        let l = g.constant(control);
        let (_, beta) = p.modulation(&mut g, store.frozen(), l).unwrap();
        assert_eq!(&out, g.value(beta));
    }

    #[test]
    fn unit_gamma_zero_beta_standardizes() {
        let (mut store, p) = build_injection(4, 2, 16, 5).unwrap();
        zero_heads(&mut store, &p);
        store.set(p.gamma.bias, Tensor::ones([4])).unwrap();
        let feature = random([1, 4, 6, 6], 6).map(|v| 3.0 * v + 1.0);
        let out = inject(&store, &p, &feature, &random([1, 2, 6, 6], 7)).unwrap();
        let before = channel_stats(&feature, 1e-5).unwrap();
        let after = channel_stats(&out, 1e-5).unwrap();
        for c in 0..4 {
            let s = before.std.data()[c];
            assert!(after.mean.data()[c].abs() < 1e-10);
            assert!((after.std.data()[c] - s / (s * s + 1e-5).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_misaligned_control() {
        let (store, p) = build_injection(2, 2, 16, 1).unwrap();
        let err = inject(&store, &p, &random([1, 2, 4, 4], 1), &random([1, 2, 4, 5], 2));
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut store, p) = build_injection(3, 2, 4, 11).unwrap();
        let f = store.add("feature", random([2, 3, 4, 4], 12)).unwrap();
        let l = store.add("control", random([2, 2, 4, 4], 13)).unwrap();
        let weights = Tensor::from_fn([2, 3, 4, 4], |i| ((i * 37) % 17) as f64 / 17.0 - 0.5);
        let report = grad_check(
            &mut store,
            |g, view| {
                let fv = g.param(view, f);
                let lv = g.param(view, l);
                let out = p.inject(g, view, fv, lv)?;
                let w = g.constant(weights.clone());
                let prod = g.mul(out, w)?;
                Ok(g.sum(prod))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{:?}", report.worst());
    }

    #[test]
    fn batch_permutation_commutes() {
        let (store, p) = build_injection(3, 2, 16, 9).unwrap();
        let f = random([3, 3, 4, 4], 20);
        let l = random([3, 2, 4, 4], 21);
        let out = inject(&store, &p, &f, &l).unwrap();
        let perm = [2, 0, 1];
        let pf = Tensor::stack_batch(&perm.map(|i| f.sample(i).unwrap())).unwrap();
        let pl = Tensor::stack_batch(&perm.map(|i| l.sample(i).unwrap())).unwrap();
        let pout = inject(&store, &p, &pf, &pl).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(pout.sample(k).unwrap(), out.sample(i).unwrap());
        }
    }

    #[test]
    fn near_invariant_to_positive_affine_rescaling() {
        let (store, p) = build_injection(2, 2, 16, 2).unwrap();
        let f = random([1, 2, 8, 8], 30);
        let l = random([1, 2, 8, 8], 31);
        let s = channel_stats(&f, 1e-5).unwrap();
        assert!(s.std.data().iter().all(|&v| v >= 0.5));
        let f = f.map(|v| 2.0 * v);
        let rescaled = f.map(|v| 3.5 * v - 4.0);
        let a = inject(&store, &p, &f, &l).unwrap();
        let b = inject(&store, &p, &rescaled, &l).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-3);
    }
}
