use proptest::prelude::*;
use sgbnet_core::losses::{adversarial_loss, eval, AdversarialRole, FeatureExtractor};
use sgbnet_core::ops::{gram, softplus};
use sgbnet_core::rng::{rng_from, standard_normal, uniform};
use sgbnet_core::{Graph, LossReport, LossWeights, Tensor};

fn image(shape: &[usize], seed: u64, salt: u64) -> Tensor {
    uniform(shape.to_vec(), 0.0, 1.0, &mut rng_from(seed, &[salt]))
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn stage_values(fx: &FeatureExtractor, x: &Tensor) -> Vec<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let fs = fx.features(&mut g, v).unwrap();
    fs.into_iter().map(|f| g.value(f).clone()).collect()
}

/// Horizontal then vertical neighbours, both inside the mask.
fn tv_pairs(x: &Tensor, mask: &Tensor) -> f64 {
    let (n, c, h, w) = x.dims4().unwrap();
    let inside = |b: usize, y: usize, xx: usize| mask.at4(b, 0, y, xx) == 1.0;
    let mut total = 0.0;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    if xx + 1 < w && inside(b, y, xx) && inside(b, y, xx + 1) {
                        total += (x.at4(b, ch, y, xx + 1) - x.at4(b, ch, y, xx)).abs();
                    }
                    if y + 1 < h && inside(b, y, xx) && inside(b, y + 1, xx) {
                        total += (x.at4(b, ch, y + 1, xx) - x.at4(b, ch, y, xx)).abs();
                    }
                }
            }
        }
    }
    total / x.len() as f64
}

#[test]
fn perceptual_and_style_are_stagewise_sums() {
    let fx = FeatureExtractor::default();
    let a = image(&[2, 3, 16, 16], 1, 0);
    let b = image(&[2, 3, 16, 16], 2, 0);
    let (fa, fb) = (stage_values(&fx, &a), stage_values(&fx, &b));
    assert_eq!(fa.len(), 5);
    let prec: f64 = fa.iter().zip(&fb).map(|(x, y)| mean_abs(x.data(), y.data())).sum();
    let style: f64 = fa.iter().zip(&fb).map(|(x, y)| mean_abs(gram(x).unwrap().data(), gram(y).unwrap().data())).sum();
    assert!((eval::perceptual(&fx, &a, &b).unwrap() - prec).abs() < 1e-12 * prec.max(1.0));
    assert!((eval::style(&fx, &a, &b).unwrap() - style).abs() < 1e-12 * style.max(1.0));
}

#[test]
fn extreme_scores() {
    let real = Tensor::full([4, 1], 10.0);
    let fake = Tensor::full([4, 1], -10.0);
    let gen = eval::adversarial(&real, &fake, AdversarialRole::Generator).unwrap();
    let disc = eval::adversarial(&real, &fake, AdversarialRole::Discriminator).unwrap();
    // gap of 20 each way: the generator pays softplus(20) twice
    let want_gen = 2.0 * (20.0 + (-20f64).exp().ln_1p());
    let want_disc = 2.0 * (-20f64).exp().ln_1p();
    assert!((gen - want_gen).abs() < 1e-9, "{gen}");
    assert!((disc - want_disc).abs() / want_disc < 1e-9, "{disc}");
    assert!((want_disc - 2.0 * softplus(-20.0)).abs() < 1e-20);
}

#[test]
fn roles_pull_fake_scores_in_opposite_directions_at_equilibrium() {
    let grad = |role| {
        let mut g = Graph::new();
        let r = g.constant(Tensor::full([3, 1], 0.7));
        let f = g.leaf(Tensor::full([3, 1], 0.7));
        let l = adversarial_loss(&mut g, r, f, role).unwrap();
        assert!((g.value(l).item().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        g.backward(l).unwrap().wrt(f)
    };
    let gg = grad(AdversarialRole::Generator);
    let gd = grad(AdversarialRole::Discriminator);
    for (a, b) in gg.data().iter().zip(gd.data()) {
        assert!(a * b < 0.0, "{a} {b}");
    }
}

#[test]
fn tv_of_a_step_counts_crossing_pairs() {
    // columns 0 | 1 1 on a 3×3 single-channel image, whole image masked
    let x = Tensor::from_fn([1, 1, 3, 3], |i| if i % 3 == 0 { 0.0 } else { 1.0 });
    let full = Tensor::ones([1, 1, 3, 3]);
    assert!((eval::tv(&x, &full).unwrap() - 3.0 / 9.0).abs() < 1e-15);
    // masking out the middle column removes every crossing pair
    let no_middle = Tensor::from_fn([1, 1, 3, 3], |i| if i % 3 == 1 { 0.0 } else { 1.0 });
    assert_eq!(eval::tv(&x, &no_middle).unwrap(), 0.0);
}

#[test]
fn default_weights() {
    let w = LossWeights::default();
    assert_eq!([w.reconstruction, w.perceptual, w.style, w.tv, w.adversarial], [1.0, 0.05, 250.0, 0.1, 0.1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pixel_is_the_mean_absolute_difference(n in 1usize..=2, h in 1usize..=8, w in 1usize..=8, seed in any::<u64>()) {
        let a = image(&[n, 3, h, w], seed, 1);
        let b = image(&[n, 3, h, w], seed, 2);
        let got = eval::pixel(&a, &b).unwrap();
        prop_assert!((got - mean_abs(a.data(), b.data())).abs() < 1e-12);
        prop_assert_eq!(got, eval::pixel(&b, &a).unwrap());
    }

    #[test]
    fn tv_matches_pair_enumeration(n in 1usize..=2, c in 1usize..=3, h in 1usize..=7, w in 1usize..=7, seed in any::<u64>()) {
        let x = image(&[n, c, h, w], seed, 3);
        let mask = image(&[n, 1, h, w], seed, 4).map(|v| if v < 0.6 { 1.0 } else { 0.0 });
        prop_assert!((eval::tv(&x, &mask).unwrap() - tv_pairs(&x, &mask)).abs() < 1e-12);
    }

    #[test]
    fn losses_are_non_negative_and_vanish_on_equal_inputs(seed in any::<u64>(), level in 0.0f64..1.0) {
        let fx = FeatureExtractor::default();
        let a = image(&[1, 3, 16, 16], seed, 5);
        let b = image(&[1, 3, 16, 16], seed, 6);
        let mask = image(&[1, 1, 16, 16], seed, 7).map(|v| if v < 0.5 { 1.0 } else { 0.0 });
        for v in [
            eval::pixel(&a, &b).unwrap(),
            eval::perceptual(&fx, &a, &b).unwrap(),
            eval::style(&fx, &a, &b).unwrap(),
            eval::tv(&a, &mask).unwrap(),
        ] {
            prop_assert!(v >= 0.0);
        }
        prop_assert_eq!(eval::pixel(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(eval::perceptual(&fx, &a, &a).unwrap(), 0.0);
        prop_assert_eq!(eval::style(&fx, &a, &a).unwrap(), 0.0);
        prop_assert_eq!(eval::tv(&Tensor::full([1, 3, 16, 16], level), &mask).unwrap(), 0.0);
        let real = standard_normal([4, 1], &mut rng_from(seed, &[8]));
        let fake = standard_normal([4, 1], &mut rng_from(seed, &[9]));
        for role in [AdversarialRole::Generator, AdversarialRole::Discriminator] {
            prop_assert!(eval::adversarial(&real, &fake, role).unwrap() >= 0.0);
        }
    }

    #[test]
    fn report_total_is_the_weighted_sum(terms in proptest::array::uniform5(0.0f64..10.0), weights in proptest::array::uniform5(0.0f64..300.0)) {
        let w = LossWeights { reconstruction: weights[0], perceptual: weights[1], style: weights[2], tv: weights[3], adversarial: weights[4] };
        let r = LossReport::new(terms[0], terms[1], terms[2], terms[3], terms[4], &w).unwrap();
        let want: f64 = terms.iter().zip(weights).map(|(t, w)| t * w).sum();
        prop_assert!((r.total - want).abs() <= 1e-12 * want.max(1.0));
    }
}
