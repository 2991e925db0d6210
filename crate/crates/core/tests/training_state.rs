use proptest::prelude::*;
use sgbnet_core::optim::{Adam, AdamConfig};
use sgbnet_core::{
    load_checkpoint, save_checkpoint, BackboneConfig, Checkpoint, Graph, LossWeights, ParamStore, Tensor, TrainConfig,
    Trainer,
};

fn toy(seed: u64) -> TrainConfig {
    TrainConfig {
        backbone: BackboneConfig { levels: 2, base_channels: 4, image_size: 16 },
        seed,
        steps: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_files_are_stable() {
    let mut t = Trainer::new(toy(3)).unwrap();
    t.run(2, |_, _| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.dflc"), dir.path().join("b.dflc"));
    save_checkpoint(&a, &t.checkpoint()).unwrap();
    save_checkpoint(&b, &load_checkpoint(&a).unwrap()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let back = Trainer::from_checkpoint(&load_checkpoint(&a).unwrap()).unwrap();
    assert_eq!(back.checkpoint().to_bytes(), t.checkpoint().to_bytes());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let mut straight = Trainer::new(toy(5)).unwrap();
    let full = straight.run(4, |_, _| {}).unwrap();

    let mut first = Trainer::new(toy(5)).unwrap();
    first.run(2, |_, _| {}).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let tail = resumed.run(2, |_, _| {}).unwrap();

    assert_eq!(tail, full[2..]);
    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());
}

#[test]
fn optimizer_steps_strictly_increase() {
    let mut t = Trainer::new(toy(1)).unwrap();
    let mut last = (t.gen_opt.step, t.disc_opt.step);
    for _ in 0..3 {
        t.train_step().unwrap();
        let now = (t.gen_opt.step, t.disc_opt.step);
        assert!(now.0 > last.0 && now.1 > last.1);
        for (store, opt) in [(&t.gen_store, &t.gen_opt), (&t.disc_store, &t.disc_opt)] {
            for id in store.ids() {
                assert_eq!(opt.m[id.index()].shape(), store.get(id).shape());
                assert_eq!(opt.v[id.index()].shape(), store.get(id).shape());
            }
        }
        last = now;
    }
}

/// One Adam step on `sum(w ⊙ c)`, whose gradient is `c`.
fn adam_once(w0: &[f64], c: &[f64]) -> Vec<f64> {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new([w0.len()], w0.to_vec()).unwrap()).unwrap();
    let mut opt = Adam::new(&store, AdamConfig::default());
    let mut g = Graph::new();
    let w = g.param(store.trainable(), id);
    let k = g.constant(Tensor::new([c.len()], c.to_vec()).unwrap());
    let p = g.mul(w, k).unwrap();
    let loss = g.sum(p);
    store.zero_grad();
    store.backward(&g, loss).unwrap();
    opt.step(&mut store).unwrap();
    store.get(id).data().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_text_roundtrips(
        levels in 1usize..=4, base in 1usize..=32, size_exp in 4u32..=8, n_shapes in 1usize..=5,
        batch in 1usize..=4, fixed in any::<bool>(), steps in any::<u64>(), seed in any::<u64>(),
        lr in 1e-6f64..1.0, beta1 in 0.0f64..0.99, lambdas in proptest::array::uniform5(0.0f64..500.0),
    ) {
        let defaults = TrainConfig::default();
        let cfg = TrainConfig {
            backbone: BackboneConfig { levels, base_channels: base, image_size: 1 << size_exp },
            n_shapes,
            batch_size: batch,
            fixed_sample: fixed,
            steps,
            seed,
            adam: AdamConfig { lr, beta1, ..defaults.adam },
            weights: LossWeights {
                reconstruction: lambdas[0],
                perceptual: lambdas[1],
                style: lambdas[2],
                tv: lambdas[3],
                adversarial: lambdas[4],
            },
        };
        prop_assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn first_adam_step_moves_by_lr_against_the_gradient_sign(
        w0 in proptest::collection::vec(-5.0f64..5.0, 1..8), scale in 1e-3f64..1e3, seed in any::<u64>(),
    ) {
        // bias correction makes the first step lr · g / (|g| + ε·…) ≈ lr · sign(g)
        let c: Vec<f64> = (0..w0.len()).map(|i| if (seed >> (i % 64)) & 1 == 1 { scale } else { -scale }).collect();
        let w1 = adam_once(&w0, &c);
        let again = adam_once(&w0, &c);
        prop_assert_eq!(&w1, &again);
        for i in 0..w0.len() {
            let want = w0[i] - 2e-4 * c[i].signum();
            prop_assert!((w1[i] - want).abs() < 1e-9, "{} vs {}", w1[i], want);
        }
    }
}
