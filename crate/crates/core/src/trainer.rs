//! Alternating discriminator / generator training on synthetic scenes.

use std::fmt::Write as _;

use crate::config::TrainConfig;
use crate::data::training_sample;
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamStore, Var};
use crate::losses::{self, AdversarialRole, FeatureExtractor, LossReport, LossTerms};
use crate::network::{discriminate, CriticKind, Discriminators, EditInput, Generator};
use crate::optim::Adam;
use crate::rng;
use crate::tensor::Tensor;

/// Header of the metrics CSV.
pub const METRICS_HEADER: &str = "step,re,prec,style,adv,tv,total";

/// One batch: the edit input and its ground truth.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: EditInput,
    pub target: Tensor,
}

/// Full training state. Every random draw is a function of
/// `(config.seed, step)`, so the state needs no stored generator streams.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub gen_store: ParamStore,
    pub generator: Generator,
    pub disc_store: ParamStore,
    pub critics: Discriminators,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    pub step: u64,
    extractor: FeatureExtractor,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut gen_store = ParamStore::new();
        let generator =
            Generator::build(&mut gen_store, config.backbone, rng::derive_seed(config.seed, &[rng::tag("generator")]))?;
        let mut disc_store = ParamStore::new();
        let critics = Discriminators::build(
            &mut disc_store,
            config.backbone.base_channels,
            rng::derive_seed(config.seed, &[rng::tag("critics")]),
        )?;
        let gen_opt = Adam::new(&gen_store, config.adam);
        let disc_opt = Adam::new(&disc_store, config.adam);
        Ok(Self {
            config,
            gen_store,
            generator,
            disc_store,
            critics,
            gen_opt,
            disc_opt,
            step: 0,
            extractor: FeatureExtractor::default(),
        })
    }

    /// The batch consumed by training step `step` (0-based).
    pub fn batch(&self, step: u64) -> Result<Batch> {
        let cfg = &self.config;
        let data_step = if cfg.fixed_sample { 0 } else { step };
        let size = cfg.backbone.image_size;
        let samples = (0..cfg.batch_size)
            .map(|j| {
                training_sample(
                    size,
                    cfg.n_shapes,
                    rng::derive_seed(cfg.seed, &[rng::tag("data"), data_step, j as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let stack = |f: fn(&crate::data::TrainingSample) -> &Tensor| {
            Tensor::stack_batch(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
        };
        let target = stack(|s| &s.target)?;
        let input = EditInput::new(
            target.clone(),
            stack(|s| &s.mask)?,
            stack(|s| &s.sketch)?,
            stack(|s| &s.color)?,
            rng::derive_seed(cfg.seed, &[rng::tag("noise"), data_step]),
        )?;
        Ok(Batch { input, target })
    }

    fn adversarial(
        &self,
        g: &mut Graph,
        trainable: bool,
        real: Var,
        fake: Var,
        mask: &Tensor,
        role: AdversarialRole,
    ) -> Result<Var> {
        let view = if trainable { self.disc_store.trainable() } else { self.disc_store.frozen() };
        let mut terms = Vec::with_capacity(2);
        for which in [CriticKind::Global, CriticKind::Local] {
            let rs = discriminate(g, view, &self.critics, real, mask, which)?;
            let fs = discriminate(g, view, &self.critics, fake, mask, which)?;
            terms.push(losses::adversarial_loss(g, rs, fs, role)?);
        }
        let sum = g.add(terms[0], terms[1])?;
        Ok(g.scale(sum, 0.5))
    }

    /// One discriminator update followed by one generator update.
    ///
    /// On error (including a non-finite loss or gradient) both parameter
    /// sets, both optimizers and the step counter are left as they were.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let batch = self.batch(self.step)?;
        let mask = &batch.input.mask;

        let mut g = Graph::new();
        let out = self.generator.forward(&mut g, self.gen_store.trainable(), &batch.input)?.image;
        let fake_value = g.value(out).clone();
        if !fake_value.all_finite() {
            return Err(Error::NonFinite("generator output".into()));
        }

        let disc_backup: Vec<Tensor> = self.disc_store.ids().map(|id| self.disc_store.get(id).clone()).collect();
        let disc_opt_backup = self.disc_opt.clone();
        {
            let mut dg = Graph::new();
            let real = dg.constant(batch.target.clone());
            let fake = dg.constant(fake_value);
            let d_loss = self.adversarial(&mut dg, true, real, fake, mask, AdversarialRole::Discriminator)?;
            let v = dg.value(d_loss).item()?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("discriminator loss {v}")));
            }
            self.disc_store.zero_grad();
            self.disc_store.backward(&dg, d_loss)?;
            self.disc_opt.step(&mut self.disc_store)?;
        }

        let result = (|| {
            let target = g.constant(batch.target.clone());
            let re = losses::pixel_loss(&mut g, out, target)?;
            let (prec, style) = losses::perceptual_and_style(&mut g, &self.extractor, out, target)?;
            let tv = losses::tv_loss(&mut g, out, mask)?;
            let adv = self.adversarial(&mut g, false, target, out, mask, AdversarialRole::Generator)?;
            let terms = LossTerms { re, prec, style, tv, adv };
            let (total, report) = losses::total_loss(&mut g, &terms, &self.config.weights)?;
            if !report.all_finite() {
                return Err(Error::NonFinite(format!("generator losses {report:?}")));
            }
            self.gen_store.zero_grad();
            self.gen_store.backward(&g, total)?;
            self.gen_opt.step(&mut self.gen_store)?;
            Ok(report)
        })();
        match result {
            Ok(report) => {
                self.step += 1;
                Ok(report)
            }
            Err(e) => {
                for (id, t) in self.disc_store.ids().zip(disc_backup).collect::<Vec<_>>() {
                    self.disc_store.set(id, t)?;
                }
                self.disc_opt = disc_opt_backup;
                Err(e)
            }
        }
    }

    /// Runs `steps` updates, calling `on_step` with the 1-based step number
    /// after each. Stops at the first error; the trainer then holds the
    /// last good state.
    pub fn run(&mut self, steps: u64, mut on_step: impl FnMut(u64, &LossReport)) -> Result<Vec<LossReport>> {
        let mut reports = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let r = self.train_step()?;
            on_step(self.step, &r);
            reports.push(r);
        }
        Ok(reports)
    }

    /// Generator output for an edit request.
    pub fn generate(&self, input: &EditInput) -> Result<Tensor> {
        self.generator.generate(&self.gen_store, input)
    }
}

/// Outcome of [`train`]: the final (or last good) trainer, the per-step
/// reports, and the error that stopped training early, if any.
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub reports: Vec<LossReport>,
    pub error: Option<Error>,
}

/// Builds a trainer from `config` and runs `config.steps` updates.
pub fn train(config: TrainConfig) -> Result<TrainOutcome> {
    let steps = config.steps;
    let mut trainer = Trainer::new(config)?;
    let mut reports = Vec::new();
    let error = trainer.run(steps, |_, r| reports.push(*r)).err();
    Ok(TrainOutcome { trainer, reports, error })
}

/// One CSV row; floats use the shortest round-trip representation.
pub fn metrics_row(step: u64, r: &LossReport) -> String {
    format!("{step},{},{},{},{},{},{}", r.re, r.prec, r.style, r.adv, r.tv, r.total)
}

/// Full metrics CSV for reports of steps `first_step..`.
pub fn metrics_csv(first_step: u64, reports: &[LossReport]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for (i, r) in reports.iter().enumerate() {
        let _ = writeln!(out, "{}", metrics_row(first_step + i as u64, r));
    }
    out
}

/// `M ⊙ out + (1 − M) ⊙ in`, taking known pixels from `input` verbatim.
pub fn compose(input: &Tensor, output: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    output.expect_same_shape(input)?;
    if mask.shape() != [n, 1, h, w] {
        return Err(Error::shape(format!("mask {:?} does not match image {:?}", mask.shape(), input.shape())));
    }
    let plane = h * w;
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let m = mask.data()[(i / (c * plane)) * plane + i % plane];
        if m != 0.0 {
            let o = output.data()[i];
            *v = if m == 1.0 { o } else { m * o + (1.0 - m) * *v };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::BackboneConfig;

    fn toy() -> TrainConfig {
        TrainConfig {
            backbone: BackboneConfig { levels: 2, base_channels: 4, image_size: 16 },
            steps: 2,
            ..TrainConfig::default()
        }
    }

    fn fingerprint(store: &ParamStore) -> Vec<u64> {
        store.ids().flat_map(|id| store.get(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    }

    #[test]
    fn compose_examples() {
        let a = Tensor::from_fn([1, 3, 4, 4], |i| i as f64 / 48.0);
        let b = Tensor::from_fn([1, 3, 4, 4], |i| 1.0 - i as f64 / 48.0);
        assert_eq!(compose(&a, &b, &Tensor::zeros([1, 1, 4, 4])).unwrap(), a);
        assert_eq!(compose(&a, &b, &Tensor::ones([1, 1, 4, 4])).unwrap(), b);
        let m = Tensor::from_fn([1, 1, 4, 4], |i| (i % 2) as f64);
        let c = compose(&a, &b, &m).unwrap();
        for i in 0..48 {
            let expect = if i % 2 == 1 { b.data()[i] } else { a.data()[i] };
            assert_eq!(c.data()[i].to_bits(), expect.to_bits());
        }
    }

    #[test]
    fn zero_steps_is_initialization() {
        let cfg = TrainConfig { steps: 0, ..toy() };
        let out = train(cfg.clone()).unwrap();
        let fresh = Trainer::new(cfg).unwrap();
        assert!(out.reports.is_empty());
        assert_eq!(fingerprint(&out.trainer.gen_store), fingerprint(&fresh.gen_store));
        assert_eq!(fingerprint(&out.trainer.disc_store), fingerprint(&fresh.disc_store));
    }

    #[test]
    fn steps_are_deterministic_and_counted() {
        let a = train(toy()).unwrap();
        let b = train(toy()).unwrap();
        assert!(a.error.is_none());
        assert_eq!(a.reports.len(), 2);
        assert_eq!(a.reports, b.reports);
        assert_eq!(fingerprint(&a.trainer.gen_store), fingerprint(&b.trainer.gen_store));
        assert_eq!(a.trainer.step, 2);
        let csv = metrics_csv(1, &a.reports);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(METRICS_HEADER));
    }

    #[test]
    fn divergence_leaves_state_untouched() {
        let mut t = Trainer::new(toy()).unwrap();
        let id = t.gen_store.ids().next().unwrap();
        let mut w = t.gen_store.get(id).clone();
        w.data_mut()[0] = f64::NAN;
        t.gen_store.set(id, w).unwrap();
        let gen = fingerprint(&t.gen_store);
        let disc = fingerprint(&t.disc_store);
        assert!(matches!(t.train_step(), Err(Error::NonFinite(_))));
        assert_eq!(t.step, 0);
        assert_eq!(fingerprint(&t.gen_store), gen);
        assert_eq!(fingerprint(&t.disc_store), disc);
    }
}
