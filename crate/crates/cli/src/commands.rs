use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use sgbnet_core::data::{extract_sketch, training_sample};
use sgbnet_core::gradsuite::{run_tier, Tier};
use sgbnet_core::trainer::{metrics_row, METRICS_HEADER};
use sgbnet_core::viz::{area_resize, feature_grid, visualize_features, VizConfig};
use sgbnet_core::{
    compose, load_checkpoint, read_image, rng, save_checkpoint, write_image, EditInput, Error, Graph, Tensor,
    TrainConfig, Trainer,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.dflc";
pub const METRICS_FILE: &str = "metrics.csv";

/// An error and the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::invalid(error)
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self::invalid(error)
    }
}

type Outcome = Result<(), Failure>;

fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Outcome {
    for p in paths {
        if !p.is_file() {
            return Err(Failure::invalid(anyhow!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(())
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

fn trainer_from_checkpoint(path: &Path) -> Result<Trainer, Failure> {
    require_files([path])?;
    let ck = load_checkpoint(path).with_context(|| format!("cannot load {}", path.display()))?;
    Ok(Trainer::from_checkpoint(&ck)?)
}

pub fn train(args: TrainArgs) -> Outcome {
    let mut trainer = match &args.checkpoint {
        Some(path) => {
            let mut t = trainer_from_checkpoint(path)?;
            // --steps counts from the checkpoint; without it, finish the configured run
            if let Some(more) = args.steps {
                t.config.steps = t.step + more;
            }
            t
        }
        None => {
            let mut cfg = match &args.config {
                Some(path) => {
                    require_files([path.as_path()])?;
                    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                    TrainConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))?
                }
                None => TrainConfig::default(),
            };
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(steps) = args.steps {
                cfg.steps = steps;
            }
            cfg.validate()?;
            Trainer::new(cfg)?
        }
    };
    create_dir(&args.out)?;

    let first = trainer.step + 1;
    let total = trainer.config.steps;
    let todo = total.saturating_sub(trainer.step);
    let mut csv = format!("{METRICS_HEADER}\n");
    let result = trainer.run(todo, |step, r| {
        let _ = writeln!(csv, "{}", metrics_row(step, r));
        if step % 10 == 0 || step == total {
            eprintln!("step {step}/{total}  re {:.5}  total {:.5}", r.re, r.total);
        }
    });

    let ck_path = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ck_path, &trainer.checkpoint())?;
    let csv_path = args.out.join(METRICS_FILE);
    fs::write(&csv_path, &csv).with_context(|| format!("cannot write {}", csv_path.display()))?;

    match result {
        Ok(_) => {
            println!("trained steps {first}..={total}; wrote {} and {}", ck_path.display(), csv_path.display());
            Ok(())
        }
        Err(e @ Error::NonFinite(_)) => Err(Failure {
            code: 2,
            error: anyhow!(e).context(format!(
                "training diverged at step {}; last good state (step {}) saved to {}",
                trainer.step + 1,
                trainer.step,
                ck_path.display()
            )),
        }),
        Err(e) => Err(Failure::invalid(e)),
    }
}

pub struct EditArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub sketch: Option<PathBuf>,
    pub color: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

fn size_of(t: &Tensor) -> (usize, usize) {
    (t.shape()[2], t.shape()[3])
}

/// First channel of a black-and-white image, as a `[1, 1, H, W]` mask.
fn binary_mask(t: &Tensor, path: &Path) -> Result<Tensor, Failure> {
    let (_, _, h, w) = t.dims4()?;
    let plane = h * w;
    let d = t.data();
    for p in 0..plane {
        let v = d[p];
        if (v != 0.0 && v != 1.0) || d[plane + p] != v || d[2 * plane + p] != v {
            return Err(Failure::invalid(anyhow!(
                "{}: mask must be pure black and white (pixel at row {}, column {} is not)",
                path.display(),
                p / w,
                p % w
            )));
        }
    }
    Ok(Tensor::new([1, 1, h, w], d[..plane].to_vec())?)
}

pub fn edit(args: EditArgs) -> Outcome {
    let inputs: Vec<&Path> =
        [Some(&args.checkpoint), Some(&args.image), Some(&args.mask), args.sketch.as_ref(), args.color.as_ref()]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect();
    require_files(inputs)?;

    let image = read_image(&args.image)?;
    let (h, w) = size_of(&image);
    let load_aligned = |path: &Path, what: &str| -> Result<Tensor, Failure> {
        let t = read_image(path)?;
        let (th, tw) = size_of(&t);
        if (th, tw) != (h, w) {
            return Err(Failure::invalid(anyhow!(
                "{what} {} is {th}x{tw} but image {} is {h}x{w}",
                path.display(),
                args.image.display()
            )));
        }
        Ok(t)
    };
    let mask = binary_mask(&load_aligned(&args.mask, "mask")?, &args.mask)?;
    let sketch = match &args.sketch {
        Some(p) => {
            let s = load_aligned(p, "sketch")?;
            let plane = h * w;
            Tensor::from_fn([1, 1, h, w], |i| {
                let on = (0..3).any(|c| s.data()[c * plane + i] >= 0.5);
                if on && mask.data()[i] == 1.0 {
                    1.0
                } else {
                    0.0
                }
            })
        }
        None => Tensor::zeros([1, 1, h, w]),
    };
    let color = match &args.color {
        Some(p) => {
            let c = load_aligned(p, "color")?;
            let plane = h * w;
            Tensor::from_fn([1, 3, h, w], |i| c.data()[i] * mask.data()[i % plane])
        }
        None => Tensor::zeros([1, 3, h, w]),
    };

    let trainer = trainer_from_checkpoint(&args.checkpoint)?;
    let size = trainer.config.backbone.image_size;
    if (h, w) != (size, size) {
        return Err(Failure::invalid(anyhow!(
            "image {} is {h}x{w} but the checkpoint model takes {size}x{size}",
            args.image.display()
        )));
    }
    let input = EditInput::new(image.clone(), mask.clone(), sketch, color, args.seed)?;
    let raw = trainer.generate(&input)?;
    let composited = compose(&image, &raw, &mask)?;

    create_dir(&args.out)?;
    let raw_path = args.out.join("raw.ppm");
    let comp_path = args.out.join("composited.ppm");
    write_image(&raw_path, &raw)?;
    write_image(&comp_path, &composited)?;
    println!("wrote {} and {}", comp_path.display(), raw_path.display());
    Ok(())
}

pub fn gradcheck(tiers: &[Tier], seed: u64) -> Outcome {
    let mut failed = Vec::new();
    for &tier in tiers {
        let report = run_tier(tier, seed)?;
        println!("{report}\n");
        if !report.passes() {
            failed.push(tier.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: 3, error: anyhow!("gradient check failed for tier(s): {}", failed.join(", ")) })
    }
}

pub fn viz(checkpoint: &Path, seed: u64, out: &Path) -> Outcome {
    let trainer = trainer_from_checkpoint(checkpoint)?;
    let cfg = &trainer.config;
    let size = cfg.backbone.image_size;
    let sample = training_sample(size, cfg.n_shapes, rng::derive_seed(seed, &[rng::tag("viz")]))?;
    let input = EditInput::new(
        sample.target.clone(),
        sample.mask,
        sample.sketch,
        sample.color,
        rng::derive_seed(seed, &[rng::tag("viz-noise")]),
    )?;

    let mut g = Graph::new();
    let forward = trainer.generator.forward(&mut g, trainer.gen_store.frozen(), &input)?;
    let state = &forward.sgb[0];
    let level = cfg.backbone.level_size(0);
    let image_target = area_resize(&sample.target, level)?;
    let sketch_target = area_resize(&extract_sketch(&sample.target)?, level)?;
    let maps = visualize_features(&g, state, &image_target, &sketch_target, &VizConfig::default())?;

    create_dir(out)?;
    for (i, m) in maps.color.iter().enumerate() {
        write_image(out.join(format!("fused_{}.ppm", i + 1)), m)?;
    }
    for (i, m) in maps.gray.iter().enumerate() {
        write_image(out.join(format!("sketch_{i}.ppm")), m)?;
    }
    write_image(out.join("grid.ppm"), &feature_grid(&maps)?)?;
    println!(
        "wrote {} fused and {} sketch maps of the {level}x{level} block to {}",
        maps.color.len(),
        maps.gray.len(),
        out.display()
    );
    Ok(())
}
