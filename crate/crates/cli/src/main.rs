use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

use sgbnet_core::gradsuite::Tier;

#[derive(Parser)]
#[command(name = "sgbnet", version, about = "Sketch- and color-guided image editing network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic scenes; writes checkpoint.dflc and metrics.csv to --out.
    Train {
        /// key = value config file; flags override its values.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Resume from this checkpoint instead of initializing from a config.
        #[arg(long, value_name = "FILE", conflicts_with_all = ["config", "seed"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Fill the hole of --image given a mask and optional sketch / color controls.
    Edit {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// White pixels mark the hole; must be strictly black or white.
        #[arg(long, value_name = "FILE")]
        mask: PathBuf,
        /// Line drawing, white on black. Only the part inside the hole is used.
        #[arg(long, value_name = "FILE")]
        sketch: Option<PathBuf>,
        /// Color strokes on black. Only the part inside the hole is used.
        #[arg(long, value_name = "FILE")]
        color: Option<PathBuf>,
        /// Noise seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Finite-difference gradient checks; all tiers when none is given.
    Gradcheck {
        #[arg(value_enum)]
        tier: Option<TierArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-round feature maps of the shallowest structure block.
    Viz {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Selects the synthetic sample and the noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Ops,
    Block,
    Model,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train { config, seed, steps, checkpoint, out } => {
            commands::train(commands::TrainArgs { config, seed, steps, checkpoint, out })
        }
        Command::Edit { checkpoint, image, mask, sketch, color, seed, out } => {
            commands::edit(commands::EditArgs { checkpoint, image, mask, sketch, color, seed, out })
        }
        Command::Gradcheck { tier, seed } => {
            let tiers = match tier {
                None => Tier::ALL.to_vec(),
                Some(TierArg::Ops) => vec![Tier::Ops],
                Some(TierArg::Block) => vec![Tier::Block],
                Some(TierArg::Model) => vec![Tier::Model],
            };
            commands::gradcheck(&tiers, seed)
        }
        Command::Viz { checkpoint, seed, out } => commands::viz(&checkpoint, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
