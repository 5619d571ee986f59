//! `mca`: command-line entry point for the modular codec avatar pipeline.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mca_core::config::{load_config, Profile, RunConfig};
use mca_core::face::{export_pngs, ViewDirection};
use mca_core::par::{self, Exec};
use mca_core::pipeline::{ModelKind, Pipeline};
use mca_core::Error;

/// Exit codes.
const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_ARTIFACT: u8 = 4;
const EXIT_THRESHOLD: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "mca", version, about = "Modular codec avatars on synthetic faces")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML run configuration (supports `include = [...]`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in defaults the config file is layered over.
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    profile: Option<String>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for stage outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "MCA_THREADS")]
    threads: Option<usize>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Override the number of MCA/CA training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Equal blend weights instead of the learned blend head.
    #[arg(long, global = true)]
    no_blend: bool,
    /// Keep the shared decoder frozen.
    #[arg(long, global = true)]
    no_end2end: bool,
    /// Hard exemplar targets without code noise.
    #[arg(long, global = true)]
    no_soft_ex: bool,
    /// Halve the latent dimension of the codecs.
    #[arg(long, global = true)]
    no_dimen: bool,
    /// Each module encoder sees only its own camera.
    #[arg(long, global = true)]
    no_skip_mod: bool,
    /// Per-frame synthesizer without temporal context.
    #[arg(long, global = true)]
    no_tconv: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dome, headset and compositional splits.
    GenData {
        /// Also export this many preview PNGs per split.
        #[arg(long, default_value_t = 0)]
        png: usize,
    },
    /// Train the holistic and per-module VAEs and build exemplar banks.
    TrainCodec,
    /// Train the modular model.
    TrainMca,
    /// Train the holistic baseline.
    TrainCa,
    /// Compare MCA against CA; exits with code 5 when thresholds are violated.
    Eval,
    /// Cluster-retrieval comparison of holistic and modular latent spaces.
    Expressiveness,
    /// Frontal renders of a trained model on the compositional split.
    Render {
        #[arg(long, default_value = "mca", value_parser = ["mca", "ca"])]
        model: String,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Viewing direction as `x,y,z`.
        #[arg(long, default_value = "0,0,1")]
        view: String,
    },
    /// Animate from independently shuffled per-module camera streams.
    AppFlex {
        #[arg(long)]
        shuffle_seed: Option<u64>,
    },
    /// Amplify eye opening in latent space.
    AppAmplify {
        #[arg(long)]
        factor: Option<f64>,
        /// Eye module (0 = left, 1 = right).
        #[arg(long)]
        module: Option<usize>,
    },
}

fn resolve(g: &GlobalArgs) -> mca_core::Result<RunConfig> {
    let profile = g.profile.as_deref().map(str::parse::<Profile>).transpose()?;
    let mut c = load_config(g.config.as_deref(), profile)?;
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(e) = g.epochs {
        c.mca.epochs = e;
    }
    let ab = &mut c.mca.ablation;
    ab.blend &= !g.no_blend;
    ab.end2end &= !g.no_end2end;
    ab.soft_ex &= !g.no_soft_ex;
    ab.dimen &= !g.no_dimen;
    ab.skip_mod &= !g.no_skip_mod;
    ab.tconv &= !g.no_tconv;
    c.validate()?;
    Ok(c)
}

enum Outcome {
    Done,
    ThresholdFailed,
}

fn parse_view(s: &str) -> anyhow::Result<ViewDirection> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("view `{s}` must be three comma-separated numbers"))?;
    let arr: [f64; 3] = v.try_into().map_err(|_| anyhow::anyhow!("view `{s}` must have three components"))?;
    Ok(ViewDirection::new(arr)?)
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        par::set_threads(n.max(1));
    }
    let mut cfg = resolve(g)?;
    if let Command::AppFlex { shuffle_seed: Some(s) } = &cli.command {
        cfg.apps.shuffle_seed = *s;
    }
    if let Command::AppAmplify { factor, module } = &cli.command {
        if let Some(f) = factor {
            cfg.apps.amplify_factor = *f;
        }
        if let Some(m) = module {
            cfg.apps.amplify_module = *m;
        }
        cfg.validate()?;
    }
    let exec = if g.sequential { Exec::Sequential } else { Exec::Parallel };
    let p = Pipeline::new(cfg, &g.out, exec)?;
    let start = Instant::now();
    let outcome = match &cli.command {
        Command::GenData { png } => {
            let dir = p.gen_data()?;
            if *png > 0 {
                let (ds, avatar) = p.load_data()?;
                export_pngs(&ds, &avatar, &g.out.join("preview"), *png)?;
            }
            println!("{}", dir.display());
            Outcome::Done
        }
        Command::TrainCodec => {
            println!("{}", p.train_codec()?.display());
            Outcome::Done
        }
        Command::TrainMca | Command::TrainCa => {
            let kind = if matches!(cli.command, Command::TrainMca) { ModelKind::Mca } else { ModelKind::Ca };
            let (dir, log) = p.train(kind)?;
            if let Some((step, loss)) = log.diverged {
                eprintln!("warning: training diverged at step {step} (loss {loss}); kept the last finite parameters");
            }
            if let Some(s) = log.snapshots.last() {
                eprintln!("{}: {} params, {} steps, held-out recon {:.4}", kind.name(), log.params, log.steps, s.eval_recon);
            }
            println!("{}", dir.display());
            Outcome::Done
        }
        Command::Eval => {
            let (dir, report) = p.eval()?;
            for s in &report.splits {
                let c = &s.comparison;
                println!(
                    "{:<14} rmse ca {:.3} mca {:.3}  ssim ca {:.4} mca {:.4}  %-better {:.1}",
                    s.split, c.ca.rmse, c.mca.rmse, c.ca.ssim, c.mca.ssim, c.pct_better
                );
            }
            println!("{}", dir.display());
            if report.violations.is_empty() {
                Outcome::Done
            } else {
                for v in &report.violations {
                    eprintln!("threshold violated: {v}");
                }
                Outcome::ThresholdFailed
            }
        }
        Command::Expressiveness => {
            let (dir, report) = p.expressiveness()?;
            for r in &report.results {
                println!(
                    "n={:<4} holistic({:>4}) {:.3}  modular {:.3}  gap {:.3}",
                    r.capacity, r.holistic_clusters, r.holistic_rmse, r.modular_rmse, r.gap
                );
            }
            println!("{}", dir.display());
            Outcome::Done
        }
        Command::Render { model, frames, view } => {
            let kind: ModelKind = model.parse()?;
            println!("{}", p.render(kind, *frames, parse_view(view)?)?.display());
            Outcome::Done
        }
        Command::AppFlex { .. } => {
            let (dir, r) = p.app_flex()?;
            println!("{} frames, unshuffled max diff vs standard inference {:e}", r.frames, r.identity_max_diff);
            println!("{}", dir.display());
            Outcome::Done
        }
        Command::AppAmplify { .. } => {
            let (dir, r) = p.app_amplify()?;
            println!(
                "factor {}: openness increased on {:.1}% of {} open-eye frames (base exemplar {})",
                r.factor,
                100.0 * r.increased_fraction,
                r.open_eye_frames,
                r.base_index
            );
            println!("{}", dir.display());
            Outcome::Done
        }
    };
    eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
    Ok(outcome)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_CONFIG,
        Some(Error::MissingArtifact { .. } | Error::StaleArtifact { .. }) => EXIT_ARTIFACT,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ThresholdFailed) => ExitCode::from(EXIT_THRESHOLD),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
