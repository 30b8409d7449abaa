use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prior_distill::distill::DistillMode;
use prior_distill::pipeline::{cmd_ablate, cmd_adapt, cmd_augment, cmd_datagen, cmd_distill, cmd_eval, RunConfig, RunManifest};
use prior_distill::{Error, Result};

/// Few-shot paired translation: synthetic data, teacher adaptation,
/// augmentation, student distillation and evaluation.
#[derive(Parser, Debug)]
#[command(name = "prior-distill", version)]
struct Cli {
    /// TOML run config, or a run manifest (.json) to re-execute its config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Fixed reduction order and single-threaded kernels (always the case;
    /// recorded in the manifest).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Shot {
    /// Few-shot size: teacher adaptation images and anchor pairs.
    #[arg(long)]
    k: Option<usize>,
    /// Anchor pairs for the student, overriding --k.
    #[arg(long)]
    data_scale: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the train pool, test set, teacher source images and anchor folders.
    Datagen(Shot),
    /// Pretrain the source teacher and adapt it to the anchor targets.
    Adapt(Shot),
    /// Export pairs from the shared-latent augmentation stream.
    Augment {
        #[command(flatten)]
        shot: Shot,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a student in one ablation mode.
    Distill {
        #[command(flatten)]
        shot: Shot,
        /// BL, Aug or Aug+Anchor.
        #[arg(long)]
        mode: Option<DistillMode>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a trained student on the test set.
    Eval {
        #[command(flatten)]
        shot: Shot,
        #[arg(long)]
        mode: Option<DistillMode>,
    },
    /// Run the full mode x data-scale x seed sweep and the trend verdicts.
    Ablate,
    /// Print the resolved config.
    Config,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    let shot = match &cli.command {
        Command::Datagen(s) | Command::Adapt(s) => Some(s),
        Command::Augment { shot, .. } | Command::Distill { shot, .. } | Command::Eval { shot, .. } => Some(shot),
        Command::Ablate | Command::Config => None,
    };
    if let Some(s) = shot {
        if let Some(k) = s.k {
            cfg.k_shot = k;
            cfg.data_scale = k;
        }
        if let Some(n) = s.data_scale {
            cfg.data_scale = n;
        }
    }
    match &cli.command {
        Command::Augment { n: Some(n), .. } => cfg.augment_export = *n,
        Command::Distill { mode, iterations, .. } => {
            if let Some(m) = mode {
                cfg.mode = *m;
            }
            if let Some(i) = iterations {
                cfg.iterations = *i;
            }
        }
        Command::Eval { mode: Some(m), .. } => cfg.mode = *m,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(m: &RunManifest) {
    println!("{} done in {:.1}s", m.stage, m.timings_secs.values().sum::<f64>());
    for (k, v) in &m.outputs {
        println!("  {k}: {v}");
    }
    for p in &m.metrics {
        println!("  metrics: {}", p.display());
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Datagen(_) => report(&cmd_datagen(&cfg)?),
        Command::Adapt(_) => report(&cmd_adapt(&cfg)?),
        Command::Augment { .. } => report(&cmd_augment(&cfg)?),
        Command::Distill { .. } => report(&cmd_distill(&cfg)?),
        Command::Eval { .. } => {
            let (m, row) = cmd_eval(&cfg)?;
            report(&m);
            println!(
                "  {} n={} seed={}: ssim {:.4} perceptual {:.4} frechet {:.4} over {} images",
                row.mode, row.data_scale, row.seed, row.ssim, row.perceptual, row.frechet, row.images
            );
        }
        Command::Ablate => {
            let (m, trend) = cmd_ablate(&cfg)?;
            report(&m);
            for v in &trend.verdicts {
                println!("  {} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.claim, v.detail);
            }
        }
        Command::Config => print!("{}", cfg.render()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Divergence(dump) = &e {
                for (name, v) in &dump.losses {
                    eprintln!("  {name} = {v}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
