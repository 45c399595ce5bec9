//! `afd` command-line front end: training, evaluation, feature-similarity
//! analysis, Grad-CAM export and synthetic-data generation.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use afd::analysis::{export_pgm, feature_similarity, grad_cam};
use afd::data::{synth_blobs, write_idx, Dataset, RunConfig, Split};
use afd::trainer::{evaluate, restore, run_experiment, EVAL_BATCH};

const ARCH_HELP: &str = "\
Architectures (key `archs`: one spec shared by all networks, or one per network, comma-separated):
  presets: tiny-a = conv:16:3:1-bn-relu-pool:2-conv:32:3:1-bn-relu-pool:2
           tiny-b = conv:32:3:1-bn-relu-pool:2-conv:64:3:1-bn-relu-pool:2
  block strings: tokens joined by `-`
    conv:C:K:S   KxK convolution to C channels, stride S, 'same' padding
    bn           batch normalization
    relu         ReLU
    pool:2       2x2 max pooling
  The last block's output is the feature map; a global average pool and a
  linear layer produce the logits.";

#[derive(Parser)]
#[command(name = "afd", version, about = "Online mutual distillation with adversarial feature-map transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a run; writes metrics.csv, config.txt and checkpoints to out_dir.
    #[command(after_help = ARCH_HELP)]
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print feature-map similarity of two networks as `method,pair,l1,l2,cosine,n`.
    Analyze {
        #[command(flatten)]
        run: RunArgs,
        /// 1-based network indices, e.g. `1,2`.
        #[arg(long, default_value = "1,2")]
        pair: String,
        /// Also print the CSV header line.
        #[arg(long)]
        header: bool,
    },
    /// Write a Grad-CAM heatmap of one test image as a binary PGM.
    Gradcam {
        #[command(flatten)]
        run: RunArgs,
        /// 1-based network index.
        #[arg(long, default_value_t = 1)]
        net: usize,
        /// Test-split sample index.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Target class; defaults to the sample's label.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic blob dataset as an IDX image/label pair.
    SynthData {
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 28)]
        size: usize,
        #[arg(long, default_value_t = 0.35)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines (`#` starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set method=dml`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run directory holding config.txt (overridden by --config).
    #[arg(long)]
    run: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to load; defaults to the latest in the run directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let mut args = ConfigArgs {
            config: self.config.config.clone(),
            overrides: self.config.overrides.clone(),
        };
        if args.config.is_none() {
            args.config = self.run.as_ref().map(|d| d.join("config.txt"));
        }
        let cfg = args.load()?;
        let ckpt = match (&self.checkpoint, &self.run) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => latest_checkpoint(dir)?,
            (None, None) => bail!("give --checkpoint or --run"),
        };
        Ok((cfg, ckpt))
    }
}

fn latest_checkpoint(dir: &PathBuf) -> Result<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "afdk"))
        .collect();
    found.sort();
    found.pop().with_context(|| format!("no checkpoints in {}", dir.display()))
}

fn parse_pair(s: &str, k: usize) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
    match parsed {
        Some((a, b)) if a != b && (1..=k).contains(&a) && (1..=k).contains(&b) => Ok((a - 1, b - 1)),
        _ => bail!("--pair expects two distinct indices in 1..={k}, got `{s}`"),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, resume } => {
            let cfg = config.load()?;
            let summary = run_experiment(&cfg, resume.as_deref())?;
            let r = &summary.final_eval;
            for (k, acc) in r.top1.iter().enumerate() {
                println!("net {}: test top-1 {acc:.2}%", k + 1);
            }
            println!("ensemble: test top-1 {:.2}%", r.ensemble_top1);
            println!("metrics: {}", summary.metrics.display());
        }
        Command::Eval { run } => {
            let (cfg, ckpt) = run.load()?;
            let (mut trainer, test) = restore(&cfg, &ckpt)?;
            let r = evaluate(&mut trainer.plan, &test, EVAL_BATCH)?;
            for (k, (acc, l)) in r.top1.iter().zip(&r.losses).enumerate() {
                println!("net {}: top-1 {acc:.2}%  ce {:.4}  kl {:.4}  g {:.4}  d {:.4}", k + 1, l.ce, l.kl, l.g, l.d);
            }
            println!("ensemble: top-1 {:.2}% over {} samples", r.ensemble_top1, r.samples);
        }
        Command::Analyze { run, pair, header } => {
            let (cfg, ckpt) = run.load()?;
            let (mut trainer, test) = restore(&cfg, &ckpt)?;
            let (a, b) = parse_pair(&pair, trainer.plan.k())?;
            let (lo, hi) = (a.min(b), a.max(b));
            let (left, right) = trainer.plan.nets.split_at_mut(hi);
            let (na, nb) = (&mut left[lo], &mut right[0]);
            let r = if a < b {
                feature_similarity(na, nb, &test)?
            } else {
                feature_similarity(nb, na, &test)?
            };
            if header {
                println!("method,pair,l1,l2,cosine,n");
            }
            println!("{},{}-{},{},{},{},{}", cfg.method, a + 1, b + 1, r.l1, r.l2, r.cosine, r.samples);
        }
        Command::Gradcam { run, net, index, class, out } => {
            let (cfg, ckpt) = run.load()?;
            let (mut trainer, test) = restore(&cfg, &ckpt)?;
            let k = trainer.plan.k();
            if !(1..=k).contains(&net) {
                bail!("--net must be in 1..={k}");
            }
            if index >= test.len() {
                bail!("--index {index} beyond {} test samples", test.len());
            }
            let (x, labels) = test.gather(&[index])?;
            let target = class.unwrap_or(labels[0]);
            let map = grad_cam(&mut trainer.plan.nets[net - 1], &x, target)?;
            export_pgm(&map, &out)?;
            println!(
                "{}: {}x{} heatmap, class {target} (label {})",
                out.display(),
                map.shape()[1],
                map.shape()[0],
                labels[0]
            );
        }
        Command::SynthData { classes, per_class, size, noise, seed, images, labels } => {
            let ds = synth_blobs(classes, per_class, size, noise, seed, Split::Train)?;
            // IDX stores bytes: clip to [0, 1] before quantizing.
            let clipped = Dataset::new(
                ds.pixels().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                ds.shape(),
                ds.labels().to_vec(),
                ds.num_classes(),
                Split::Train,
            )?;
            write_idx(&clipped, &images, &labels)?;
            println!("wrote {} samples to {} and {}", clipped.len(), images.display(), labels.display());
        }
    }
    Ok(())
}
