use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{evaluate, EvalReport, NetLosses, Trainer, EVAL_BATCH};
use crate::checkpoint::Checkpoint;
use crate::data::{batches, Dataset, RunConfig, Split};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,net_id,split,loss_ce,loss_kl,loss_g,loss_d,top1,ens_top1,lr_logit,lr_adv";

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    /// Test-split evaluation after the last epoch.
    pub final_eval: EvalReport,
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch_{epoch:04}.afdk"))
}

fn rows(
    epoch: usize,
    split: Split,
    losses: &[NetLosses],
    top1: &[f64],
    ens_top1: f64,
    lrs: (f64, f64),
) -> Vec<String> {
    losses
        .iter()
        .zip(top1)
        .enumerate()
        .map(|(k, (l, acc))| {
            format!(
                "{epoch},{},{},{},{},{},{},{acc},{ens_top1},{},{}",
                k + 1,
                split.as_str(),
                l.ce,
                l.kl,
                l.g,
                l.d,
                lrs.0,
                lrs.1
            )
        })
        .collect()
}

fn write_lines(path: &Path, lines: &[String], append: bool) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Header and the rows of epochs `<= epoch` from an existing metrics file.
fn csv_prefix(path: &Path, epoch: usize) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::State(format!("{}: unexpected metrics header", path.display())));
    }
    let mut out = vec![CSV_HEADER.to_string()];
    for l in lines {
        let e: usize = l
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::State(format!("{}: bad row `{l}`", path.display())))?;
        if e <= epoch {
            out.push(l.to_string());
        }
    }
    Ok(out)
}

/// Trains according to `config`, writing `metrics.csv`, `config.txt` and
/// checkpoints into `config.out_dir`.
///
/// Epoch 0 contributes test-split rows for the untrained networks; every
/// trained epoch `n` contributes train rows (batch-weighted training-mode
/// metrics) and test rows, with the learning rates used during that epoch.
/// Checkpoints are written after milestone epochs of either schedule,
/// every `checkpoint_every` epochs, and at the end. With `resume`, training
/// continues from the checkpoint's epoch and the metrics file is truncated
/// to that epoch.
pub fn run_experiment(config: &RunConfig, resume: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let (train, test, stats) = config.load_datasets()?;
    let mut trainer = Trainer::new(config, train.input_shape(), train.num_classes())?;
    let out = config.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join("config.txt");
    fs::write(&cfg_path, config.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let metrics = out.join("metrics.csv");

    let lrs = |t: &Trainer, epoch: usize| (t.logit_schedule.at(epoch), t.adv_schedule.at(epoch));
    let mut last_eval;
    let start = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let (epoch, stored) = trainer.load_checkpoint(&ck)?;
            if stored != stats {
                return Err(Error::State(format!(
                    "{}: stored data statistics do not match the configured dataset",
                    path.display()
                )));
            }
            if epoch > config.epochs {
                return Err(Error::Config(format!(
                    "checkpoint is at epoch {epoch}, beyond epochs = {}",
                    config.epochs
                )));
            }
            write_lines(&metrics, &csv_prefix(&metrics, epoch)?, false)?;
            last_eval = evaluate(&mut trainer.plan, &test, EVAL_BATCH)?;
            epoch
        }
        None => {
            last_eval = evaluate(&mut trainer.plan, &test, EVAL_BATCH)?;
            let mut lines = vec![CSV_HEADER.to_string()];
            lines.extend(rows(
                0,
                Split::Test,
                &last_eval.losses,
                &last_eval.top1,
                last_eval.ensemble_top1,
                lrs(&trainer, 0),
            ));
            write_lines(&metrics, &lines, false)?;
            0
        }
    };

    let mut saves: BTreeSet<usize> = config
        .milestones_logit
        .iter()
        .chain(&config.milestones_adv)
        .copied()
        .filter(|&m| m >= 1 && m <= config.epochs)
        .collect();
    if config.checkpoint_every > 0 {
        saves.extend((1..=config.epochs).filter(|e| e % config.checkpoint_every == 0));
    }
    saves.insert(config.epochs);

    let k = trainer.plan.k();
    let mut checkpoints = Vec::new();
    for epoch in start..config.epochs {
        let mut losses = vec![NetLosses::default(); k];
        let mut correct = vec![0usize; k];
        let mut ens_correct = 0usize;
        let n = train.len() as f64;
        for (b, idx) in batches(train.len(), config.batch_size, config.seed, epoch)?
            .iter()
            .enumerate()
        {
            let (x, labels) = train.gather(idx)?;
            let rec = trainer.step(&x, &labels, epoch).map_err(|e| {
                let note = format!("epoch {} batch {b}: {e}\n", epoch + 1);
                let _ = fs::write(out.join("failure.txt"), &note);
                Error::State(format!("training aborted at {}", note.trim_end()))
            })?;
            let w = labels.len() as f64 / n;
            for i in 0..k {
                let (acc, l) = (&mut losses[i], &rec.losses[i]);
                acc.ce += w * l.ce;
                acc.kl += w * l.kl;
                acc.g += w * l.g;
                acc.d += w * l.d;
                correct[i] += rec.predictions[i].iter().zip(&labels).filter(|(p, y)| p == y).count();
            }
            ens_correct += rec.ensemble.iter().zip(&labels).filter(|(p, y)| p == y).count();
        }
        let pct = |c: usize| 100.0 * c as f64 / n;
        let top1: Vec<f64> = correct.iter().map(|&c| pct(c)).collect();
        let mut lines = rows(epoch + 1, Split::Train, &losses, &top1, pct(ens_correct), lrs(&trainer, epoch));
        last_eval = evaluate(&mut trainer.plan, &test, EVAL_BATCH)?;
        lines.extend(rows(
            epoch + 1,
            Split::Test,
            &last_eval.losses,
            &last_eval.top1,
            last_eval.ensemble_top1,
            lrs(&trainer, epoch),
        ));
        write_lines(&metrics, &lines, true)?;
        if saves.contains(&(epoch + 1)) {
            let path = checkpoint_path(out, epoch + 1);
            trainer.to_checkpoint(epoch + 1, &stats).save(&path)?;
            checkpoints.push(path);
        }
    }
    if start == config.epochs {
        let path = checkpoint_path(out, start);
        trainer.to_checkpoint(start, &stats).save(&path)?;
        checkpoints.push(path);
    }
    Ok(RunSummary {
        metrics,
        checkpoints,
        final_eval: last_eval,
    })
}

/// Rebuilds the trainer of `config` from a checkpoint and returns it with
/// the test split, standardized by the statistics stored in the checkpoint.
pub fn restore(config: &RunConfig, checkpoint: &Path) -> Result<(Trainer, Dataset)> {
    config.validate()?;
    let (_, mut test) = config.load_raw()?;
    let mut trainer = Trainer::new(config, test.input_shape(), test.num_classes())?;
    let (_, stats) = trainer.load_checkpoint(&Checkpoint::load(checkpoint)?)?;
    test.standardize(&stats)?;
    Ok((trainer, test))
}
