//! Training loop: epochs of dynamically re-masked batches, Adam updates
//! under the warmup/decay schedule, CSV metrics, periodic checkpoints.
//!
//! Every random stream is keyed by `(seed, stream, counters)`, so resuming
//! from a checkpoint at step k replays exactly the run that trained
//! straight through.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{make_batches, MaskParams, PackedBlock};
use crate::error::{Error, Result};
use crate::model::backward::loss_and_backward;
use crate::model::checkpoint::{
    has_optimizer_state, load_checkpoint, load_optimizer_state, save_checkpoint, CheckpointMeta,
};
use crate::model::forward::{forward, ForwardMode, ModelBatch};
use crate::model::optim::{adam_step, lr_schedule, AdamHyper, OptimizerState};
use crate::model::params::{EncoderConfig, EncoderParams};
use crate::rng::{stream_rng, STREAM_DROPOUT};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Defaults to two epochs' worth of steps when unset.
    pub warmup_steps: Option<u64>,
    pub adam: AdamHyper,
    pub mask: MaskParams,
    pub seed: u64,
    pub max_steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            batch_size: 16,
            peak_lr: 1e-4,
            warmup_steps: None,
            adam: AdamHyper::default(),
            mask: MaskParams::default(),
            seed: 1,
            max_steps: None,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub steps: u64,
    pub final_loss: f64,
    pub entries: Vec<LogEntry>,
    pub checkpoint_dir: PathBuf,
    pub metrics_path: PathBuf,
}

/// Train from a fresh initialization. Writes `checkpoint/` and
/// `metrics.csv` under `out_dir`.
pub fn train(
    blocks: &[PackedBlock],
    vocab: &Vocabulary,
    config: &EncoderConfig,
    opts: &TrainOptions,
    out_dir: &Path,
) -> Result<TrainReport> {
    config.validate()?;
    opts.mask.validate()?;
    if blocks.is_empty() {
        return Err(Error::InvalidInput("train: empty dataset".into()));
    }
    let params = EncoderParams::<f32>::init(config, opts.seed)?;
    let state = OptimizerState::new(config, opts.adam);
    run_loop(params, state, 0, blocks, vocab, config, opts, opts.seed, out_dir)
}

/// Resume training from a checkpoint directory. The checkpoint's seed
/// drives all random streams; pass the same schedule options as the
/// original run for an exact continuation.
pub fn resume(
    checkpoint_dir: &Path,
    blocks: &[PackedBlock],
    vocab: &Vocabulary,
    opts: &TrainOptions,
    out_dir: &Path,
) -> Result<TrainReport> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("train: empty dataset".into()));
    }
    let (params, meta) = load_checkpoint(checkpoint_dir)?;
    if meta.vocab_sha256 != vocab.sha256_hex() {
        return Err(Error::Checkpoint(format!(
            "{}: vocabulary hash mismatch",
            checkpoint_dir.display()
        )));
    }
    let state = if has_optimizer_state(checkpoint_dir) {
        load_optimizer_state(checkpoint_dir, &meta.config, opts.adam, meta.step)?
    } else {
        let mut s = OptimizerState::new(&meta.config, opts.adam);
        s.step = meta.step;
        s
    };
    let config = meta.config.clone();
    run_loop(
        params, state, meta.step, blocks, vocab, &config, opts, meta.seed, out_dir,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    mut params: EncoderParams<f32>,
    mut state: OptimizerState<f32>,
    start_step: u64,
    blocks: &[PackedBlock],
    vocab: &Vocabulary,
    config: &EncoderConfig,
    opts: &TrainOptions,
    seed: u64,
    out_dir: &Path,
) -> Result<TrainReport> {
    if opts.batch_size == 0 {
        return Err(Error::Config("train: batch_size must be >= 1".into()));
    }
    let spe = blocks.len().div_ceil(opts.batch_size) as u64;
    let mut total = opts.epochs as u64 * spe;
    if let Some(ms) = opts.max_steps {
        total = total.min(ms);
    }
    let warmup = opts.warmup_steps.unwrap_or(2 * spe).min(total);
    if start_step > total {
        return Err(Error::Config(format!(
            "resume step {start_step} beyond total steps {total}"
        )));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let metrics_file =
        std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = std::io::BufWriter::new(metrics_file);
    writeln!(metrics, "step,lr,loss").map_err(|e| Error::io(&metrics_path, e))?;

    let checkpoint_dir = out_dir.join("checkpoint");
    let save = |params: &EncoderParams<f32>, state: &OptimizerState<f32>, step: u64| {
        let meta = CheckpointMeta {
            config: config.clone(),
            vocab_sha256: vocab.sha256_hex(),
            step,
            seed,
        };
        save_checkpoint(&checkpoint_dir, params, &meta, Some(state))
    };

    let mut entries = Vec::new();
    let mut step = start_step;
    let mut final_loss = f64::NAN;
    while step < total {
        let epoch = step / spe;
        let batches = make_batches(blocks, vocab, opts.batch_size, seed, epoch, &opts.mask)?;
        let skip = (step % spe) as usize;
        for batch in batches.iter().skip(skip) {
            if step >= total {
                break;
            }
            let mb = ModelBatch::from_batch(batch);
            let mut dropout_rng = stream_rng(seed, STREAM_DROPOUT, step, 0);
            let (loss, _, grads) = loss_and_backward(
                &mb,
                &params,
                config,
                ForwardMode::Train {
                    rng: &mut dropout_rng,
                },
            )?;
            let lr = lr_schedule(step + 1, total, warmup, opts.peak_lr);
            adam_step(&mut params, &grads, &mut state, lr)?;
            step += 1;
            final_loss = loss;
            writeln!(metrics, "{step},{lr},{loss}").map_err(|e| Error::io(&metrics_path, e))?;
            entries.push(LogEntry { step, lr, loss });
            if step % 50 == 0 {
                log::info!("step {step}/{total} lr {lr:.3e} loss {loss:.4}");
            }
            if let Some(k) = opts.checkpoint_every {
                if k > 0 && step % k == 0 && step < total {
                    save(&params, &state, step)?;
                }
            }
        }
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    save(&params, &state, step)?;
    Ok(TrainReport {
        steps: step,
        final_loss,
        entries,
        checkpoint_dir,
        metrics_path,
    })
}

/// Top-1 accuracy on masked positions, over one deterministically masked
/// pass of the dataset (no parameter updates).
pub fn masked_token_accuracy(
    params: &EncoderParams<f32>,
    config: &EncoderConfig,
    blocks: &[PackedBlock],
    vocab: &Vocabulary,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    mask: &MaskParams,
) -> Result<f64> {
    let batches = make_batches(blocks, vocab, batch_size, seed, epoch, mask)?;
    let mut correct = 0u64;
    let mut total = 0u64;
    for batch in &batches {
        let mb = ModelBatch::from_batch(batch);
        let out = forward(&mb, params, config, ForwardMode::Eval)?;
        let (b, t, v) = out.logits.dim();
        for bi in 0..b {
            for ti in 0..t {
                let label = mb.labels[[bi, ti]];
                if label == crate::dataset::IGNORE_LABEL {
                    continue;
                }
                let row = out.logits.slice(ndarray::s![bi, ti, ..]);
                let mut best = 0usize;
                let mut best_v = f32::NEG_INFINITY;
                for j in 0..v {
                    if row[j] > best_v {
                        best_v = row[j];
                        best = j;
                    }
                }
                total += 1;
                if best as i64 == label {
                    correct += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput(
            "masked_token_accuracy: no labeled positions".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// Mean of the last `window` entries' losses.
pub fn smoothed_loss(entries: &[LogEntry], window: usize) -> f64 {
    let tail = &entries[entries.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|e| e.loss).sum::<f64>() / tail.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::pack_blocks;
    use crate::segment::PhonemeSentence;

    fn tiny_setup() -> (Vec<PackedBlock>, Vocabulary, EncoderConfig) {
        let lines = [
            "a b c d", "b c d e", "c d e a", "d e a b", "e a b c", "a c e b",
        ];
        let sentences: Vec<PhonemeSentence> = lines
            .iter()
            .map(|l| PhonemeSentence::parse_line(l).unwrap())
            .collect();
        let vocab = Vocabulary::build(&sentences, 1).unwrap();
        let encoded: Vec<Vec<u32>> = sentences.iter().map(|s| vocab.encode(s)).collect();
        let blocks = pack_blocks(encoded, 16).unwrap();
        let config = EncoderConfig {
            n_layers: 1,
            hidden: 16,
            n_heads: 2,
            ffn_dim: 24,
            max_positions: 16,
            vocab_size: vocab.len(),
            dropout: 0.1,
        };
        (blocks, vocab, config)
    }

    fn tiny_opts(epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            batch_size: 2,
            peak_lr: 1e-3,
            seed: 5,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn zero_steps_checkpoint_equals_initialization() {
        let (blocks, vocab, config) = tiny_setup();
        let dir = tempfile::tempdir().unwrap();
        let report = train(&blocks, &vocab, &config, &tiny_opts(0), dir.path()).unwrap();
        assert_eq!(report.steps, 0);
        let (params, meta) = load_checkpoint(&report.checkpoint_dir).unwrap();
        assert_eq!(meta.step, 0);
        assert_eq!(params, EncoderParams::<f32>::init(&config, 5).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let (blocks, vocab, config) = tiny_setup();
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let report = train(&blocks, &vocab, &config, &tiny_opts(2), dir.path()).unwrap();
            let bytes = std::fs::read(report.checkpoint_dir.join("params.bin")).unwrap();
            (report.entries.clone(), bytes)
        };
        let (e1, b1) = run();
        let (e2, b2) = run();
        assert_eq!(e1, e2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn resume_equals_straight_run() {
        let (blocks, vocab, config) = tiny_setup();
        let opts = tiny_opts(3);

        let full_dir = tempfile::tempdir().unwrap();
        let full = train(&blocks, &vocab, &config, &opts, full_dir.path()).unwrap();

        // train with an early stop, then resume to the end
        let part_dir = tempfile::tempdir().unwrap();
        let mut part_opts = opts.clone();
        part_opts.max_steps = Some(4);
        let part = train(&blocks, &vocab, &config, &part_opts, part_dir.path()).unwrap();
        assert_eq!(part.steps, 4);

        let resume_dir = tempfile::tempdir().unwrap();
        let resumed = resume(
            &part.checkpoint_dir,
            &blocks,
            &vocab,
            &opts,
            resume_dir.path(),
        )
        .unwrap();
        assert_eq!(resumed.steps, full.steps);

        // resumed entries must equal the tail of the full run exactly
        let tail = &full.entries[4..];
        assert_eq!(resumed.entries.len(), tail.len());
        for (r, f) in resumed.entries.iter().zip(tail) {
            assert_eq!(r.step, f.step);
            assert!((r.loss - f.loss).abs() < 1e-6, "{} vs {}", r.loss, f.loss);
            assert_eq!(r.lr, f.lr);
        }
        let full_bytes = std::fs::read(full.checkpoint_dir.join("params.bin")).unwrap();
        let res_bytes = std::fs::read(resumed.checkpoint_dir.join("params.bin")).unwrap();
        assert_eq!(full_bytes, res_bytes);
    }

    #[test]
    fn loss_decreases_on_tiny_task() {
        let (blocks, vocab, config) = tiny_setup();
        let mut opts = tiny_opts(60);
        opts.peak_lr = 3e-3;
        let dir = tempfile::tempdir().unwrap();
        let report = train(&blocks, &vocab, &config, &opts, dir.path()).unwrap();
        let early = smoothed_loss(&report.entries[..20.min(report.entries.len())], 20);
        let late = smoothed_loss(&report.entries, 20);
        assert!(
            late < early,
            "loss should fall: early {early:.3} late {late:.3}"
        );
    }

    #[test]
    fn accuracy_eval_runs() {
        let (blocks, vocab, config) = tiny_setup();
        let params = EncoderParams::<f32>::init(&config, 5).unwrap();
        let acc = masked_token_accuracy(
            &params,
            &config,
            &blocks,
            &vocab,
            2,
            9,
            0,
            &MaskParams::default(),
        )
        .unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
