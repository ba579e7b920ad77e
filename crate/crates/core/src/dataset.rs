//! MLM training data: block packing, dynamic masking, batching.
//!
//! Encoded sentences are greedily packed into blocks of at most `max_len`
//! ids. Masking is re-drawn per epoch from an RNG keyed by
//! `(seed, epoch, block index)`, so every epoch sees fresh mask positions
//! while any single epoch is exactly reproducible.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_MASK, STREAM_SHUFFLE};
use crate::vocab::{Vocabulary, BOS_ID, EOS_ID, MASK_ID, PAD_ID, FIRST_REGULAR_ID};

/// Label value for positions the loss ignores.
pub const IGNORE_LABEL: i64 = -100;

/// A packed id sequence: starts with BOS, every packed sentence ends with
/// EOS, never padded (padding happens at batch time).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedBlock {
    /// Position in the packed dataset; keys the per-block mask RNG.
    pub index: usize,
    pub ids: Vec<u32>,
}

/// Greedy block packer. Sentences arrive as `[BOS, body.., EOS]`
/// encodings; each contributes `body + EOS` to the current block and a
/// sentence that would overflow starts a new block. [`Packer::doc_boundary`]
/// closes the current block so no block spans two documents.
#[derive(Debug)]
pub struct Packer {
    max_len: usize,
    current: Vec<u32>,
    blocks: Vec<PackedBlock>,
}

impl Packer {
    pub fn new(max_len: usize) -> Result<Self> {
        if max_len < 4 {
            return Err(Error::Config(format!("pack_blocks: max_len {max_len} < 4")));
        }
        Ok(Packer {
            max_len,
            current: Vec::new(),
            blocks: Vec::new(),
        })
    }

    pub fn push(&mut self, encoded: &[u32]) -> Result<()> {
        if encoded.len() < 2 || encoded[0] != BOS_ID || *encoded.last().unwrap() != EOS_ID {
            return Err(Error::InvalidInput(
                "pack_blocks: each input must be a BOS..EOS encoding".into(),
            ));
        }
        let body_and_eos = &encoded[1..];
        if self.current.is_empty() {
            self.current.push(BOS_ID);
        }
        if self.current.len() + body_and_eos.len() > self.max_len {
            if self.current.len() > 1 {
                self.flush();
                self.current.push(BOS_ID);
            }
            if 1 + body_and_eos.len() > self.max_len {
                // Oversized sentence: truncate to max_len with EOS forced last.
                self.current
                    .extend_from_slice(&encoded[1..self.max_len - 1]);
                self.current.push(EOS_ID);
                self.flush();
                return Ok(());
            }
        }
        self.current.extend_from_slice(body_and_eos);
        Ok(())
    }

    /// Close the current block; the next sentence starts a new one.
    pub fn doc_boundary(&mut self) {
        if self.current.len() > 1 {
            self.flush();
        } else {
            self.current.clear();
        }
    }

    fn flush(&mut self) {
        let ids = std::mem::take(&mut self.current);
        self.blocks.push(PackedBlock {
            index: self.blocks.len(),
            ids,
        });
    }

    pub fn finish(mut self) -> Vec<PackedBlock> {
        if self.current.len() > 1 {
            self.flush();
        }
        self.blocks
    }
}

/// Pack a stream of encoded sentences into blocks of at most `max_len`.
pub fn pack_blocks<I>(encoded: I, max_len: usize) -> Result<Vec<PackedBlock>>
where
    I: IntoIterator<Item = Vec<u32>>,
{
    let mut packer = Packer::new(max_len)?;
    for e in encoded {
        packer.push(&e)?;
    }
    Ok(packer.finish())
}

/// Masking ratios: fraction of maskable tokens selected, and the
/// mask/random/keep split among the selected.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaskParams {
    pub p_select: f64,
    pub p_mask: f64,
    pub p_random: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            p_select: 0.15,
            p_mask: 0.8,
            p_random: 0.1,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.p_select)
            && self.p_mask >= 0.0
            && self.p_random >= 0.0
            && self.p_mask + self.p_random <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid mask params {self:?}")))
        }
    }
}

/// A block after masking: mutated input ids plus labels carrying the
/// original id at selected positions and [`IGNORE_LABEL`] elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedBlock {
    pub input_ids: Vec<u32>,
    pub labels: Vec<i64>,
}

/// Largest-remainder apportionment of `k` into parts proportional to
/// `shares`; ties go to the earliest category.
fn apportion(k: usize, shares: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = shares.iter().map(|s| (s * k as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] * k as f64 - counts[a] as f64;
        let rb = shares[b] * k as f64 - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..k.saturating_sub(assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Dynamically mask one block.
///
/// Exactly `max(1, round(p_select * n))` of the `n` non-special positions
/// are selected without replacement; of those, the mask/random/keep split
/// follows largest-remainder rounding of `p_mask`/`p_random`/the rest.
/// A block with no maskable tokens comes back unmasked with all-IGNORE
/// labels.
pub fn dynamic_mask(
    block: &PackedBlock,
    vocab: &Vocabulary,
    seed: u64,
    epoch: u64,
    params: &MaskParams,
) -> MaskedBlock {
    let mut input_ids = block.ids.clone();
    let mut labels = vec![IGNORE_LABEL; input_ids.len()];
    let maskable: Vec<usize> = (0..input_ids.len())
        .filter(|&i| !Vocabulary::is_special(input_ids[i]))
        .collect();
    if maskable.is_empty() {
        return MaskedBlock { input_ids, labels };
    }

    let mut rng = stream_rng(seed, STREAM_MASK, epoch, block.index as u64);
    let n = maskable.len();
    let k = ((params.p_select * n as f64).round() as usize).clamp(1, n);

    let mut selected: Vec<usize> = rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    selected.shuffle(&mut rng);

    let keep_share = (1.0 - params.p_mask - params.p_random).max(0.0);
    let counts = apportion(k, &[params.p_mask, params.p_random, keep_share]);
    let (n_mask, n_random) = (counts[0], counts[1]);

    let n_regular = vocab.len() as u32 - FIRST_REGULAR_ID;
    for (rank, &pos) in selected.iter().enumerate() {
        labels[pos] = input_ids[pos] as i64;
        if rank < n_mask {
            input_ids[pos] = MASK_ID;
        } else if rank < n_mask + n_random {
            input_ids[pos] = FIRST_REGULAR_ID + rng.gen_range(0..n_regular);
        }
        // remaining selected positions keep their original id
    }
    MaskedBlock { input_ids, labels }
}

/// One padded training batch. `attention_mask` is 1 at real tokens, 0 at
/// padding; labels at padded positions are IGNORE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Batch {
    pub input_ids: Vec<Vec<u32>>,
    pub labels: Vec<Vec<i64>>,
    pub attention_mask: Vec<Vec<u8>>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.input_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.input_ids.first().map_or(0, |r| r.len())
    }
}

/// Shuffle blocks deterministically per `(seed, epoch)`, mask each with the
/// same epoch stream, and group into right-padded batches.
pub fn make_batches(
    blocks: &[PackedBlock],
    vocab: &Vocabulary,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    params: &MaskParams,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("make_batches: batch_size must be >= 1".into()));
    }
    params.validate()?;
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    let mut rng = stream_rng(seed, STREAM_SHUFFLE, epoch, 0);
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let masked: Vec<MaskedBlock> = chunk
            .iter()
            .map(|&i| dynamic_mask(&blocks[i], vocab, seed, epoch, params))
            .collect();
        let width = masked.iter().map(|m| m.input_ids.len()).max().unwrap_or(0);
        let mut batch = Batch {
            input_ids: Vec::with_capacity(masked.len()),
            labels: Vec::with_capacity(masked.len()),
            attention_mask: Vec::with_capacity(masked.len()),
        };
        for m in masked {
            let len = m.input_ids.len();
            let mut ids = m.input_ids;
            let mut labels = m.labels;
            ids.resize(width, PAD_ID);
            labels.resize(width, IGNORE_LABEL);
            let mut mask = vec![1u8; len];
            mask.resize(width, 0);
            batch.input_ids.push(ids);
            batch.labels.push(labels);
            batch.attention_mask.push(mask);
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Write packed blocks as JSON lines, one id array per line.
pub fn save_packed(path: &Path, blocks: &[PackedBlock]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for b in blocks {
        serde_json::to_writer(&mut w, &b.ids)
            .map_err(|e| Error::parse(path.display().to_string(), b.index + 1, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read packed blocks; the line number becomes the block index.
pub fn load_packed(path: &Path) -> Result<Vec<PackedBlock>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut blocks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ids: Vec<u32> = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        blocks.push(PackedBlock {
            index: blocks.len(),
            ids,
        });
    }
    Ok(blocks)
}
