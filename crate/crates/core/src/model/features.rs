//! Contextual phoneme feature extraction from a trained checkpoint.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::checkpoint::{load_checkpoint, CheckpointMeta};
use crate::model::forward::{forward, ForwardMode, ModelBatch};
use crate::model::params::EncoderParams;
use crate::segment::PhonemeSentence;
use crate::vocab::Vocabulary;

/// A loaded checkpoint ready for inference.
pub struct Encoder {
    pub params: EncoderParams<f32>,
    pub meta: CheckpointMeta,
}

impl Encoder {
    pub fn load(dir: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(dir)?;
        Ok(Encoder { params, meta })
    }

    /// Error unless `vocab` is the one this checkpoint was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.meta.vocab_sha256 != vocab.sha256_hex() {
            return Err(Error::Checkpoint(
                "vocabulary does not match the checkpoint's recorded hash".into(),
            ));
        }
        Ok(())
    }

    /// Last-layer hidden states for one sentence: `(len + 2) x hidden`,
    /// one row per token including BOS and EOS.
    pub fn extract(&self, sentence: &PhonemeSentence, vocab: &Vocabulary) -> Result<Array2<f32>> {
        self.check_vocab(vocab)?;
        let ids = vocab.encode(sentence);
        if ids.len() > self.meta.config.max_positions {
            return Err(Error::Shape(format!(
                "sentence of {} tokens exceeds max_positions {}",
                ids.len(),
                self.meta.config.max_positions
            )));
        }
        let rows = ids.len();
        let batch = ModelBatch::from_ids(vec![ids]);
        let out = forward(&batch, &self.params, &self.meta.config, ForwardMode::Eval)?;
        let hidden = out
            .hidden
            .into_shape_with_order((rows, self.meta.config.hidden))
            .expect("batch of one");
        Ok(hidden)
    }

    pub fn param_count(&self) -> usize {
        crate::model::params::param_count(&self.meta.config)
    }
}

/// One-shot variant of [`Encoder::extract`].
pub fn extract_features(
    sentence: &PhonemeSentence,
    vocab: &Vocabulary,
    checkpoint_dir: &Path,
) -> Result<Array2<f32>> {
    Encoder::load(checkpoint_dir)?.extract(sentence, vocab)
}
