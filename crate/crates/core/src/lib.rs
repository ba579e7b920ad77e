//! Desk-scale multilingual phoneme language modeling toolkit.
//!
//! The pipeline turns raw multilingual documents into phoneme-level
//! pretraining data, trains a masked-phoneme-LM transformer encoder from
//! scratch, extracts contextual phoneme features, and scores synthesized
//! speech against references with mel-cepstral distortion and F0 RMSE.
//!
//! Stages, in order:
//!
//! 1. [`corpus`] — sentence/word segmentation, dedup, locale splitting
//! 2. [`g2p`] — dictionary-first grapheme-to-phoneme conversion
//! 3. [`segment`] — orthography-profile phoneme segmentation, `▁` boundaries
//! 4. [`vocab`] — whitespace tokenizer and id vocabulary
//! 5. [`dataset`] — block packing and per-epoch dynamic masking
//! 6. [`model`] — transformer encoder, exact gradients, Adam training,
//!    checkpointing, feature extraction
//! 7. [`metrics`] — MCD and RMSE_F0 between reference and synthesized audio

pub mod corpus;
pub mod dataset;
pub mod error;
pub mod g2p;
pub mod locale;
pub mod normalize;
pub mod rng;
pub mod segment;
pub mod unicode;
pub mod vocab;

pub use error::{Error, Result};
