//! Homophone-robust Chinese-to-English translation.
//!
//! A character-level detector scores each source character given the
//! sentence's syllables and rewrites unlikely ones as syllables. A
//! translator trained on syllable-mixed text then reads the result.
//! [`noise`] builds the training and test variants, [`eval`] measures BLEU
//! across noise ratios, and [`pipeline`] runs the whole experiment on the
//! bundled [`fixture`] language.

pub mod cli;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod noise;
pub mod pinyin;
pub mod pipeline;
pub mod sanmt;
pub mod seed;
pub mod train;
