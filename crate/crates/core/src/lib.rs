//! Targeted adversarial perturbation of audio against a CTC acoustic model,
//! measurement of the speaker-identity drift it causes, and phoneme-level
//! analysis of the induced transcription errors.
//!
//! The crate is organised bottom-up:
//!
//! * [`audio`]: waveforms, WAV I/O, clipping and SNR.
//! * [`features`]: differentiable log-mel front end.
//! * [`ctc`]: CTC loss/gradient, greedy decoding, brute-force oracle.
//! * [`model`]: tiny recurrent acoustic and speaker models with training.
//! * [`attack`]: projected gradient descent toward a target transcript.
//! * [`verify`]: genuine/impostor pairing, d′, TMR at fixed FMR, ROC.
//! * [`phonetics`]: lexicon G2P, alignment, confusion matrices, profiles.
//! * [`harness`]: synthetic corpus, end-to-end pipeline and SVG reports.

pub mod attack;
pub mod audio;
pub mod ctc;
mod error;
pub mod features;
pub mod harness;
pub mod matrix;
pub mod model;
pub mod phonetics;
pub mod verify;

pub use error::{Error, Result};
