//! Information flow between two voices of a symbolic score.
//!
//! The pipeline reads Standard MIDI Files ([`midi`]), quantizes them to a
//! beat grid ([`piece`]), encodes voices as six-field event sequences
//! ([`event`]), fits a smoothed variable-order context model
//! ([`model`]), and turns the model's conditional entropies into a flow
//! estimate ([`flow`]). [`oracle`] provides Markov chains whose flow is
//! known exactly, and [`harness`] runs the corpus experiments.
//!
//! ```
//! use infoflow::{encode, information_flow, ContextModel, FlowParams, Grid, QuantNote, Track};
//!
//! let voice = |pitch: u8, program: u8| -> Track {
//!     (0..40)
//!         .map(|beat| QuantNote { beat, position: 0, pitch, duration: 12, program })
//!         .collect()
//! };
//! let (x, y) = (voice(60, 0), voice(48, 32));
//! let corpus = vec![encode(&[&x, &y], Grid::default())?];
//! let model = ContextModel::train(&corpus, 4, 1.0)?;
//! let report = information_flow(&model, "demo", &x, &y, &FlowParams::default())?;
//! assert_eq!(report.total_flow, report.flow.total());
//! # Ok::<(), infoflow::Error>(())
//! ```

pub mod config;
pub mod error;
pub mod event;
pub mod flow;
pub mod generate;
pub mod harness;
pub mod midi;
pub mod model;
pub mod oracle;
pub mod piece;
pub mod synth;

pub use config::{Config, Grid};
pub use error::{Error, Result};
pub use event::{decode, encode, Event, EventKind, EventSequence, Field, PerField};
pub use flow::{conditional_entropy, information_flow, EntropyMode, FlowParams, FlowReport, Normalization};
pub use generate::generate;
pub use midi::{parse_midi, MidiFile, ParseOptions, RawNote};
pub use model::ContextModel;
pub use piece::{merge_tracks, Piece, QuantNote, Track};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/representation.md")]
    mod representation {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
