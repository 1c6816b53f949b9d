//! Synthetic plate generation: alphabet and glyphs, plate grammar, rendering,
//! augmentation and the on-disk dataset format.

pub mod alphabet;
pub mod augment;
pub mod dataset;
pub mod grammar;
pub mod render;

pub use alphabet::{Alphabet, Token, TokenKind};
pub use augment::{augment, AugmentSpec};
pub use dataset::{generate_dataset, load_dataset, synth_sample, synth_samples, write_dataset, Dataset, Domain, Manifest, PlateSample, SynthConfig};
pub use grammar::{sample_plate_string, validate_plate, Grammar, Violation};
pub use render::{render_plate, Style};
