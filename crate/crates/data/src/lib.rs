//! Dataset ingestion: label maps and palettes, binary pixmap codecs,
//! directory loading, and a seeded synthetic scene generator for desk-scale
//! experiments.

pub mod dir;
pub mod labels;
pub mod pnm;
pub mod synth;

pub use labels::{colorize, labels_from_colors, LabelMap, Palette, DEFAULT_IGNORE};
