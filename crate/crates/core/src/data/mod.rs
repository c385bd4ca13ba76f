//! Dataset ingestion, schema handling, preprocessing and splitting.

mod preprocess;
mod schema;
mod synth;
mod table;

pub use preprocess::{
    argmax, median, median_absolute_deviation, ContinuousStats, PreprocessedDataset, Preprocessor,
    Split, SCALE_FLOOR,
};
pub use schema::{Direction, FeatureKind, FeatureSchema, FeatureSpec, Layout, Span};
pub use synth::{blobs, linear_teacher, ordinal, SyntheticSpec};
pub use table::{
    format_row, load_dataset, parse_cell, read_dataset, read_rows, write_rows, Cell, RawRow,
    RawTable,
};
