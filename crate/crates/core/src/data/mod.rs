//! Synthetic generation, CSV ingestion and preprocessing.

pub mod csv_io;
pub mod preprocess;
pub mod synth;

pub use csv_io::{load_csv, load_csv_with, save_csv, CsvOptions, DatasetManifest};
pub use preprocess::{
    norm_bound, norm_scale, scale_rows, split, standardize, Split, Standardizer,
    DEFAULT_TRAIN_FRACTION, DEFAULT_VALIDATION_FRACTION,
};
pub use synth::{gen_synthetic, gen_synthetic_detailed, SynthConfig, SynthData};
