//! EEGPACK v1 dataset containers, synthetic surrogates and batching.

mod batch;
mod container;
mod images;
mod manifest;
mod synthetic;

pub use batch::{batch_plan, Batch, BatchIter};
pub use container::{write_container, Dataset, EegRecord, SplitData};
pub use images::{
    load_png, render_class_image, save_mosaic, save_png, ImageStore, ImageTensor, MosaicCell,
};
pub use manifest::{load_manifest, DatasetManifest, FORMAT_VERSION};
pub use synthetic::{make_synthetic, SyntheticImages, SyntheticSpec};
