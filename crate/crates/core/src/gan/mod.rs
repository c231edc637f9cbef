//! Conditional image synthesis from EEG features.

mod ada;
mod models;
mod train;
mod translate;

pub use ada::{ada_update, augment, AdaState};
pub use models::{tensor_to_images, Discriminator, Generator, NetShape};
pub use train::{
    generator_meta, load_split_images, noise_vectors, one_hot, synthesize_images, train_gan, ConditionMode, Conditioner,
    GanConfig, GanHistory, GanOutcome, GanStep, GanTrainer,
};
pub use translate::{fit_image_to_eeg, fit_translator, translate_image, Translator, TranslatorFit};
