//! Triplet metric learning with semi-hard mining, supervised training and
//! the shared training loop.

mod mining;
mod train;

pub use mining::{
    mine, mine_all_valid, mine_semihard, squared_distances, triplet_loss, Mining, TripletConfig, TripletIndexSet,
};
pub use train::{
    classification_accuracy, train_supervised, train_triplet, EpochRecord, History, TrainConfig,
};
