//! Separation of mixed X-ray images of double-sided paintings with coupled
//! dictionaries learned from co-located visual and X-ray patches.

pub mod coupled_dl;
pub mod error;
pub mod image;
pub mod metrics;
pub mod momp;
pub mod numerics;
pub mod patchwork;
pub mod pyramid;
pub mod separator;
pub mod storage;
pub mod synthbench;
pub mod weighted_dl;

pub use coupled_dl::{CodeMatrices, DictionaryTriple, TrainConfig, TrainingSet};
pub use error::{Error, Result};
pub use image::ImagePlane;
pub use momp::{momp, GroupedDictionary, SparseCode, SparsityBudget};
