//! Images, resampling, preprocessing, patches and augmentation.

pub mod augment;
pub mod bicubic;
pub mod image;
pub mod manifest;
pub mod patches;
pub mod preprocess;

pub use self::augment::Dihedral;
pub use self::bicubic::{bicubic_resize, resize_image};
pub use self::image::{load_image, save_image, Image};
pub use self::manifest::{Manifest, Split};
pub use self::patches::{PyramidImage, SamplePair};
pub use self::preprocess::{PreprocessMode, Preprocessor};
