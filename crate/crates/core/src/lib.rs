//! Slide-level classification of whole-slide images from patch features.
//!
//! A slide is a set of patches, each with a position and two feature
//! vectors (1024 and 768 wide). Patches become nodes of a K-nearest-neighbour
//! graph; a two-branch graph encoder with tied weights scores the slide and
//! attributes the score back to individual patches.
//!
//! ```no_run
//! use vern::data::load_manifest;
//! use vern::train::{run_cv, TrainConfig};
//!
//! let ds = load_manifest("cohort/manifest.csv".as_ref()).unwrap();
//! let cv = run_cv(&ds, &TrainConfig::default()).unwrap();
//! for (name, m) in &cv.summary.metrics {
//!     println!("{name}: {:.4} ± {:.4}", m.mean, m.std);
//! }
//! ```

pub mod data;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod train;

pub use data::{Dataset, Label, PatchRecord, SectionKind, SlideEntry};
pub use graph::{build_wsi_graph, WsiGraph};
pub use model::{vern_forward, VernConfig, VernOutput, VernParams};
pub use numerics::{Mode, Tape, Tensor};
pub use train::TrainConfig;
