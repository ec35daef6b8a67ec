//! Progressive feature polishing network (PFPN) for salient object detection.
//!
//! The crate holds the whole pipeline: a small tape-based autodiff over NCHW
//! tensors, the network (backbone, transition modules, the chain of feature
//! polishing modules, fusion head and side outputs), the deep-supervision loss,
//! saliency metrics, a synthetic dataset, training and the `pfpn` CLI.

pub mod ablation;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod loss;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod plot;
pub mod tensor;
pub mod train;

pub use error::{PfpnError, Result};
pub use maps::{GroundTruthMask, SaliencyMap};
pub use model::{FeaturePyramid, ModelConfig, Pfpn, SideOutputs};
