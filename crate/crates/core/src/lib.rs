//! Semi-supervised segmentation when labeled images come from one domain and
//! unlabeled images from many.
//!
//! The pipeline builds intermediate-domain training samples by bidirectional
//! copy-paste between labeled and unlabeled images, refines pseudo-labels by
//! stitching the teacher's predictions on both composites, shifts labeled
//! images toward unlabeled styles through low-frequency Fourier amplitude
//! mixing, and steers sample selection with a hardness-gated queue. A small
//! convolutional segmenter with hand-written backpropagation, a synthetic
//! multi-domain benchmark and the usual segmentation metrics complete it.

pub mod augment;
pub mod error;
pub mod grid;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod reliability;
pub mod segnet;
pub mod spectrum;
pub mod style;
pub mod synth;
pub mod trainer;
pub mod ucp;

pub use error::{Error, Result};
pub use grid::{argmax_field, blend, confidence_mask, BinaryMask, Blend, Grid, LabelField, MultiGrid, ProbField};
pub use losses::LossBreakdown;
pub use mask::RectSpec;
pub use metrics::{ClassScores, EvalReport, MetricSummary};
pub use reliability::{ReliableEntry, ReliableQueue};
pub use segnet::{LayerSpec, SegmenterParams};
pub use spectrum::Spectrum;
pub use synth::{Dataset, DatasetSpec, DomainStyle, Sample};
pub use trainer::{Flags, Preset, TrainConfig, TrainOutcome};
pub use ucp::IntermediatePair;
