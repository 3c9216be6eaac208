//! Data handling, training and inference.

pub mod clips;
pub mod dataset;
pub mod detections;
pub mod features;
pub mod infer;
pub mod nms;
pub mod optim;
pub mod run;
pub mod synth;
pub mod train;

pub use clips::{split_clips, ClipSample, Mode};
pub use dataset::{load_videos, AnnotationDoc, VideoRecord};
pub use detections::{load_detections, save_detections, Detection};
pub use features::{FeatureSequence, Stream};
pub use infer::{decode, detect_video, fuse_streams, predict_clip, ClipPrediction};
pub use nms::{rescore, soft_nms, NmsParams};
pub use run::{infer_videos, predict_video, train_model};
pub use synth::{synth_dataset, SynthDataset};
pub use train::{StepRecord, TrainOutcome, Trainer};
