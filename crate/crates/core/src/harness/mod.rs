//! Synthetic data, dataset manifests and the train/test evaluation protocol.

mod dataset;
mod evaluation;
mod synthetic;

use thiserror::Error;

use crate::bdm::BdmError;
use crate::fusion::FusionError;
use crate::image::{BinaryMask, GrayImage, ImageError};
use crate::regions::RegionError;
use crate::segmentation::{SegmentationError, SimilarityTransform};

pub use dataset::{
    load_dataset, read_feature_csv, read_score_csv, read_truth_csv, save_dataset,
    write_feature_csv, write_score_csv, write_truth_csv, FeatureRow, ManifestRow, TruthRow,
};
pub use evaluation::{
    extract_sample_features, run_evaluation, split_protocol, sweep_table, write_report_csv,
    write_sweep_csv, EvaluationConfig, EvaluationReport, FusionSpec, ReportRow, ScoreSet, Spectrum,
    SweepRow, TransformSource,
};
pub use synthetic::{
    generate_dataset, generate_dataset_with, PoseJitter, SensorJitter, SyntheticConfig,
    LABEL_INDEX, LABEL_LITTLE, LABEL_MIDDLE, LABEL_RING, LABEL_THUMB,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image size {0} is too small to contain the hand")]
    ImageTooSmall(usize),
    #[error("user {user} has {have} samples, protocol needs {need}")]
    InsufficientSamples { user: u32, have: usize, need: usize },
    #[error("need at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("sample {user}/{session}/{sample} has no VIS to TH transform")]
    MissingTransform {
        user: u32,
        session: u32,
        sample: u32,
    },
    #[error("sample {user}/{session}/{sample}: {source}")]
    Sample {
        user: u32,
        session: u32,
        sample: u32,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Bdm(#[from] BdmError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Csv(e.to_string())
    }
}

/// Generator-side truth for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub vis_mask: BinaryMask,
    pub th_mask: BinaryMask,
    /// Finger labels in the VIS frame (0 none, 1 thumb .. 5 little).
    pub labels: Vec<u8>,
    /// Same labels in the TH frame.
    pub th_labels: Vec<u8>,
    /// Which fingers (thumb first) were rendered at background temperature.
    pub cold_fingers: [bool; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub user_id: u32,
    pub session: u32,
    pub sample: u32,
    pub vis: GrayImage,
    pub th: GrayImage,
    /// VIS to TH sensor mapping, when known.
    pub transform: Option<SimilarityTransform>,
    pub truth: Option<GroundTruth>,
}

impl Sample {
    pub(crate) fn tag(&self, e: impl Into<HarnessError>) -> HarnessError {
        HarnessError::Sample {
            user: self.user_id,
            session: self.session,
            sample: self.sample,
            source: Box::new(e.into()),
        }
    }
}

/// Samples ordered by `(user_id, session, sample)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(mut samples: Vec<Sample>) -> Self {
        samples.sort_by_key(|s| (s.user_id, s.session, s.sample));
        Self { samples }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn user_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.user_id).collect();
        ids.dedup();
        ids
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
