//! Pipeline stages over a working directory, each reading the previous
//! stage's artifacts and writing its own atomically.
//!
//! Layout of a workdir:
//!
//! ```text
//! flows.csv  labels.csv  synth.json      synth
//! dataset.jsonl                          extract
//! clusters.csv  cluster_model.json       cluster
//! split.json  models/<emb>/  scatter/<emb>/   train
//! scores/<emb>.csv                       score
//! eval/<emb>/                            eval
//! summary.csv  summary.json              repro
//! manifest.json
//! ```

mod artifact;
mod config;
mod stages;

use std::path::PathBuf;

pub use artifact::{
    read_comment_fields, run_stage, sha256_file, write_atomic, Manifest, StageOutcome, StageRecord,
};
pub use config::{
    ClusterConfig, DataConfig, DetectConfig, EmbedSection, EvalConfig, FeatureConfig, PipelineConfig, StageSeeds,
};
pub use stages::{
    cluster, cmd_cluster, cmd_eval, cmd_extract, cmd_repro, cmd_score, cmd_synth, cmd_train, collect_summary, eval,
    extract, read_scores, score, user_profiles, AreaRow, ClusterArtifact, EvalSummary, ScoreRow, SplitArtifact,
    Summary, SynthRecord, TrainIndex, TrainedCluster,
};

use crate::embed::EmbedderKind;
use crate::numkernel::derive_seed;
use crate::segment::seed_for_k;

pub const FLOWS: &str = "flows.csv";
pub const LABELS: &str = "labels.csv";
pub const SYNTH_META: &str = "synth.json";
pub const DATASET: &str = "dataset.jsonl";
pub const ASSIGNMENTS: &str = "clusters.csv";
pub const CLUSTER_MODEL: &str = "cluster_model.json";
pub const SPLIT: &str = "split.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST: &str = "manifest.json";

pub fn model_path(kind: EmbedderKind, cluster: usize) -> PathBuf {
    PathBuf::from(format!("models/{kind}/cluster-{cluster}.json"))
}

pub fn train_index_path(kind: EmbedderKind) -> PathBuf {
    PathBuf::from(format!("models/{kind}/index.json"))
}

pub fn scatter_path(kind: EmbedderKind, cluster: usize, epoch: usize) -> PathBuf {
    PathBuf::from(format!("scatter/{kind}/cluster-{cluster}-epoch-{epoch}.csv"))
}

pub fn scores_path(kind: EmbedderKind) -> PathBuf {
    PathBuf::from(format!("scores/{kind}.csv"))
}

pub fn eval_dir(kind: EmbedderKind) -> PathBuf {
    PathBuf::from(format!("eval/{kind}"))
}
