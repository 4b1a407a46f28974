//! Scene-graph construction by variation-structured reinforcement learning:
//! a directed semantic action graph over categories, attributes and
//! predicates; per-step adaptive action sets; a three-headed Q-network with
//! replay and a target network; and Recall@K evaluation with zero-shot
//! splitting.

pub mod action_graph;
pub mod agent;
pub mod config;
pub mod environment;
pub mod error;
pub mod eval;
pub mod features;
pub mod qlearn;
pub mod rng;
pub mod scene_io;
pub mod synth;
pub mod traversal;

pub use action_graph::{build_graph, AttributeId, CategoryId, PhraseCounts, PredicateId, SemanticGraph};
pub use agent::{train, Agent, EpochMetrics, Mode, PolicyVariant, TrainOutput};
pub use config::{OptimizerKind, TrainConfig};
pub use environment::{iou, BoundingBox, GroundTruth, InstanceId, ObjectInstance, Scene};
pub use error::{Result, VrlError};
pub use eval::{
    evaluate_scenes, rank_predictions, recall_at_k, zero_shot_split, EvalReport, Prediction,
    RecallTask, ZeroShotSplit,
};
pub use features::{FeatureConfig, FeatureProvider, FileProvider, SyntheticProvider};
pub use qlearn::{QConfig, QModel, ReplayMemory, Transition};
pub use synth::{generate_scene_set, generate_synthetic_scene, SynthParams};
