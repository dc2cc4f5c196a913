//! Scenario-side algorithms: quality scoring, ego selection, behavior
//! classification, occlusion filtering and synthetic generation.

pub mod classify;
pub mod fixtures;
pub mod generator;
pub mod occlusion;
pub mod quality;

pub use classify::{classify_behavior, classify_behavior_with, ClassifierConfig};
pub use generator::{canonical_corpus, generate_synthetic, intersection_map, GenerateError, GeneratorSpec, LightPlan};
pub use occlusion::{occlusion_filter, occlusion_filter_report, OcclusionConfig, OcclusionMode, RemovalRule};
pub use quality::{assign_ego, quality_score, select_ego, QualityConfig, QualityScore, SelectError};
