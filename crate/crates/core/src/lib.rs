//! Concept-association analytics for diagnosing and mitigating systematic classifier errors.
//!
//! The pipeline: load a [`DatasetBundle`] of instance and segment activations,
//! align both into the standardized instance space, train a [`HeadModel`],
//! define concepts as segment centroids, rank instances by combined (FREX)
//! association, measure between-class disparity, and debias by orthogonal
//! projection.

pub mod alignment;
pub mod analysis;
pub mod association;
pub mod bundle;
pub mod debias;
pub mod diagnosis;
pub mod error;
pub mod head;
pub mod session;
pub mod synthetic;

pub use alignment::Normalizer;
pub use analysis::{Analysis, AnalysisConfig};
pub use association::{AssociationTable, DisparityMode};
pub use bundle::{ClassPair, Concept, ConceptSpec, ConfusionCase, DatasetBundle, Instance, Segment, Split};
pub use debias::{Control, DebiasCurve, DebiasEvaluation, RbrMode};
pub use diagnosis::ConfusionSummary;
pub use error::{Error, Result};
pub use head::{Architecture, GradientTarget, HeadConfig, HeadModel, Prediction};
pub use session::Session;
pub use synthetic::{GroundTruth, PlantConfig, PlantedConcept};
