//! A loaded bundle plus everything derived from it once: alignment and the trained head.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::alignment::{concept_vector, fit_normalizer, normalize_instances, project_segments, Normalizer};
use crate::association::{between_class_disparity, AssociationTable, DisparityMode, DEFAULT_FREX_WEIGHT};
use crate::bundle::{ClassPair, Concept, DatasetBundle, Split};
use crate::debias::RbrMode;
use crate::error::{Error, Result};
use crate::head::{predict_all, train_head, GradientTarget, HeadConfig, HeadModel, Prediction, DEFAULT_UU_THRESHOLD};

pub const DEFAULT_SUBGROUP_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub frex_weight: f64,
    pub head: HeadConfig,
    pub disparity_mode: DisparityMode,
    pub rbr_mode: RbrMode,
    pub gradient_target: GradientTarget,
    pub uu_threshold: f64,
    /// Size of the concept-associated test subgroup used in evaluation.
    pub subgroup_size: usize,
    /// Restrict debias candidates to instances whose top concept is the target.
    pub top_only_candidates: bool,
    /// Fit the normalizer on every instance instead of the train split.
    pub normalize_on_all: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            frex_weight: DEFAULT_FREX_WEIGHT,
            head: HeadConfig::default(),
            disparity_mode: DisparityMode::Sum,
            rbr_mode: RbrMode::Ratio,
            gradient_target: GradientTarget::Probability,
            uu_threshold: DEFAULT_UU_THRESHOLD,
            subgroup_size: DEFAULT_SUBGROUP_SIZE,
            top_only_candidates: false,
            normalize_on_all: false,
        }
    }
}

impl AnalysisConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut c = Self::default();
        c.head.seed = seed;
        c
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub bundle: DatasetBundle,
    pub config: AnalysisConfig,
    pub normalizer: Normalizer,
    pub aligned_instances: Array2<f64>,
    pub aligned_segments: Array2<f64>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub labels: Vec<usize>,
    pub head: HeadModel,
    instance_lookup: HashMap<String, usize>,
    segment_lookup: HashMap<String, usize>,
}

impl Analysis {
    pub fn new(bundle: DatasetBundle, config: AnalysisConfig) -> Result<Self> {
        let train_rows = bundle.split_rows(Split::Train);
        let test_rows = bundle.split_rows(Split::Test);
        let fit_rows: Vec<usize> = if config.normalize_on_all { (0..bundle.instances.len()).collect() } else { train_rows.clone() };
        let normalizer = fit_normalizer(bundle.instance_matrix.select(ndarray::Axis(0), &fit_rows).view())?;
        let aligned_instances = normalize_instances(bundle.instance_matrix.view(), &normalizer)?;
        let aligned_segments = project_segments(bundle.segment_matrix.view(), &normalizer)?;
        let labels = bundle.labels();
        let head = fit_head(&aligned_instances, &train_rows, &labels, bundle.num_classes(), &config.head)?;
        let instance_lookup = bundle.instances.iter().enumerate().map(|(i, x)| (x.id.clone(), i)).collect();
        let segment_lookup = bundle.segments.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        Ok(Self {
            bundle,
            config,
            normalizer,
            aligned_instances,
            aligned_segments,
            train_rows,
            test_rows,
            labels,
            head,
            instance_lookup,
            segment_lookup,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.head.seed
    }

    pub fn num_classes(&self) -> usize {
        self.bundle.num_classes()
    }

    pub fn instance_row(&self, id: &str) -> Result<usize> {
        self.instance_lookup.get(id).copied().ok_or_else(|| Error::NotFound { kind: "instance", id: id.into() })
    }

    pub fn segment_row(&self, id: &str) -> Result<usize> {
        self.segment_lookup.get(id).copied().ok_or_else(|| Error::NotFound { kind: "segment", id: id.into() })
    }

    pub fn instance_ids(&self, rows: &[usize]) -> Vec<String> {
        rows.iter().map(|&r| self.bundle.instances[r].id.clone()).collect()
    }

    pub fn pair(&self, negative: usize, positive: usize) -> Result<ClassPair> {
        ClassPair::new(negative, positive, self.num_classes())
    }

    /// Rows of `split` whose true label belongs to `pair`, in bundle order.
    pub fn pair_rows(&self, split: Split, pair: ClassPair) -> Vec<usize> {
        let rows = match split {
            Split::Train => &self.train_rows,
            Split::Test => &self.test_rows,
        };
        rows.iter().copied().filter(|&r| pair.contains(self.labels[r])).collect()
    }

    /// Concept centroid over the named segments in the aligned space.
    pub fn make_concept(&self, id: impl Into<String>, name: impl Into<String>, segment_ids: &[String]) -> Result<Concept> {
        let rows = segment_ids.iter().map(|s| self.segment_row(s)).collect::<Result<Vec<_>>>()?;
        let vector = concept_vector(&rows, self.aligned_segments.view())?;
        Ok(Concept { id: id.into(), name: name.into(), segment_ids: segment_ids.to_vec(), vector })
    }

    /// Association table of `rows` of `matrix` against `concepts`.
    pub fn association_on(&self, matrix: ArrayView2<f64>, rows: &[usize], concepts: &[Concept]) -> Result<AssociationTable> {
        let sub = matrix.select(ndarray::Axis(0), rows);
        let vectors: Vec<Array1<f64>> = concepts.iter().map(|c| c.vector.clone()).collect();
        let concept_ids: Vec<String> = concepts.iter().map(|c| c.id.clone()).collect();
        AssociationTable::compute(sub.view(), &self.instance_ids(rows), &vectors, &concept_ids, self.config.frex_weight)
    }

    pub fn association(&self, rows: &[usize], concepts: &[Concept]) -> Result<AssociationTable> {
        self.association_on(self.aligned_instances.view(), rows, concepts)
    }

    /// Disparity of concept column `c` of a table built over `rows`.
    pub fn disparity(&self, table: &AssociationTable, c: usize, rows: &[usize], pair: ClassPair) -> Result<f64> {
        let labels: Vec<usize> = rows.iter().map(|&r| self.labels[r]).collect();
        let population: Vec<usize> = (0..rows.len()).collect();
        between_class_disparity(&table.frex_column(c), &labels, pair, &population, self.config.disparity_mode)
    }

    /// Train a head with the session hyperparameters on the train rows of `matrix`.
    pub fn retrain(&self, matrix: &Array2<f64>) -> Result<HeadModel> {
        fit_head(matrix, &self.train_rows, &self.labels, self.num_classes(), &self.config.head)
    }

    pub fn predictions(&self, head: &HeadModel, rows: &[usize]) -> Result<Vec<Prediction>> {
        let x = self.aligned_instances.select(ndarray::Axis(0), rows);
        let labels: Vec<usize> = rows.iter().map(|&r| self.labels[r]).collect();
        predict_all(head, x.view(), Some(&labels))
    }

    pub fn labels_of(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }
}

fn fit_head(matrix: &Array2<f64>, rows: &[usize], labels: &[usize], k: usize, config: &HeadConfig) -> Result<HeadModel> {
    let x = matrix.select(ndarray::Axis(0), rows);
    let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    train_head(x.view(), &y, k, config)
}

pub(crate) fn missing_concept(id: &str) -> Error {
    Error::NotFound { kind: "concept", id: id.into() }
}
