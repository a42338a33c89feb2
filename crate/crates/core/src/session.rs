//! Transport-agnostic session: the state behind the HTTP service and the Python bindings.
//!
//! Readers clone an `Arc` snapshot and never block on writers. Mutations are
//! serialized by a writer lock, build a fresh snapshot and swap it in, so a
//! read that started before a mutation keeps seeing the old state.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex, RwLock};

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::analysis::{missing_concept, Analysis, AnalysisConfig};
use crate::association::AssociationTable;
use crate::bundle::{ClassPair, Concept, ConfusionCase, DatasetBundle, Split};
use crate::debias::{self, Control, DebiasCurve, DebiasEvaluation};
use crate::diagnosis::{
    confusion_summary, knn, pair_subset, project_2d, ConfusionSummary, KnnQuery, Neighbor, ProjectionMethod,
    DEFAULT_SEGMENT_K, DEFAULT_TOOLTIP_K,
};
use crate::error::{Error, Result};
use crate::head::{accuracy, concept_influence, Influence, Prediction};

const DETAIL_LIST_LEN: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassPerformance {
    pub class: usize,
    pub name: String,
    pub total: usize,
    pub correct: usize,
    pub misclassified: usize,
    pub unknown_unknowns: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Overview {
    pub seed: u64,
    pub classes: Vec<String>,
    pub pair: ClassPair,
    /// Test-split accuracy of the current head.
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub uu_threshold: f64,
    pub performance: Vec<ClassPerformance>,
    pub confusion: ConfusionSummary,
    pub debias_applied: Vec<AppliedDebias>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairInstance {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub case: ConfusionCase,
    pub brier: f64,
    pub probs: Vec<f64>,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairView {
    pub seed: u64,
    pub pair: ClassPair,
    pub projection: ProjectionMethod,
    pub case_counts: HashMap<ConfusionCase, usize>,
    pub instances: Vec<PairInstance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRow {
    pub id: String,
    pub split: Split,
    pub label: usize,
    pub predicted: usize,
    pub brier: f64,
    pub unknown_unknown: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WorkspaceRequest {
    /// Explicit instance selection; when absent, the test instances of the pair.
    #[serde(default)]
    pub instance_ids: Option<Vec<String>>,
    /// Keep only instances in these confusion cases.
    #[serde(default)]
    pub cases: Option<Vec<ConfusionCase>>,
    /// Segment whose nearest workspace neighbors are returned as `group`.
    #[serde(default)]
    pub group_of: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkspaceSegment {
    pub id: String,
    pub instance_id: String,
    pub case: ConfusionCase,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Workspace {
    pub segments: Vec<WorkspaceSegment>,
    pub group: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptInfo {
    pub id: String,
    pub name: String,
    pub member_count: usize,
    pub vector_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptSummary {
    pub id: String,
    pub name: String,
    pub member_count: usize,
    /// Train-split disparity for the selected pair; positive favors `pair.positive`.
    pub disparity: f64,
    /// Influence toward the predicted class on false negatives of the test split.
    pub fn_influence: Option<Influence>,
    pub fp_influence: Option<Influence>,
    pub fn_count: usize,
    pub fp_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassBar {
    pub class: usize,
    pub name: String,
    pub count: usize,
    pub frex_sum: f64,
    pub frex_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedInstance {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub comb_rank: usize,
    pub frex: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptDetail {
    pub id: String,
    pub name: String,
    pub pair: ClassPair,
    pub disparity: f64,
    pub class_bars: Vec<ClassBar>,
    pub top_train: Vec<RankedInstance>,
    pub top_misclassified_test: Vec<RankedInstance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recommendation {
    pub concept_id: String,
    pub t: f64,
    pub n: usize,
    pub rbr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppliedDebias {
    pub concept_id: String,
    pub n: usize,
    pub disparity_before: f64,
    pub disparity_after: f64,
    pub rbr: f64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub seed: u64,
}

type TableKey = (u64, Split, ClassPair);

/// One immutable snapshot of session state plus its memo caches.
#[derive(Debug)]
pub struct SessionState {
    pub analysis: Arc<Analysis>,
    pub pair: ClassPair,
    pub concepts: Vec<Concept>,
    pub applied: Vec<AppliedDebias>,
    next_concept: u64,
    test_predictions: Vec<Prediction>,
    tables: Mutex<HashMap<TableKey, Arc<AssociationTable>>>,
    curves: Mutex<HashMap<(String, bool), Arc<DebiasCurve>>>,
    runs: Mutex<HashMap<(String, usize), Arc<DebiasEvaluation>>>,
}

impl SessionState {
    fn new(analysis: Arc<Analysis>, pair: ClassPair, concepts: Vec<Concept>, applied: Vec<AppliedDebias>, next_concept: u64) -> Result<Self> {
        let test_predictions = analysis.predictions(&analysis.head, &analysis.test_rows)?;
        Ok(Self {
            analysis,
            pair,
            concepts,
            applied,
            next_concept,
            test_predictions,
            tables: Mutex::default(),
            curves: Mutex::default(),
            runs: Mutex::default(),
        })
    }

    fn derive(&self) -> Result<Self> {
        Self::new(self.analysis.clone(), self.pair, self.concepts.clone(), self.applied.clone(), self.next_concept)
    }

    /// Hash of the concept ids and vector bits; the association cache key.
    pub fn concept_set_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.concepts {
            c.id.hash(&mut h);
            for v in c.vector.iter() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    fn concept(&self, id: &str) -> Result<(usize, &Concept)> {
        self.concepts.iter().enumerate().find(|(_, c)| c.id == id).ok_or_else(|| missing_concept(id))
    }

    /// Association table over `split` rows of the selected pair, cached per concept set.
    pub fn table(&self, split: Split) -> Result<(Vec<usize>, Arc<AssociationTable>)> {
        let rows = self.analysis.pair_rows(split, self.pair);
        let key = (self.concept_set_hash(), split, self.pair);
        if let Some(t) = self.tables.lock().expect("cache lock").get(&key) {
            return Ok((rows, t.clone()));
        }
        let t = Arc::new(self.analysis.association(&rows, &self.concepts)?);
        self.tables.lock().expect("cache lock").insert(key, t.clone());
        Ok((rows, t))
    }

    fn test_labels(&self) -> Vec<usize> {
        self.analysis.labels_of(&self.analysis.test_rows)
    }

    pub fn overview(&self) -> Result<Overview> {
        let a = &self.analysis;
        let labels = self.test_labels();
        let confusion = confusion_summary(&self.test_predictions, &labels, a.num_classes(), a.config.uu_threshold)?;
        let train_preds = a.predictions(&a.head, &a.train_rows)?;
        let performance = (0..a.num_classes())
            .map(|k| {
                let total: usize = confusion.matrix[k].iter().sum();
                ClassPerformance {
                    class: k,
                    name: a.bundle.classes[k].clone(),
                    total,
                    correct: confusion.matrix[k][k],
                    misclassified: confusion.misclassified[k],
                    unknown_unknowns: confusion.unknown_unknowns[k],
                }
            })
            .collect();
        Ok(Overview {
            seed: a.seed(),
            classes: a.bundle.classes.clone(),
            pair: self.pair,
            accuracy: confusion.accuracy(),
            train_accuracy: accuracy(&train_preds, &a.labels_of(&a.train_rows)),
            uu_threshold: a.config.uu_threshold,
            performance,
            confusion,
            debias_applied: self.applied.clone(),
        })
    }

    pub fn pair_view(&self) -> Result<PairView> {
        let a = &self.analysis;
        let members = pair_subset(&self.test_predictions, &self.test_labels(), self.pair)?;
        let rows: Vec<usize> = members.iter().map(|m| a.test_rows[m.index]).collect();
        let coords2d: Vec<Option<[f64; 2]>> = rows.iter().map(|&r| a.bundle.instances[r].coords2d).collect();
        let precomputed = !coords2d.is_empty() && coords2d.iter().all(Option::is_some);
        let projection = if precomputed { ProjectionMethod::Precomputed } else { ProjectionMethod::Pca };
        let coords = if rows.len() < 2 && !precomputed {
            ndarray::Array2::zeros((rows.len(), 2))
        } else {
            project_2d(a.aligned_instances.select(Axis(0), &rows).view(), projection, Some(&coords2d))?
        };
        let mut case_counts: HashMap<ConfusionCase, usize> = ConfusionCase::ALL.iter().map(|&c| (c, 0)).collect();
        let instances = members
            .iter()
            .zip(&rows)
            .enumerate()
            .map(|(i, (m, &r))| {
                *case_counts.get_mut(&m.case).expect("all cases present") += 1;
                let inst = &a.bundle.instances[r];
                PairInstance {
                    id: inst.id.clone(),
                    label: m.label,
                    predicted: m.predicted,
                    case: m.case,
                    brier: m.brier,
                    probs: self.test_predictions[m.index].probs.to_vec(),
                    x: coords[[i, 0]],
                    y: coords[[i, 1]],
                    image: inst.image_path.clone(),
                }
            })
            .collect();
        Ok(PairView { seed: a.seed(), pair: self.pair, projection, case_counts, instances })
    }

    pub fn instances(&self) -> Result<Vec<InstanceRow>> {
        let a = &self.analysis;
        let all: Vec<usize> = (0..a.bundle.instances.len()).collect();
        let preds = a.predictions(&a.head, &all)?;
        Ok(all
            .iter()
            .zip(preds)
            .map(|(&r, p)| {
                let inst = &a.bundle.instances[r];
                let brier = p.brier.unwrap_or_default();
                let wrong = p.predicted != inst.label;
                InstanceRow {
                    id: inst.id.clone(),
                    split: inst.split,
                    label: inst.label,
                    predicted: p.predicted,
                    brier,
                    unknown_unknown: wrong && brier >= a.config.uu_threshold,
                }
            })
            .collect())
    }

    /// Nearest instances of the same split in the aligned space.
    pub fn neighbors(&self, id: &str, k: Option<usize>) -> Result<Vec<Neighbor>> {
        let a = &self.analysis;
        let row = a.instance_row(id)?;
        let rows = match a.bundle.instances[row].split {
            Split::Train => &a.train_rows,
            Split::Test => &a.test_rows,
        };
        let pos = rows.iter().position(|&r| r == row).expect("row belongs to its split");
        let m = a.aligned_instances.select(Axis(0), rows);
        let mut out = knn(KnnQuery::Member(pos), m.view(), &a.instance_ids(rows), k.unwrap_or(DEFAULT_TOOLTIP_K))?;
        for n in &mut out {
            n.index = rows[n.index];
        }
        Ok(out)
    }

    pub fn segment_workspace(&self, req: &WorkspaceRequest) -> Result<Workspace> {
        let a = &self.analysis;
        let members = pair_subset(&self.test_predictions, &self.test_labels(), self.pair)?;
        let case_of: HashMap<&str, ConfusionCase> =
            members.iter().map(|m| (a.bundle.instances[a.test_rows[m.index]].id.as_str(), m.case)).collect();
        let selected: Vec<(&str, ConfusionCase)> = match &req.instance_ids {
            Some(ids) => ids
                .iter()
                .map(|id| {
                    a.instance_row(id)?;
                    case_of
                        .get(id.as_str())
                        .map(|&c| (id.as_str(), c))
                        .ok_or_else(|| Error::entity(id, "not a test instance of the selected pair"))
                })
                .collect::<Result<_>>()?,
            None => members
                .iter()
                .map(|m| (a.bundle.instances[a.test_rows[m.index]].id.as_str(), m.case))
                .collect(),
        };
        let selected: HashMap<&str, ConfusionCase> = selected
            .into_iter()
            .filter(|(_, c)| req.cases.as_ref().is_none_or(|cs| cs.contains(c)))
            .collect();
        let seg_rows: Vec<usize> = a
            .bundle
            .segments
            .iter()
            .enumerate()
            .filter(|(_, s)| selected.contains_key(s.instance_id.as_str()))
            .map(|(i, _)| i)
            .collect();
        let matrix = a.aligned_segments.select(Axis(0), &seg_rows);
        let coords = if seg_rows.len() >= 2 {
            project_2d(matrix.view(), ProjectionMethod::Pca, None)?
        } else {
            ndarray::Array2::zeros((seg_rows.len(), 2))
        };
        let ids: Vec<String> = seg_rows.iter().map(|&r| a.bundle.segments[r].id.clone()).collect();
        let group = match &req.group_of {
            Some(sid) => {
                let pos = ids
                    .iter()
                    .position(|s| s == sid)
                    .ok_or_else(|| Error::entity(sid, "segment not in the workspace"))?;
                knn(KnnQuery::Member(pos), matrix.view(), &ids, req.k.unwrap_or(DEFAULT_SEGMENT_K))?
                    .into_iter()
                    .map(|n| n.id)
                    .collect()
            }
            None => Vec::new(),
        };
        let segments = seg_rows
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let s = &a.bundle.segments[r];
                WorkspaceSegment {
                    id: s.id.clone(),
                    instance_id: s.instance_id.clone(),
                    case: selected[s.instance_id.as_str()],
                    x: coords[[i, 0]],
                    y: coords[[i, 1]],
                    image: s.image_path.clone(),
                }
            })
            .collect();
        Ok(Workspace { segments, group })
    }

    fn misclassified_test(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let a = &self.analysis;
        let members = pair_subset(&self.test_predictions, &self.test_labels(), self.pair)?;
        let pick = |case| members.iter().filter(|m| m.case == case).map(|m| a.test_rows[m.index]).collect::<Vec<_>>();
        Ok((pick(ConfusionCase::FN), pick(ConfusionCase::FP)))
    }

    fn influence(&self, rows: &[usize], concept: &Concept, class: usize) -> Result<Option<Influence>> {
        if rows.is_empty() {
            return Ok(None);
        }
        let a = &self.analysis;
        let x = a.aligned_instances.select(Axis(0), rows);
        concept_influence(&a.head, x.view(), concept.vector.view(), class, a.config.gradient_target).map(Some)
    }

    pub fn concept_overview(&self) -> Result<Vec<ConceptSummary>> {
        if self.concepts.is_empty() {
            return Ok(Vec::new());
        }
        let (rows, table) = self.table(Split::Train)?;
        let (fns, fps) = self.misclassified_test()?;
        self.concepts
            .iter()
            .enumerate()
            .map(|(c, concept)| {
                Ok(ConceptSummary {
                    id: concept.id.clone(),
                    name: concept.name.clone(),
                    member_count: concept.segment_ids.len(),
                    disparity: self.analysis.disparity(&table, c, &rows, self.pair)?,
                    fn_influence: self.influence(&fns, concept, self.pair.negative)?,
                    fp_influence: self.influence(&fps, concept, self.pair.positive)?,
                    fn_count: fns.len(),
                    fp_count: fps.len(),
                })
            })
            .collect()
    }

    pub fn concept_detail(&self, id: &str) -> Result<ConceptDetail> {
        let a = &self.analysis;
        let (c, concept) = self.concept(id)?;
        let (rows, table) = self.table(Split::Train)?;
        let disparity = a.disparity(&table, c, &rows, self.pair)?;
        let class_bars = [self.pair.negative, self.pair.positive]
            .iter()
            .map(|&k| {
                let (count, sum) = rows
                    .iter()
                    .enumerate()
                    .filter(|(_, &r)| a.labels[r] == k)
                    .fold((0usize, 0.0), |(n, s), (i, _)| (n + 1, s + table.frex[[i, c]]));
                ClassBar {
                    class: k,
                    name: a.bundle.classes[k].clone(),
                    count,
                    frex_sum: sum,
                    frex_mean: if count > 0 { sum / count as f64 } else { 0.0 },
                }
            })
            .collect();
        let train_preds = a.predictions(&a.head, &rows)?;
        let ranked = |table: &AssociationTable, rows: &[usize], preds: &[Prediction], i: usize| RankedInstance {
            id: table.instance_ids[i].clone(),
            label: a.labels[rows[i]],
            predicted: preds[i].predicted,
            comb_rank: table.comb_rank[[i, c]],
            frex: table.frex[[i, c]],
            raw: table.raw[[i, c]],
        };
        let top_train = table
            .comb_order(c)
            .into_iter()
            .take(DETAIL_LIST_LEN)
            .map(|i| ranked(&table, &rows, &train_preds, i))
            .collect();
        let (test_rows, test_table) = self.table(Split::Test)?;
        let test_preds = a.predictions(&a.head, &test_rows)?;
        let top_misclassified_test = test_table
            .comb_order(c)
            .into_iter()
            .filter(|&i| test_preds[i].predicted != a.labels[test_rows[i]])
            .take(DETAIL_LIST_LEN)
            .map(|i| ranked(&test_table, &test_rows, &test_preds, i))
            .collect();
        Ok(ConceptDetail {
            id: concept.id.clone(),
            name: concept.name.clone(),
            pair: self.pair,
            disparity,
            class_bars,
            top_train,
            top_misclassified_test,
        })
    }

    pub fn curve(&self, id: &str, evaluate: bool) -> Result<Arc<DebiasCurve>> {
        self.concept(id)?;
        let key = (id.to_string(), evaluate);
        if let Some(c) = self.curves.lock().expect("cache lock").get(&key) {
            return Ok(c.clone());
        }
        let curve = Arc::new(debias::debias_curve(&self.analysis, &self.concepts, id, self.pair, None, evaluate)?);
        self.curves.lock().expect("cache lock").insert(key, curve.clone());
        Ok(curve)
    }

    pub fn recommend(&self, id: &str, t: f64) -> Result<Recommendation> {
        let curve = self.curve(id, false)?;
        let n = debias::recommend_n(&curve, t)?;
        let rbr = curve.point(n).map(|p| p.rbr).unwrap_or(1.0);
        Ok(Recommendation { concept_id: id.into(), t, n, rbr })
    }

    /// Before/after evaluation for the top-n candidates, cached per (concept, n).
    pub fn evaluate(&self, id: &str, n: usize) -> Result<Arc<DebiasEvaluation>> {
        self.concept(id)?;
        let key = (id.to_string(), n);
        if let Some(r) = self.runs.lock().expect("cache lock").get(&key) {
            return Ok(r.clone());
        }
        let run = Arc::new(debias::evaluate_debias(&self.analysis, &self.concepts, id, self.pair, n, Control::Concept)?);
        self.runs.lock().expect("cache lock").insert(key, run.clone());
        Ok(run)
    }

    pub fn evaluate_control(&self, id: &str, n: usize) -> Result<DebiasEvaluation> {
        self.concept(id)?;
        let seed = self.analysis.seed();
        debias::evaluate_debias(&self.analysis, &self.concepts, id, self.pair, n, Control::Random { seed })
    }
}

/// A single-bundle analysis session.
#[derive(Debug)]
pub struct Session {
    state: RwLock<Arc<SessionState>>,
    writer: Mutex<()>,
}

impl Session {
    pub fn new(bundle: DatasetBundle, config: AnalysisConfig) -> Result<Self> {
        let analysis = Arc::new(Analysis::new(bundle, config)?);
        let pair = analysis.pair(0, 1)?;
        let state = SessionState::new(analysis, pair, Vec::new(), Vec::new(), 1)?;
        Ok(Self { state: RwLock::new(Arc::new(state)), writer: Mutex::new(()) })
    }

    pub fn with_seed(bundle: DatasetBundle, seed: u64) -> Result<Self> {
        Self::new(bundle, AnalysisConfig::with_seed(seed))
    }

    /// Current snapshot; unaffected by later mutations.
    pub fn snapshot(&self) -> Arc<SessionState> {
        self.state.read().expect("state lock").clone()
    }

    pub fn seed(&self) -> u64 {
        self.snapshot().analysis.seed()
    }

    fn mutate<T>(&self, f: impl FnOnce(&SessionState) -> Result<(SessionState, T)>) -> Result<T> {
        let _guard = self.writer.lock().expect("writer lock");
        let current = self.snapshot();
        let (next, out) = f(&current)?;
        *self.state.write().expect("state lock") = Arc::new(next);
        Ok(out)
    }

    pub fn overview(&self) -> Result<Overview> {
        self.snapshot().overview()
    }

    pub fn select_pair(&self, negative: usize, positive: usize) -> Result<PairView> {
        self.mutate(|s| {
            let mut next = s.derive()?;
            next.pair = s.analysis.pair(negative, positive)?;
            let view = next.pair_view()?;
            Ok((next, view))
        })
    }

    pub fn pair_view(&self) -> Result<PairView> {
        self.snapshot().pair_view()
    }

    pub fn instances(&self) -> Result<Vec<InstanceRow>> {
        self.snapshot().instances()
    }

    pub fn neighbors(&self, id: &str, k: Option<usize>) -> Result<Vec<Neighbor>> {
        self.snapshot().neighbors(id, k)
    }

    pub fn segment_workspace(&self, req: &WorkspaceRequest) -> Result<Workspace> {
        self.snapshot().segment_workspace(req)
    }

    pub fn create_concept(&self, name: &str, segment_ids: &[String]) -> Result<ConceptInfo> {
        self.mutate(|s| {
            let id = format!("c{}", s.next_concept);
            let concept = s.analysis.make_concept(&id, name, segment_ids)?;
            let info = ConceptInfo {
                id: concept.id.clone(),
                name: concept.name.clone(),
                member_count: concept.segment_ids.len(),
                vector_norm: concept.vector.dot(&concept.vector).sqrt(),
            };
            let mut next = s.derive()?;
            next.concepts.push(concept);
            next.next_concept += 1;
            Ok((next, info))
        })
    }

    pub fn delete_concept(&self, id: &str) -> Result<()> {
        self.mutate(|s| {
            let (idx, _) = s.concept(id)?;
            let mut next = s.derive()?;
            next.concepts.remove(idx);
            Ok((next, ()))
        })
    }

    pub fn concepts(&self) -> Vec<Concept> {
        self.snapshot().concepts.clone()
    }

    pub fn concept_overview(&self) -> Result<Vec<ConceptSummary>> {
        self.snapshot().concept_overview()
    }

    pub fn concept_detail(&self, id: &str) -> Result<ConceptDetail> {
        self.snapshot().concept_detail(id)
    }

    pub fn curve(&self, id: &str, evaluate: bool) -> Result<Arc<DebiasCurve>> {
        self.snapshot().curve(id, evaluate)
    }

    pub fn recommend(&self, id: &str, t: f64) -> Result<Recommendation> {
        self.snapshot().recommend(id, t)
    }

    pub fn evaluate(&self, id: &str, n: usize) -> Result<Arc<DebiasEvaluation>> {
        self.snapshot().evaluate(id, n)
    }

    /// Same as [`Session::evaluate`] with a seeded random candidate set.
    pub fn evaluate_control(&self, id: &str, n: usize) -> Result<DebiasEvaluation> {
        self.snapshot().evaluate_control(id, n)
    }

    /// Debias the top-n candidates in the session activations and retrain the head.
    pub fn apply_debias(&self, id: &str, n: usize) -> Result<AppliedDebias> {
        self.mutate(|s| {
            s.concept(id)?;
            let a = &s.analysis;
            let (matrix, _) = debias::debiased_matrix(a, &s.concepts, id, s.pair, n)?;
            let mut next_analysis = (**a).clone();
            next_analysis.head = a.retrain(&matrix)?;
            next_analysis.aligned_instances = matrix;
            let next_analysis = Arc::new(next_analysis);

            let before = s.overview()?.accuracy;
            let (rows, table) = s.table(Split::Train)?;
            let c = s.concept(id)?.0;
            let disparity_before = a.disparity(&table, c, &rows, s.pair)?;
            let after_table = next_analysis.association(&rows, &s.concepts)?;
            let disparity_after = next_analysis.disparity(&after_table, c, &rows, s.pair)?;
            let rbr = debias::remaining_bias_ratio(disparity_before, disparity_after, a.config.rbr_mode)?;

            let mut next =
                SessionState::new(next_analysis, s.pair, s.concepts.clone(), s.applied.clone(), s.next_concept)?;
            let summary = AppliedDebias {
                concept_id: id.into(),
                n,
                disparity_before,
                disparity_after,
                rbr,
                accuracy_before: before,
                accuracy_after: next.overview()?.accuracy,
                seed: a.seed(),
            };
            next.applied.push(summary.clone());
            Ok((next, summary))
        })
    }
}
