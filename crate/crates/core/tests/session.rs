//! Service-level behavior of [`Session`], independent of any transport.

use blindspot_core::alignment::concept_vector;
use blindspot_core::analysis::AnalysisConfig;
use blindspot_core::bundle::{ConfusionCase, Split};
use blindspot_core::diagnosis::{confusion_summary, project_2d, ProjectionMethod};
use blindspot_core::head::{concept_influence, predict_all};
use blindspot_core::session::WorkspaceRequest;
use blindspot_core::synthetic::{generate, GroundTruth, PlantConfig};
use blindspot_core::{Error, Session};
use ndarray::Axis;

const SEED: u64 = 11;

fn session() -> (Session, GroundTruth) {
    let (bundle, truth) = generate(&PlantConfig::benchmark(SEED)).unwrap();
    (Session::with_seed(bundle, SEED).unwrap(), truth)
}

fn with_planted(s: &Session, truth: &GroundTruth) -> String {
    let specs = truth.concept_specs();
    let first = s.create_concept(&specs[0].name, &specs[0].segment_ids).unwrap();
    for spec in &specs[1..] {
        s.create_concept(&spec.name, &spec.segment_ids).unwrap();
    }
    first.id
}

#[test]
fn overview_passes_confusion_through() {
    let (s, _) = session();
    let o = s.overview().unwrap();
    let snap = s.snapshot();
    let a = &snap.analysis;
    let x = a.aligned_instances.select(Axis(0), &a.test_rows);
    let labels = a.labels_of(&a.test_rows);
    let preds = predict_all(&a.head, x.view(), Some(&labels)).unwrap();
    let expect = confusion_summary(&preds, &labels, 2, 0.75).unwrap();
    assert_eq!(o.confusion, expect);
    assert_eq!(o.seed, SEED);
    let again = s.overview().unwrap();
    assert_eq!(serde_json::to_string(&o).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn pair_view_covers_binary_test_set() {
    let (s, _) = session();
    let v = s.select_pair(0, 1).unwrap();
    let snap = s.snapshot();
    assert_eq!(v.instances.len(), snap.analysis.test_rows.len());
    assert_eq!(v.case_counts.values().sum::<usize>(), v.instances.len());
    let rows: Vec<usize> = v.instances.iter().map(|i| snap.analysis.instance_row(&i.id).unwrap()).collect();
    let coords = project_2d(snap.analysis.aligned_instances.select(Axis(0), &rows).view(), ProjectionMethod::Pca, None).unwrap();
    for (i, inst) in v.instances.iter().enumerate() {
        assert_eq!(inst.x, coords[[i, 0]]);
        assert_eq!(inst.y, coords[[i, 1]]);
    }
    assert!(matches!(s.select_pair(1, 1), Err(Error::InvalidParameter { .. })));
}

#[test]
fn workspace_selection_and_grouping() {
    let (s, _) = session();
    let empty = s
        .segment_workspace(&WorkspaceRequest { instance_ids: Some(vec![]), ..Default::default() })
        .unwrap();
    assert!(empty.segments.is_empty());

    let req = WorkspaceRequest { cases: Some(vec![ConfusionCase::FN, ConfusionCase::FP]), ..Default::default() };
    let ws = s.segment_workspace(&req).unwrap();
    assert!(ws.segments.len() > 10);
    assert!(ws.segments.iter().all(|seg| seg.case.is_error()));
    let again = s.segment_workspace(&req).unwrap();
    assert_eq!(serde_json::to_string(&ws).unwrap(), serde_json::to_string(&again).unwrap());

    let grouped = s
        .segment_workspace(&WorkspaceRequest { group_of: Some(ws.segments[0].id.clone()), ..req })
        .unwrap();
    assert_eq!(grouped.group.len(), 10);
    assert!(!grouped.group.contains(&ws.segments[0].id));
}

#[test]
fn concept_creation_rules() {
    let (s, truth) = session();
    let one = vec![truth.concept_segments(0)[0].clone()];
    let c = s.create_concept("single", &one).unwrap();
    let snap = s.snapshot();
    let row = snap.analysis.segment_row(&one[0]).unwrap();
    assert_eq!(snap.concepts[0].vector, snap.analysis.aligned_segments.row(row));
    assert_eq!(c.member_count, 1);

    let twin = s.create_concept("single", &one).unwrap();
    assert_ne!(twin.id, c.id);

    let segs = truth.concept_segments(2);
    let made = s.create_concept("stripes", &segs).unwrap();
    let snap = s.snapshot();
    let rows: Vec<usize> = segs.iter().map(|id| snap.analysis.segment_row(id).unwrap()).collect();
    let oracle = concept_vector(&rows, snap.analysis.aligned_segments.view()).unwrap();
    assert_eq!(snap.concepts.iter().find(|k| k.id == made.id).unwrap().vector, oracle);

    assert!(matches!(s.create_concept("none", &[]), Err(Error::Empty { .. })));
    let err = s.create_concept("ghost", &["nope".into()]).unwrap_err();
    assert_eq!(err.entity_id(), Some("nope"));
}

#[test]
fn concept_overview_and_detail() {
    let (s, truth) = session();
    assert!(s.concept_overview().unwrap().is_empty());
    let id = with_planted(&s, &truth);
    // Default pair has class A (index 0) on the negative side.
    let rows = s.concept_overview().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].disparity < 0.0, "{}", rows[0].disparity);

    let snap = s.snapshot();
    let a = &snap.analysis;
    let preds = predict_all(&a.head, a.aligned_instances.select(Axis(0), &a.test_rows).view(), None).unwrap();
    let fns: Vec<usize> = a
        .test_rows
        .iter()
        .zip(&preds)
        .filter(|(&r, p)| a.labels[r] == 1 && p.predicted == 0)
        .map(|(&r, _)| r)
        .collect();
    let inf = concept_influence(&a.head, a.aligned_instances.select(Axis(0), &fns).view(), snap.concepts[0].vector.view(), 0, Default::default()).unwrap();
    assert_eq!(rows[0].fn_count, fns.len());
    assert_eq!(rows[0].fn_influence.unwrap(), inf);

    let d = s.concept_detail(&id).unwrap();
    let ranks: Vec<usize> = d.top_train.iter().map(|r| r.comb_rank).collect();
    assert_eq!(ranks, (1..=ranks.len()).collect::<Vec<_>>());
    let bar_diff = d.class_bars[1].frex_sum - d.class_bars[0].frex_sum;
    assert_eq!(bar_diff, d.disparity);
    let carriers = truth.carriers(0);
    let hits = d.top_train.iter().filter(|r| carriers.contains(&r.id)).count();
    assert!(hits * 2 > d.top_train.len(), "{hits}/{}", d.top_train.len());
    assert!(d.top_misclassified_test.iter().all(|r| r.label != r.predicted));
    assert!(matches!(s.concept_detail("c999"), Err(Error::NotFound { .. })));
}

#[test]
fn debias_endpoints() {
    let (s, truth) = session();
    let id = with_planted(&s, &truth);
    s.select_pair(1, 0).unwrap();
    assert_eq!(s.recommend(&id, 0.0).unwrap().n, 0);
    let curve = s.curve(&id, false).unwrap();
    assert_eq!(curve.points[0].rbr, 1.0);
    // Cached curves are shared.
    assert!(std::sync::Arc::ptr_eq(&curve, &s.curve(&id, false).unwrap()));

    let before = s.overview().unwrap();
    let snapshot = s.snapshot();
    let n = s.recommend(&id, 0.5).unwrap().n;
    let oracle = s.evaluate(&id, n).unwrap();
    let applied = s.apply_debias(&id, n).unwrap();
    let after = s.overview().unwrap();
    assert_eq!(applied.accuracy_after, after.accuracy);
    assert_eq!(after.accuracy, oracle.acc_after);
    assert_eq!(applied.disparity_after, oracle.disparity_after);
    assert_eq!(after.debias_applied.len(), 1);
    assert_ne!(before.confusion, after.confusion);
    // The old snapshot is untouched by the mutation.
    assert_eq!(snapshot.overview().unwrap().confusion, before.confusion);

    assert!(s.apply_debias(&id, 1_000_000).is_err());
    assert!(matches!(s.apply_debias("c404", 1), Err(Error::NotFound { .. })));
}

#[test]
fn deletion_rebuilds_caches() {
    let (s, truth) = session();
    let id = with_planted(&s, &truth);
    let before_hash = s.snapshot().concept_set_hash();
    let first = s.concept_overview().unwrap();
    s.delete_concept("c2").unwrap();
    let snap = s.snapshot();
    assert_ne!(snap.concept_set_hash(), before_hash);
    let rows = s.concept_overview().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.id != "c2"));
    // Exclusive scores depend on the whole concept set.
    assert_ne!(rows[0].disparity, first[0].disparity);
    let fresh = snap.analysis.association(&snap.analysis.pair_rows(Split::Train, snap.pair), &snap.concepts).unwrap();
    assert_eq!(*snap.table(Split::Train).unwrap().1, fresh);
    assert!(s.delete_concept("c2").is_err());
    assert!(s.concept_detail(&id).is_ok());
}

#[test]
fn neighbors_stay_in_split() {
    let (s, _) = session();
    let snap = s.snapshot();
    let id = &snap.analysis.bundle.instances[snap.analysis.test_rows[0]].id;
    let n = s.neighbors(id, None).unwrap();
    assert_eq!(n.len(), 5);
    assert!(n.iter().all(|x| &x.id != id));
    assert!(n.iter().all(|x| snap.analysis.bundle.instances[x.index].split == Split::Test));
    assert!(s.neighbors("missing", Some(3)).is_err());
    assert_eq!(s.instances().unwrap().len(), snap.analysis.bundle.instances.len());
}

#[test]
fn seed_controls_training() {
    let (bundle, _) = generate(&PlantConfig::benchmark(2)).unwrap();
    let a = Session::new(bundle.clone(), AnalysisConfig::with_seed(1)).unwrap();
    let b = Session::new(bundle, AnalysisConfig::with_seed(1)).unwrap();
    assert_eq!(a.snapshot().analysis.head, b.snapshot().analysis.head);
}
