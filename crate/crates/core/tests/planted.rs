//! Oracle tests on generated bundles with known planted associations.

use blindspot_core::analysis::{Analysis, AnalysisConfig};
use blindspot_core::association::between_class_disparity;
use blindspot_core::bundle::{validate_bundle, ClassPair, Concept, Split};
use blindspot_core::debias::{debias_curve, evaluate_debias, select_candidates, Control};
use blindspot_core::diagnosis::{confusion_summary, pca_2d};
use blindspot_core::head::{concept_influence, GradientTarget};
use blindspot_core::synthetic::{generate, GroundTruth, PlantConfig, PlantedConcept};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
}

fn setup(config: &PlantConfig, analysis: AnalysisConfig) -> (Analysis, Vec<Concept>, GroundTruth) {
    let (bundle, truth) = generate(config).unwrap();
    let a = Analysis::new(bundle, analysis).unwrap();
    let concepts = truth
        .concept_specs()
        .iter()
        .enumerate()
        .map(|(i, s)| a.make_concept(format!("c{i}"), &s.name, &s.segment_ids).unwrap())
        .collect();
    (a, concepts, truth)
}

/// Class A (index 0) is the contaminated class, so it is the positive side.
const PAIR: ClassPair = ClassPair { negative: 1, positive: 0 };

#[test]
fn generator_output_always_validates() {
    for seed in 0..20 {
        let (b, _) = generate(&PlantConfig::benchmark(seed)).unwrap();
        assert!(validate_bundle(&b).is_empty(), "seed {seed}");
    }
}

#[test]
fn alignment_separates_raw_parallel_concepts() {
    let (bundle, truth) = generate(&PlantConfig::benchmark(7)).unwrap();
    // "stripes" and "ring" have independent directions.
    let rows = |c: usize| -> Vec<usize> {
        truth.concept_segments(c).iter().map(|s| bundle.segment_position(s).unwrap()).collect()
    };
    let centroid = |m: &Array2<f64>, r: &[usize]| m.select(Axis(0), r).mean_axis(Axis(0)).unwrap();
    let (r2, r3) = (rows(2), rows(3));
    let raw = cosine(&centroid(&bundle.segment_matrix, &r2), &centroid(&bundle.segment_matrix, &r3));
    let a = Analysis::new(bundle, AnalysisConfig::default()).unwrap();
    let aligned = cosine(&centroid(&a.aligned_segments, &r2), &centroid(&a.aligned_segments, &r3));
    assert!(raw > 0.9, "raw cosine {raw}");
    assert!(aligned < 0.5, "aligned cosine {aligned}");
}

#[test]
fn uncontaminated_concept_has_no_significant_disparity() {
    let mut zs = Vec::new();
    for seed in 0..10 {
        let cfg = PlantConfig {
            seed,
            concepts: vec![
                PlantedConcept::uniform("even", vec![0.15, 0.15], 4.0),
                PlantedConcept::uniform("other", vec![0.1, 0.1], 4.0),
            ],
            ..PlantConfig::default()
        };
        let (a, concepts, _) = setup(&cfg, AnalysisConfig::default());
        let rows = a.pair_rows(Split::Train, PAIR);
        let table = a.association(&rows, &concepts).unwrap();
        let frex = table.frex_column(0);
        let mut labels = a.labels_of(&rows);
        let population: Vec<usize> = (0..rows.len()).collect();
        let observed = between_class_disparity(&frex, &labels, PAIR, &population, Default::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let null: Vec<f64> = (0..200)
            .map(|_| {
                rand::seq::SliceRandom::shuffle(&mut labels[..], &mut rng);
                between_class_disparity(&frex, &labels, PAIR, &population, Default::default()).unwrap()
            })
            .collect();
        let mean = null.iter().sum::<f64>() / null.len() as f64;
        let sd = (null.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / null.len() as f64).sqrt();
        zs.push((observed - mean) / sd);
    }
    for (seed, z) in zs.iter().enumerate() {
        assert!(z.abs() < 2.0, "seed {seed}: z = {z}");
    }
}

#[test]
fn planted_disparity_points_to_contaminated_class() {
    let mut positive = 0;
    for seed in 0..10 {
        let (a, concepts, _) = setup(&PlantConfig::benchmark(seed), AnalysisConfig::with_seed(seed));
        let rows = a.pair_rows(Split::Train, PAIR);
        let table = a.association(&rows, &concepts).unwrap();
        if a.disparity(&table, 0, &rows, PAIR).unwrap() > 0.0 {
            positive += 1;
        }
    }
    assert!(positive >= 9, "{positive}/10");
}

#[test]
fn top_candidates_are_enriched() {
    let mut top_rate = 0.0;
    let mut base_rate = 0.0;
    for seed in 0..10 {
        let (a, concepts, truth) = setup(&PlantConfig::benchmark(seed), AnalysisConfig::with_seed(seed));
        let rows = a.pair_rows(Split::Train, PAIR);
        let table = a.association(&rows, &concepts).unwrap();
        let carriers = truth.carriers(0);
        let cands = select_candidates(&table, 0, false);
        assert_eq!(cands.len(), rows.len());
        for w in cands.windows(2) {
            assert!(table.frex[[w[0], 0]] >= table.frex[[w[1], 0]]);
        }
        let hit = |r: &usize| carriers.contains(&table.instance_ids[*r]);
        top_rate += cands.iter().take(10).filter(|r| hit(r)).count() as f64 / 10.0;
        base_rate += cands.iter().filter(|r| hit(r)).count() as f64 / cands.len() as f64;
    }
    assert!(top_rate > base_rate, "top {top_rate} base {base_rate}");
}

#[test]
fn planted_influence_beats_random_direction() {
    let (mut planted, mut random) = (0.0, 0.0);
    for seed in 0..10 {
        let (a, concepts, _) = setup(&PlantConfig::benchmark(seed), AnalysisConfig::with_seed(seed));
        // False negatives: true class A predicted as B.
        let preds = a.predictions(&a.head, &a.test_rows).unwrap();
        let fns: Vec<usize> = a
            .test_rows
            .iter()
            .zip(&preds)
            .filter(|(&r, p)| a.labels[r] == 0 && p.predicted == 1)
            .map(|(&r, _)| r)
            .collect();
        let x = a.aligned_instances.select(Axis(0), &fns);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let dir = Array1::from_shape_fn(a.bundle.dim, |_| rng.sample::<f64, _>(StandardNormal));
        let p = concept_influence(&a.head, x.view(), concepts[0].vector.view(), 0, GradientTarget::Probability).unwrap();
        let r = concept_influence(&a.head, x.view(), dir.view(), 0, GradientTarget::Probability).unwrap();
        planted += p.positive_fraction / 10.0;
        random += r.positive_fraction / 10.0;
    }
    assert!(planted > random, "planted {planted} random {random}");
}

#[test]
fn unknown_unknowns_concentrate_where_contamination_misleads() {
    // Strong one-sided plant: at test time the concept pushes class B instances into A.
    let mut wins = 0;
    for seed in 0..10 {
        let cfg = PlantConfig {
            seed,
            concepts: vec![
                PlantedConcept {
                    name: "patch".into(),
                    train_rates: vec![0.5, 0.0],
                    test_rates: vec![0.3, 0.3],
                    strength: 6.0,
                    resembles: None,
                },
                PlantedConcept::uniform("other", vec![0.05, 0.05], 6.0),
            ],
            ..PlantConfig::default()
        };
        let mut ac = AnalysisConfig::with_seed(seed);
        ac.head.l2 = 1e-3;
        let (a, _, _) = setup(&cfg, ac);
        let preds = a.predictions(&a.head, &a.test_rows).unwrap();
        let s = confusion_summary(&preds, &a.labels_of(&a.test_rows), 2, ac.uu_threshold).unwrap();
        if s.unknown_unknowns[1] > s.unknown_unknowns[0] {
            wins += 1;
        }
    }
    // One-sided sign test at the 5% level.
    assert!(wins >= 9, "{wins}/10");
}

#[test]
fn pca_recovers_planted_rank_two_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (r, d) = (300, 10);
    let u = Array2::from_shape_fn((2, d), |_| rng.sample::<f64, _>(StandardNormal));
    let scores = Array2::from_shape_fn((r, 2), |(_, j)| rng.sample::<f64, _>(StandardNormal) * [5.0, 3.0][j]);
    let signal = scores.dot(&u);
    let noise = Array2::from_shape_fn((r, d), |_| rng.sample::<f64, _>(StandardNormal) * 0.1);
    let m = &signal + &noise;
    let centered = |x: &Array2<f64>| x - &x.mean_axis(Axis(0)).unwrap();
    let var = |x: &Array2<f64>| centered(x).mapv(|v| v * v).sum() / r as f64;
    let planted_fraction = var(&signal) / var(&m);
    let p = pca_2d(m.view()).unwrap();
    let captured = (p.variances[0] + p.variances[1]) / p.total_variance;
    assert!(captured >= planted_fraction, "{captured} < {planted_fraction}");
}

#[test]
fn zero_debias_changes_nothing() {
    let (a, concepts, _) = setup(&PlantConfig::benchmark(3), AnalysisConfig::with_seed(3));
    let e = evaluate_debias(&a, &concepts, "c0", PAIR, 0, Control::Concept).unwrap();
    assert_eq!(e.acc_before, e.acc_after);
    assert_eq!(e.subgroup_before, e.subgroup_after);
    assert_eq!(e.rbr, 1.0);
    let curve = debias_curve(&a, &concepts, "c0", PAIR, Some(&[0, 50]), true).unwrap();
    assert_eq!(curve.points[0].rbr, 1.0);
    assert_eq!(curve.points[0].acc_after, curve.acc_before);
    assert_eq!(curve.points[0].subgroup_after, curve.subgroup_before);
    // An explicit retrain with the session hyperparameters reproduces the head.
    assert_eq!(a.retrain(&a.aligned_instances).unwrap(), a.head);
}

#[test]
fn curve_grid_rules() {
    let (a, concepts, _) = setup(&PlantConfig::benchmark(4), AnalysisConfig::with_seed(4));
    assert!(debias_curve(&a, &concepts, "c0", PAIR, Some(&[5, 10]), false).is_err());
    assert!(debias_curve(&a, &concepts, "c0", PAIR, Some(&[0, 10, 10]), false).is_err());
    assert!(debias_curve(&a, &concepts, "c0", PAIR, Some(&[0, 100_000]), false).is_err());
    assert!(debias_curve(&a, &concepts, "nope", PAIR, None, false).is_err());
    let c = debias_curve(&a, &concepts, "c0", PAIR, None, false).unwrap();
    assert_eq!(c.grid(), vec![0, 25, 50, 100, 200, 400, 800]);
    assert_eq!(c.n_candidates, 800);
}

#[test]
fn random_control_is_seeded() {
    let (a, concepts, _) = setup(&PlantConfig::benchmark(5), AnalysisConfig::with_seed(5));
    let x = evaluate_debias(&a, &concepts, "c0", PAIR, 100, Control::Random { seed: 9 }).unwrap();
    let y = evaluate_debias(&a, &concepts, "c0", PAIR, 100, Control::Random { seed: 9 }).unwrap();
    assert_eq!(x, y);
    let z = evaluate_debias(&a, &concepts, "c0", PAIR, 100, Control::Random { seed: 10 }).unwrap();
    assert_ne!(x.disparity_after, z.disparity_after);
}
