//! Seeded generator of bundles with planted concept–class associations.
//!
//! Every instance shares a baseline activation vector, so raw segment and
//! instance vectors are nearly parallel until alignment removes the baseline.
//! Concepts are added along (near-)orthogonal directions with per-class,
//! per-split carriage rates.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{ConceptSpec, DatasetBundle, Instance, Segment, Split};
use crate::error::{Error, Result};

pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConcept {
    pub name: String,
    /// Carriage probability per class in the train split.
    pub train_rates: Vec<f64>,
    /// Carriage probability per class in the test split.
    pub test_rates: Vec<f64>,
    pub strength: f64,
    /// `(i, rho)`: direction has cosine `rho` with earlier concept `i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resembles: Option<(usize, f64)>,
}

impl PlantedConcept {
    /// Same carriage rates in both splits.
    pub fn uniform(name: &str, rates: Vec<f64>, strength: f64) -> Self {
        Self { name: name.into(), train_rates: rates.clone(), test_rates: rates, strength, resembles: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub seed: u64,
    pub dim: usize,
    pub classes: Vec<String>,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub concepts: Vec<PlantedConcept>,
    pub noise_sigma: f64,
    /// Distance between class means.
    pub class_separation: f64,
    /// Constant part of the shared baseline vector.
    pub baseline_level: f64,
    /// Per-dimension spread of the shared baseline vector.
    pub baseline_spread: f64,
    pub segment_noise: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 64,
            classes: vec!["A".into(), "B".into()],
            n_train_per_class: 400,
            n_test_per_class: 200,
            concepts: Vec::new(),
            noise_sigma: 1.0,
            class_separation: 2.5,
            baseline_level: 3.0,
            baseline_spread: 0.5,
            segment_noise: 0.5,
        }
    }
}

impl PlantConfig {
    /// Benchmark setting: one concept carried by 30% of class A and 2% of
    /// class B in training, balanced at test time, alongside a look-alike and
    /// two unrelated concepts carried evenly.
    pub fn benchmark(seed: u64) -> Self {
        let even = vec![0.05, 0.05];
        Self {
            seed,
            concepts: vec![
                PlantedConcept {
                    name: "patch".into(),
                    train_rates: vec![0.3, 0.02],
                    test_rates: vec![0.16, 0.16],
                    strength: 4.0,
                    resembles: None,
                },
                PlantedConcept { resembles: Some((0, 0.8)), ..PlantedConcept::uniform("lookalike", even.clone(), 6.0) },
                PlantedConcept::uniform("stripes", even.clone(), 6.0),
                PlantedConcept::uniform("ring", even, 6.0),
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k < 2 {
            return Err(Error::param("classes", "need at least two classes"));
        }
        if self.dim < k + self.concepts.len() {
            return Err(Error::param(
                "dim",
                format!("{} is smaller than classes + concepts = {}", self.dim, k + self.concepts.len()),
            ));
        }
        if self.n_train_per_class == 0 {
            return Err(Error::param("n_train_per_class", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.segment_noise >= 0.0 && self.baseline_spread >= 0.0) {
            return Err(Error::param("noise", "noise scales must be non-negative"));
        }
        for (j, c) in self.concepts.iter().enumerate() {
            if c.train_rates.len() != k || c.test_rates.len() != k {
                return Err(Error::entity(&c.name, format!("needs one rate per class ({k})")));
            }
            if c.train_rates.iter().chain(&c.test_rates).any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::entity(&c.name, "rates must lie in [0, 1]"));
            }
            if !(c.strength > 0.0) {
                return Err(Error::entity(&c.name, "strength must be positive"));
            }
            if let Some((i, rho)) = c.resembles {
                if i >= j || !(-1.0..=1.0).contains(&rho) {
                    return Err(Error::entity(&c.name, "resembles must name an earlier concept with |rho| <= 1"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rng: String,
    pub seed: u64,
    pub concept_names: Vec<String>,
    /// Class with the highest train carriage rate, when rates differ.
    pub biased_class: Vec<Option<usize>>,
    /// Planted concept indices carried by each instance.
    pub memberships: BTreeMap<String, Vec<usize>>,
    /// Concept index of each segment; background segments map to `None`.
    pub segment_concepts: BTreeMap<String, Option<usize>>,
}

impl GroundTruth {
    pub fn carriers(&self, concept: usize) -> HashSet<String> {
        self.memberships.iter().filter(|(_, m)| m.contains(&concept)).map(|(id, _)| id.clone()).collect()
    }

    pub fn concept_segments(&self, concept: usize) -> Vec<String> {
        self.segment_concepts.iter().filter(|(_, c)| **c == Some(concept)).map(|(id, _)| id.clone()).collect()
    }

    /// One concepts-file entry per planted concept, using all of its segments.
    pub fn concept_specs(&self) -> Vec<ConceptSpec> {
        self.concept_names
            .iter()
            .enumerate()
            .map(|(j, name)| ConceptSpec { name: name.clone(), segment_ids: self.concept_segments(j) })
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal))
}

fn orthonormal_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((rows, dim));
    let mut r = 0;
    while r < rows {
        let mut v = gaussian(rng, dim);
        for p in 0..r {
            let proj = v.dot(&q.row(p));
            v.scaled_add(-proj, &q.row(p));
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            q.row_mut(r).assign(&(v / norm));
            r += 1;
        }
    }
    q
}

struct Draft {
    split: Split,
    label: usize,
    carried: Vec<usize>,
    vector: Array1<f64>,
}

/// Generate a bundle and its ground truth. Deterministic per `config.seed`.
pub fn generate(config: &PlantConfig) -> Result<(DatasetBundle, GroundTruth)> {
    config.validate()?;
    let d = config.dim;
    let k = config.classes.len();
    let nc = config.concepts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let basis = orthonormal_rows(&mut rng, k + nc, d);
    let centre = basis.slice(ndarray::s![..k, ..]).mean_axis(ndarray::Axis(0)).expect("k >= 2");
    let means: Vec<Array1<f64>> = (0..k)
        .map(|c| {
            let m = &basis.row(c) - &centre;
            let norm = m.dot(&m).sqrt();
            m * (config.class_separation / 2.0 / norm)
        })
        .collect();
    let mut directions: Vec<Array1<f64>> = Vec::with_capacity(nc);
    for (j, c) in config.concepts.iter().enumerate() {
        let own = basis.row(k + j).to_owned();
        let dir = match c.resembles {
            Some((i, rho)) => &directions[i] * rho + own * (1.0 - rho * rho).sqrt(),
            None => own,
        };
        directions.push(dir);
    }
    let baseline = gaussian(&mut rng, d) * config.baseline_spread + config.baseline_level;

    let mut drafts = Vec::new();
    for (split, per_class) in [(Split::Train, config.n_train_per_class), (Split::Test, config.n_test_per_class)] {
        for label in 0..k {
            for _ in 0..per_class {
                let carried: Vec<usize> = (0..nc)
                    .filter(|&j| {
                        let c = &config.concepts[j];
                        let rate = if split == Split::Train { c.train_rates[label] } else { c.test_rates[label] };
                        rng.random::<f64>() < rate
                    })
                    .collect();
                let mut v = &baseline + &means[label] + &(gaussian(&mut rng, d) * config.noise_sigma);
                for &j in &carried {
                    v.scaled_add(config.concepts[j].strength, &directions[j]);
                }
                drafts.push(Draft { split, label, carried, vector: v });
            }
        }
    }
    drafts.shuffle(&mut rng);

    let mut instances = Vec::with_capacity(drafts.len());
    let mut segments = Vec::new();
    let mut segment_rows: Vec<Array1<f64>> = Vec::new();
    let mut memberships = BTreeMap::new();
    let mut segment_concepts = BTreeMap::new();
    let mut instance_matrix = Array2::zeros((drafts.len(), d));
    for (i, draft) in drafts.iter().enumerate() {
        let id = format!("x{i:05}");
        instance_matrix.row_mut(i).assign(&draft.vector);
        let mut push_segment = |row: Array1<f64>, concept: Option<usize>| {
            let sid = format!("s{:06}", segments.len());
            segments.push(Segment { id: sid.clone(), instance_id: id.clone(), bbox: None, image_path: None });
            segment_rows.push(row);
            segment_concepts.insert(sid, concept);
        };
        for &j in &draft.carried {
            let row = &baseline + &(&directions[j] * config.concepts[j].strength)
                + &(gaussian(&mut rng, d) * config.segment_noise);
            push_segment(row, Some(j));
        }
        let background = &baseline + &(&means[draft.label] * 0.5) + &(gaussian(&mut rng, d) * config.segment_noise);
        push_segment(background, None);
        memberships.insert(id.clone(), draft.carried.clone());
        instances.push(Instance { id, split: draft.split, label: draft.label, image_path: None, coords2d: None });
    }
    let mut segment_matrix = Array2::zeros((segment_rows.len(), d));
    for (r, row) in segment_rows.iter().enumerate() {
        segment_matrix.row_mut(r).assign(row);
    }
    // Store exactly what the on-disk format can represent.
    instance_matrix.mapv_inplace(|v| v as f32 as f64);
    segment_matrix.mapv_inplace(|v| v as f32 as f64);

    let biased_class = config
        .concepts
        .iter()
        .map(|c| {
            let (best, &max) = c
                .train_rates
                .iter()
                .enumerate()
                .fold((0, &c.train_rates[0]), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
            let min = c.train_rates.iter().copied().fold(f64::INFINITY, f64::min);
            (max > min).then_some(best)
        })
        .collect();

    let bundle = DatasetBundle {
        dim: d,
        classes: config.classes.clone(),
        instances,
        segments,
        instance_matrix,
        segment_matrix,
    };
    let truth = GroundTruth {
        rng: RNG_ALGORITHM.into(),
        seed: config.seed,
        concept_names: config.concepts.iter().map(|c| c.name.clone()).collect(),
        biased_class,
        memberships,
        segment_concepts,
    };
    Ok((bundle, truth))
}

/// `|top-k ∩ truth| / k`.
pub fn precision_at_k<T: Eq + Hash>(ranking: &[T], truth: &HashSet<T>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let hits = ranking.iter().take(k).filter(|x| truth.contains(x)).count();
    Ok(hits as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{load_bundle, validate_bundle, write_bundle};

    fn small(seed: u64) -> PlantConfig {
        PlantConfig { n_train_per_class: 40, n_test_per_class: 20, dim: 16, ..PlantConfig::benchmark(seed) }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(4)).unwrap();
        assert_ne!(a.0.instance_matrix, c.0.instance_matrix);
    }

    #[test]
    fn shapes_and_truth() {
        let (b, t) = generate(&small(1)).unwrap();
        assert_eq!(b.instances.len(), 120);
        assert_eq!(b.segment_matrix.nrows(), b.segments.len());
        assert_eq!(t.rng, RNG_ALGORITHM);
        assert_eq!(t.biased_class, vec![Some(0), None, None, None]);
        let background = t.segment_concepts.values().filter(|c| c.is_none()).count();
        assert_eq!(background, 120);
        let carried: usize = t.memberships.values().map(|m| m.len()).sum();
        assert_eq!(carried + background, b.segments.len());
    }

    #[test]
    fn infeasible_dimension() {
        let cfg = PlantConfig { dim: 5, ..PlantConfig::benchmark(0) };
        assert!(generate(&cfg).is_err());
        let mut cfg = PlantConfig::benchmark(0);
        cfg.concepts[0].train_rates[0] = 1.5;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn valid_and_round_trips() {
        let (b, _) = generate(&PlantConfig { seed: 42, ..small(42) }).unwrap();
        assert!(validate_bundle(&b).is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        let bits = |m: &Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.instance_matrix), bits(&b.instance_matrix));
        assert_eq!(bits(&back.segment_matrix), bits(&b.segment_matrix));
        assert_eq!(back, b);
    }

    #[test]
    fn precision_cases() {
        let ranking = ["a", "b", "c", "d", "e", "f"];
        let truth: HashSet<&str> = ["a", "b", "c", "d", "e"].into();
        assert_eq!(precision_at_k(&ranking, &truth, 5).unwrap(), 1.0);
        let none: HashSet<&str> = ["z"].into();
        assert_eq!(precision_at_k(&ranking, &none, 5).unwrap(), 0.0);
        assert!(precision_at_k(&ranking, &truth, 0).is_err());
    }
}
