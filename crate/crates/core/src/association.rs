//! Raw, exclusive and combined concept associations, and between-class disparity.
//!
//! Rank 1 is always the strongest association. Every ranking breaks score
//! ties by instance id so results do not depend on row order.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bundle::ClassPair;
use crate::error::{Error, Result};

pub const DEFAULT_FREX_WEIGHT: f64 = 0.2;
const MIN_NORM: f64 = 1e-12;
const MIN_ROW_STD: f64 = 1e-12;

pub fn raw_association(v_x: ArrayView1<f64>, v_c: ArrayView1<f64>) -> Result<f64> {
    if v_x.len() != v_c.len() {
        return Err(Error::DimensionMismatch { expected: v_c.len(), actual: v_x.len() });
    }
    let nx = v_x.dot(&v_x).sqrt();
    let nc = v_c.dot(&v_c).sqrt();
    if nx <= MIN_NORM {
        return Err(Error::ZeroNorm { what: "instance vector".into() });
    }
    if nc <= MIN_NORM {
        return Err(Error::ZeroNorm { what: "concept vector".into() });
    }
    Ok((v_x.dot(&v_c) / (nx * nc)).clamp(-1.0, 1.0))
}

/// Cosine of every instance row against every concept vector (N×|C|).
pub fn association_matrix(instances: ArrayView2<f64>, concepts: &[Array1<f64>]) -> Result<Array2<f64>> {
    if concepts.is_empty() {
        return Err(Error::Empty { what: "concepts" });
    }
    let mut out = Array2::zeros((instances.nrows(), concepts.len()));
    for (i, row) in instances.rows().into_iter().enumerate() {
        for (c, v) in concepts.iter().enumerate() {
            out[[i, c]] = raw_association(row, v.view())?;
        }
    }
    Ok(out)
}

/// Order of rows by descending score, ties by id. Returns `(order, rank)` with 1-based ranks.
pub fn rank_descending<S: AsRef<str>>(scores: ArrayView1<f64>, ids: &[S]) -> (Vec<usize>, Vec<usize>) {
    assert_eq!(scores.len(), ids.len(), "scores and ids must align");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    let mut rank = vec![0; order.len()];
    for (pos, &row) in order.iter().enumerate() {
        rank[row] = pos + 1;
    }
    (order, rank)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExclusiveRankings {
    /// Per-instance standardized scores across concepts (N×|C|).
    pub z: Array2<f64>,
    /// 1-based exclusive rank of each instance, per concept (N×|C|).
    pub ex_rank: Array2<usize>,
    pub top_concept: Vec<usize>,
}

pub fn exclusive_rankings<S: AsRef<str>>(assoc: ArrayView2<f64>, ids: &[S]) -> Result<ExclusiveRankings> {
    let (n, nc) = assoc.dim();
    if nc == 0 {
        return Err(Error::Empty { what: "concepts" });
    }
    if ids.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: ids.len() });
    }
    let mut z = Array2::zeros((n, nc));
    if nc > 1 {
        for (i, row) in assoc.rows().into_iter().enumerate() {
            let mean = row.sum() / nc as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nc as f64;
            let std = var.sqrt();
            if std >= MIN_ROW_STD {
                for c in 0..nc {
                    z[[i, c]] = (row[c] - mean) / std;
                }
            }
        }
    }
    let top_concept = z
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..nc {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let mut ex_rank = Array2::zeros((n, nc));
    for c in 0..nc {
        // A single concept has no exclusivity signal; fall back to raw order.
        let key = if nc == 1 { assoc.column(c) } else { z.column(c) };
        let (_, rank) = rank_descending(key, ids);
        for (i, r) in rank.into_iter().enumerate() {
            ex_rank[[i, c]] = r;
        }
    }
    Ok(ExclusiveRankings { z, ex_rank, top_concept })
}

/// `(N − rank + 1) / N`, in (0, 1].
pub fn ecdf(rank: usize, n: usize) -> f64 {
    (n - rank + 1) as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrexResult {
    pub frex: Vec<f64>,
    pub comb_order: Vec<usize>,
    pub comb_rank: Vec<usize>,
}

/// Weighted harmonic mean of exclusive and raw ECDFs, plus the combined ranking.
pub fn frex_combine<S: AsRef<str>>(
    raw_rank: &[usize],
    ex_rank: &[usize],
    w: f64,
    ids: &[S],
) -> Result<FrexResult> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::param("w", format!("{w} outside [0, 1]")));
    }
    let n = raw_rank.len();
    if ex_rank.len() != n || ids.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: ex_rank.len().min(ids.len()) });
    }
    let frex: Vec<f64> = raw_rank
        .iter()
        .zip(ex_rank)
        .map(|(&r, &e)| 1.0 / (w / ecdf(e, n) + (1.0 - w) / ecdf(r, n)))
        .collect();
    let (comb_order, comb_rank) = rank_descending(ArrayView1::from(&frex[..]), ids);
    Ok(FrexResult { frex, comb_order, comb_rank })
}

/// Every association quantity for one population against one concept set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationTable {
    pub instance_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    pub w: f64,
    pub raw: Array2<f64>,
    pub z: Array2<f64>,
    pub raw_rank: Array2<usize>,
    pub ex_rank: Array2<usize>,
    pub frex: Array2<f64>,
    pub comb_rank: Array2<usize>,
    pub top_concept: Vec<usize>,
}

impl AssociationTable {
    pub fn compute(
        instances: ArrayView2<f64>,
        instance_ids: &[String],
        concepts: &[Array1<f64>],
        concept_ids: &[String],
        w: f64,
    ) -> Result<Self> {
        let n = instances.nrows();
        if instance_ids.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: instance_ids.len() });
        }
        if concept_ids.len() != concepts.len() {
            return Err(Error::DimensionMismatch { expected: concepts.len(), actual: concept_ids.len() });
        }
        let raw = association_matrix(instances, concepts)?;
        let ex = exclusive_rankings(raw.view(), instance_ids)?;
        let nc = concepts.len();
        let mut raw_rank = Array2::zeros((n, nc));
        let mut frex = Array2::zeros((n, nc));
        let mut comb_rank = Array2::zeros((n, nc));
        for c in 0..nc {
            let (_, rr) = rank_descending(raw.column(c), instance_ids);
            let er: Vec<usize> = ex.ex_rank.column(c).to_vec();
            let f = frex_combine(&rr, &er, w, instance_ids)?;
            for i in 0..n {
                raw_rank[[i, c]] = rr[i];
                frex[[i, c]] = f.frex[i];
                comb_rank[[i, c]] = f.comb_rank[i];
            }
        }
        Ok(Self {
            instance_ids: instance_ids.to_vec(),
            concept_ids: concept_ids.to_vec(),
            w,
            raw,
            z: ex.z,
            raw_rank,
            ex_rank: ex.ex_rank,
            frex,
            comb_rank,
            top_concept: ex.top_concept,
        })
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    pub fn concept_index(&self, concept_id: &str) -> Option<usize> {
        self.concept_ids.iter().position(|c| c == concept_id)
    }

    fn order_by(ranks: ArrayView1<usize>) -> Vec<usize> {
        let mut order = vec![0; ranks.len()];
        for (row, &r) in ranks.iter().enumerate() {
            order[r - 1] = row;
        }
        order
    }

    /// Row indices in raw-ranking order for concept column `c`.
    pub fn raw_order(&self, c: usize) -> Vec<usize> {
        Self::order_by(self.raw_rank.column(c))
    }

    pub fn ex_order(&self, c: usize) -> Vec<usize> {
        Self::order_by(self.ex_rank.column(c))
    }

    /// Row indices in combined-ranking order for concept column `c`.
    pub fn comb_order(&self, c: usize) -> Vec<usize> {
        Self::order_by(self.comb_rank.column(c))
    }

    pub fn frex_column(&self, c: usize) -> Vec<f64> {
        self.frex.column(c).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisparityMode {
    /// Difference of class sums.
    #[default]
    Sum,
    /// Difference of class means; insensitive to class imbalance.
    Mean,
}

/// Positive-class minus negative-class FREX over `population` (row indices).
pub fn between_class_disparity(
    frex: &[f64],
    labels: &[usize],
    pair: ClassPair,
    population: &[usize],
    mode: DisparityMode,
) -> Result<f64> {
    if population.is_empty() {
        return Err(Error::Empty { what: "population" });
    }
    let (mut pos, mut neg) = (0.0, 0.0);
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for &i in population {
        let label = labels[i];
        if label == pair.positive {
            pos += frex[i];
            n_pos += 1;
        } else if label == pair.negative {
            neg += frex[i];
            n_neg += 1;
        } else {
            return Err(Error::entity(format!("row {i}"), format!("label {label} not in pair")));
        }
    }
    Ok(match mode {
        DisparityMode::Sum => pos - neg,
        DisparityMode::Mean => {
            let mp = if n_pos > 0 { pos / n_pos as f64 } else { 0.0 };
            let mn = if n_neg > 0 { neg / n_neg as f64 } else { 0.0 };
            mp - mn
        }
    })
}
